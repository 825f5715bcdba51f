use std::collections::HashMap;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noised-topk"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

struct Csv {
    version: Option<String>,
    preamble: HashMap<String, String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn parse(text: &str) -> Self {
        let mut preamble = HashMap::new();
        let mut version = None;
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix("# ") {
                Some(c) => match c.split_once(" = ") {
                    Some((k, v)) => {
                        preamble.insert(k.to_string(), v.to_string());
                    }
                    None if c.starts_with("noised-topk ") => version = Some(c.to_string()),
                    None => {}
                },
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers().unwrap().iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect())
            .collect();
        Self { version, preamble, header, rows }
    }

    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap()
    }

    fn floats(&self, name: &str) -> Vec<f64> {
        let c = self.col(name);
        self.rows.iter().map(|r| r[c].parse().unwrap()).collect()
    }
}

fn ok_csv(args: &[&str]) -> Csv {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Csv::parse(&String::from_utf8(out.stdout).unwrap())
}

#[test]
fn gradcheck_noised_balanced_passes() {
    let csv = ok_csv(&["gradcheck", "--loss", "noised_balanced", "--L", "10", "--K", "3", "--epsilon", "0.5", "--B", "5", "--trials", "100"]);
    assert_eq!(csv.rows.len(), 100);
    let c = csv.col("pass");
    assert!(csv.rows.iter().all(|r| r[c] == "true"));
    assert!(preamble_complete(&csv));
}

fn preamble_complete(csv: &Csv) -> bool {
    csv.version.is_some()
        && ["B", "K", "L", "epsilon", "trials", "seed", "tolerance", "out"]
        .iter()
        .all(|k| csv.preamble.contains_key(*k))
}

#[test]
fn gradcheck_ce_machine_precision() {
    let csv = ok_csv(&["gradcheck", "--loss", "ce", "--tolerance", "1e-8"]);
    assert!(csv.floats("max_abs_error").iter().all(|e| *e <= 1e-8));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["gradcheck", "--loss", "topk_01"]).status.code(), Some(1));
    assert_eq!(run(&["gradcheck", "--loss", "nope"]).status.code(), Some(1));
    assert_eq!(run(&["gradcheck", "--bogus", "1"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["gradcheck", "--loss", "ce", "--tolerance", "1e-30", "--trials", "3"]).status.code(), Some(2));
    assert_eq!(run(&["simplex", "--L", "4"]).status.code(), Some(1));
    assert_eq!(run(&["sparsity", "--epsilon-grid", ""]).status.code(), Some(1));
    let help = run(&["timing", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("mean_eval_time"));
}

#[test]
fn sparsity_trend() {
    let csv = ok_csv(&["sparsity", "--samples", "500"]);
    let eps = csv.floats("epsilon");
    let nnz = csv.floats("mean_nnz");
    assert_eq!(eps, vec![0.0, 0.001, 0.01, 0.1, 1.0, 10.0]);
    assert!(nnz[0] <= 2.0);
    assert!(nnz.windows(2).all(|w| w[0] <= w[1]), "{nnz:?}");
    assert!(nnz[5] <= 20.0);
}

#[test]
fn simplex_zero_one_surface() {
    let csv = ok_csv(&["simplex", "--loss", "topk_01", "--K", "2", "--y", "2", "--mesh-steps", "12"]);
    let (s1, s2, s3, v) = (csv.floats("s1"), csv.floats("s2"), csv.floats("s3"), csv.floats("loss_value"));
    assert_eq!(v.len(), 13 * 14 / 2);
    for i in 0..v.len() {
        let expect = if s3[i] >= s1[i].min(s2[i]) { 0.0 } else { 1.0 };
        assert_eq!(v[i], expect, "at ({}, {}, {})", s1[i], s2[i], s3[i]);
    }
}

#[test]
fn simplex_calibrated_hinge_minimum_at_label_vertex() {
    let csv = ok_csv(&["simplex", "--loss", "cal_hinge", "--K", "1", "--y", "2", "--mesh-steps", "10"]);
    let (s3, v) = (csv.floats("s3"), csv.floats("loss_value"));
    let vertex = s3.iter().position(|&x| x == 2.0).unwrap();
    assert_eq!(v[vertex], 0.0);
    assert_eq!(v.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    // every zero sits in the region where the label leads by the unit margin
    let (s1, s2) = (csv.floats("s1"), csv.floats("s2"));
    for i in 0..v.len() {
        if v[i] == 0.0 {
            assert!(s3[i] >= 1.0 + s1[i].max(s2[i]) - 1e-12);
        }
    }
}

#[test]
fn simplex_larger_epsilon_is_smoother() {
    use noised_topk_cli::commands::simplex::{roughness, run, SimplexArgs};
    use noised_topk_cli::params::Params;
    let surface = |eps: &str| {
        let mut ps = Params::defaults(noised_topk_cli::commands::simplex::SCHEMA);
        ps.set("epsilon", eps).unwrap();
        ps.set("mesh-steps", "30").unwrap();
        ps.set("K", "2").unwrap();
        roughness(&run(&SimplexArgs::from_params(&ps).unwrap()).unwrap())
    };
    let (rough, smooth) = (surface("0.3"), surface("1"));
    assert!(smooth < rough, "{smooth} vs {rough}");
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sparsity settings\nK = 2\nsamples = 50\nB = 4\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let csv = ok_csv(&["sparsity", "--config", cfg, "--K", "3", "--epsilon-grid", "0,1"]);
    assert_eq!(csv.preamble["K"], "3");
    assert_eq!(csv.preamble["B"], "4");
    assert_eq!(csv.preamble["samples"], "50");
    assert_eq!(csv.preamble["L"], "100");
    std::fs::write(dir.path().join("bad.cfg"), "nonsense = 1\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    assert_eq!(run(&["sparsity", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn deterministic_given_seed() {
    let a = run(&["sparsity", "--samples", "100", "--seed", "4"]);
    let b = run(&["sparsity", "--samples", "100", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    let a = run(&["sweep", "--classes", "6", "--dim", "4", "--epochs", "3", "--K", "2", "--eval-K", "2", "--values", "0,0.5", "--seeds", "2"]);
    let b = run(&["sweep", "--classes", "6", "--dim", "4", "--epochs", "3", "--K", "2", "--eval-K", "2", "--values", "0,0.5", "--seeds", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let csv = Csv::parse(&String::from_utf8(a.stdout).unwrap());
    assert_eq!(csv.rows.len(), 4);
}

#[test]
fn train_checkpoint_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.txt");
    let ckpt = ckpt.to_str().unwrap();
    let data = ["--classes", "8", "--dim", "6", "--max-count", "60", "--min-count", "8", "--data-seed", "3"];
    let mut args = vec!["train", "--epochs", "4", "--K", "2", "--eval-K", "2", "--checkpoint", ckpt];
    args.extend(data);
    let train = ok_csv(&args);
    let last = train.rows.last().unwrap();
    assert_eq!(last[train.col("split")], "test");
    let mut args = vec!["eval", "--checkpoint", ckpt, "--eval-K", "2"];
    args.extend(data);
    let eval = ok_csv(&args);
    for m in ["top_k", "macro_top_k", "few", "medium", "many"] {
        assert_eq!(eval.rows[0][eval.col(m)], last[train.col(m)], "{m}");
    }
}

#[test]
fn train_from_csv_files() {
    use noised_topk::data::{generate_longtail, LongTailSpec};
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_longtail(&LongTailSpec::balanced(4, 3, 30, 4.0, 2)).unwrap();
    let write = |name: &str, split: &noised_topk::data::Split| {
        let p = dir.path().join(name);
        split.write_csv(std::fs::File::create(&p).unwrap()).unwrap();
        p.to_str().unwrap().to_string()
    };
    let (tr, va, te) = (write("tr.csv", &ds.train), write("va.csv", &ds.val), write("te.csv", &ds.test));
    let csv = ok_csv(&[
        "train", "--train-csv", &tr, "--val-csv", &va, "--test-csv", &te, "--classes", "4",
        "--loss", "ce", "--eval-K", "1", "--epochs", "5",
    ]);
    let acc = csv.floats("top_k");
    assert!(*acc.last().unwrap() > 0.9, "{acc:?}");
    let missing = run(&["train", "--train-csv", &tr, "--classes", "4"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn calibrate_ce_has_gap() {
    let csv = ok_csv(&["calibrate", "--loss", "ce", "--pi", "0.5,0.3,0.2", "--grid-steps", "31"]);
    assert!(csv.floats("gap")[0] > 0.0);
    assert_eq!(csv.rows[0][csv.col("pi")], "0.5;0.3;0.2");
}

#[test]
fn timing_rows() {
    let csv = ok_csv(&["timing", "--repeats", "2", "--warmup", "0", "--batch", "4", "--K-grid", "1,3"]);
    assert_eq!(csv.rows.len(), 6);
    assert!(csv.floats("mean_eval_time").iter().all(|t| *t > 0.0));
}
