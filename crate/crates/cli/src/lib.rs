//! Command-line experiments: gradient checks, gradient sparsity, simplex
//! loss surfaces, timing, calibration probes, training and sweeps.
//!
//! Every subcommand reads a flat parameter set (defaults, then `--config`
//! file, then flags) and writes one CSV whose `#` preamble records the
//! resolved parameters.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 tolerance failure.

pub mod commands;
pub mod output;
pub mod params;

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, Command};

use commands::{calibrate, gradcheck, simplex, sparsity, timing, train};
use output::{opt, CsvOut};
use params::{p, ParamSpec, Params};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("tolerance failure: {0}")]
    Tolerance(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(e: impl Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Runtime(_) => 1,
            CliError::Tolerance(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

const OUT: ParamSpec = p("out", "-", "output CSV path, - for stdout");

struct Subcommand {
    name: &'static str,
    about: &'static str,
    schema: Vec<ParamSpec>,
    columns: &'static [&'static str],
    run: fn(&Params) -> Result<(), CliError>,
}

fn subcommands() -> Vec<Subcommand> {
    let cat = |parts: &[&[ParamSpec]]| -> Vec<ParamSpec> {
        parts.iter().flat_map(|s| s.iter().copied()).chain([OUT]).collect()
    };
    vec![
        Subcommand {
            name: "gradcheck",
            about: "Compare analytic loss gradients with central finite differences",
            schema: cat(&[gradcheck::SCHEMA]),
            columns: gradcheck::COLUMNS,
            run: cmd_gradcheck,
        },
        Subcommand {
            name: "sparsity",
            about: "Mean number of non-zero gradient coordinates versus epsilon",
            schema: cat(&[sparsity::SCHEMA]),
            columns: sparsity::COLUMNS,
            run: cmd_sparsity,
        },
        Subcommand {
            name: "simplex",
            about: "Loss values over a barycentric mesh of 2 x the 3-class simplex",
            schema: cat(&[simplex::SCHEMA]),
            columns: simplex::COLUMNS,
            run: cmd_simplex,
        },
        Subcommand {
            name: "timing",
            about: "Per-batch loss evaluation time as a function of K",
            schema: cat(&[timing::SCHEMA]),
            columns: timing::COLUMNS,
            run: cmd_timing,
        },
        Subcommand {
            name: "calibrate",
            about: "Grid probe of top-K calibration (restricted versus unrestricted risk)",
            schema: cat(&[calibrate::SCHEMA]),
            columns: calibrate::COLUMNS,
            run: cmd_calibrate,
        },
        Subcommand {
            name: "train",
            about: "Train a scorer; emits the validation history and a final test row",
            schema: cat(&[train::DATA_SCHEMA, train::TRAIN_SCHEMA, train::TRAIN_EXTRA]),
            columns: train::HISTORY_COLUMNS,
            run: cmd_train,
        },
        Subcommand {
            name: "eval",
            about: "Evaluate a checkpoint on one split",
            schema: cat(&[train::DATA_SCHEMA, train::EVAL_EXTRA]),
            columns: train::EVAL_COLUMNS,
            run: cmd_eval,
        },
        Subcommand {
            name: "sweep",
            about: "Train once per value of one parameter and per seed",
            schema: cat(&[train::DATA_SCHEMA, train::TRAIN_SCHEMA, train::SWEEP_EXTRA]),
            columns: train::SWEEP_COLUMNS,
            run: cmd_sweep,
        },
    ]
}

fn cli(subs: &[Subcommand]) -> Command {
    let mut root = Command::new("noised-topk")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Experiments with smoothed top-K losses; every command writes CSV")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("flat key = value file; flags override it"),
        );
    for sub in subs {
        let mut cmd = Command::new(sub.name)
            .about(sub.about)
            .after_help(format!("CSV columns: {}", sub.columns.join(", ")));
        for spec in &sub.schema {
            let help = if spec.default.is_empty() {
                spec.help.to_string()
            } else {
                format!("{} [default: {}]", spec.help, spec.default)
            };
            cmd = cmd.arg(
                Arg::new(spec.key)
                    .long(spec.key)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        root = root.subcommand(cmd);
    }
    root
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Help and version requests print and return `Ok`.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let subs = subcommands();
    let matches = match cli(&subs).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // a closed pipe (e.g. `| head`) is not an error for help text
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim().to_string())),
    };
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = subs.iter().find(|s| s.name == name).expect("registered subcommand");
    let mut ps = Params::defaults(&sub.schema);
    if let Some(path) = sub_matches.get_one::<String>("config") {
        ps.load_file(Path::new(path))?;
    }
    for spec in &sub.schema {
        if sub_matches.value_source(spec.key) == Some(ValueSource::CommandLine) {
            let v: &String = sub_matches.get_one(spec.key).expect("value present");
            ps.set(spec.key, v.clone())?;
        }
    }
    (sub.run)(&ps)
}

fn open(ps: &Params, command: &str, columns: &[&str]) -> Result<CsvOut, CliError> {
    Ok(CsvOut::create(ps.raw("out"), command, ps, columns)?)
}

fn cmd_gradcheck(ps: &Params) -> Result<(), CliError> {
    let args = gradcheck::GradcheckArgs::from_params(ps)?;
    let rows = gradcheck::run(&args)?;
    let mut out = open(ps, "gradcheck", gradcheck::COLUMNS)?;
    let mut failed = 0;
    for r in &rows {
        let pass = r.passes(args.tolerance);
        failed += usize::from(!pass);
        out.row([
            r.trial.to_string(),
            r.label.to_string(),
            r.max_abs_error.to_string(),
            r.near_kink.to_string(),
            pass.to_string(),
        ])?;
    }
    out.finish()?;
    if failed > 0 {
        return Err(CliError::Tolerance(format!(
            "{failed} of {} trials exceed {}",
            rows.len(),
            args.tolerance
        )));
    }
    Ok(())
}

fn cmd_sparsity(ps: &Params) -> Result<(), CliError> {
    let rows = sparsity::run(&sparsity::SparsityArgs::from_params(ps)?)?;
    let mut out = open(ps, "sparsity", sparsity::COLUMNS)?;
    for r in rows {
        out.row([r.epsilon.to_string(), r.mean_nnz.to_string(), r.std_nnz.to_string()])?;
    }
    Ok(out.finish()?)
}

fn cmd_simplex(ps: &Params) -> Result<(), CliError> {
    let rows = simplex::run(&simplex::SimplexArgs::from_params(ps)?)?;
    let mut out = open(ps, "simplex", simplex::COLUMNS)?;
    for r in rows {
        out.row([
            r.s[0].to_string(),
            r.s[1].to_string(),
            r.s[2].to_string(),
            r.value.to_string(),
            r.raw.to_string(),
        ])?;
    }
    Ok(out.finish()?)
}

fn cmd_timing(ps: &Params) -> Result<(), CliError> {
    let rows = timing::run(&timing::TimingArgs::from_params(ps)?)?;
    let mut out = open(ps, "timing", timing::COLUMNS)?;
    for r in rows {
        out.row([r.k.to_string(), r.loss.to_string(), r.mean().to_string(), r.std().to_string()])?;
    }
    Ok(out.finish()?)
}

fn cmd_calibrate(ps: &Params) -> Result<(), CliError> {
    let rows = calibrate::run(ps)?;
    let mut out = open(ps, "calibrate", calibrate::COLUMNS)?;
    for r in rows {
        let pi: Vec<String> = r.pi.iter().map(f64::to_string).collect();
        out.row([
            r.loss,
            r.k.to_string(),
            pi.join(";"),
            r.unrestricted_min.to_string(),
            r.restricted_min.to_string(),
            r.gap.to_string(),
        ])?;
    }
    Ok(out.finish()?)
}

fn metric_fields(r: &noised_topk::metrics::MetricsReport) -> [String; 5] {
    [
        r.top_k_accuracy.to_string(),
        r.macro_top_k_accuracy.to_string(),
        opt(r.per_shot_group.few),
        opt(r.per_shot_group.medium),
        opt(r.per_shot_group.many),
    ]
}

fn cmd_train(ps: &Params) -> Result<(), CliError> {
    let (outcome, test) = train::run_train(ps)?;
    let mut out = open(ps, "train", train::HISTORY_COLUMNS)?;
    for rec in &outcome.history {
        let head = [rec.epoch.to_string(), "val".into(), rec.lr.to_string(), rec.train_loss.to_string()];
        out.row(head.into_iter().chain(metric_fields(&rec.val)))?;
    }
    let head = [outcome.best_epoch.to_string(), "test".into(), String::new(), String::new()];
    out.row(head.into_iter().chain(metric_fields(&test)))?;
    out.finish()?;
    let path = ps.raw("checkpoint");
    if !path.is_empty() {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        outcome.model.write_checkpoint(f).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn cmd_eval(ps: &Params) -> Result<(), CliError> {
    let r = train::run_eval(ps)?;
    let mut out = open(ps, "eval", train::EVAL_COLUMNS)?;
    let head = [ps.raw("split").to_string(), r.k.to_string(), r.samples.to_string()];
    out.row(head.into_iter().chain(metric_fields(&r)))?;
    Ok(out.finish()?)
}

fn cmd_sweep(ps: &Params) -> Result<(), CliError> {
    let rows = train::run_sweep(ps)?;
    let mut out = open(ps, "sweep", train::SWEEP_COLUMNS)?;
    for r in rows {
        out.row([
            ps.raw("param").to_string(),
            r.value,
            r.seed.to_string(),
            r.best_epoch.to_string(),
            r.val.macro_top_k_accuracy.to_string(),
            r.test.top_k_accuracy.to_string(),
            r.test.macro_top_k_accuracy.to_string(),
            opt(r.test.per_shot_group.few),
            opt(r.test.per_shot_group.medium),
            opt(r.test.per_shot_group.many),
        ])?;
    }
    Ok(out.finish()?)
}
