//! Training, evaluation and parameter sweeps on synthetic or CSV datasets.

use std::fs::File;
use std::io::BufReader;

use noised_topk::data::{
    apply_superclass_noise, contiguous_superclasses, generate_longtail, geometric_counts,
    LongTailDataset, LongTailSpec, Split,
};
use noised_topk::metrics::MetricsReport;
use noised_topk::model::Model;
use noised_topk::train::{evaluate, train, TrainConfig, TrainOutcome};
use rayon::prelude::*;

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const DATA_SCHEMA: &[ParamSpec] = &[
    p("train-csv", "", "training CSV (label, features); empty to generate data"),
    p("val-csv", "", "validation CSV"),
    p("test-csv", "", "test CSV"),
    p("classes", "100", "number of classes"),
    p("dim", "32", "feature dimension of generated data"),
    p("max-count", "100", "training samples of the most frequent class"),
    p("min-count", "10", "training samples of the rarest class"),
    p("separation", "3", "norm of the class means"),
    p("val-per-class", "20", "validation samples per class"),
    p("test-per-class", "20", "test samples per class"),
    p("superclass-size", "1", "consecutive classes per superclass"),
    p("label-noise", "0", "probability of resampling a training label within its superclass"),
    p("data-seed", "0", "seed of the generated data and the label noise"),
];

pub const TRAIN_SCHEMA: &[ParamSpec] = &[
    p("loss", "noised_balanced", "loss name"),
    p("K", "5", "top-K parameter of the loss"),
    p("epsilon", "0.1", "noise scale"),
    p("B", "5", "noise samples per evaluation"),
    p("tau", "1", "temperature of smoothed_hinge"),
    p("gamma", "2", "focal exponent"),
    p("focal-form", "standard", "standard or table_literal"),
    p("max-margin", "0.2", "margin of the rarest class"),
    p("lr", "0.1", "initial learning rate"),
    p("momentum", "0.9", "Nesterov momentum"),
    p("weight-decay", "5e-4", "L2 penalty"),
    p("batch-size", "32", "minibatch size"),
    p("epochs", "30", "training epochs"),
    p("lr-drop-epochs", "20", "comma-separated epochs after which the rate drops"),
    p("lr-drop-factor", "0.1", "rate multiplier at each drop"),
    p("score-scale", "1", "multiplier applied to the scores"),
    p("normalize", "false", "L2-normalize features and class weights"),
    p("hidden", "none", "width of an optional ReLU hidden layer"),
    p("eval-K", "5", "K of the reported top-K metrics"),
    p("selection", "macro", "validation metric for model selection: macro or plain"),
    p("patience", "none", "epochs without improvement before stopping"),
    p("per-sample-noise", "false", "draw noise per sample instead of per minibatch"),
    p("parallel", "false", "data-parallel gradients (not bit-reproducible)"),
    p("seed", "0", "training seed"),
];

pub const TRAIN_EXTRA: &[ParamSpec] = &[p("checkpoint", "", "write the selected model here")];

pub const EVAL_EXTRA: &[ParamSpec] = &[
    p("checkpoint", "", "model to evaluate"),
    p("split", "test", "train, val or test"),
    p("eval-K", "5", "K of the reported top-K metrics"),
];

pub const SWEEP_EXTRA: &[ParamSpec] = &[
    p("param", "epsilon", "parameter to sweep"),
    p("values", "0,0.001,0.1,1", "comma-separated values"),
    p("seeds", "3", "runs per value; run i adds i to seed and data-seed"),
];

pub const HISTORY_COLUMNS: &[&str] = &[
    "epoch", "split", "lr", "train_loss", "top_k", "macro_top_k", "few", "medium", "many",
];

pub const EVAL_COLUMNS: &[&str] = &["split", "k", "samples", "top_k", "macro_top_k", "few", "medium", "many"];

pub const SWEEP_COLUMNS: &[&str] = &[
    "param", "value", "seed", "best_epoch", "val_macro_top_k", "test_top_k", "test_macro_top_k",
    "test_few", "test_medium", "test_many",
];

pub fn dataset(ps: &Params) -> Result<LongTailDataset, CliError> {
    let classes: usize = ps.get("classes")?;
    let group: usize = ps.get("superclass-size")?;
    let data_seed: u64 = ps.get("data-seed")?;
    let ds = if ps.raw("train-csv").is_empty() {
        let spec = LongTailSpec {
            counts: geometric_counts(classes, ps.get("max-count")?, ps.get("min-count")?),
            val_per_class: ps.get("val-per-class")?,
            test_per_class: ps.get("test-per-class")?,
            ..LongTailSpec::balanced(classes, ps.get("dim")?, 1, ps.get("separation")?, data_seed)
        }
        .with_superclass_size(group);
        generate_longtail(&spec).map_err(CliError::usage)?
    } else {
        let read = |key: &str| -> Result<Split, CliError> {
            let path = ps.raw(key);
            if path.is_empty() {
                return Err(CliError::Usage(format!("`{key}` is required with train-csv")));
            }
            let f = File::open(path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
            Split::read_csv(BufReader::new(f), classes).map_err(|e| CliError::Usage(format!("{path}: {e}")))
        };
        let train = read("train-csv")?;
        LongTailDataset {
            classes,
            train_counts: train.class_counts(classes),
            val: read("val-csv")?,
            test: read("test-csv")?,
            train,
            superclasses: Some(contiguous_superclasses(classes, group)),
        }
    };
    let p: f64 = ps.get("label-noise")?;
    if p > 0.0 {
        apply_superclass_noise(&ds, p, data_seed.wrapping_add(0x5eed)).map_err(CliError::usage)
    } else {
        Ok(ds)
    }
}

pub fn train_config(ps: &Params) -> Result<TrainConfig, CliError> {
    let cfg = TrainConfig {
        loss: ps.get("loss")?,
        k: ps.get("K")?,
        epsilon: ps.get("epsilon")?,
        samples: ps.get("B")?,
        tau: ps.get("tau")?,
        gamma: ps.get("gamma")?,
        focal_form: ps.get("focal-form")?,
        max_margin: ps.get("max-margin")?,
        lr: ps.get("lr")?,
        momentum: ps.get("momentum")?,
        weight_decay: ps.get("weight-decay")?,
        batch_size: ps.get("batch-size")?,
        epochs: ps.get("epochs")?,
        lr_drop_epochs: ps.list("lr-drop-epochs")?,
        lr_drop_factor: ps.get("lr-drop-factor")?,
        score_scale: ps.get("score-scale")?,
        normalize: ps.get("normalize")?,
        hidden: ps.opt("hidden")?,
        eval_k: ps.get("eval-K")?,
        selection: ps.get("selection")?,
        patience: ps.opt("patience")?,
        per_sample_noise: ps.get("per-sample-noise")?,
        parallel: ps.get("parallel")?,
        seed: ps.get("seed")?,
    };
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

/// Trains and evaluates the selected model on the test split.
pub fn run_train(ps: &Params) -> Result<(TrainOutcome, MetricsReport), CliError> {
    let ds = dataset(ps)?;
    let cfg = train_config(ps)?;
    let out = train(&ds, &cfg).map_err(CliError::runtime)?;
    let test = evaluate(&out.model, &ds.test, cfg.eval_k, &ds.train_counts).map_err(CliError::runtime)?;
    Ok((out, test))
}

pub fn run_eval(ps: &Params) -> Result<MetricsReport, CliError> {
    let path = ps.raw("checkpoint");
    if path.is_empty() {
        return Err(CliError::Usage("eval needs --checkpoint".into()));
    }
    let f = File::open(path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let model = Model::read_checkpoint(BufReader::new(f)).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let ds = dataset(ps)?;
    let split = match ps.raw("split") {
        "train" => &ds.train,
        "val" => &ds.val,
        "test" => &ds.test,
        other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
    };
    evaluate(&model, split, ps.get("eval-K")?, &ds.train_counts).map_err(CliError::usage)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// One training run per (value, seed) pair, in parallel; rows come back in
/// (value, seed) order and each run is deterministic on its own.
pub fn run_sweep(ps: &Params) -> Result<Vec<SweepRow>, CliError> {
    let param = ps.raw("param").to_string();
    if matches!(param.as_str(), "param" | "values" | "seeds" | "out") {
        return Err(CliError::Usage(format!("cannot sweep `{param}`")));
    }
    let values: Vec<String> = ps.list("values")?;
    let seeds: u64 = ps.get("seeds")?;
    if values.is_empty() || seeds == 0 {
        return Err(CliError::Usage("sweep needs values and at least one seed".into()));
    }
    let base_seed: u64 = ps.get("seed")?;
    let base_data: u64 = ps.get("data-seed")?;
    let mut jobs = Vec::new();
    for v in &values {
        for i in 0..seeds {
            let mut run = ps.clone();
            run.set(&param, v.clone())?;
            run.set("seed", (base_seed + i).to_string())?;
            run.set("data-seed", (base_data + i).to_string())?;
            // surface bad values as usage errors before any training starts
            dataset_is_valid(&run)?;
            train_config(&run)?;
            jobs.push((v.clone(), base_seed + i, run));
        }
    }
    jobs.into_par_iter()
        .map(|(value, seed, run)| {
            let (out, test) = run_train(&run)?;
            Ok(SweepRow {
                value,
                seed,
                best_epoch: out.best_epoch,
                val: out.best,
                test,
            })
        })
        .collect()
}

fn dataset_is_valid(ps: &Params) -> Result<(), CliError> {
    ps.get::<usize>("classes")?;
    ps.get::<f64>("label-noise")?;
    Ok(())
}
