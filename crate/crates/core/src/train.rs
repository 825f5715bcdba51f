//! Minibatch SGD with Nesterov momentum, weight decay and a step schedule.
//!
//! The minibatch gradient is the mean of per-sample loss gradients. Losses
//! that need Monte Carlo noise get a fresh [`NoiseBatch`] for every
//! minibatch, shared by all of its samples; `per_sample_noise` draws one per
//! sample instead.
//!
//! The default loop is single-threaded and bit-for-bit reproducible from the
//! seed. With `parallel`, per-sample gradients are computed on the rayon pool
//! and summed in whatever order the pool produces, so results can differ in
//! the last bits between runs.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{LongTailDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{FocalForm, Loss, LossKind, LossOptions, MarginTable};
use crate::metrics::{MetricsReport, ShotThresholds, TopKCounter};
use crate::model::{Model, ModelConfig, RowNorms, Trace};
use crate::noise::{derive_seed, rng_from_seed, NoiseBatch, SeededRng};

/// Validation metric used to pick the returned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    MacroTopK,
    TopK,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Selection::MacroTopK),
            "plain" => Ok(Selection::TopK),
            _ => Err(Error::Parse(format!("unknown selection `{s}` (expected macro or plain)"))),
        }
    }
}

impl Selection {
    fn score(self, r: &MetricsReport) -> f64 {
        match self {
            Selection::MacroTopK => r.macro_top_k_accuracy,
            Selection::TopK => r.top_k_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub k: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub tau: f64,
    pub gamma: f64,
    pub focal_form: FocalForm,
    /// Margin of the rarest class; margins of the others follow the
    /// `n_y^{-1/4}` schedule. With `normalize` the margin is in cosine
    /// units, so the loss sees it multiplied by `score_scale`.
    pub max_margin: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// The learning rate is multiplied by `lr_drop_factor` after each of
    /// these epochs.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub score_scale: f64,
    pub normalize: bool,
    pub hidden: Option<usize>,
    pub eval_k: usize,
    pub selection: Selection,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub per_sample_noise: bool,
    pub parallel: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::CrossEntropy,
            k: 5,
            epsilon: 0.1,
            samples: 5,
            tau: 1.0,
            gamma: 2.0,
            focal_form: FocalForm::Standard,
            max_margin: 0.2,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 30,
            lr_drop_epochs: vec![20],
            lr_drop_factor: 0.1,
            score_scale: 1.0,
            normalize: false,
            hidden: None,
            eval_k: 5,
            selection: Selection::MacroTopK,
            patience: None,
            per_sample_noise: false,
            parallel: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return bad(format!("lr drop factor must be positive, got {}", self.lr_drop_factor));
        }
        if self.lr_drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "lr drop epochs must be strictly increasing, got {:?}",
                self.lr_drop_epochs
            ));
        }
        if self.loss == LossKind::TopKZeroOne {
            return Err(Error::NotDifferentiable("topk_01"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e < epoch).count();
        self.lr * self.lr_drop_factor.powi(drops as i32)
    }

    /// Builds the configured loss; margins come from `train_counts`.
    pub fn build_loss(&self, train_counts: &[usize]) -> Result<Loss> {
        let unit = if self.normalize { self.score_scale } else { 1.0 };
        let margins = match self.loss {
            LossKind::Ldam | LossKind::NoisedImbalanced => {
                Some(MarginTable::from_max_margin(train_counts, self.max_margin * unit)?)
            }
            _ => None,
        };
        let opts = LossOptions {
            k: self.k,
            epsilon: self.epsilon,
            samples: self.samples,
            tau: self.tau,
            gamma: self.gamma,
            focal_form: self.focal_form,
            margins,
        };
        Loss::build(self.loss, &opts)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            normalize: self.normalize,
            score_scale: self.score_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub best: MetricsReport,
    pub history: Vec<EpochRecord>,
}

/// Metrics of `model` on `split`, with shot groups from `train_counts`.
pub fn evaluate(model: &Model, split: &Split, k: usize, train_counts: &[usize]) -> Result<MetricsReport> {
    evaluate_with(model, split, k, train_counts, ShotThresholds::default())
}

pub fn evaluate_with(
    model: &Model,
    split: &Split,
    k: usize,
    train_counts: &[usize],
    thresholds: ShotThresholds,
) -> Result<MetricsReport> {
    if split.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: split.dim(),
        });
    }
    let norms = model.row_norms();
    let mut trace = Trace::default();
    let mut counter = TopKCounter::new(model.classes(), k)?;
    for (x, y) in split.iter() {
        model.forward(&norms, x, &mut trace);
        counter.add(&trace.scores, y)?;
    }
    counter.report(train_counts, thresholds)
}

/// Trains on `ds.train`, selects on `ds.val`, and returns the best model.
/// Ties in the validation metric keep the earliest epoch.
pub fn train(ds: &LongTailDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(Error::InvalidArgument("train and validation splits must be non-empty".into()));
    }
    let classes = ds.classes;
    let loss = cfg.build_loss(&ds.train_counts)?;
    let mut model = Model::new(ds.dim(), classes, cfg.model_config(), derive_seed(cfg.seed, 10))?;
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, 11));
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, 12));

    let n_params = model.num_params();
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Model, MetricsReport)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let noise = draw_noise(&loss, cfg, classes, idx.len(), &mut noise_rng)?;
            grad.fill(0.0);
            let batch_loss = if cfg.parallel {
                batch_gradient_parallel(&model, &loss, &ds.train, idx, &noise, &mut grad)
            } else {
                batch_gradient(&model, &loss, &ds.train, idx, &noise, &mut grad)
            }
            .map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged { epoch, batch },
                e => e,
            })?;
            loss_sum += batch_loss;

            let inv = 1.0 / idx.len() as f64;
            for ((w, g), v) in model.params_mut().iter_mut().zip(&grad).zip(&mut velocity) {
                let g = g * inv + cfg.weight_decay * *w;
                *v = cfg.momentum * *v + g;
                *w -= lr * (g + cfg.momentum * *v);
            }
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, batch });
            }
        }

        let val = evaluate(&model, &ds.val, cfg.eval_k, &ds.train_counts)?;
        let improved = best
            .as_ref()
            .is_none_or(|(_, _, b)| cfg.selection.score(&val) > cfg.selection.score(b));
        if improved {
            best = Some((epoch, model.clone(), val.clone()));
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / ds.train.len() as f64,
            val,
        });
        if let (Some(p), Some((b, _, _))) = (cfg.patience, &best) {
            if epoch - b >= p {
                break;
            }
        }
    }
    let (best_epoch, model, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best,
        history,
    })
}

enum Noise {
    None,
    Shared(NoiseBatch),
    PerSample(Vec<NoiseBatch>),
}

impl Noise {
    fn get(&self, i: usize) -> Option<&NoiseBatch> {
        match self {
            Noise::None => None,
            Noise::Shared(n) => Some(n),
            Noise::PerSample(v) => Some(&v[i]),
        }
    }
}

fn draw_noise(loss: &Loss, cfg: &TrainConfig, classes: usize, n: usize, rng: &mut SeededRng) -> Result<Noise> {
    let Some(b) = loss.noise_samples() else {
        return Ok(Noise::None);
    };
    Ok(if cfg.per_sample_noise {
        Noise::PerSample(
            (0..n)
                .map(|_| NoiseBatch::sample_from_rng(rng, classes, b))
                .collect::<Result<_>>()?,
        )
    } else {
        Noise::Shared(NoiseBatch::sample_from_rng(rng, classes, b)?)
    })
}

fn sample_gradient(
    model: &Model,
    norms: &RowNorms,
    loss: &Loss,
    (x, y): (&[f64], usize),
    noise: Option<&NoiseBatch>,
    trace: &mut Trace,
    grad: &mut [f64],
) -> Result<f64> {
    model.forward(norms, x, trace);
    if trace.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    let eval = loss.eval(&trace.scores, y, noise)?;
    if !eval.value.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { epoch: 0, batch: 0 });
    }
    model.backward(norms, x, trace, &eval.grad, grad);
    Ok(eval.value)
}

/// Sum of per-sample gradients into `grad`; returns the summed loss.
fn batch_gradient(
    model: &Model,
    loss: &Loss,
    data: &Split,
    idx: &[usize],
    noise: &Noise,
    grad: &mut [f64],
) -> Result<f64> {
    let norms = model.row_norms();
    let mut trace = Trace::default();
    let mut total = 0.0;
    for (j, &i) in idx.iter().enumerate() {
        total += sample_gradient(model, &norms, loss, (data.features(i), data.label(i)), noise.get(j), &mut trace, grad)?;
    }
    Ok(total)
}

fn batch_gradient_parallel(
    model: &Model,
    loss: &Loss,
    data: &Split,
    idx: &[usize],
    noise: &Noise,
    grad: &mut [f64],
) -> Result<f64> {
    let norms = model.row_norms();
    let n = grad.len();
    let (total, sum) = idx
        .par_iter()
        .enumerate()
        .try_fold(
            || (0.0, vec![0.0; n], Trace::default()),
            |(total, mut g, mut trace), (j, &i)| {
                let v = sample_gradient(model, &norms, loss, (data.features(i), data.label(i)), noise.get(j), &mut trace, &mut g)?;
                Ok::<_, Error>((total + v, g, trace))
            },
        )
        .map(|r| r.map(|(t, g, _)| (t, g)))
        .try_reduce(
            || (0.0, vec![0.0; n]),
            |(ta, mut ga), (tb, gb)| {
                ga.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
                Ok((ta + tb, ga))
            },
        )?;
    grad.copy_from_slice(&sum);
    Ok(total)
}
