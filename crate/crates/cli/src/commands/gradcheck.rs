//! Analytic gradients against central finite differences.
//!
//! Noise is fixed within a trial, so noised losses are piecewise linear in
//! the scores and central differences are exact away from kinks. A trial is
//! skipped as near a kink when the analytic gradient jumps between `s - h e_i`
//! and `s + h e_i` for some coordinate.

use noised_topk::losses::{Loss, LossKind, LossOptions, MarginTable};
use noised_topk::noise::{derive_seed, rng_from_seed, NoiseBatch};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const SCHEMA: &[ParamSpec] = &[
    p("loss", "noised_balanced", "loss name"),
    p("L", "10", "number of classes"),
    p("K", "3", "top-K parameter"),
    p("epsilon", "0.5", "noise scale of the noised losses"),
    p("B", "5", "noise samples of the noised losses"),
    p("tau", "1", "temperature of smoothed_hinge"),
    p("gamma", "2", "focal exponent"),
    p("max-margin", "0.5", "largest class margin (ldam, noised_imbalanced)"),
    p("trials", "100", "number of random (s, y) trials"),
    p("h", "1e-6", "finite-difference step"),
    p("tolerance", "1e-4", "largest accepted |analytic - numeric|"),
    p("seed", "0", "RNG seed"),
];

pub const COLUMNS: &[&str] = &["trial", "label", "max_abs_error", "near_kink", "pass"];

#[derive(Debug, Clone)]
pub struct GradcheckArgs {
    pub loss: LossKind,
    pub classes: usize,
    pub opts: LossOptions,
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl GradcheckArgs {
    pub fn from_params(ps: &Params) -> Result<Self, CliError> {
        let loss: LossKind = ps.get("loss")?;
        if loss == LossKind::TopKZeroOne {
            return Err(CliError::Usage("loss `topk_01` has no gradient".into()));
        }
        let classes: usize = ps.get("L")?;
        let max_margin: f64 = ps.get("max-margin")?;
        let margins = match loss {
            LossKind::Ldam | LossKind::NoisedImbalanced => {
                // a fixed long-tailed count profile for the margin schedule
                let counts: Vec<usize> = (0..classes).map(|c| 1000 / (c + 1)).collect();
                Some(MarginTable::from_max_margin(&counts, max_margin).map_err(CliError::usage)?)
            }
            _ => None,
        };
        Ok(Self {
            loss,
            classes,
            opts: LossOptions {
                k: ps.get("K")?,
                epsilon: ps.get("epsilon")?,
                samples: ps.get("B")?,
                tau: ps.get("tau")?,
                gamma: ps.get("gamma")?,
                margins,
                ..LossOptions::default()
            },
            trials: ps.get("trials")?,
            h: ps.get("h")?,
            tolerance: ps.get("tolerance")?,
            seed: ps.get("seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub trial: usize,
    pub label: usize,
    pub max_abs_error: f64,
    pub near_kink: bool,
}

impl GradcheckRow {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.near_kink || self.max_abs_error <= tolerance
    }
}

// a jump this large between neighbouring gradients marks a kink
const KINK_JUMP: f64 = 1e-3;

pub fn run(args: &GradcheckArgs) -> Result<Vec<GradcheckRow>, CliError> {
    let loss = Loss::build(args.loss, &args.opts).map_err(CliError::usage)?;
    if args.h.is_nan() || args.h <= 0.0 {
        return Err(CliError::Usage("h must be positive".into()));
    }
    let l = args.classes;
    let mut rows = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let mut rng = rng_from_seed(derive_seed(args.seed, trial as u64));
        let s: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
        let y = rng.random_range(0..l);
        let noise = match loss.noise_samples() {
            Some(b) => Some(NoiseBatch::sample_from_rng(&mut rng, l, b).map_err(CliError::usage)?),
            None => None,
        };
        let eval = |s: &[f64]| loss.eval(s, y, noise.as_ref()).map_err(CliError::usage);
        let grad = eval(&s)?.grad;
        let (mut err, mut kink) = (0.0f64, false);
        let mut sp = s.clone();
        for i in 0..l {
            sp[i] = s[i] + args.h;
            let up = eval(&sp)?;
            sp[i] = s[i] - args.h;
            let down = eval(&sp)?;
            sp[i] = s[i];
            let fd = (up.value - down.value) / (2.0 * args.h);
            err = err.max((fd - grad[i]).abs());
            kink |= up.grad.iter().zip(&down.grad).any(|(a, b)| (a - b).abs() > KINK_JUMP);
        }
        rows.push(GradcheckRow {
            trial,
            label: y,
            max_abs_error: err,
            near_kink: kink,
        });
    }
    Ok(rows)
}
