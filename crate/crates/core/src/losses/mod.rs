//! Top-K classification losses with gradients with respect to the scores.
//!
//! Every loss is exposed both as a free function and through the [`Loss`]
//! enum, which gives the trainer and the experiments one interface:
//! `eval(scores, label, noise)`. Losses that need Monte Carlo noise read it
//! from the `noise` argument; the caller owns resampling.

mod hinge;
mod margins;
mod softmax;
mod subset_lse;

pub use hinge::{
    cal_hinge_topk, cvx_hinge_topk, hinge_topk, noised_balanced, noised_imbalanced,
    topk_zero_one,
};
pub use margins::MarginTable;
pub use softmax::{cross_entropy, focal, ldam, log_sum_exp, softmax, FocalForm};
pub use subset_lse::{log_esp_with_grad, smoothed_hinge, SubsetLse};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::noise::NoiseBatch;

/// Loss value and gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Loss family identifiers, as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    TopKZeroOne,
    CrossEntropy,
    Ldam,
    Focal,
    Hinge,
    CvxHinge,
    CalibratedHinge,
    SmoothedHinge,
    NoisedBalanced,
    NoisedImbalanced,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::TopKZeroOne,
        LossKind::CrossEntropy,
        LossKind::Ldam,
        LossKind::Focal,
        LossKind::Hinge,
        LossKind::CvxHinge,
        LossKind::CalibratedHinge,
        LossKind::SmoothedHinge,
        LossKind::NoisedBalanced,
        LossKind::NoisedImbalanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::TopKZeroOne => "topk_01",
            LossKind::CrossEntropy => "ce",
            LossKind::Ldam => "ldam",
            LossKind::Focal => "focal",
            LossKind::Hinge => "hinge",
            LossKind::CvxHinge => "cvx_hinge",
            LossKind::CalibratedHinge => "cal_hinge",
            LossKind::SmoothedHinge => "smoothed_hinge",
            LossKind::NoisedBalanced => "noised_balanced",
            LossKind::NoisedImbalanced => "noised_imbalanced",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
                Error::Parse(format!("unknown loss `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// A fully parameterised loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    TopKZeroOne { k: usize },
    CrossEntropy,
    Ldam { margins: MarginTable },
    Focal { gamma: f64, form: FocalForm },
    Hinge { k: usize },
    CvxHinge { k: usize },
    CalibratedHinge { k: usize },
    SmoothedHinge { k: usize, tau: f64 },
    NoisedBalanced { k: usize, epsilon: f64, samples: usize },
    NoisedImbalanced {
        k: usize,
        epsilon: f64,
        samples: usize,
        margins: MarginTable,
    },
}

/// Hyperparameters from which any [`Loss`] can be built by kind.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOptions {
    pub k: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub tau: f64,
    pub gamma: f64,
    pub focal_form: FocalForm,
    /// Required by `ldam` and `noised_imbalanced`.
    pub margins: Option<MarginTable>,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            k: 5,
            epsilon: 0.1,
            samples: 5,
            tau: 1.0,
            gamma: 2.0,
            focal_form: FocalForm::Standard,
            margins: None,
        }
    }
}

impl Loss {
    pub fn build(kind: LossKind, opts: &LossOptions) -> Result<Self> {
        let margins = || {
            opts.margins
                .clone()
                .ok_or_else(|| Error::InvalidArgument(format!("loss `{kind}` needs a margin table")))
        };
        if opts.samples == 0 && matches!(kind, LossKind::NoisedBalanced | LossKind::NoisedImbalanced) {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        let k = opts.k;
        Ok(match kind {
            LossKind::TopKZeroOne => Loss::TopKZeroOne { k },
            LossKind::CrossEntropy => Loss::CrossEntropy,
            LossKind::Ldam => Loss::Ldam { margins: margins()? },
            LossKind::Focal => Loss::Focal {
                gamma: opts.gamma,
                form: opts.focal_form,
            },
            LossKind::Hinge => Loss::Hinge { k },
            LossKind::CvxHinge => Loss::CvxHinge { k },
            LossKind::CalibratedHinge => Loss::CalibratedHinge { k },
            LossKind::SmoothedHinge => Loss::SmoothedHinge { k, tau: opts.tau },
            LossKind::NoisedBalanced => Loss::NoisedBalanced {
                k,
                epsilon: opts.epsilon,
                samples: opts.samples,
            },
            LossKind::NoisedImbalanced => Loss::NoisedImbalanced {
                k,
                epsilon: opts.epsilon,
                samples: opts.samples,
                margins: margins()?,
            },
        })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Loss::TopKZeroOne { .. } => LossKind::TopKZeroOne,
            Loss::CrossEntropy => LossKind::CrossEntropy,
            Loss::Ldam { .. } => LossKind::Ldam,
            Loss::Focal { .. } => LossKind::Focal,
            Loss::Hinge { .. } => LossKind::Hinge,
            Loss::CvxHinge { .. } => LossKind::CvxHinge,
            Loss::CalibratedHinge { .. } => LossKind::CalibratedHinge,
            Loss::SmoothedHinge { .. } => LossKind::SmoothedHinge,
            Loss::NoisedBalanced { .. } => LossKind::NoisedBalanced,
            Loss::NoisedImbalanced { .. } => LossKind::NoisedImbalanced,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, Loss::TopKZeroOne { .. })
    }

    /// Rows of noise one evaluation consumes, if the loss is stochastic.
    pub fn noise_samples(&self) -> Option<usize> {
        match self {
            Loss::NoisedBalanced { samples, .. } | Loss::NoisedImbalanced { samples, .. } => {
                Some(*samples)
            }
            _ => None,
        }
    }

    /// Value and gradient at `(s, y)`.
    pub fn eval(&self, s: &[f64], y: usize, noise: Option<&NoiseBatch>) -> Result<LossEval> {
        let need_noise = || noise.ok_or(Error::MissingNoise);
        match self {
            Loss::TopKZeroOne { .. } => Err(Error::NotDifferentiable("topk_01")),
            Loss::CrossEntropy => cross_entropy(s, y),
            Loss::Ldam { margins } => ldam(s, y, margins),
            Loss::Focal { gamma, form } => focal(s, y, *gamma, *form),
            Loss::Hinge { k } => hinge_topk(s, y, *k),
            Loss::CvxHinge { k } => cvx_hinge_topk(s, y, *k),
            Loss::CalibratedHinge { k } => cal_hinge_topk(s, y, *k),
            Loss::SmoothedHinge { k, tau } => smoothed_hinge(s, y, *k, *tau),
            Loss::NoisedBalanced { k, epsilon, .. } => {
                noised_balanced(s, y, *k, *epsilon, need_noise()?)
            }
            Loss::NoisedImbalanced {
                k,
                epsilon,
                margins,
                ..
            } => noised_imbalanced(s, y, *k, *epsilon, need_noise()?, margins),
        }
    }

    /// Loss value only; the one entry point that also covers `topk_01`.
    pub fn value(&self, s: &[f64], y: usize, noise: Option<&NoiseBatch>) -> Result<f64> {
        match self {
            Loss::TopKZeroOne { k } => topk_zero_one(s, y, *k),
            _ => Ok(self.eval(s, y, noise)?.value),
        }
    }
}
