//! Number of non-zero gradient coordinates of the noised balanced loss as a
//! function of the noise scale.
//!
//! Scores are standard normal with a uniformly random label. The same
//! scores, labels and noise draws are reused for every epsilon.

use noised_topk::losses::noised_balanced;
use noised_topk::noise::{derive_seed, rng_from_seed, NoiseBatch};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const SCHEMA: &[ParamSpec] = &[
    p("L", "100", "number of classes"),
    p("K", "5", "top-K parameter"),
    p("epsilon-grid", "0,0.001,0.01,0.1,1,10", "comma-separated noise scales"),
    p("B", "3", "noise samples per evaluation"),
    p("samples", "1000", "random (s, y) draws per epsilon"),
    p("seed", "0", "RNG seed"),
];

pub const COLUMNS: &[&str] = &["epsilon", "mean_nnz", "std_nnz"];

#[derive(Debug, Clone)]
pub struct SparsityArgs {
    pub classes: usize,
    pub k: usize,
    pub epsilons: Vec<f64>,
    pub noise_samples: usize,
    pub samples: usize,
    pub seed: u64,
}

impl SparsityArgs {
    pub fn from_params(ps: &Params) -> Result<Self, CliError> {
        Ok(Self {
            classes: ps.get("L")?,
            k: ps.get("K")?,
            epsilons: ps.list("epsilon-grid")?,
            noise_samples: ps.get("B")?,
            samples: ps.get("samples")?,
            seed: ps.get("seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub epsilon: f64,
    pub mean_nnz: f64,
    pub std_nnz: f64,
}

pub fn run(args: &SparsityArgs) -> Result<Vec<SparsityRow>, CliError> {
    if args.epsilons.is_empty() {
        return Err(CliError::Usage("empty epsilon grid".into()));
    }
    if args.samples == 0 {
        return Err(CliError::Usage("samples must be positive".into()));
    }
    let l = args.classes;
    let draws: Vec<(Vec<f64>, usize, NoiseBatch)> = (0..args.samples)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(args.seed, i as u64));
            let s: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
            let y = rng.random_range(0..l.max(1));
            let z = NoiseBatch::sample_from_rng(&mut rng, l, args.noise_samples).map_err(CliError::usage)?;
            Ok((s, y, z))
        })
        .collect::<Result<_, CliError>>()?;
    args.epsilons
        .iter()
        .map(|&eps| {
            let counts = draws
                .iter()
                .map(|(s, y, z)| {
                    noised_balanced(s, *y, args.k, eps, z)
                        .map(|e| e.grad.iter().filter(|g| **g != 0.0).count() as f64)
                })
                .collect::<Result<Vec<f64>, _>>()
                .map_err(CliError::usage)?;
            let n = counts.len() as f64;
            let mean = counts.iter().sum::<f64>() / n;
            let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(SparsityRow {
                epsilon: eps,
                mean_nnz: mean,
                std_nnz: var.sqrt(),
            })
        })
        .collect()
}
