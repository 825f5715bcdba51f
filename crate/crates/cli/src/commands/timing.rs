//! Wall-clock cost of one batch of loss evaluations as K grows.
//!
//! Every loss sees the same random score batch. Repeats are interleaved
//! across K and losses so slow drift of the machine spreads evenly; warmup
//! rounds are discarded. Runs on the calling thread only.

use std::time::Instant;

use noised_topk::losses::{Loss, LossKind, LossOptions};
use noised_topk::noise::{derive_seed, rng_from_seed, NoiseBatch};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const SCHEMA: &[ParamSpec] = &[
    p("K-grid", "1,5,10,20", "comma-separated K values"),
    p("L", "100", "number of classes"),
    p("B", "10", "noise samples of the noised loss"),
    p("epsilon", "0.1", "noise scale of the noised loss"),
    p("tau", "1", "temperature of smoothed_hinge"),
    p("batch", "256", "score vectors per timed batch"),
    p("repeats", "30", "timed rounds per (K, loss)"),
    p("warmup", "3", "untimed rounds"),
    p("losses", "noised_balanced,smoothed_hinge,ce", "losses to time"),
    p("seed", "0", "RNG seed"),
];

pub const COLUMNS: &[&str] = &["K", "loss_name", "mean_eval_time", "std"];

#[derive(Debug, Clone)]
pub struct TimingArgs {
    pub ks: Vec<usize>,
    pub classes: usize,
    pub noise_samples: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub losses: Vec<LossKind>,
    pub seed: u64,
}

impl TimingArgs {
    pub fn from_params(ps: &Params) -> Result<Self, CliError> {
        Ok(Self {
            ks: ps.list("K-grid")?,
            classes: ps.get("L")?,
            noise_samples: ps.get("B")?,
            epsilon: ps.get("epsilon")?,
            tau: ps.get("tau")?,
            batch: ps.get("batch")?,
            repeats: ps.get("repeats")?,
            warmup: ps.get("warmup")?,
            losses: ps.list("losses")?,
            seed: ps.get("seed")?,
        })
    }
}

/// Timings of one (K, loss) cell; `seconds` holds every timed repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub k: usize,
    pub loss: LossKind,
    pub seconds: Vec<f64>,
}

impl TimingRow {
    pub fn mean(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.seconds.len() as f64;
        (self.seconds.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }
}

pub fn run(args: &TimingArgs) -> Result<Vec<TimingRow>, CliError> {
    if args.ks.is_empty() || args.losses.is_empty() || args.batch == 0 || args.repeats == 0 {
        return Err(CliError::Usage("K-grid, losses, batch and repeats must be non-empty".into()));
    }
    let l = args.classes;
    let mut rng = rng_from_seed(args.seed);
    let scores: Vec<Vec<f64>> = (0..args.batch)
        .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let labels: Vec<usize> = (0..args.batch).map(|_| rng.random_range(0..l.max(1))).collect();
    let noise = NoiseBatch::sample(l, args.noise_samples.max(1), derive_seed(args.seed, 1)).map_err(CliError::usage)?;

    let mut cells = Vec::new();
    for &k in &args.ks {
        for &kind in &args.losses {
            let opts = LossOptions {
                k,
                epsilon: args.epsilon,
                samples: args.noise_samples,
                tau: args.tau,
                ..LossOptions::default()
            };
            let loss = Loss::build(kind, &opts).map_err(CliError::usage)?;
            // reject invalid (K, L) before timing anything
            loss.eval(&scores[0], labels[0], Some(&noise)).map_err(CliError::usage)?;
            cells.push((TimingRow { k, loss: kind, seconds: Vec::new() }, loss));
        }
    }
    let mut sink = 0.0;
    for round in 0..args.warmup + args.repeats {
        for (row, loss) in cells.iter_mut() {
            let start = Instant::now();
            for (s, &y) in scores.iter().zip(&labels) {
                // errors were ruled out above
                sink += loss.eval(s, y, Some(&noise)).map(|e| e.value).unwrap_or(0.0);
            }
            let t = start.elapsed().as_secs_f64();
            if round >= args.warmup {
                row.seconds.push(t);
            }
        }
    }
    std::hint::black_box(sink);
    Ok(cells.into_iter().map(|(r, _)| r).collect())
}

/// Least-squares slope with a two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub low: f64,
    pub high: f64,
}

impl SlopeFit {
    pub fn contains_zero(&self) -> bool {
        self.low <= 0.0 && 0.0 <= self.high
    }
}

/// Needs at least three points with two distinct x values.
pub fn fit_slope(points: &[(f64, f64)], level: f64) -> Option<SlopeFit> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).ok()?.inverse_cdf(0.5 + level / 2.0);
    Some(SlopeFit {
        slope,
        stderr,
        low: slope - t * stderr,
        high: slope + t * stderr,
    })
}
