//! Loss surfaces over the scaled simplex `2 * Delta_3`.
//!
//! Mesh points are `2 (i, j, n - i - j) / n`. Noised losses are averaged over
//! replications; each replication draws one noise batch shared by the whole
//! mesh. Values are min-max rescaled to `[0, 1]`.

use noised_topk::losses::{Loss, LossKind, LossOptions, MarginTable};
use noised_topk::noise::{derive_seed, NoiseBatch};

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const SCHEMA: &[ParamSpec] = &[
    p("loss", "noised_balanced", "loss name"),
    p("L", "3", "number of classes (must be 3)"),
    p("K", "2", "top-K parameter"),
    p("y", "2", "true label, 0-based"),
    p("mesh-steps", "40", "subdivisions per simplex edge"),
    p("replications", "100", "noise replications averaged for noised losses"),
    p("epsilon", "0.3", "noise scale"),
    p("B", "1", "noise samples per replication"),
    p("tau", "0.4", "temperature of smoothed_hinge"),
    p("gamma", "2", "focal exponent"),
    p("counts", "100,10,1", "class counts for the margin schedule"),
    p("max-margin", "1", "largest class margin"),
    p("seed", "0", "RNG seed"),
];

pub const COLUMNS: &[&str] = &["s1", "s2", "s3", "loss_value", "raw_value"];

#[derive(Debug, Clone)]
pub struct SimplexArgs {
    pub loss: LossKind,
    pub opts: LossOptions,
    pub y: usize,
    pub mesh_steps: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimplexArgs {
    pub fn from_params(ps: &Params) -> Result<Self, CliError> {
        if ps.get::<usize>("L")? != 3 {
            return Err(CliError::Usage("simplex plots need L = 3".into()));
        }
        let loss: LossKind = ps.get("loss")?;
        let counts: Vec<usize> = ps.list("counts")?;
        let margins = match loss {
            LossKind::Ldam | LossKind::NoisedImbalanced => Some(
                MarginTable::from_max_margin(&counts, ps.get("max-margin")?).map_err(CliError::usage)?,
            ),
            _ => None,
        };
        Ok(Self {
            loss,
            opts: LossOptions {
                k: ps.get("K")?,
                epsilon: ps.get("epsilon")?,
                samples: ps.get("B")?,
                tau: ps.get("tau")?,
                gamma: ps.get("gamma")?,
                margins,
                ..LossOptions::default()
            },
            y: ps.get("y")?,
            mesh_steps: ps.get("mesh-steps")?,
            replications: ps.get("replications")?,
            seed: ps.get("seed")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRow {
    pub s: [f64; 3],
    /// Barycentric grid coordinates `(i, j)`.
    pub cell: (usize, usize),
    pub value: f64,
    pub raw: f64,
}

pub fn mesh(steps: usize) -> Vec<((usize, usize), [f64; 3])> {
    let n = steps as f64;
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps - i {
            let k = steps - i - j;
            out.push(((i, j), [2.0 * i as f64 / n, 2.0 * j as f64 / n, 2.0 * k as f64 / n]));
        }
    }
    out
}

pub fn run(args: &SimplexArgs) -> Result<Vec<SimplexRow>, CliError> {
    if args.mesh_steps == 0 {
        return Err(CliError::Usage("mesh-steps must be positive".into()));
    }
    if args.y > 2 {
        return Err(CliError::Usage(format!("label {} out of range for L = 3", args.y)));
    }
    let loss = Loss::build(args.loss, &args.opts).map_err(CliError::usage)?;
    let points = mesh(args.mesh_steps);
    let mut raw = vec![0.0; points.len()];
    match loss.noise_samples() {
        Some(b) => {
            if args.replications == 0 {
                return Err(CliError::Usage("replications must be positive".into()));
            }
            for r in 0..args.replications {
                let z = NoiseBatch::sample(3, b, derive_seed(args.seed, r as u64)).map_err(CliError::usage)?;
                for (acc, (_, s)) in raw.iter_mut().zip(&points) {
                    *acc += loss.value(s, args.y, Some(&z)).map_err(CliError::usage)?;
                }
            }
            raw.iter_mut().for_each(|v| *v /= args.replications as f64);
        }
        None => {
            for (acc, (_, s)) in raw.iter_mut().zip(&points) {
                *acc = loss.value(s, args.y, None).map_err(CliError::usage)?;
            }
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(points
        .into_iter()
        .zip(raw)
        .map(|((cell, s), r)| SimplexRow {
            s,
            cell,
            value: if hi > lo { (r - lo) / (hi - lo) } else { 0.0 },
            raw: r,
        })
        .collect())
}

/// Largest absolute difference of rescaled values between mesh neighbours.
pub fn roughness(rows: &[SimplexRow]) -> f64 {
    let at: std::collections::HashMap<(usize, usize), f64> = rows.iter().map(|r| (r.cell, r.value)).collect();
    let mut worst = 0.0f64;
    for r in rows {
        let (i, j) = r.cell;
        for n in [(i + 1, j), (i, j + 1), (i + 1, j.wrapping_sub(1))] {
            if let Some(v) = at.get(&n) {
                worst = worst.max((v - r.value).abs());
            }
        }
    }
    worst
}
