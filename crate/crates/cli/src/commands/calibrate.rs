//! Grid probe of top-K calibration for small L.

use noised_topk::calibration::{
    search_calibration_gaps, ConditionalDistribution, ProbeGrid, ProbeReport, RiskTable,
};
use noised_topk::losses::{Loss, LossKind, LossOptions};
use noised_topk::noise::NoiseBatch;

use crate::params::{p, ParamSpec, Params};
use crate::CliError;

pub const SCHEMA: &[ParamSpec] = &[
    p("loss", "ce", "loss name"),
    p("L", "3", "number of classes (2 to 4)"),
    p("K", "1", "top-K parameter"),
    p("pi", "", "comma-separated distribution; empty searches a simplex grid"),
    p("radius", "3", "score grid half-width"),
    p("grid-steps", "61", "score grid points per axis"),
    p("simplex-steps", "20", "distribution grid resolution for the search"),
    p("rows", "0", "keep this many smallest-gap rows of a search (0 for all)"),
    p("epsilon", "0.1", "noise scale"),
    p("B", "100", "noise samples, fixed for the whole probe"),
    p("tau", "1", "temperature of smoothed_hinge"),
    p("gamma", "2", "focal exponent"),
    p("seed", "0", "seed of the fixed noise"),
];

pub const COLUMNS: &[&str] = &["loss", "K", "pi", "unrestricted_min", "restricted_min", "gap"];

pub fn run(ps: &Params) -> Result<Vec<ProbeReport>, CliError> {
    let kind: LossKind = ps.get("loss")?;
    let classes: usize = ps.get("L")?;
    let k: usize = ps.get("K")?;
    if matches!(kind, LossKind::Ldam | LossKind::NoisedImbalanced) {
        return Err(CliError::Usage(format!("calibrate does not support `{kind}`")));
    }
    let loss = Loss::build(
        kind,
        &LossOptions {
            k,
            epsilon: ps.get("epsilon")?,
            samples: ps.get("B")?,
            tau: ps.get("tau")?,
            gamma: ps.get("gamma")?,
            ..LossOptions::default()
        },
    )
    .map_err(CliError::usage)?;
    let noise = match loss.noise_samples() {
        Some(b) => Some(NoiseBatch::sample(classes, b, ps.get("seed")?).map_err(CliError::usage)?),
        None => None,
    };
    let f = |s: &[f64], y: usize| loss.value(s, y, noise.as_ref());
    let grid = ProbeGrid {
        radius: ps.get("radius")?,
        steps: ps.get("grid-steps")?,
    };
    let pi: Vec<f64> = ps.list("pi")?;
    if pi.is_empty() {
        let mut rows = search_calibration_gaps(kind.name(), f, classes, k, grid, ps.get("simplex-steps")?)
            .map_err(CliError::usage)?;
        let keep: usize = ps.get("rows")?;
        if keep > 0 {
            rows.truncate(keep);
        }
        Ok(rows)
    } else {
        let pi = ConditionalDistribution::new(pi).map_err(CliError::usage)?;
        let table = RiskTable::new(f, classes, grid).map_err(CliError::usage)?;
        let o = table.probe(&pi, k).map_err(CliError::usage)?;
        Ok(vec![ProbeReport {
            loss: kind.name().to_string(),
            k,
            pi: pi.probs().to_vec(),
            unrestricted_min: o.unrestricted_min,
            restricted_min: o.restricted_min,
            gap: o.gap(),
        }])
    }
}
