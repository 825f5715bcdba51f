//! Empirical probes of top-K calibration.
//!
//! A loss is top-K calibrated when, for every conditional distribution `pi`,
//! the infimum of the conditional risk over score vectors that are *not*
//! top-K preserving with respect to `pi` is strictly above the unrestricted
//! infimum. [`calibration_probe`] compares the two minima over a finite
//! cubic grid of scores. A positive gap is consistent with calibration; a
//! zero gap on the grid is evidence against it, not a proof.

use rayon::prelude::*;

use crate::error::{check_k, Error, Result};
use crate::score::Selector;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution(Vec<f64>);

impl ConditionalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must be finite and non-negative: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("no classes".into()));
        }
        Ok(Self(vec![1.0 / classes as f64; classes]))
    }

    pub fn point_mass(classes: usize, y: usize) -> Result<Self> {
        crate::error::check_label(y, classes)?;
        let mut p = vec![0.0; classes];
        p[y] = 1.0;
        Ok(Self(p))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

/// Whether `y_vec` is top-K preserving with respect to `y_ref`: every
/// coordinate strictly above `top_{K+1}(y_ref)` stays strictly above
/// `top_{K+1}(y_vec)`, and every coordinate strictly below `top_K(y_ref)`
/// stays strictly below `top_K(y_vec)`.
pub fn top_k_preserving(y_vec: &[f64], y_ref: &[f64], k: usize) -> Result<bool> {
    if y_vec.len() != y_ref.len() {
        return Err(Error::DimensionMismatch {
            expected: y_ref.len(),
            actual: y_vec.len(),
        });
    }
    check_k(k, 1, y_ref.len().saturating_sub(1))?;
    let mut sel = Selector::new();
    Ok(preserving(y_vec, &RefThresholds::new(y_ref, k, &mut sel), k, &mut sel))
}

struct RefThresholds<'a> {
    values: &'a [f64],
    kth: f64,
    next: f64,
}

impl<'a> RefThresholds<'a> {
    fn new(values: &'a [f64], k: usize, sel: &mut Selector) -> Self {
        let kth = values[sel.kth(values, k)];
        let next = values[sel.kth(values, k + 1)];
        Self { values, kth, next }
    }
}

fn preserving(y_vec: &[f64], r: &RefThresholds<'_>, k: usize, sel: &mut Selector) -> bool {
    let kth = y_vec[sel.kth(y_vec, k)];
    let next = y_vec[sel.kth(y_vec, k + 1)];
    r.values.iter().zip(y_vec).all(|(&rv, &v)| {
        (rv <= r.next || v > next) && (rv >= r.kth || v < kth)
    })
}

/// `sum_y pi_y * loss(s, y)`.
pub fn conditional_risk<F>(loss: F, s: &[f64], pi: &ConditionalDistribution) -> Result<f64>
where
    F: Fn(&[f64], usize) -> Result<f64>,
{
    if pi.num_classes() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            actual: pi.num_classes(),
        });
    }
    pi.probs()
        .iter()
        .enumerate()
        .try_fold(0.0, |acc, (y, &p)| Ok(acc + p * loss(s, y)?))
}

/// Cubic grid `[-radius, radius]^L` with `steps` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGrid {
    pub radius: f64,
    pub steps: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            radius: 3.0,
            steps: 61,
        }
    }
}

/// Largest grid the probe will enumerate.
pub const MAX_GRID_POINTS: usize = 20_000_000;

/// Largest class count the probe accepts.
pub const MAX_PROBE_CLASSES: usize = 4;

impl ProbeGrid {
    fn coordinate(&self, i: usize) -> f64 {
        -self.radius + 2.0 * self.radius * i as f64 / (self.steps - 1) as f64
    }

    fn point(&self, mut index: usize, out: &mut [f64]) {
        for o in out.iter_mut().rev() {
            *o = self.coordinate(index % self.steps);
            index /= self.steps;
        }
    }

    fn size(&self, classes: usize) -> Result<usize> {
        if !(self.radius > 0.0 && self.radius.is_finite()) || self.steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs radius > 0 and at least 2 steps, got {self:?}"
            )));
        }
        if !(2..=MAX_PROBE_CLASSES).contains(&classes) {
            return Err(Error::InvalidArgument(format!(
                "calibration probe supports 2..={MAX_PROBE_CLASSES} classes, got {classes}"
            )));
        }
        let n = (0..classes).try_fold(1usize, |acc, _| acc.checked_mul(self.steps));
        match n {
            Some(n) if n <= MAX_GRID_POINTS => Ok(n),
            _ => Err(Error::InvalidArgument(format!(
                "grid of {}^{classes} points exceeds the {MAX_GRID_POINTS}-point limit",
                self.steps
            ))),
        }
    }
}

/// Losses `loss(s, y)` for every grid point and label, computed once so that
/// many distributions can be probed against the same grid.
#[derive(Debug, Clone)]
pub struct RiskTable {
    grid: ProbeGrid,
    classes: usize,
    // points x classes
    losses: Vec<f64>,
}

impl RiskTable {
    pub fn new<F>(loss: F, classes: usize, grid: ProbeGrid) -> Result<Self>
    where
        F: Fn(&[f64], usize) -> Result<f64> + Sync,
    {
        let n = grid.size(classes)?;
        let rows: Result<Vec<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = vec![0.0; classes];
                grid.point(i, &mut s);
                (0..classes).map(|y| loss(&s, y)).collect()
            })
            .collect();
        Ok(Self {
            grid,
            classes,
            losses: rows?.into_iter().flatten().collect(),
        })
    }

    pub fn grid(&self) -> ProbeGrid {
        self.grid
    }

    /// Unrestricted and non-top-K-preserving risk minima for `pi`.
    pub fn probe(&self, pi: &ConditionalDistribution, k: usize) -> Result<ProbeOutcome> {
        if pi.num_classes() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: pi.num_classes(),
            });
        }
        check_k(k, 1, self.classes - 1)?;
        let p = pi.probs();
        let mut sel = Selector::new();
        let thresholds = RefThresholds::new(p, k, &mut sel);
        let mut s = vec![0.0; self.classes];
        let mut out = ProbeOutcome {
            unrestricted_min: f64::INFINITY,
            restricted_min: f64::INFINITY,
            unrestricted_argmin: Vec::new(),
            restricted_argmin: Vec::new(),
        };
        let (mut best_all, mut best_restricted) = (None, None);
        for (i, row) in self.losses.chunks_exact(self.classes).enumerate() {
            let risk: f64 = row.iter().zip(p).map(|(l, w)| l * w).sum();
            if risk < out.unrestricted_min {
                out.unrestricted_min = risk;
                best_all = Some(i);
            }
            if risk < out.restricted_min {
                self.grid.point(i, &mut s);
                if !preserving(&s, &thresholds, k, &mut sel) {
                    out.restricted_min = risk;
                    best_restricted = Some(i);
                }
            }
        }
        let at = |i: Option<usize>| {
            i.map(|i| {
                let mut v = vec![0.0; self.classes];
                self.grid.point(i, &mut v);
                v
            })
            .unwrap_or_default()
        };
        out.unrestricted_argmin = at(best_all);
        out.restricted_argmin = at(best_restricted);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub unrestricted_min: f64,
    /// `+inf` when every grid point is top-K preserving.
    pub restricted_min: f64,
    pub unrestricted_argmin: Vec<f64>,
    pub restricted_argmin: Vec<f64>,
}

impl ProbeOutcome {
    pub fn gap(&self) -> f64 {
        self.restricted_min - self.unrestricted_min
    }
}

/// One row of a calibration probe report.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub loss: String,
    pub k: usize,
    pub pi: Vec<f64>,
    pub unrestricted_min: f64,
    pub restricted_min: f64,
    pub gap: f64,
}

impl ProbeReport {
    fn from_outcome(loss: &str, k: usize, pi: &ConditionalDistribution, o: &ProbeOutcome) -> Self {
        Self {
            loss: loss.to_string(),
            k,
            pi: pi.probs().to_vec(),
            unrestricted_min: o.unrestricted_min,
            restricted_min: o.restricted_min,
            gap: o.gap(),
        }
    }
}

/// Minimises the conditional risk of `loss` over the grid, unrestricted and
/// restricted to scores that are not top-K preserving w.r.t. `pi`.
pub fn calibration_probe<F>(
    name: &str,
    loss: F,
    pi: &ConditionalDistribution,
    k: usize,
    grid: ProbeGrid,
) -> Result<ProbeReport>
where
    F: Fn(&[f64], usize) -> Result<f64> + Sync,
{
    check_k(k, 1, pi.num_classes().saturating_sub(1))?;
    let table = RiskTable::new(loss, pi.num_classes(), grid)?;
    let o = table.probe(pi, k)?;
    Ok(ProbeReport::from_outcome(name, k, pi, &o))
}

/// Every point of the simplex grid `{ i / steps }` in `classes` dimensions.
pub fn simplex_grid(classes: usize, steps: usize) -> Vec<ConditionalDistribution> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<ConditionalDistribution>) {
        if slots == 1 {
            cur.push(left);
            let probs: Vec<f64> = cur.iter().map(|&c| c as f64 / steps as f64).collect();
            // exact sum: the last coordinate absorbs the rounding
            let head: f64 = probs[..probs.len() - 1].iter().sum();
            let mut probs = probs;
            let last = probs.len() - 1;
            probs[last] = 1.0 - head;
            out.push(ConditionalDistribution(probs));
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(left - c, slots - 1, cur, steps, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if classes >= 1 && steps >= 1 {
        rec(steps, classes, &mut Vec::new(), steps, &mut out);
    }
    out
}

/// Probes every distribution of a simplex grid and returns one report per
/// distribution, smallest gap first. Distributions for which every score is
/// top-K preserving (infinite gap) are dropped.
pub fn search_calibration_gaps<F>(
    name: &str,
    loss: F,
    classes: usize,
    k: usize,
    grid: ProbeGrid,
    simplex_steps: usize,
) -> Result<Vec<ProbeReport>>
where
    F: Fn(&[f64], usize) -> Result<f64> + Sync,
{
    check_k(k, 1, classes.saturating_sub(1))?;
    let table = RiskTable::new(loss, classes, grid)?;
    let mut reports = simplex_grid(classes, simplex_steps)
        .par_iter()
        .map(|pi| {
            table
                .probe(pi, k)
                .map(|o| ProbeReport::from_outcome(name, k, pi, &o))
        })
        .collect::<Result<Vec<_>>>()?;
    reports.retain(|r| r.gap.is_finite());
    reports.sort_by(|a, b| a.gap.total_cmp(&b.gap));
    Ok(reports)
}
