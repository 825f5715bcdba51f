//! Top-K accuracy, its per-class macro average, and shot-group breakdowns.
//!
//! A sample is a top-K hit when its label ranks among the K highest scores,
//! with ties broken towards the lower class index (the same rule as
//! [`crate::score::top_k`]).

use crate::error::{check_k, check_label, Error, Result};
use crate::score::rank_of;

/// Class buckets by training count: few `< few_below`, many `> many_above`,
/// medium in between (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotThresholds {
    pub few_below: usize,
    pub many_above: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self {
            few_below: 20,
            many_above: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotGroup {
    Few,
    Medium,
    Many,
}

impl ShotThresholds {
    pub fn group(&self, train_count: usize) -> ShotGroup {
        if train_count < self.few_below {
            ShotGroup::Few
        } else if train_count > self.many_above {
            ShotGroup::Many
        } else {
            ShotGroup::Medium
        }
    }
}

/// Macro top-K accuracy within each shot group; `None` for a group with no
/// evaluated class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShotGroupAccuracy {
    pub few: Option<f64>,
    pub medium: Option<f64>,
    pub many: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub samples: usize,
    pub top_k_accuracy: f64,
    /// Mean of the per-class accuracies over classes present in the split.
    pub macro_top_k_accuracy: f64,
    pub per_shot_group: ShotGroupAccuracy,
    /// `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
}

/// Streaming hit counter.
#[derive(Debug, Clone)]
pub struct TopKCounter {
    k: usize,
    hits: Vec<usize>,
    totals: Vec<usize>,
}

impl TopKCounter {
    pub fn new(classes: usize, k: usize) -> Result<Self> {
        check_k(k, 1, classes)?;
        Ok(Self {
            k,
            hits: vec![0; classes],
            totals: vec![0; classes],
        })
    }

    pub fn add(&mut self, scores: &[f64], y: usize) -> Result<()> {
        let classes = self.totals.len();
        if scores.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                actual: scores.len(),
            });
        }
        check_label(y, classes)?;
        self.totals[y] += 1;
        if rank_of(scores, y) < self.k {
            self.hits[y] += 1;
        }
        Ok(())
    }

    /// `train_counts` assigns each class to a shot group.
    pub fn report(&self, train_counts: &[usize], thresholds: ShotThresholds) -> Result<MetricsReport> {
        let classes = self.totals.len();
        if train_counts.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                actual: train_counts.len(),
            });
        }
        let samples: usize = self.totals.iter().sum();
        if samples == 0 {
            return Err(Error::InvalidArgument("empty split".into()));
        }
        let per_class: Vec<Option<f64>> = self
            .hits
            .iter()
            .zip(&self.totals)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect();
        let mean = |pred: &dyn Fn(usize) -> bool| {
            let vals: Vec<f64> = per_class
                .iter()
                .enumerate()
                .filter(|&(c, _)| pred(c))
                .filter_map(|(_, a)| *a)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let in_group = |g: ShotGroup| move |c: usize| thresholds.group(train_counts[c]) == g;
        Ok(MetricsReport {
            k: self.k,
            samples,
            top_k_accuracy: self.hits.iter().sum::<usize>() as f64 / samples as f64,
            macro_top_k_accuracy: mean(&|_| true).unwrap_or(0.0),
            per_shot_group: ShotGroupAccuracy {
                few: mean(&in_group(ShotGroup::Few)),
                medium: mean(&in_group(ShotGroup::Medium)),
                many: mean(&in_group(ShotGroup::Many)),
            },
            per_class,
        })
    }
}

/// Metrics for a batch of score vectors.
pub fn evaluate_scores<'a, I>(
    scores: I,
    classes: usize,
    k: usize,
    train_counts: &[usize],
    thresholds: ShotThresholds,
) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    let mut counter = TopKCounter::new(classes, k)?;
    for (s, y) in scores {
        counter.add(s, y)?;
    }
    counter.report(train_counts, thresholds)
}
