use crate::error::{Error, Result};

/// Per-class hinge margins `m_y = C / n_y^(1/4)`: rarer classes get larger
/// margins.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    margins: Vec<f64>,
    counts: Vec<usize>,
    scale: f64,
}

impl MarginTable {
    /// Margins from per-class training counts and the constant `C > 0`.
    pub fn from_counts(counts: &[usize], scale: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("empty class-count table".into()));
        }
        if let Some(y) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "class {y} has no training samples"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "margin constant must be positive, got {scale}"
            )));
        }
        Ok(Self::build(counts, scale))
    }

    /// Picks `C` so that the rarest class gets exactly `max_margin`, the
    /// parametrisation used for hyperparameter grids.
    pub fn from_max_margin(counts: &[usize], max_margin: f64) -> Result<Self> {
        let min = counts.iter().copied().min().unwrap_or(0);
        if min == 0 {
            return Self::from_counts(counts, max_margin);
        }
        Self::from_counts(counts, max_margin * (min as f64).powf(0.25))
    }

    /// The same margin `m >= 0` for all `L` classes.
    pub fn constant(classes: usize, margin: f64) -> Result<Self> {
        if classes == 0 || !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "constant margin table needs classes > 0 and margin >= 0, got {classes}, {margin}"
            )));
        }
        Ok(Self {
            margins: vec![margin; classes],
            counts: vec![1; classes],
            scale: margin,
        })
    }

    fn build(counts: &[usize], scale: f64) -> Self {
        let margins = counts
            .iter()
            .map(|&n| scale / (n as f64).powf(0.25))
            .collect();
        Self {
            margins,
            counts: counts.to_vec(),
            scale,
        }
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn margin(&self, y: usize) -> f64 {
        self.margins[y]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// The constant `C`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn max_margin(&self) -> f64 {
        self.margins.iter().copied().fold(0.0, f64::max)
    }

    pub fn num_classes(&self) -> usize {
        self.margins.len()
    }
}
