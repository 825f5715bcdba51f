//! Cross-entropy, LDAM and focal loss on logits.

use super::{LossEval, MarginTable};
use crate::error::{check_label, Error, Result};

/// `log sum_j exp(s_j)` with max subtraction.
pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + s.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(s);
    s.iter().map(|&v| (v - lse).exp()).collect()
}

/// `-ln softmax(s)_y`, gradient `softmax(s) - delta_y`.
pub fn cross_entropy(s: &[f64], y: usize) -> Result<LossEval> {
    check_label(y, s.len())?;
    let lse = log_sum_exp(s);
    let mut grad: Vec<f64> = s.iter().map(|&v| (v - lse).exp()).collect();
    grad[y] -= 1.0;
    Ok(LossEval {
        value: lse - s[y],
        grad,
    })
}

/// Cross-entropy with the true-class logit lowered by its margin `m_y`.
pub fn ldam(s: &[f64], y: usize, margins: &MarginTable) -> Result<LossEval> {
    check_label(y, s.len())?;
    if margins.num_classes() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            actual: margins.num_classes(),
        });
    }
    let mut shifted = s.to_vec();
    shifted[y] -= margins.margin(y);
    cross_entropy(&shifted, y)
}

/// Which expression the focal loss evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FocalForm {
    /// `(1 - p_y)^gamma * (-ln p_y)`.
    #[default]
    Standard,
    /// `(1 - ln CE)^gamma * CE`, kept for side-by-side comparison only; it is
    /// undefined once `CE > e` for non-integer `gamma`.
    TableLiteral,
}

impl std::str::FromStr for FocalForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(FocalForm::Standard),
            "table_literal" => Ok(FocalForm::TableLiteral),
            _ => Err(Error::Parse(format!(
                "unknown focal form `{s}` (expected standard or table_literal)"
            ))),
        }
    }
}

/// Focal loss, gradient by the product rule.
pub fn focal(s: &[f64], y: usize, gamma: f64, form: FocalForm) -> Result<LossEval> {
    check_label(y, s.len())?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "focal gamma must be >= 0, got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return cross_entropy(s, y);
    }
    let lse = log_sum_exp(s);
    let probs: Vec<f64> = s.iter().map(|&v| (v - lse).exp()).collect();
    let ce = lse - s[y];
    let (value, coef) = match form {
        FocalForm::Standard => {
            let p = probs[y];
            // 1 - p_y summed from the other classes keeps precision near p_y = 1
            let q: f64 = probs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .sum();
            let weight = q.powf(gamma);
            let slope = if q > 0.0 {
                gamma * q.powf(gamma - 1.0) * p * ce
            } else {
                0.0
            };
            (weight * ce, weight + slope)
        }
        FocalForm::TableLiteral => {
            let base = 1.0 - ce.ln();
            let value = base.powf(gamma) * ce;
            let coef = base.powf(gamma) - gamma * base.powf(gamma - 1.0);
            if !value.is_finite() || !coef.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "table-literal focal loss is undefined here (CE = {ce})"
                )));
            }
            (value, coef)
        }
    };
    let mut grad: Vec<f64> = probs.iter().map(|&p| coef * p).collect();
    grad[y] -= coef;
    Ok(LossEval { value, grad })
}
