//! Hinge-family top-K losses.
//!
//! All of them share one activation rule: with `arg = margin + stat - s_y`,
//! the loss is `max(arg, 0)` and the (sub)gradient is
//! `1{arg >= 0} * (d stat / ds - delta_y)`. At the kink (`arg == 0`) the
//! gradient is therefore the active one.

use super::{LossEval, MarginTable};
use crate::error::{check_k, check_label, Error, Result};
use crate::noise::NoiseBatch;
use crate::score::Selector;
use crate::smoothing::mc_top_with_grad;

fn hinge_from_stat(s: &[f64], y: usize, margin: f64, stat: f64, stat_grad: Vec<f64>) -> LossEval {
    let arg = margin + stat - s[y];
    if arg >= 0.0 {
        let mut grad = stat_grad;
        grad[y] -= 1.0;
        LossEval { value: arg, grad }
    } else {
        LossEval {
            value: 0.0,
            grad: vec![0.0; s.len()],
        }
    }
}

/// `1{top_K(s) > s_y}`. Ties with the true class are not errors.
pub fn topk_zero_one(s: &[f64], y: usize, k: usize) -> Result<f64> {
    check_label(y, s.len())?;
    check_k(k, 1, s.len())?;
    let i = Selector::new().kth(s, k);
    Ok(if s[i] > s[y] { 1.0 } else { 0.0 })
}

/// `(1 + top_K(s without y) - s_y)_+`.
pub fn hinge_topk(s: &[f64], y: usize, k: usize) -> Result<LossEval> {
    let l = s.len();
    check_label(y, l)?;
    check_k(k, 1, l.saturating_sub(1))?;
    let mut masked = s.to_vec();
    masked[y] = f64::NEG_INFINITY;
    let j = Selector::new().kth(&masked, k);
    let mut g = vec![0.0; l];
    g[j] = 1.0;
    Ok(hinge_from_stat(s, y, 1.0, s[j], g))
}

/// `((1/K) topsum_K(1 - delta_y + s) - s_y)_+`; upper-bounds [`hinge_topk`].
pub fn cvx_hinge_topk(s: &[f64], y: usize, k: usize) -> Result<LossEval> {
    let l = s.len();
    check_label(y, l)?;
    check_k(k, 1, l)?;
    let mut a: Vec<f64> = s.iter().map(|&v| v + 1.0).collect();
    a[y] = s[y];
    let kf = k as f64;
    let mut g = vec![0.0; l];
    let mut sum = 0.0;
    for &i in Selector::new().select(&a, k) {
        sum += a[i];
        g[i] = 1.0 / kf;
    }
    // margin 0: the +1 already sits inside `a`
    Ok(hinge_from_stat(s, y, 0.0, sum / kf, g))
}

/// Calibrated top-K hinge `(1 + top_{K+1}(s) - s_y)_+`, `K <= L - 1`.
pub fn cal_hinge_topk(s: &[f64], y: usize, k: usize) -> Result<LossEval> {
    let l = s.len();
    check_label(y, l)?;
    check_k(k, 1, l.saturating_sub(1))?;
    let i = Selector::new().kth(s, k + 1);
    let mut g = vec![0.0; l];
    g[i] = 1.0;
    Ok(hinge_from_stat(s, y, 1.0, s[i], g))
}

/// Noised balanced top-K hinge: the calibrated hinge with `top_{K+1}`
/// replaced by its Monte Carlo smoothed estimate over `noise`.
pub fn noised_balanced(
    s: &[f64],
    y: usize,
    k: usize,
    epsilon: f64,
    noise: &NoiseBatch,
) -> Result<LossEval> {
    noised_with_margin(s, y, k, epsilon, noise, 1.0)
}

/// Noised imbalanced top-K hinge: per-class margin `m_y` in place of 1.
pub fn noised_imbalanced(
    s: &[f64],
    y: usize,
    k: usize,
    epsilon: f64,
    noise: &NoiseBatch,
    margins: &MarginTable,
) -> Result<LossEval> {
    check_label(y, s.len())?;
    if margins.num_classes() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            actual: margins.num_classes(),
        });
    }
    noised_with_margin(s, y, k, epsilon, noise, margins.margin(y))
}

fn noised_with_margin(
    s: &[f64],
    y: usize,
    k: usize,
    epsilon: f64,
    noise: &NoiseBatch,
    margin: f64,
) -> Result<LossEval> {
    let l = s.len();
    check_label(y, l)?;
    check_k(k, 1, l.saturating_sub(1))?;
    let (stat, grad) = mc_top_with_grad(s, k + 1, epsilon, noise)?;
    Ok(hinge_from_stat(s, y, margin, stat, grad.into_weights()))
}
