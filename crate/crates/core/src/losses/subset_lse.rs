//! Log-sum-exp over all `K`-subsets, and the smoothed top-K hinge built on it.
//!
//! `log e_K(exp(x))`, the log of the `K`-th elementary symmetric polynomial
//! of `exp(x)`, is the log-sum-exp of `sum_{j in A} x_j` over all subsets
//! `|A| = K`. It follows the recursion
//!
//! ```text
//! T[i][k] = logaddexp(T[i-1][k], x_i + T[i-1][k-1])
//! ```
//!
//! in O(L K) time. Its gradient is the vector of subset-inclusion
//! marginals, obtained by running the recursion backwards.

use super::LossEval;
use crate::error::{check_k, check_label, Error, Result};

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `ln(e^u - 1)` for `u > 0`.
#[inline]
fn ln_expm1(u: f64) -> f64 {
    if u > 30.0 {
        u + (-(-u).exp_m1()).ln()
    } else {
        u.exp_m1().ln()
    }
}

/// Forward table of `log e_k` over prefixes of `x`, for `k <= kmax`.
#[derive(Debug, Clone)]
pub struct SubsetLse {
    x: Vec<f64>,
    kmax: usize,
    // (L + 1) rows of (kmax + 1) entries
    table: Vec<f64>,
}

impl SubsetLse {
    pub fn new(x: &[f64], kmax: usize) -> Self {
        let l = x.len();
        let w = kmax + 1;
        let mut table = vec![f64::NEG_INFINITY; (l + 1) * w];
        table[0] = 0.0;
        for i in 1..=l {
            let (prev, cur) = table.split_at_mut(i * w);
            let prev = &prev[(i - 1) * w..];
            let cur = &mut cur[..w];
            cur[0] = 0.0;
            for k in 1..=kmax.min(i) {
                cur[k] = log_add_exp(prev[k], x[i - 1] + prev[k - 1]);
            }
        }
        Self {
            x: x.to_vec(),
            kmax,
            table,
        }
    }

    #[inline]
    fn at(&self, i: usize, k: usize) -> f64 {
        self.table[i * (self.kmax + 1) + k]
    }

    /// `log e_k(exp(x))`; `-inf` when `k > L`.
    pub fn log_esp(&self, k: usize) -> f64 {
        assert!(k <= self.kmax);
        self.at(self.x.len(), k)
    }

    /// Gradient of `sum_k seed[k] * log e_k(exp(x))` with respect to `x`.
    pub fn backward(&self, seed: &[f64]) -> Vec<f64> {
        let l = self.x.len();
        let w = self.kmax + 1;
        assert_eq!(seed.len(), w);
        let mut grad = vec![0.0; l];
        let mut adj = seed.to_vec();
        let mut prev_adj = vec![0.0; w];
        for i in (1..=l).rev() {
            prev_adj.iter_mut().for_each(|a| *a = 0.0);
            let xi = self.x[i - 1];
            for k in 0..=self.kmax.min(i) {
                let a = adj[k];
                let here = self.at(i, k);
                if a == 0.0 || here == f64::NEG_INFINITY {
                    continue;
                }
                let stay = self.at(i - 1, k);
                if stay != f64::NEG_INFINITY {
                    prev_adj[k] += a * (stay - here).exp();
                }
                if k >= 1 {
                    let take = self.at(i - 1, k - 1);
                    if take != f64::NEG_INFINITY {
                        let p = (xi + take - here).exp();
                        prev_adj[k - 1] += a * p;
                        grad[i - 1] += a * p;
                    }
                }
            }
            std::mem::swap(&mut adj, &mut prev_adj);
        }
        grad
    }
}

/// `log e_K(exp(x))` and its gradient (subset-inclusion marginals).
pub fn log_esp_with_grad(x: &[f64], k: usize) -> (f64, Vec<f64>) {
    let t = SubsetLse::new(x, k);
    let mut seed = vec![0.0; k + 1];
    seed[k] = 1.0;
    (t.log_esp(k), t.backward(&seed))
}

/// Smoothed top-K hinge: `tau * LSE1 - tau * LSE2` where, over all subsets
/// `|A| = K`, `LSE2 = log sum exp(sum_{j in A} s_j / (K tau))` and `LSE1`
/// adds `1{y not in A} / tau` inside the exponent.
///
/// Subsets are split by whether they contain `y`, so only the DP over the
/// scores without `y` and the DP over all scores are needed.
pub fn smoothed_hinge(s: &[f64], y: usize, k: usize, tau: f64) -> Result<LossEval> {
    let l = s.len();
    check_label(y, l)?;
    check_k(k, 1, l.saturating_sub(1))?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let kt = k as f64 * tau;
    let x: Vec<f64> = s.iter().map(|&v| v / kt).collect();
    let rest: Vec<f64> = x
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .collect();

    let rest_dp = SubsetLse::new(&rest, k);
    let without_y = rest_dp.log_esp(k);
    let with_y = x[y] + rest_dp.log_esp(k - 1);
    let full_dp = SubsetLse::new(&x, k);
    let lse2 = full_dp.log_esp(k);
    let lse1 = log_add_exp(without_y + 1.0 / tau, with_y);

    // LSE1 - LSE2 = ln(1 + (e^{1/tau} - 1) P(y not in A)), free of cancellation
    let value = tau * softplus(ln_expm1(1.0 / tau) + without_y - lse2);

    let p_out = (without_y + 1.0 / tau - lse1).exp();
    let p_in = (with_y - lse1).exp();
    let mut seed = vec![0.0; k + 1];
    seed[k] = p_out;
    seed[k - 1] += p_in;
    let rest_grad = rest_dp.backward(&seed);
    let mut full_seed = vec![0.0; k + 1];
    full_seed[k] = 1.0;
    let full_grad = full_dp.backward(&full_seed);

    let mut grad = vec![0.0; l];
    let mut r = rest_grad.iter();
    for j in 0..l {
        let g1 = if j == y { p_in } else { *r.next().unwrap() };
        grad[j] = (g1 - full_grad[j]) / k as f64;
    }
    Ok(LossEval { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Visits every size-`k` subset of `0..n` as a sorted index list.
    fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, f);
                cur.pop();
            }
        }
        rec(0, n, k, &mut Vec::new(), f);
    }

    fn lse(v: &[f64]) -> f64 {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn esp_matches_enumeration() {
        let x = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        for k in 0..=6 {
            let mut terms = Vec::new();
            for_each_subset(6, k, &mut |a| terms.push(a.iter().map(|&i| x[i]).sum::<f64>()));
            let (v, g) = log_esp_with_grad(&x, k);
            assert!((v - lse(&terms)).abs() < 1e-12, "k={k}");
            // marginals sum to k
            assert!((g.iter().sum::<f64>() - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn esp_beyond_length_is_empty() {
        let t = SubsetLse::new(&[1.0, 2.0], 3);
        assert_eq!(t.log_esp(3), f64::NEG_INFINITY);
        assert_eq!(t.log_esp(0), 0.0);
    }

    #[test]
    fn esp_gradient_by_central_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, -0.4];
        let (_, g) = log_esp_with_grad(&x, 3);
        let h = 1e-6;
        for j in 0..x.len() {
            let mut p = x;
            p[j] += h;
            let mut m = x;
            m[j] -= h;
            let fd = (log_esp_with_grad(&p, 3).0 - log_esp_with_grad(&m, 3).0) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(smoothed_hinge(&[1.0, 2.0, 3.0], 0, 3, 1.0).is_err());
        assert!(smoothed_hinge(&[1.0, 2.0, 3.0], 0, 0, 1.0).is_err());
        assert!(smoothed_hinge(&[1.0, 2.0, 3.0], 0, 1, 0.0).is_err());
        assert!(smoothed_hinge(&[1.0, 2.0, 3.0], 3, 1, 1.0).is_err());
    }
}
