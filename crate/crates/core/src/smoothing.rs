//! Gaussian perturbed-optimizer smoothing of `topsum_K` and `top_K`.
//!
//! `topsum_{K,eps}(s) = E[topsum_K(s + eps Z)]` with `Z ~ N(0, I_L)`, and
//! `top_{K,eps} = topsum_{K,eps} - topsum_{K-1,eps}`. The estimators below
//! average over an explicit [`NoiseBatch`]. Both topsum estimates inside
//! [`mc_top`] read the same batch, so the difference reduces to the mean of
//! the pathwise `top_K(s + eps Z_b)` values.
//!
//! With `eps = 0` every estimator returns the exact operator bit for bit.

use crate::error::{check_k, Error, Result};
use crate::noise::{rng_from_seed, NoiseBatch};
use crate::score::{check_finite, KHotIndicator, Selector};

use rand::Rng;
use rand_distr::StandardNormal;

/// Noise scale, cardinality and sample count of a smoothed operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub epsilon: f64,
    pub k: usize,
    pub samples: usize,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, k: usize, samples: usize) -> Result<Self> {
        let p = Self {
            epsilon,
            k,
            samples,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.samples < 1 {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    Ok(())
}

fn check_inputs(s: &[f64], epsilon: f64, noise: &NoiseBatch) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    check_finite(s)?;
    check_epsilon(epsilon)?;
    noise.check_width(s.len())
}

#[inline]
fn perturb(out: &mut [f64], s: &[f64], epsilon: f64, z: &[f64]) {
    for ((o, &v), &n) in out.iter_mut().zip(s).zip(z) {
        *o = v + epsilon * n;
    }
}

/// `(1/B) sum_b topsum_K(s + eps Z_b)`, for `0 <= K <= L`.
pub fn mc_topsum(s: &[f64], k: usize, epsilon: f64, noise: &NoiseBatch) -> Result<f64> {
    check_inputs(s, epsilon, noise)?;
    check_k(k, 0, s.len())?;
    let mut sel = Selector::new();
    if epsilon == 0.0 {
        return Ok(sel.topsum(s, k));
    }
    let mut buf = vec![0.0; s.len()];
    let total: f64 = noise
        .rows()
        .map(|z| {
            perturb(&mut buf, s, epsilon, z);
            sel.topsum(&buf, k)
        })
        .sum();
    Ok(total / noise.len() as f64)
}

/// Smoothed `top_K` estimate, `mc_topsum(K) - mc_topsum(K - 1)` under common
/// random numbers, for `1 <= K <= L`.
pub fn mc_top(s: &[f64], k: usize, epsilon: f64, noise: &NoiseBatch) -> Result<f64> {
    Ok(mc_top_with_grad(s, k, epsilon, noise)?.0)
}

/// Mean of the exact `argtop_K` indicators over the perturbed vectors.
pub fn mc_grad_top(s: &[f64], k: usize, epsilon: f64, noise: &NoiseBatch) -> Result<KHotIndicator> {
    Ok(mc_top_with_grad(s, k, epsilon, noise)?.1)
}

/// Value and gradient estimate of the smoothed `top_K` in one pass.
pub fn mc_top_with_grad(
    s: &[f64],
    k: usize,
    epsilon: f64,
    noise: &NoiseBatch,
) -> Result<(f64, KHotIndicator)> {
    check_inputs(s, epsilon, noise)?;
    check_k(k, 1, s.len())?;
    let l = s.len();
    let mut sel = Selector::new();
    if epsilon == 0.0 {
        let i = sel.kth(s, k);
        let mut w = vec![0.0; l];
        w[i] = 1.0;
        return Ok((s[i], KHotIndicator::from_parts(w, 1)));
    }
    let mut buf = vec![0.0; l];
    let mut counts = vec![0u32; l];
    let mut total = 0.0;
    for z in noise.rows() {
        perturb(&mut buf, s, epsilon, z);
        let i = sel.kth(&buf, k);
        total += buf[i];
        counts[i] += 1;
    }
    let b = noise.len() as f64;
    let w = counts.into_iter().map(|c| c as f64 / b).collect();
    Ok((total / b, KHotIndicator::from_parts(w, 1)))
}

/// Mean of the exact `argtops_K` indicators: the gradient of [`mc_topsum`].
/// The result lies in `C_K`.
pub fn mc_grad_topsum(
    s: &[f64],
    k: usize,
    epsilon: f64,
    noise: &NoiseBatch,
) -> Result<KHotIndicator> {
    check_inputs(s, epsilon, noise)?;
    check_k(k, 1, s.len())?;
    let l = s.len();
    let mut sel = Selector::new();
    let mut counts = vec![0u32; l];
    let rows = if epsilon == 0.0 { 1 } else { noise.len() };
    let mut buf = s.to_vec();
    for z in noise.rows().take(rows) {
        if epsilon != 0.0 {
            perturb(&mut buf, s, epsilon, z);
        }
        for &i in sel.select(&buf, k) {
            counts[i] += 1;
        }
    }
    let b = rows as f64;
    let w = counts.into_iter().map(|c| c as f64 / b).collect();
    Ok(KHotIndicator::from_parts(w, k))
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Minimum sample count for the oracle estimators.
pub const ORACLE_MIN_SAMPLES: usize = 100_000;

/// High-sample estimate of `topsum_{K,eps}(s)`, streaming its own noise.
///
/// Used by tests to bracket the true expectation; `eps = 0` returns
/// `(topsum_K(s), 0)`.
pub fn oracle_smoothed_topsum(
    s: &[f64],
    k: usize,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_k(k, 0, s.len())?;
    oracle(s, epsilon, samples, seed, |sel, v| sel.topsum(v, k))
}

/// High-sample estimate of `top_{K,eps}(s)`, computed pathwise.
pub fn oracle_smoothed_top(
    s: &[f64],
    k: usize,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_k(k, 1, s.len())?;
    oracle(s, epsilon, samples, seed, |sel, v| v[sel.kth(v, k)])
}

fn oracle<F>(s: &[f64], epsilon: f64, samples: usize, seed: u64, mut stat: F) -> Result<McEstimate>
where
    F: FnMut(&mut Selector, &[f64]) -> f64,
{
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    check_finite(s)?;
    check_epsilon(epsilon)?;
    if samples < ORACLE_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "oracle needs at least {ORACLE_MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let mut sel = Selector::new();
    if epsilon == 0.0 {
        return Ok(McEstimate {
            mean: stat(&mut sel, s),
            stderr: 0.0,
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; s.len()];
    // Welford accumulation
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for n in 1..=samples {
        for (o, &v) in buf.iter_mut().zip(s) {
            let z: f64 = rng.sample(StandardNormal);
            *o = v + epsilon * z;
        }
        let x = stat(&mut sel, &buf);
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(McEstimate {
        mean,
        stderr: (var / samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{argtop_k, argtops_k, top_k, topsum_k};
    use proptest::prelude::*;

    const S: [f64; 4] = [2.4, 2.6, 2.3, 0.5];

    fn illustration_noise() -> NoiseBatch {
        NoiseBatch::from_rows(vec![
            vec![0.2, -0.1, 0.1, 0.3],
            vec![0.1, 0.1, -0.1, 0.1],
            vec![-0.1, -0.1, 0.1, -0.1],
        ])
        .unwrap()
    }

    #[test]
    fn illustration_topsum() {
        // perturbed vectors [2.6,2.5,2.4,0.8], [2.5,2.7,2.2,0.6], [2.3,2.5,2.4,0.4]
        let v = mc_topsum(&S, 2, 1.0, &illustration_noise()).unwrap();
        assert!((v - (5.1 + 5.2 + 4.9) / 3.0).abs() < 1e-12);
        assert_eq!(mc_topsum(&S, 0, 1.0, &illustration_noise()).unwrap(), 0.0);
    }

    #[test]
    fn illustration_top_and_grad() {
        let z = illustration_noise();
        let v = mc_top(&S, 2, 1.0, &z).unwrap();
        assert!((v - 7.4 / 3.0).abs() < 1e-12);
        let g = mc_grad_top(&S, 2, 1.0, &z).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(g.weights(), &[third, third, third, 0.0]);
        let g = mc_grad_top(&S, 2, 0.1, &z).unwrap();
        assert_eq!(g.weights(), &[1.0, 0.0, 0.0, 0.0]);
        // the difference-of-topsums route agrees with the pathwise route
        let diff = mc_topsum(&S, 2, 1.0, &z).unwrap() - mc_topsum(&S, 1, 1.0, &z).unwrap();
        assert!((diff - v).abs() < 1e-12);
    }

    #[test]
    fn zero_epsilon_is_exact() {
        let z = NoiseBatch::sample(4, 5, 3).unwrap();
        for k in 1..=4 {
            assert_eq!(mc_top(&S, k, 0.0, &z).unwrap(), top_k(&S, k).unwrap());
            assert_eq!(mc_topsum(&S, k, 0.0, &z).unwrap(), topsum_k(&S, k).unwrap());
            assert_eq!(mc_grad_top(&S, k, 0.0, &z).unwrap(), argtop_k(&S, k).unwrap());
            assert_eq!(mc_grad_topsum(&S, k, 0.0, &z).unwrap(), argtops_k(&S, k).unwrap());
        }
    }

    #[test]
    fn errors() {
        let z = NoiseBatch::sample(3, 2, 0).unwrap();
        assert!(matches!(mc_top(&S, 1, 1.0, &z), Err(Error::DimensionMismatch { .. })));
        let z = NoiseBatch::sample(4, 2, 0).unwrap();
        assert!(mc_top(&S, 0, 1.0, &z).is_err());
        assert!(mc_topsum(&S, 5, 1.0, &z).is_err());
        assert!(mc_top(&S, 1, -1.0, &z).is_err());
        assert!(mc_top(&S, 1, f64::NAN, &z).is_err());
        assert!(oracle_smoothed_topsum(&S, 1, 1.0, 10, 0).is_err());
        assert!(SmoothingParams::new(0.1, 2, 0).is_err());
        assert!(SmoothingParams::new(0.1, 2, 3).is_ok());
    }

    #[test]
    fn constant_vector_symmetry() {
        let c = [0.7; 4];
        for k in 1..=4 {
            let est = oracle_smoothed_top(&c, k, 1.0, 100_000, 9).unwrap();
            // E[Z_(k)] is not zero, so compare against the k <-> L+1-k mirror
            let mirror = oracle_smoothed_top(&c, 5 - k, 1.0, 100_000, 10).unwrap();
            let centre = 0.5 * (est.mean + mirror.mean);
            let se = (est.stderr.powi(2) + mirror.stderr.powi(2)).sqrt() * 0.5;
            assert!((centre - 0.7).abs() < 3.0 * se + 1e-12, "k={k}: {centre}");
        }
    }

    #[test]
    fn oracle_max_of_two_normals() {
        let est = oracle_smoothed_topsum(&[0.0, 0.0], 1, 1.0, 200_000, 42).unwrap();
        let exact = 1.0 / std::f64::consts::PI.sqrt();
        assert!((est.mean - exact).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn oracle_zero_epsilon_and_dominant_coordinate() {
        let est = oracle_smoothed_topsum(&S, 2, 0.0, 100_000, 1).unwrap();
        assert_eq!(est, McEstimate { mean: 5.0, stderr: 0.0 });
        let est = oracle_smoothed_topsum(&[10.0, 0.0, 0.0], 1, 0.01, 100_000, 5).unwrap();
        assert!((est.mean - 10.0).abs() < 3.0 * est.stderr, "{est:?}");
    }

    fn norm2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// Smallest gap between consecutive sorted entries of every perturbed vector.
    fn min_perturbed_gap(s: &[f64], eps: f64, z: &NoiseBatch) -> f64 {
        z.rows()
            .map(|row| {
                let mut v: Vec<f64> = s.iter().zip(row).map(|(a, n)| a + eps * n).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, usize, f64, u64)> {
        (2usize..20).prop_flat_map(|l| {
            (
                prop::collection::vec(-3.0f64..3.0, l),
                1..=l,
                prop::sample::select(vec![0.1, 0.5, 1.0, 3.0]),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #[test]
        fn lipschitz_with_fixed_noise(
            (a, k, eps, seed) in case(),
            delta in prop::collection::vec(-2.0f64..2.0, 20),
        ) {
            let z = NoiseBatch::sample(a.len(), 7, seed).unwrap();
            let b: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + d).collect();
            let fa = mc_topsum(&a, k, eps, &z).unwrap();
            let fb = mc_topsum(&b, k, eps, &z).unwrap();
            prop_assert!((fa - fb).abs() <= (k as f64).sqrt() * norm2(&a, &b) + 1e-12);
        }

        #[test]
        fn translation_with_fixed_noise((a, k, eps, seed) in case(), c in -5.0f64..5.0) {
            let z = NoiseBatch::sample(a.len(), 5, seed).unwrap();
            let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
            let lhs = mc_topsum(&shifted, k, eps, &z).unwrap();
            let rhs = mc_topsum(&a, k, eps, &z).unwrap() + k as f64 * c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * 10.0);
        }

        #[test]
        fn gradient_lies_in_polytope((a, k, eps, seed) in case(), b in 1usize..40) {
            let z = NoiseBatch::sample(a.len(), b, seed).unwrap();
            let g = mc_grad_topsum(&a, k, eps, &z).unwrap();
            prop_assert!(g.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((g.sum() - k as f64).abs() <= 1e-12);
            let g1 = mc_grad_top(&a, k, eps, &z).unwrap();
            prop_assert!(g1.iter().all(|&w| (0.0..=1.0).contains(&w)));
            prop_assert!((g1.sum() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn fixed_noise_finite_differences(
            (a, k, eps, seed) in case(),
            dir in prop::collection::vec(-1.0f64..1.0, 20),
        ) {
            let z = NoiseBatch::sample(a.len(), 4, seed).unwrap();
            prop_assume!(min_perturbed_gap(&a, eps, &z) > 1e-6);
            let dir = &dir[..a.len()];
            let h = 1e-7;
            let plus: Vec<f64> = a.iter().zip(dir).map(|(x, d)| x + h * d).collect();
            let minus: Vec<f64> = a.iter().zip(dir).map(|(x, d)| x - h * d).collect();
            let fd = (mc_topsum(&plus, k, eps, &z).unwrap() - mc_topsum(&minus, k, eps, &z).unwrap()) / (2.0 * h);
            let g = mc_grad_topsum(&a, k, eps, &z).unwrap();
            let analytic: f64 = g.iter().zip(dir).map(|(w, d)| w * d).sum();
            prop_assert!((fd - analytic).abs() <= 1e-4, "fd {} vs {}", fd, analytic);
        }

        #[test]
        fn midpoint_convexity_with_fixed_noise(
            (a, k, eps, seed) in case(),
            delta in prop::collection::vec(-4.0f64..4.0, 20),
        ) {
            let z = NoiseBatch::sample(a.len(), 6, seed).unwrap();
            let b: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + d).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = mc_topsum(&mid, k, eps, &z).unwrap();
            let rhs = 0.5 * (mc_topsum(&a, k, eps, &z).unwrap() + mc_topsum(&b, k, eps, &z).unwrap());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
