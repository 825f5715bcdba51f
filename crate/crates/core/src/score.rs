//! Exact order statistics of a score vector.
//!
//! Ranking is a strict total order: a larger value ranks higher, and among
//! equal values the lower index ranks higher. Every operator here and in the
//! smoothing module uses that rule, so results are deterministic under ties.

use std::cmp::Ordering;
use std::ops::Deref;

use crate::error::{check_k, Error, Result};

/// A vector of `L >= 2` finite class scores (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a score vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// A point of the polytope `C_K = { z in [0,1]^L : sum z = K }`.
///
/// Exact indicators (from [`argtop_k`] / [`argtops_k`]) have 0/1 entries;
/// Monte Carlo averages of them are fractional but stay inside `C_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KHotIndicator {
    weights: Vec<f64>,
    cardinality: usize,
}

impl KHotIndicator {
    pub(crate) fn from_parts(weights: Vec<f64>, cardinality: usize) -> Self {
        Self {
            weights,
            cardinality,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Declared cardinality `K`.
    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_exact(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }
}

impl Deref for KHotIndicator {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.weights
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "score at index {i} is not finite ({})",
            values[i]
        )));
    }
    Ok(())
}

fn check_scores(s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    check_finite(s)
}

/// `Ordering::Less` means `i` ranks above `j`.
#[inline]
pub(crate) fn rank_cmp(s: &[f64], i: usize, j: usize) -> Ordering {
    s[j].partial_cmp(&s[i])
        .unwrap_or(Ordering::Equal)
        .then(i.cmp(&j))
}

/// Reusable index buffer for partial selection.
///
/// After `select(s, k)` the first `k` entries of [`Selector::indices`] are
/// the `k` highest-ranked coordinates, with the `k`-th ranked one at
/// position `k - 1`. Expected cost is O(L).
#[derive(Debug, Default, Clone)]
pub(crate) struct Selector {
    idx: Vec<usize>,
}

impl Selector {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// Requires `1 <= k <= s.len()`.
    pub(crate) fn select(&mut self, s: &[f64], k: usize) -> &[usize] {
        debug_assert!(k >= 1 && k <= s.len());
        self.idx.clear();
        self.idx.extend(0..s.len());
        self.idx
            .select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(s, a, b));
        &self.idx[..k]
    }

    /// Index of the `k`-th ranked coordinate.
    pub(crate) fn kth(&mut self, s: &[f64], k: usize) -> usize {
        self.select(s, k)[k - 1]
    }

    /// Sum of the `k` largest entries; `k = 0` gives 0.
    pub(crate) fn topsum(&mut self, s: &[f64], k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let top = self.select(s, k);
        top.iter().map(|&i| s[i]).sum()
    }
}

/// The `k`-th largest entry of `s` (`1 <= k <= L`).
pub fn top_k(s: &[f64], k: usize) -> Result<f64> {
    check_scores(s)?;
    check_k(k, 1, s.len())?;
    let i = Selector::new().kth(s, k);
    Ok(s[i])
}

/// Sum of the `k` largest entries of `s` (`0 <= k <= L`, with `topsum_0 = 0`).
pub fn topsum_k(s: &[f64], k: usize) -> Result<f64> {
    check_scores(s)?;
    check_k(k, 0, s.len())?;
    Ok(Selector::new().topsum(s, k))
}

/// Coordinate holding the `k`-th largest entry under the tie rule.
pub fn argtop_index(s: &[f64], k: usize) -> Result<usize> {
    check_scores(s)?;
    check_k(k, 1, s.len())?;
    Ok(Selector::new().kth(s, k))
}

/// One-hot vector at the `k`-th largest coordinate (gradient of [`top_k`]).
pub fn argtop_k(s: &[f64], k: usize) -> Result<KHotIndicator> {
    let i = argtop_index(s, k)?;
    let mut w = vec![0.0; s.len()];
    w[i] = 1.0;
    Ok(KHotIndicator::from_parts(w, 1))
}

/// `k`-hot vector at the `k` largest coordinates (gradient of [`topsum_k`]).
pub fn argtops_k(s: &[f64], k: usize) -> Result<KHotIndicator> {
    check_scores(s)?;
    check_k(k, 1, s.len())?;
    let mut w = vec![0.0; s.len()];
    for &i in Selector::new().select(s, k) {
        w[i] = 1.0;
    }
    Ok(KHotIndicator::from_parts(w, k))
}

/// Zero-based rank of coordinate `i` under the tie rule (0 = largest).
pub fn rank_of(s: &[f64], i: usize) -> usize {
    (0..s.len())
        .filter(|&j| j != i && rank_cmp(s, j, i) == Ordering::Less)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: [f64; 4] = [2.4, 2.6, 2.3, 0.5];

    /// Sort-based oracle: indices ordered by rank.
    fn sorted_ranking(s: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        idx
    }

    #[test]
    fn illustration_values() {
        assert_eq!(top_k(&S, 2).unwrap(), 2.4);
        assert_eq!(top_k(&S, 1).unwrap(), 2.6);
        assert_eq!(argtop_k(&S, 2).unwrap().weights(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(topsum_k(&S, 2).unwrap(), 2.6 + 2.4);
        assert_eq!(argtops_k(&S, 2).unwrap().weights(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_vector() {
        let c = [1.7; 3];
        for k in 1..=3 {
            assert_eq!(top_k(&c, k).unwrap(), 1.7);
        }
    }

    #[test]
    fn topsum_edges() {
        assert_eq!(topsum_k(&S, 0).unwrap(), 0.0);
        let full: f64 = S.iter().sum();
        assert!((topsum_k(&S, 4).unwrap() - full).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argtop_k(&[5.0, 1.0], 1).unwrap().weights(), &[1.0, 0.0]);
        assert_eq!(argtop_k(&[1.0, 1.0], 1).unwrap().weights(), &[1.0, 0.0]);
        assert_eq!(argtop_k(&[1.0, 1.0], 2).unwrap().weights(), &[0.0, 1.0]);
        assert_eq!(
            argtops_k(&[1.0, 1.0, 1.0], 2).unwrap().weights(),
            &[1.0, 1.0, 0.0]
        );
        assert_eq!(
            argtops_k(&[3.0, 2.0, 1.0], 3).unwrap().weights(),
            &[1.0, 1.0, 1.0]
        );
        // -0.0 and 0.0 compare equal and fall back to the index rule.
        assert_eq!(argtop_index(&[-0.0, 0.0], 1).unwrap(), 0);
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(top_k(&S, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(top_k(&S, 5), Err(Error::KOutOfRange { .. })));
        assert!(matches!(topsum_k(&S, 5), Err(Error::KOutOfRange { .. })));
        assert!(argtop_k(&S, 0).is_err());
        assert!(argtops_k(&S, 5).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(top_k(&[1.0, f64::NAN], 1).is_err());
        assert!(ScoreVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ScoreVector::new(vec![1.0]).is_err());
        assert_eq!(ScoreVector::new(vec![1.0, 2.0]).unwrap().num_classes(), 2);
    }

    #[test]
    fn rank_of_matches_tie_rule() {
        assert_eq!(rank_of(&S, 1), 0);
        assert_eq!(rank_of(&S, 3), 3);
        assert_eq!(rank_of(&[1.0, 1.0, 1.0], 2), 2);
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 2..40)
    }

    fn scores_with_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
        scores().prop_flat_map(|s| {
            let l = s.len();
            (Just(s), 1..=l)
        })
    }

    proptest! {
        #[test]
        fn selection_matches_sort_oracle((s, k) in scores_with_k()) {
            let order = sorted_ranking(&s);
            prop_assert_eq!(top_k(&s, k).unwrap(), s[order[k - 1]]);
            prop_assert_eq!(argtop_index(&s, k).unwrap(), order[k - 1]);
            let oracle: f64 = order[..k].iter().map(|&i| s[i]).sum();
            prop_assert!((topsum_k(&s, k).unwrap() - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
            let ind = argtops_k(&s, k).unwrap();
            prop_assert!(ind.is_exact());
            prop_assert_eq!(ind.sum(), k as f64);
            for &i in &order[..k] {
                prop_assert_eq!(ind[i], 1.0);
            }
        }

        #[test]
        fn decomposition((s, k) in scores_with_k()) {
            let lhs = top_k(&s, k).unwrap();
            let rhs = topsum_k(&s, k).unwrap() - topsum_k(&s, k - 1).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn inner_product_is_topsum_and_maximal((s, k) in scores_with_k(), seed in any::<u64>()) {
            let ind = argtops_k(&s, k).unwrap();
            let dot: f64 = ind.iter().zip(&s).map(|(z, v)| z * v).sum();
            let ts = topsum_k(&s, k).unwrap();
            prop_assert!((dot - ts).abs() <= 1e-12 * (1.0 + ts.abs()));
            // any other k-hot vector scores no higher
            let mut idx: Vec<usize> = (0..s.len()).collect();
            let mut state = seed;
            for i in (1..idx.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (state >> 33) as usize % (i + 1));
            }
            let other: f64 = idx[..k].iter().map(|&i| s[i]).sum();
            prop_assert!(other <= ts + 1e-12 * (1.0 + ts.abs()));
        }

        #[test]
        fn permutation_equivariance((s, k) in scores_with_k(), rot in 0usize..40) {
            // prop vectors of continuous draws are tie-free with probability one
            let l = s.len();
            let perm: Vec<usize> = (0..l).map(|i| (i + rot) % l).collect();
            let ps: Vec<f64> = perm.iter().map(|&p| s[p]).collect();
            prop_assert_eq!(top_k(&ps, k).unwrap(), top_k(&s, k).unwrap());
            let a = argtops_k(&s, k).unwrap();
            let pa = argtops_k(&ps, k).unwrap();
            for i in 0..l {
                prop_assert_eq!(pa[i], a[perm[i]]);
            }
        }

        #[test]
        fn translation_on_dyadic_grid(
            raw in prop::collection::vec(-64i32..64, 2..30),
            c in -64i32..64,
            kk in 0usize..30,
        ) {
            // eighths are exact in binary, so the identity holds bit for bit
            let s: Vec<f64> = raw.iter().map(|&v| v as f64 / 8.0).collect();
            let k = kk % (s.len() + 1);
            let c = c as f64 / 8.0;
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            prop_assert_eq!(
                topsum_k(&shifted, k).unwrap(),
                topsum_k(&s, k).unwrap() + k as f64 * c
            );
        }

        #[test]
        fn translation_random((s, k) in scores_with_k(), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let lhs = topsum_k(&shifted, k).unwrap();
            let rhs = topsum_k(&s, k).unwrap() + k as f64 * c;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn topsum_midpoint_convexity(
            (a, k) in scores_with_k(),
            noise in prop::collection::vec(-10.0f64..10.0, 40),
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + n).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = topsum_k(&mid, k).unwrap();
            let rhs = 0.5 * (topsum_k(&a, k).unwrap() + topsum_k(&b, k).unwrap());
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
