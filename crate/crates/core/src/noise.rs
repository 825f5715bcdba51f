//! Seeded standard-normal perturbations.
//!
//! Generator: `Xoshiro256PlusPlus` seeded through `seed_from_u64` (SplitMix64
//! state expansion), with normals drawn by the ziggurat sampler of
//! `rand_distr::StandardNormal`. Batches are filled row by row, so row `b` of
//! a `(seed, B, L)` batch is the same for every `B' > b`.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// The RNG used everywhere in the crate.
pub type SeededRng = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined words.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `B` perturbation vectors of width `L`, stored row-major.
///
/// Immutable once built, so one batch can be shared across threads and
/// across the estimators that need common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    samples: Vec<f64>,
    rows: usize,
    width: usize,
    seed: Option<u64>,
}

impl NoiseBatch {
    /// Draws a `B x L` batch of iid standard normals.
    pub fn sample(width: usize, rows: usize, seed: u64) -> Result<Self> {
        Self::check_shape(width, rows)?;
        let mut rng = rng_from_seed(seed);
        Ok(Self::sample_with(&mut rng, width, rows, Some(seed)))
    }

    /// Draws a batch from an existing RNG stream (used by the trainer,
    /// which resamples noise at every loss evaluation).
    pub fn sample_from_rng<R: Rng + ?Sized>(rng: &mut R, width: usize, rows: usize) -> Result<Self> {
        Self::check_shape(width, rows)?;
        Ok(Self::sample_with(rng, width, rows, None))
    }

    fn sample_with<R: Rng + ?Sized>(rng: &mut R, width: usize, rows: usize, seed: Option<u64>) -> Self {
        let samples = (0..width * rows)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            samples,
            rows,
            width,
            seed,
        }
    }

    /// Wraps explicitly given noise vectors (e.g. hand-picked test noise).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        Self::check_shape(width, rows.len())?;
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: bad.len(),
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("noise entries must be finite".into()));
        }
        let n = rows.len();
        Ok(Self {
            samples: rows.into_iter().flatten().collect(),
            rows: n,
            width,
            seed: None,
        })
    }

    fn check_shape(width: usize, rows: usize) -> Result<()> {
        if width < 1 {
            return Err(Error::InvalidArgument("noise width must be positive".into()));
        }
        if rows < 1 {
            return Err(Error::InvalidArgument("noise batch needs B >= 1".into()));
        }
        Ok(())
    }

    /// Number of noise vectors `B`.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Vector width `L`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.samples[b * self.width..(b + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.width)
    }

    pub(crate) fn check_width(&self, l: usize) -> Result<()> {
        if self.width != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                actual: self.width,
            });
        }
        Ok(())
    }
}
