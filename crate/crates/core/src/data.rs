//! Synthetic long-tailed classification data.
//!
//! Each class `c` gets a mean `separation * u_c` with `u_c` a uniformly random
//! unit vector; samples are the mean plus standard normal noise. Training
//! counts follow the spec exactly, validation and test splits hold the same
//! number of samples for every class.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_label, Error, Result};
use crate::noise::{derive_seed, rng_from_seed};

/// Largest `samples * dim` the generator will allocate.
pub const MAX_FEATURE_VALUES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec {
    pub classes: usize,
    pub dim: usize,
    /// Training samples per class, all at least 1.
    pub counts: Vec<usize>,
    /// Superclass id of every class.
    pub superclasses: Vec<usize>,
    pub class_separation: f64,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl LongTailSpec {
    /// Balanced spec with one superclass per class.
    pub fn balanced(classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> Self {
        Self {
            classes,
            dim,
            counts: vec![per_class; classes],
            superclasses: (0..classes).collect(),
            class_separation: separation,
            val_per_class: per_class,
            test_per_class: per_class,
            seed,
        }
    }

    /// Spec whose training counts decay geometrically from `max_count` for
    /// class 0 to `min_count` for the last class.
    pub fn geometric(
        classes: usize,
        dim: usize,
        max_count: usize,
        min_count: usize,
        separation: f64,
        seed: u64,
    ) -> Self {
        Self {
            counts: geometric_counts(classes, max_count, min_count),
            val_per_class: 20,
            test_per_class: 20,
            ..Self::balanced(classes, dim, 1, separation, seed)
        }
    }

    pub fn with_superclass_size(mut self, group: usize) -> Self {
        self.superclasses = contiguous_superclasses(self.classes, group);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes and 1 feature, got L={} d={}",
                self.classes, self.dim
            )));
        }
        for (name, len) in [("counts", self.counts.len()), ("superclasses", self.superclasses.len())] {
            if len != self.classes {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries for {} classes",
                    self.classes
                )));
            }
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidArgument("every class needs a training sample".into()));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class separation must be finite and non-negative, got {}",
                self.class_separation
            )));
        }
        let total = self.counts.iter().sum::<usize>()
            + self.classes * (self.val_per_class + self.test_per_class);
        if total.checked_mul(self.dim).is_none_or(|n| n > MAX_FEATURE_VALUES) {
            return Err(Error::InvalidArgument(format!(
                "{total} samples of dimension {} exceed the {MAX_FEATURE_VALUES}-value limit",
                self.dim
            )));
        }
        Ok(())
    }
}

/// `round(max * (min/max)^(c/(L-1)))`, clamped to at least 1.
pub fn geometric_counts(classes: usize, max_count: usize, min_count: usize) -> Vec<usize> {
    let (hi, lo) = (max_count.max(1) as f64, min_count.max(1) as f64);
    (0..classes)
        .map(|c| {
            let t = if classes > 1 { c as f64 / (classes - 1) as f64 } else { 0.0 };
            ((hi * (lo / hi).powf(t)).round() as usize).max(1)
        })
        .collect()
}

/// Groups consecutive classes into superclasses of `size` (the last may be
/// smaller).
pub fn contiguous_superclasses(classes: usize, size: usize) -> Vec<usize> {
    (0..classes).map(|c| c / size.max(1)).collect()
}

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Split {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        Ok(Self { dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// Samples per label, for labels `0..classes`.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Writes one CSV row per sample: label, then the features.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let mut record = Vec::with_capacity(self.dim + 1);
        for (x, y) in self.iter() {
            record.clear();
            record.push(y.to_string());
            record.extend(x.iter().map(f64::to_string));
            out.write_record(&record).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format of [`Split::write_csv`]. Lines starting with `#`
    /// are skipped.
    pub fn read_csv<R: Read>(r: R, classes: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let (mut dim, mut features, mut labels) = (0, Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let bad = |what: &str| Error::Parse(format!("row {}: {what}", line + 1));
            if record.len() < 2 {
                return Err(bad("expected a label and at least one feature"));
            }
            if dim == 0 {
                dim = record.len() - 1;
            } else if record.len() - 1 != dim {
                return Err(bad(&format!("{} features, expected {dim}", record.len() - 1)));
            }
            let y: usize = record[0].parse().map_err(|_| bad("label is not an integer"))?;
            check_label(y, classes)?;
            labels.push(y);
            for field in record.iter().skip(1) {
                let v: f64 = field.parse().map_err(|_| bad(&format!("bad feature `{field}`")))?;
                if !v.is_finite() {
                    return Err(bad("non-finite feature"));
                }
                features.push(v);
            }
        }
        if labels.is_empty() {
            return Err(Error::Parse("no samples".into()));
        }
        Split::new(dim, features, labels)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTailDataset {
    pub classes: usize,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// Clean per-class training counts, as generated. Label noise does not
    /// change them.
    pub train_counts: Vec<usize>,
    pub superclasses: Option<Vec<usize>>,
}

impl LongTailDataset {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Draws a dataset from `spec`. Deterministic in `spec.seed`.
pub fn generate_longtail(spec: &LongTailSpec) -> Result<LongTailDataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, 0));
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut u: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                u[0] = 1.0;
            } else {
                u.iter_mut().for_each(|v| *v *= spec.class_separation / norm);
            }
            u
        })
        .collect();

    let draw = |stream: u64, per_class: &dyn Fn(usize) -> usize| {
        let mut rng = rng_from_seed(derive_seed(spec.seed, stream));
        let mut labels: Vec<usize> = (0..spec.classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class(c)))
            .collect();
        labels.shuffle(&mut rng);
        let features = labels
            .iter()
            .flat_map(|&c| means[c].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
            .collect();
        Split { dim: spec.dim, features, labels }
    };
    let train = draw(1, &|c| spec.counts[c]);
    let val = draw(2, &|_| spec.val_per_class);
    let test = draw(3, &|_| spec.test_per_class);
    Ok(LongTailDataset {
        classes: spec.classes,
        train,
        val,
        test,
        train_counts: spec.counts.clone(),
        superclasses: Some(spec.superclasses.clone()),
    })
}

/// Resamples each training label, with probability `p`, uniformly within
/// its superclass (possibly redrawing the original label). Validation and
/// test labels are untouched.
pub fn apply_superclass_noise(ds: &LongTailDataset, p: f64, seed: u64) -> Result<LongTailDataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("noise rate {p} outside [0, 1]")));
    }
    let groups = ds
        .superclasses
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no superclass map".into()))?;
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (c, &g) in groups.iter().enumerate() {
        if members.len() <= g {
            members.resize(g + 1, Vec::new());
        }
        members[g].push(c);
    }
    let mut rng = rng_from_seed(seed);
    let mut out = ds.clone();
    for y in out.train.labels.iter_mut() {
        if rng.random::<f64>() < p {
            let group = &members[groups[*y]];
            *y = group[rng.random_range(0..group.len())];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LongTailSpec {
        LongTailSpec::geometric(6, 4, 50, 5, 2.0, 9).with_superclass_size(3)
    }

    #[test]
    fn counts_are_exact() {
        let s = LongTailSpec {
            counts: vec![50, 5],
            ..LongTailSpec::balanced(2, 3, 10, 1.0, 1)
        };
        let ds = generate_longtail(&s).unwrap();
        assert_eq!(ds.train.class_counts(2), vec![50, 5]);
        assert_eq!(ds.val.class_counts(2), vec![10, 10]);
        assert_eq!(ds.train.len() * 3, ds.train.features.len());
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_longtail(&spec()).unwrap(), generate_longtail(&spec()).unwrap());
        let other = LongTailSpec { seed: 10, ..spec() };
        assert_ne!(generate_longtail(&spec()).unwrap(), generate_longtail(&other).unwrap());
    }

    #[test]
    fn geometric_shape() {
        assert_eq!(geometric_counts(3, 100, 1), vec![100, 10, 1]);
        let c = geometric_counts(20, 200, 5);
        assert_eq!((c[0], c[19]), (200, 5));
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(contiguous_superclasses(5, 2), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec();
        s.counts[2] = 0;
        assert!(generate_longtail(&s).is_err());
        let s = LongTailSpec { superclasses: vec![0], ..spec() };
        assert!(generate_longtail(&s).is_err());
        let s = LongTailSpec { dim: 10_000_000, ..spec() };
        assert!(generate_longtail(&s).is_err());
    }

    #[test]
    fn noise_edge_cases() {
        let ds = generate_longtail(&spec()).unwrap();
        assert_eq!(apply_superclass_noise(&ds, 0.0, 3).unwrap(), ds);
        assert!(apply_superclass_noise(&ds, 1.5, 3).is_err());
        let mut singletons = ds.clone();
        singletons.superclasses = Some((0..6).collect());
        assert_eq!(apply_superclass_noise(&singletons, 1.0, 3).unwrap(), singletons);
        let noisy = apply_superclass_noise(&ds, 1.0, 3).unwrap();
        assert_eq!(noisy.val, ds.val);
        assert_eq!(noisy.test, ds.test);
        for (a, b) in noisy.train.labels().iter().zip(ds.train.labels()) {
            assert_eq!(a / 3, b / 3);
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_longtail(&spec()).unwrap();
        let mut buf = Vec::new();
        ds.val.write_csv(&mut buf).unwrap();
        let back = Split::read_csv(buf.as_slice(), 6).unwrap();
        assert_eq!(back, ds.val);
        assert!(Split::read_csv("3,1.0\n9,2.0\n".as_bytes(), 6).is_err());
        assert!(Split::read_csv("1,1.0\n2,2.0,3.0\n".as_bytes(), 6).is_err());
        assert!(Split::read_csv("".as_bytes(), 6).is_err());
    }
}
