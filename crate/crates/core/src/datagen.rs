//! Seeded synthetic classification data with a binary sensitive attribute
//! and a controllable group-performance disparity.
//!
//! The bias mechanism is per-group noise scale: group 0 draws noisier
//! features than group 1, so a trained classifier performs worse on it —
//! group 0 is the unprivileged group. Class means sit on a sphere of radius
//! `separation`, so `separation = 0` collapses all class-conditional
//! distributions onto each other.
//!
//! Draw order on the seeded stream, fixed for reproducibility: class mean
//! directions (K·d gaussians, normalized per class), then per-class group
//! tag shuffles in class order, then per-sample feature noise (d gaussians
//! each) in sample order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::rng::Rng;
use crate::Result;

/// One data point: features, 1-based class label, binary group tag
/// (0 = unprivileged, 1 = privileged).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y0: usize,
    pub c: u8,
}

/// Which split a sample is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Generation parameters for the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    /// Total sample count.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    /// Class count; labels are `1..=classes`.
    pub classes: usize,
    /// Fraction of samples in group 0 (the unprivileged group).
    pub group0_fraction: f64,
    /// Gaussian noise scale for group 0. `noise0 > noise1` is what makes
    /// group 0 unprivileged.
    pub noise0: f64,
    /// Gaussian noise scale for group 1.
    pub noise1: f64,
    /// Radius of the sphere the class means are drawn on.
    pub separation: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n: 4000,
            d: 16,
            classes: 4,
            group0_fraction: 0.35,
            noise0: 1.6,
            noise1: 0.8,
            separation: 3.0,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Data("need at least two classes".into()));
        }
        if self.d == 0 {
            return Err(Error::Data("feature dimension must be positive".into()));
        }
        if self.n < 10 * self.classes {
            return Err(Error::Data(format!(
                "n = {} is below 10 per class for {} classes",
                self.n, self.classes
            )));
        }
        if !(self.group0_fraction > 0.0 && self.group0_fraction < 1.0) {
            return Err(Error::Data("group0_fraction must be inside (0, 1)".into()));
        }
        if self.noise0 <= 0.0 || self.noise1 <= 0.0 {
            return Err(Error::Data("noise scales must be positive".into()));
        }
        if self.separation < 0.0 {
            return Err(Error::Data("separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples plus split tags plus an echo of how they were generated.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    samples: Vec<Sample>,
    splits: Vec<Split>,
    params: Option<GenParams>,
}

impl GroupedDataset {
    /// Wrap externally loaded samples; everything starts tagged `Train`
    /// until [`split`] assigns real tags.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = samples[0].x.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::Data(format!("sample {i} has mixed feature width")));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("sample {i} has non-finite features")));
            }
            if s.y0 == 0 {
                return Err(Error::Label(format!("sample {i} label must be >= 1")));
            }
            if s.c > 1 {
                return Err(Error::Label(format!("sample {i} group must be 0 or 1")));
            }
        }
        let n = samples.len();
        Ok(Self {
            samples,
            splits: vec![Split::Train; n],
            params: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn params(&self) -> Option<&GenParams> {
        self.params.as_ref()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.samples[0].x.len()
    }

    /// Largest label present.
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.y0).max().unwrap_or(0)
    }

    /// Samples of one split, in dataset order.
    pub fn split_samples(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(self.splits.iter())
            .filter(|(_, &tag)| tag == split)
            .map(|(s, _)| s)
            .collect()
    }
}

/// Deterministically generate a dataset from the seeded stream.
///
/// Labels cycle through the classes so class counts differ by at most one.
/// Group tags hit the requested group-0 fraction exactly up to rounding
/// (within ±1 sample overall) and are spread over classes by a seeded
/// shuffle inside each class, so every (class, group) cell is populated.
pub fn generate(p: &GenParams) -> Result<GroupedDataset> {
    p.validate()?;
    let mut rng = Rng::new(p.seed);

    // Class means: separation * (uniform direction on the unit sphere).
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(p.classes);
    for _ in 0..p.classes {
        let mut dir: Vec<f64> = (0..p.d).map(|_| rng.next_gaussian()).collect();
        let norm = fmath::sqrt(dir.iter().map(|v| v * v).sum());
        if norm > 0.0 {
            for v in dir.iter_mut() {
                *v = *v / norm * p.separation;
            }
        }
        means.push(dir);
    }

    // Cyclic labels: sample i belongs to class (i mod K) + 1.
    let class_of = |i: usize| i % p.classes + 1;
    let mut class_sizes = vec![0usize; p.classes];
    for i in 0..p.n {
        class_sizes[class_of(i) - 1] += 1;
    }

    // Apportion the global group-0 quota over classes, then shuffle tags
    // within each class.
    let total_g0 = ((p.group0_fraction * p.n as f64) + 0.5) as usize;
    let base = total_g0 / p.classes;
    let rem = total_g0 % p.classes;
    let mut tags_per_class: Vec<Vec<u8>> = Vec::with_capacity(p.classes);
    for (ci, &size) in class_sizes.iter().enumerate() {
        let g0 = base + usize::from(ci < rem);
        if g0 < 2 || size.saturating_sub(g0) < 2 {
            return Err(Error::Data(format!(
                "class {} would get {} group-0 and {} group-1 samples; need >= 2 each",
                ci + 1,
                g0,
                size.saturating_sub(g0)
            )));
        }
        let mut tags = vec![0u8; size];
        for t in tags.iter_mut().skip(g0) {
            *t = 1;
        }
        rng.shuffle(&mut tags);
        tags_per_class.push(tags);
    }

    let mut next_in_class = vec![0usize; p.classes];
    let mut samples = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let label = class_of(i);
        let slot = next_in_class[label - 1];
        next_in_class[label - 1] += 1;
        let c = tags_per_class[label - 1][slot];
        let scale = if c == 0 { p.noise0 } else { p.noise1 };
        let mean = &means[label - 1];
        let x: Vec<f64> = mean
            .iter()
            .map(|&m| m + scale * rng.next_gaussian())
            .collect();
        samples.push(Sample { x, y0: label, c });
    }

    Ok(GroupedDataset {
        samples,
        splits: vec![Split::Train; p.n],
        params: Some(p.clone()),
    })
}

/// Assign train/validation/test tags by a seeded shuffle and contiguous cut
/// inside every (class, group) cell, so each cell is represented in train.
/// Validation and test sizes use floor arithmetic per cell; the remainder
/// goes to train.
pub fn split(ds: &GroupedDataset, fractions: (f64, f64, f64), seed: u64) -> Result<GroupedDataset> {
    let (ft, fv, fe) = fractions;
    if !(ft >= 0.0 && fv >= 0.0 && fe >= 0.0) || fmath::abs(ft + fv + fe - 1.0) > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions ({ft}, {fv}, {fe}) must be non-negative and sum to 1"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut splits = vec![Split::Train; ds.len()];

    // Cells in (class, group) order; indices inside a cell keep dataset order
    // until the seeded shuffle.
    let classes = ds.class_count();
    for class in 1..=classes {
        for group in 0..=1u8 {
            let mut cell: Vec<usize> = ds
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.y0 == class && s.c == group)
                .map(|(i, _)| i)
                .collect();
            if cell.is_empty() {
                continue;
            }
            rng.shuffle(&mut cell);
            let n = cell.len();
            let n_val = (fv * n as f64 + 1e-9) as usize;
            let n_test = (fe * n as f64 + 1e-9) as usize;
            // Order: validation, test, then whatever remains is train.
            for (pos, &idx) in cell.iter().enumerate() {
                splits[idx] = if pos < n_val {
                    Split::Validation
                } else if pos < n_val + n_test {
                    Split::Test
                } else {
                    Split::Train
                };
            }
        }
    }

    Ok(GroupedDataset {
        samples: ds.samples.clone(),
        splits,
        params: ds.params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> GenParams {
        GenParams {
            n: 400,
            d: 4,
            classes: 4,
            seed,
            ..GenParams::default()
        }
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let a = generate(&small_params(9)).unwrap();
        let b = generate(&small_params(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_differs() {
        let a = generate(&small_params(1)).unwrap();
        let b = generate(&small_params(2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn marginals_match_requested_fractions() {
        let p = GenParams::default();
        let ds = generate(&p).unwrap();
        let g0 = ds.samples().iter().filter(|s| s.c == 0).count();
        let expected = (p.group0_fraction * p.n as f64).round() as isize;
        assert!((g0 as isize - expected).abs() <= 1, "group-0 count {g0}");
        for class in 1..=p.classes {
            let n_class = ds.samples().iter().filter(|s| s.y0 == class).count();
            assert!((n_class as isize - (p.n / p.classes) as isize).abs() <= 1);
        }
    }

    #[test]
    fn every_class_group_cell_is_populated() {
        let ds = generate(&small_params(5)).unwrap();
        for class in 1..=4 {
            for group in 0..=1u8 {
                let count = ds
                    .samples()
                    .iter()
                    .filter(|s| s.y0 == class && s.c == group)
                    .count();
                assert!(count >= 2, "class {class} group {group} has {count}");
            }
        }
    }

    #[test]
    fn infeasible_params_error() {
        let p = GenParams {
            n: 20,
            ..GenParams::default()
        };
        assert!(matches!(generate(&p), Err(Error::Data(_))));
    }

    #[test]
    fn split_all_train() {
        let ds = generate(&small_params(3)).unwrap();
        let out = split(&ds, (1.0, 0.0, 0.0), 1).unwrap();
        assert!(out.splits().iter().all(|&s| s == Split::Train));
    }

    #[test]
    fn split_counts_follow_floor_arithmetic() {
        let ds = generate(&small_params(3)).unwrap();
        let out = split(&ds, (0.6, 0.2, 0.2), 1).unwrap();

        // Re-derive the per-cell floor counts independently.
        let mut want_val = 0;
        let mut want_test = 0;
        for class in 1..=4 {
            for group in 0..=1u8 {
                let n = ds
                    .samples()
                    .iter()
                    .filter(|s| s.y0 == class && s.c == group)
                    .count();
                want_val += (0.2 * n as f64 + 1e-9) as usize;
                want_test += (0.2 * n as f64 + 1e-9) as usize;
            }
        }
        let n_val = out.splits().iter().filter(|&&s| s == Split::Validation).count();
        let n_test = out.splits().iter().filter(|&&s| s == Split::Test).count();
        assert_eq!(n_val, want_val);
        assert_eq!(n_test, want_test);
        assert_eq!(
            out.len() - n_val - n_test,
            out.splits().iter().filter(|&&s| s == Split::Train).count()
        );
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let ds = generate(&small_params(3)).unwrap();
        let a = split(&ds, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split(&ds, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a, b);
        // Every (class, group) cell appears in train.
        for class in 1..=4 {
            for group in 0..=1u8 {
                let in_train = a
                    .samples()
                    .iter()
                    .zip(a.splits().iter())
                    .any(|(s, &t)| t == Split::Train && s.y0 == class && s.c == group);
                assert!(in_train, "cell ({class}, {group}) missing from train");
            }
        }
    }

    #[test]
    fn bad_fractions_error() {
        let ds = generate(&small_params(3)).unwrap();
        assert!(matches!(
            split(&ds, (0.5, 0.2, 0.2), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn separation_zero_collapses_class_means() {
        let p = GenParams {
            separation: 0.0,
            ..small_params(8)
        };
        let ds = generate(&p).unwrap();
        // With coincident means the per-class feature means agree within
        // sampling noise.
        let mut per_class_mean = vec![vec![0.0; p.d]; p.classes];
        let mut counts = vec![0usize; p.classes];
        for s in ds.samples() {
            counts[s.y0 - 1] += 1;
            for (acc, v) in per_class_mean[s.y0 - 1].iter_mut().zip(s.x.iter()) {
                *acc += v;
            }
        }
        for (mean, count) in per_class_mean.iter_mut().zip(counts.iter()) {
            for v in mean.iter_mut() {
                *v /= *count as f64;
            }
        }
        for ci in 1..p.classes {
            for j in 0..p.d {
                assert!((per_class_mean[ci][j] - per_class_mean[0][j]).abs() < 0.8);
            }
        }
    }
}
