use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mnist;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Where digit images come from. Without MNIST paths a synthetic set is
/// generated: one random binary prototype per class plus pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigitSource {
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    /// Digit values kept; agents guess an index into this list.
    pub classes: Vec<u8>,
    /// Average-pool 28×28 MNIST images down to 14×14.
    pub downsample: bool,
    pub synthetic_side: usize,
    pub synthetic_per_class: usize,
    pub synthetic_noise: f64,
}

impl Default for DigitSource {
    fn default() -> Self {
        DigitSource {
            mnist_images: None,
            mnist_labels: None,
            classes: vec![0, 1, 2, 3],
            downsample: true,
            synthetic_side: 8,
            synthetic_per_class: 64,
            synthetic_noise: 0.2,
        }
    }
}

impl DigitSource {
    /// Full-scale MNIST: all ten digits at 28×28.
    pub fn full_mnist(images: PathBuf, labels: PathBuf) -> Self {
        DigitSource {
            mnist_images: Some(images),
            mnist_labels: Some(labels),
            classes: (0..10).collect(),
            downsample: false,
            ..Self::default()
        }
    }

    pub fn load(&self, seed: u64) -> Result<DigitSet> {
        if self.classes.is_empty() || self.classes.iter().any(|&c| c > 9) {
            return Err(Error::Config("digit classes must be a non-empty subset of 0..=9".into()));
        }
        let mut uniq = self.classes.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.classes.len() {
            return Err(Error::Config("digit classes must be distinct".into()));
        }
        match (&self.mnist_images, &self.mnist_labels) {
            (Some(img), Some(lab)) => {
                let samples = mnist::load(img, lab)?;
                let full = samples.first().map_or(0, |s| s.side);
                let side = if self.downsample { full / 2 } else { full };
                let mut by_class = vec![Vec::new(); self.classes.len()];
                for s in &samples {
                    if let Some(k) = self.classes.iter().position(|&c| c == s.digit) {
                        let s = if self.downsample { mnist::downsample(s) } else { s.clone() };
                        by_class[k].push(Arc::new(s.pixels));
                    }
                }
                DigitSet::new(self.classes.clone(), side, by_class)
            }
            (None, None) => Ok(DigitSet::synthetic(
                &self.classes,
                self.synthetic_side,
                self.synthetic_per_class,
                self.synthetic_noise,
                seed,
            )),
            _ => Err(Error::Config("both mnist_images and mnist_labels are required".into())),
        }
    }
}

/// Digit images grouped by class.
#[derive(Debug)]
pub struct DigitSet {
    classes: Vec<u8>,
    side: usize,
    by_class: Vec<Vec<Arc<Vec<f64>>>>,
}

/// One drawn digit.
#[derive(Clone, Debug)]
pub struct Digit {
    /// Index into the class list.
    pub class: usize,
    pub digit: u8,
    pub pixels: Arc<Vec<f64>>,
}

impl DigitSet {
    pub fn new(classes: Vec<u8>, side: usize, by_class: Vec<Vec<Arc<Vec<f64>>>>) -> Result<Self> {
        if let Some(k) = by_class.iter().position(|v| v.is_empty()) {
            return Err(Error::Config(format!("no samples for digit {}", classes[k])));
        }
        Ok(DigitSet {
            classes,
            side,
            by_class,
        })
    }

    pub fn synthetic(classes: &[u8], side: usize, per_class: usize, noise: f64, seed: u64) -> Self {
        let mut rng = StreamRng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
        let by_class = classes
            .iter()
            .map(|_| {
                let proto: Vec<f64> = (0..side * side)
                    .map(|_| if rng.random_bool(0.35) { 1.0 } else { 0.0 })
                    .collect();
                (0..per_class.max(1))
                    .map(|_| {
                        Arc::new(
                            proto
                                .iter()
                                .map(|&p| (p + jitter.sample(&mut rng)).clamp(0.0, 1.0))
                                .collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        DigitSet {
            classes: classes.to_vec(),
            side,
            by_class,
        }
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels_per_image(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform class, then a uniform sample of that class.
    pub fn sample(&self, rng: &mut StreamRng) -> Digit {
        let class = rng.random_range(0..self.classes.len());
        let pool = &self.by_class[class];
        Digit {
            class,
            digit: self.classes[class],
            pixels: pool[rng.random_range(0..pool.len())].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_set_is_seeded_and_in_range() {
        let a = DigitSet::synthetic(&[0, 1, 2], 6, 5, 0.2, 3);
        let b = DigitSet::synthetic(&[0, 1, 2], 6, 5, 0.2, 3);
        assert_eq!(a.len(), 15);
        assert_eq!(a.by_class[1][2], b.by_class[1][2]);
        assert!(a.by_class.iter().flatten().flat_map(|v| v.iter()).all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn class_subset_filters_mnist() {
        let dir = tempfile::tempdir().unwrap();
        let raw: Vec<(Vec<u8>, u8)> = (0..20).map(|i| (vec![(i * 10) as u8; 16], (i % 10) as u8)).collect();
        let (img, lab) = mnist::encode_idx(&raw, 4);
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        let src = DigitSource {
            mnist_images: Some(ip),
            mnist_labels: Some(lp),
            classes: vec![3, 7],
            ..DigitSource::default()
        };
        let set = src.load(0).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.side(), 2);
        let mut rng = StreamRng::seed_from_u64(1);
        for _ in 0..20 {
            let d = set.sample(&mut rng);
            assert_eq!(d.digit, [3, 7][d.class]);
        }
    }

    #[test]
    fn rejects_bad_class_lists() {
        let mut src = DigitSource::default();
        src.classes = vec![1, 1];
        assert!(src.load(0).is_err());
        src.classes = vec![12];
        assert!(src.load(0).is_err());
    }
}
