use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{saturation_fraction, Trainer};

pub const BINS: usize = 50;

/// Fixed-width histogram normalized to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
    pub samples: usize,
}

impl Histogram {
    /// Values outside `[lo, hi]` are clamped into the edge bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::invalid(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let mut counts = vec![0usize; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        let total = values.len().max(1) as f64;
        Ok(Histogram {
            lo,
            hi,
            mass: counts.iter().map(|&c| c as f64 / total).collect(),
            samples: values.len(),
        })
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.mass.len() as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }

    /// Columns `bin_lo,bin_hi,mass`.
    pub fn to_csv(&self, meta: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# samples: {}", self.samples);
        out.push_str("bin_lo,bin_hi,mass\n");
        for (k, m) in self.mass.iter().enumerate() {
            let (a, b) = self.edges(k);
            let _ = writeln!(out, "{a},{b},{m}");
        }
        out
    }
}

/// Histograms of the routed pre-channel message `m` and the train-mode
/// channel output `m̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationReport {
    pub m: Histogram,
    pub m_hat: Histogram,
    pub saturation: f64,
}

/// Runs `episodes` train-mode rollouts (no exploration) and bins the
/// messages that reached a receiver. Parameters are not touched.
pub fn activation_histogram(trainer: &Trainer, episodes: usize) -> Result<ActivationReport> {
    let batches = trainer.train_mode_batches(episodes, "analysis")?;
    let m: Vec<f64> = batches.iter().flat_map(|b| b.routed_pre_channel()).collect();
    let m_hat: Vec<f64> = batches.iter().flat_map(|b| b.routed_messages()).collect();
    let span = m.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    Ok(ActivationReport {
        m: Histogram::new(&m, -span, span, BINS)?,
        m_hat: Histogram::new(&m_hat, 0.0, 1.0, BINS)?,
        saturation: saturation_fraction(&m_hat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edges_and_clamping() {
        let h = Histogram::new(&[-1.0, 0.0, 0.25, 0.999, 1.0, 3.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.mass, vec![2.0 / 6.0, 1.0 / 6.0, 0.0, 3.0 / 6.0]);
        assert_eq!(h.edges(1), (0.25, 0.5));
        assert!(Histogram::new(&[], 1.0, 1.0, 4).is_err());
    }

    proptest! {
        #[test]
        fn mass_sums_to_one(values in prop::collection::vec(-2.0f64..2.0, 1..200)) {
            let h = Histogram::new(&values, -1.0, 1.0, BINS).unwrap();
            prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
