//! The discretise/regularise unit (DRU) and the capacity analysis of the
//! noisy logistic channel it induces.
//!
//! During centralised training a real message `m` becomes
//! `m̂ = Logistic(m + ε)` with `ε ~ N(0, σ²)`; at execution time it becomes the
//! hard bit `1{m > 0}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tape::{logistic, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Train,
    Exec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DruConfig {
    pub sigma: f64,
    pub mode: ChannelMode,
}

impl DruConfig {
    pub fn new(sigma: f64, mode: ChannelMode) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("channel sigma must be >= 0, got {sigma}")));
        }
        Ok(DruConfig { sigma, mode })
    }

    pub fn train(sigma: f64) -> Result<Self> {
        Self::new(sigma, ChannelMode::Train)
    }

    pub fn exec() -> Self {
        DruConfig {
            sigma: 0.0,
            mode: ChannelMode::Exec,
        }
    }
}

/// Gaussian draws for one channel use, `σ·N(0,1)` per component. The noise
/// is sampled outside differentiation and enters the tape as a constant.
pub fn sample_noise<R: Rng + ?Sized>(shape: &[usize], sigma: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("noise shape")
}

pub fn threshold(m: f64) -> f64 {
    if m > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Value-only DRU.
pub fn dru<R: Rng + ?Sized>(m: &[f64], cfg: DruConfig, rng: &mut R) -> Result<Vec<f64>> {
    if let Some(i) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("dru input component {i}")));
    }
    Ok(match cfg.mode {
        ChannelMode::Exec => m.iter().map(|&v| threshold(v)).collect(),
        ChannelMode::Train => m
            .iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                logistic(v + cfg.sigma * z)
            })
            .collect(),
    })
}

/// Train-mode DRU recorded on a tape with pinned noise: `σ(m + noise)`.
/// The derivative with respect to `m` is `y(1 − y)`.
pub fn dru_on_tape(tape: &mut Tape, m: Var, noise: &Tensor) -> Result<Var> {
    let n = tape.constant(noise.clone())?;
    let shifted = tape.add(m, n)?;
    tape.sigmoid(shifted)
}

pub fn logit(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density of `m̂ = Logistic(N(m, σ²))` at `m_hat ∈ (0, 1)`:
/// `φ((logit m̂ − m)/σ) / σ · 1/(m̂(1 − m̂))`.
pub fn channel_density(m_hat: f64, m: f64, sigma: f64) -> Result<f64> {
    if !(m_hat > 0.0 && m_hat < 1.0) {
        return Err(Error::invalid(format!("m_hat must lie in (0, 1), got {m_hat}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(density_at_logit(logit(m_hat), m, sigma))
}

/// The same density expressed through `x = logit(m̂)`; stays accurate where
/// `m̂` itself rounds to 0 or 1.
pub fn density_at_logit(x: f64, m: f64, sigma: f64) -> f64 {
    let u = (x - m) / sigma;
    // 1/(y(1-y)) = 2 + eˣ + e⁻ˣ
    let jac = 2.0 + 2.0 * x.cosh();
    INV_SQRT_2PI / sigma * (-0.5 * u * u).exp() * jac
}

/// Closed-form CDF `P(m̂ ≤ y) = Φ((logit y − m)/σ)`.
pub fn channel_cdf(m_hat: f64, m: f64, sigma: f64) -> f64 {
    if m_hat <= 0.0 {
        return 0.0;
    }
    if m_hat >= 1.0 {
        return 1.0;
    }
    0.5 * erfc(-(logit(m_hat) - m) / (sigma * std::f64::consts::SQRT_2))
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    // Start from a fixed partition so narrow peaks are not missed.
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = lo + h;
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(&f, lo, flo, hi, fhi);
            recurse(&f, lo, flo, hi, fhi, m, fm, whole, tol / PANELS as f64, 40)
        })
        .sum()
}

/// `P(m̂ ≤ y)` by quadrature of [`channel_density`], carried out in logit
/// space.
pub fn channel_cdf_quadrature(m_hat: f64, m: f64, sigma: f64) -> f64 {
    if m_hat <= 0.0 {
        return 0.0;
    }
    if m_hat >= 1.0 {
        return 1.0;
    }
    // dm̂ = m̂(1 − m̂) dx, which cancels the Jacobian factor.
    let x = logit(m_hat);
    let lo = m - 40.0 * sigma;
    if x <= lo {
        return 0.0;
    }
    integrate(
        |t| density_at_logit(t, m, sigma) * logistic(t) * logistic(-t),
        lo,
        x,
        1e-12,
    )
}

/// One decodable level: an input activation `m` and the range of outputs
/// `[m_hat_lo, m_hat_hi]` where its density exceeds the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level {
    pub m: f64,
    pub m_hat_lo: f64,
    pub m_hat_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodableLevels {
    pub sigma: f64,
    pub epsilon: f64,
    pub levels: Vec<Level>,
    pub diagnostic: Option<String>,
}

impl DecodableLevels {
    pub fn count(&self) -> usize {
        self.levels.len()
    }
}

/// `[min, max]` of `{x : density_at_logit(x | m) > ε}`, or `None` when the
/// density never exceeds ε.
pub fn superlevel_logit_bounds(m: f64, sigma: f64, epsilon: f64) -> Option<(f64, f64)> {
    // Outside |x − m| > d the density is below ε, using 2 + 2cosh x ≤ 4e^{|m| + |x − m|}.
    let c = m.abs() + 4f64.ln() - (sigma / INV_SQRT_2PI).ln() - epsilon.ln();
    let s2 = sigma * sigma;
    let d = if c > -s2 / 2.0 {
        s2 + (s2 * s2 + 2.0 * s2 * c).sqrt()
    } else {
        s2
    } + 1.0;
    let above = |x: f64| density_at_logit(x, m, sigma) > epsilon;
    const N: usize = 20_000;
    let step = 2.0 * d / N as f64;
    let grid = |i: usize| m - d + i as f64 * step;
    let first = (0..=N).find(|&i| above(grid(i)))?;
    let last = (0..=N).rev().find(|&i| above(grid(i)))?;
    let refine = |mut out: f64, mut inside: f64| {
        for _ in 0..100 {
            let mid = 0.5 * (out + inside);
            if above(mid) {
                inside = mid;
            } else {
                out = mid;
            }
        }
        inside
    };
    let lo = if first == 0 { grid(0) } else { refine(grid(first - 1), grid(first)) };
    let hi = if last == N { grid(N) } else { refine(grid(last + 1), grid(last)) };
    Some((lo, hi))
}

/// Greedy left-to-right packing of distinguishable activations in
/// `[lo, hi]`: starting from `m₁ = lo`, each next `m` is placed so that the
/// lowest likely output of the new value meets the highest likely output of
/// the previous one.
pub fn decodable_levels(sigma: f64, epsilon: f64, lo: f64, hi: f64) -> Result<DecodableLevels> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty range [{lo}, {hi}]")));
    }
    if !(epsilon > 0.0) || !(sigma > 0.0) {
        return Err(Error::invalid("epsilon and sigma must be positive"));
    }
    let mut out = DecodableLevels {
        sigma,
        epsilon,
        levels: Vec::new(),
        diagnostic: None,
    };
    let mut m = lo;
    let Some(mut bounds) = superlevel_logit_bounds(m, sigma, epsilon) else {
        out.diagnostic = Some(format!(
            "density never exceeds {epsilon} at sigma {sigma}; nothing is decodable"
        ));
        return Ok(out);
    };
    loop {
        out.levels.push(Level {
            m,
            m_hat_lo: logistic(bounds.0),
            m_hat_hi: logistic(bounds.1),
        });
        let target = bounds.1;
        // The lower edge of the superlevel set moves right one-for-one with m.
        let lower_edge = |mm: f64| superlevel_logit_bounds(mm, sigma, epsilon).map(|b| b.0);
        let mut a = m;
        let mut b = m + (target - bounds.0).max(1e-9);
        if lower_edge(b).is_none_or(|e| e < target) {
            b = m + 2.0 * (target - bounds.0).max(1.0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            match lower_edge(mid) {
                Some(e) if e < target => a = mid,
                _ => b = mid,
            }
            if b - a < 1e-10 {
                break;
            }
        }
        let next = b;
        if next > hi {
            break;
        }
        m = next;
        bounds = match superlevel_logit_bounds(m, sigma, epsilon) {
            Some(bb) => bb,
            None => break,
        };
    }
    Ok(out)
}
