//! Channel statistics against Monte-Carlo and brute-force oracles.

use commlab::dru::{channel_cdf, decodable_levels, dru, DruConfig};
use commlab::rng::Streams;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[test]
fn noisy_midpoint_averages_one_half() {
    let mut rng = Streams::new(11).stream("mc");
    let ys = dru(&vec![0.0; 1_000_000], DruConfig::train(2.0).unwrap(), &mut rng).unwrap();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    assert!((mean - 0.5).abs() < 0.002, "{mean}");
}

#[test]
fn samples_follow_the_closed_form_cdf() {
    let (m, sigma) = (1.0, 2.0);
    let mut rng = Streams::new(12).stream("mc");
    let mut ys = dru(&vec![m; 1_000_000], DruConfig::train(sigma).unwrap(), &mut rng).unwrap();
    ys.sort_by(f64::total_cmp);
    let n = ys.len() as f64;
    let ks = ys.iter().enumerate().fold(0.0f64, |d, (i, &y)| {
        let c = channel_cdf(y, m, sigma);
        d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs())
    });
    assert!(ks < 0.002, "{ks}");
}

/// Lowest and highest logit where the density of `m̂` exceeds `eps`, from a
/// dense grid.
fn grid_bounds(m: f64, sigma: f64, eps: f64) -> Option<(f64, f64)> {
    let f = |x: f64| {
        let u = (x - m) / sigma;
        INV_SQRT_2PI / sigma * (-0.5 * u * u).exp() * (2.0 + x.exp() + (-x).exp())
    };
    let pts: Vec<f64> = (0..=6000).map(|i| m - 15.0 + i as f64 * 0.005).filter(|&x| f(x) > eps).collect();
    Some((*pts.first()?, *pts.last()?))
}

/// The packing rule swept over 10⁴ candidate activations in [−10, 10].
fn grid_level_count(sigma: f64, eps: f64) -> usize {
    let ms: Vec<f64> = (0..10_000).map(|i| -10.0 + 20.0 * i as f64 / 9_999.0).collect();
    let bounds: Vec<Option<(f64, f64)>> = ms.iter().map(|&m| grid_bounds(m, sigma, eps)).collect();
    let mut count = 1;
    let mut hi = bounds[0].expect("first level").1;
    for b in bounds.iter().skip(1).flatten() {
        if b.0 >= hi {
            count += 1;
            hi = b.1;
        }
    }
    count
}

#[test]
fn level_count_at_unit_noise_matches_grid_sweep() {
    let lib = decodable_levels(1.0, 0.1, -10.0, 10.0).unwrap().count();
    assert_eq!(lib, grid_level_count(1.0, 0.1));
}

#[test]
fn two_levels_at_sigma_two_on_the_grid() {
    assert_eq!(grid_level_count(2.0, 0.1), 2);
}
