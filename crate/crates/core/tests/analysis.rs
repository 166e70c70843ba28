//! Protocol extraction and evaluation bounds on untrained and briefly
//! trained agents.

use commlab::agent::Method;
use commlab::analysis::{activation_histogram, extract_protocol, Protocol};
use commlab::env::{DigitSource, EnvConfig};
use commlab::train::{TrainConfig, Trainer};

fn switch3(method: Method, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(method, EnvConfig::switch(3), 320);
    cfg.seed = seed;
    cfg.embed = 16;
    cfg
}

#[test]
fn normalized_reward_never_beats_the_oracle() {
    for method in [Method::Dial, Method::Rial, Method::NoComm] {
        let mut t = Trainer::new(switch3(method, 2)).unwrap();
        for _ in 0..5 {
            t.train_batch().unwrap();
        }
        let episodes = 2000;
        let norm = t.evaluate(episodes).unwrap() / t.oracle();
        // Per-episode reward lies in [−1, 1].
        let se = 1.0 / (episodes as f64).sqrt() / t.oracle();
        assert!(norm <= 1.0 + 3.0 * se, "{method:?}: {norm}");
    }
}

#[test]
fn untrained_switch_table_is_not_flagged_optimal() {
    for seed in 0..3 {
        let t = Trainer::new(switch3(Method::Dial, seed)).unwrap();
        let Protocol::Switch { table, replay } = extract_protocol(&t, 300).unwrap() else {
            panic!("switch game must give a switch table");
        };
        assert!(!replay.optimal, "seed {seed}: ratio {}", replay.ratio);
        assert!(table.consistency() > 0.0 && table.consistency() <= 1.0);
        let csv = table.to_csv(&[]);
        assert_eq!(csv.lines().find(|l| !l.starts_with('#')), Some("day,bit_seen,visited_before,tell,bit_written,count,freq"));
    }
}

#[test]
fn analysis_leaves_parameters_untouched() {
    let mut t = Trainer::new(switch3(Method::Dial, 4)).unwrap();
    t.train_batch().unwrap();
    let before = t.checkpoint();
    extract_protocol(&t, 100).unwrap();
    let hist = activation_histogram(&t, 100).unwrap();
    assert_eq!(t.checkpoint(), before);
    if hist.m_hat.samples > 0 {
        assert!((hist.m_hat.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!((0.0..=1.0).contains(&hist.saturation));
}

#[test]
fn digit_codes_cover_every_label() {
    let env = EnvConfig::ColourDigit {
        digits: DigitSource {
            classes: vec![0, 1],
            synthetic_side: 4,
            synthetic_per_class: 8,
            ..DigitSource::default()
        },
    };
    let mut cfg = TrainConfig::new(Method::Dial, env, 64);
    cfg.embed = 8;
    let t = Trainer::new(cfg).unwrap();
    let Protocol::Codes(codes) = extract_protocol(&t, 400).unwrap() else {
        panic!("colour-digit game must give digit codes");
    };
    // Two classes in two colours.
    assert_eq!(codes.counts.len(), 4);
    assert_eq!(codes.modal().len(), 4);
}
