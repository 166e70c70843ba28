use commlab::agent::Method;
use commlab::env::{DigitSource, EnvConfig};
use commlab::gradcheck::grad_check_params;
use commlab::train::{
    backward, batch_loss, compute_targets, dial_backward, reference_backward, rial_update,
    RolloutMode, Targets, TrainConfig, Trainer, TrajectoryBatch,
};

fn config(method: Method, shared: bool, env: EnvConfig) -> TrainConfig {
    let mut cfg = TrainConfig::new(method, env, 64);
    cfg.shared = shared;
    cfg.batch = 4;
    cfg.embed = 5;
    cfg.epsilon = 0.3;
    cfg.sigma = 1.0;
    cfg.seed = 17;
    cfg
}

fn multistep(steps: usize) -> EnvConfig {
    EnvConfig::MultiStep {
        steps,
        digits: DigitSource {
            classes: vec![0, 1, 2],
            synthetic_side: 3,
            synthetic_per_class: 4,
            ..DigitSource::default()
        },
    }
}

/// A trainer whose target network differs from θ, plus one sampled batch.
fn setup(cfg: TrainConfig) -> (Trainer, TrajectoryBatch, Targets) {
    let mut t = Trainer::new(cfg).unwrap();
    // One update so θ ≠ θ⁻ and the batch-norm buffers move.
    t.train_batch().unwrap();
    let data = t.sample_batch().unwrap();
    let targets = compute_targets(&t.net, &t.target, &data, t.cfg.gamma).unwrap();
    (t, data, targets)
}

#[test]
fn sweep_matches_single_tape_unroll() {
    let cases = [
        (Method::Dial, true, EnvConfig::switch(3)),
        (Method::Dial, false, EnvConfig::switch(3)),
        (Method::Rial, true, EnvConfig::switch(3)),
        (Method::Rial, false, EnvConfig::switch(3)),
        (Method::NoComm, true, EnvConfig::switch(3)),
        (Method::Dial, true, multistep(3)),
        (Method::Dial, true, EnvConfig::ColourDigit { digits: DigitSource { synthetic_side: 3, ..DigitSource::default() } }),
    ];
    for (method, shared, env) in cases {
        let (t, data, targets) = setup(config(method, shared, env.clone()));
        let out = backward(&t.net, &t.theta, &data, &targets).unwrap();
        let (reference, loss) = reference_backward(&t.net, &t.theta, &data, &targets).unwrap();
        let diff = out.grad.max_abs_diff(&reference);
        assert!(diff < 1e-10, "{method:?} shared={shared} {env:?}: {diff}");
        assert!((out.loss - loss).abs() < 1e-10 * loss.abs().max(1.0));
        assert!(out.grad.global_norm() > 0.0);
    }
}

#[test]
fn single_agent_without_channel_is_plain_recurrent_q_learning() {
    let (t, data, targets) = setup(config(Method::NoComm, true, EnvConfig::switch(1)));
    let out = backward(&t.net, &t.theta, &data, &targets).unwrap();
    let (reference, _) = reference_backward(&t.net, &t.theta, &data, &targets).unwrap();
    assert!(out.grad.max_abs_diff(&reference) < 1e-10);
    assert!(out.chain.is_none());
}

#[test]
fn dial_gradient_matches_finite_differences() {
    // Two agents, three steps, pinned channel noise.
    let (t, data, targets) = setup(config(Method::Dial, true, multistep(3)));
    let out = dial_backward(&t.net, &t.theta, &data, &targets).unwrap();
    let net = t.net.clone();
    let report = grad_check_params(
        &t.theta,
        &out.grad,
        |store| batch_loss(&net, store, &data, &targets),
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.passed(1e-4), "max rel error {}", report.max_rel_error);
}

#[test]
fn dial_gradient_matches_finite_differences_without_sharing() {
    let (t, data, targets) = setup(config(Method::Dial, false, multistep(3)));
    let out = dial_backward(&t.net, &t.theta, &data, &targets).unwrap();
    let net = t.net.clone();
    let report = grad_check_params(
        &t.theta,
        &out.grad,
        |store| batch_loss(&net, store, &data, &targets),
        1e-5,
        None,
    )
    .unwrap();
    assert!(report.passed(1e-4), "max rel error {}", report.max_rel_error);
}

#[test]
fn message_chain_ends_at_zero_and_carries_gradient() {
    let (t, data, targets) = setup(config(Method::Dial, true, multistep(3)));
    let out = dial_backward(&t.net, &t.theta, &data, &targets).unwrap();
    let chain = out.chain.unwrap();
    assert_eq!(chain.mu.len(), data.steps.len());
    // The last message is never received.
    assert!(chain.mu.last().unwrap().iter().all(|m| m.max_abs() == 0.0));
    assert!(chain.mu[0].iter().any(|m| m.max_abs() > 0.0));
}

#[test]
fn exec_mode_batch_rejected_for_dial() {
    let (t, _, _) = setup(config(Method::Dial, true, EnvConfig::switch(3)));
    let batches = t.greedy_batches(4, "eval").unwrap();
    let targets = compute_targets(&t.net, &t.target, &batches[0], 1.0).unwrap();
    assert_eq!(batches[0].mode, RolloutMode::greedy());
    assert!(dial_backward(&t.net, &t.theta, &batches[0], &targets).is_err());
}

#[test]
fn method_specific_entry_points_check_the_batch() {
    let (t, data, targets) = setup(config(Method::Rial, true, EnvConfig::switch(3)));
    assert!(dial_backward(&t.net, &t.theta, &data, &targets).is_err());
    assert!(rial_update(&t.net, &t.theta, &data, &targets).is_ok());
}

#[test]
fn terminal_targets_equal_reward() {
    let (_, data, targets) = setup(config(Method::Rial, true, EnvConfig::switch(3)));
    let mut seen = 0;
    for (t, step) in data.steps.iter().enumerate() {
        for a in 0..3 {
            for b in 0..data.batch {
                if step.alive[b] && step.terminal[b] {
                    assert_eq!(targets.y_u[t][a * data.batch + b], step.reward[b]);
                    assert_eq!(targets.y_m[t][a * data.batch + b], step.reward[b]);
                    seen += 1;
                }
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn zero_target_network_telescopes_to_reward() {
    // With θ⁻ ≡ 0 every bootstrap is 0, so y_t = r_t at every step.
    let (mut t, _, _) = setup(config(Method::Dial, true, EnvConfig::switch(3)));
    t.target.zero_all();
    let data = t.sample_batch().unwrap();
    let targets = compute_targets(&t.net, &t.target, &data, 1.0).unwrap();
    for (ti, step) in data.steps.iter().enumerate() {
        for i in 0..3 * data.batch {
            if step.alive[i % data.batch] {
                assert_eq!(targets.y_u[ti][i], step.reward[i % data.batch]);
            }
        }
    }
}

#[test]
fn rial_has_no_cross_agent_gradient() {
    let (t, data, targets) = setup(config(Method::Rial, false, EnvConfig::switch(3)));
    let base = rial_update(&t.net, &t.theta, &data, &targets).unwrap().grad;
    let mut perturbed = t.theta.clone();
    for id in perturbed.ids().collect::<Vec<_>>() {
        if perturbed.name(id).starts_with("agent1/") && perturbed.is_trainable(id) {
            perturbed.get_mut(id).data_mut().iter_mut().for_each(|v| *v += 0.1);
        }
    }
    let other = rial_update(&t.net, &perturbed, &data, &targets).unwrap().grad;
    for id in t.theta.ids() {
        if t.theta.name(id).starts_with("agent0/") {
            assert_eq!(base.get(id), other.get(id), "{}", t.theta.name(id));
        }
    }
}

#[test]
fn rial_bandit_step_reduces_td_error() {
    // One agent, one day: the only episode outcome is an immediate reward.
    let mut cfg = config(Method::Rial, true, EnvConfig::Switch { n: 1, horizon: Some(1) });
    cfg.optimizer.lr = 1e-2;
    let mut t = Trainer::new(cfg).unwrap();
    let data = t.sample_batch().unwrap();
    let targets = compute_targets(&t.net, &t.target, &data, 1.0).unwrap();
    let before = batch_loss(&t.net, &t.theta, &data, &targets).unwrap();
    let grad = rial_update(&t.net, &t.theta, &data, &targets).unwrap().grad;
    t.opt.step(&mut t.theta, &grad).unwrap();
    let after = batch_loss(&t.net, &t.theta, &data, &targets).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn nocomm_batches_carry_no_messages() {
    let (_, data, _) = setup(config(Method::NoComm, true, EnvConfig::switch(3)));
    assert!(data.routed_messages().is_empty());
    assert!(data.steps.iter().all(|s| s.m_hat.iter().all(|m| m.numel() == 0)));
}

#[test]
fn switch_episodes_respect_horizon() {
    for n in [2, 3, 4] {
        let (_, data, _) = setup(config(Method::Dial, true, EnvConfig::switch(n)));
        let horizon = (4 * n - 6).max(1);
        assert!(data.lengths.iter().all(|&l| l >= 1 && l <= horizon));
        assert!(data.steps.len() <= horizon);
    }
}

#[test]
fn rollouts_are_reproducible() {
    let run = || {
        let mut t = Trainer::new(config(Method::Dial, true, EnvConfig::switch(3))).unwrap();
        let reports: Vec<_> = (0..3).map(|_| t.train_batch().unwrap()).collect();
        (reports, t.theta.clone())
    };
    let (r1, p1) = run();
    let (r2, p2) = run();
    assert_eq!(r1, r2);
    assert_eq!(p1, p2);
}

#[test]
fn target_sync_counts_episodes() {
    let mut cfg = config(Method::Dial, true, EnvConfig::switch(3));
    cfg.batch = 20;
    let mut t = Trainer::new(cfg).unwrap();
    let mut fired = Vec::new();
    for _ in 0..15 {
        let before = t.syncs();
        t.train_batch().unwrap();
        if t.syncs() > before {
            fired.push(t.episodes_done());
        }
    }
    assert_eq!(fired, vec![100, 200, 300]);
    assert_eq!(t.theta, t.target);
}

#[test]
fn target_starts_at_initialization() {
    let t = Trainer::new(config(Method::Dial, true, EnvConfig::switch(3))).unwrap();
    assert_eq!(t.theta, t.target);
}
