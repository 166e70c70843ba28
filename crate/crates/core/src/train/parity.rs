//! Two-agent parity toy: agent 1 sees `s¹` and sends one bit, agent 2 sees
//! `s²` and the bit and acts with `u²`; the reward `r = (−1)^{s¹+s²+u²}`.
//!
//! Before a protocol exists, the sender's Q-learning signal averages out to
//! exactly zero, while the differentiable channel still delivers a non-zero
//! expected gradient to the sender through the receiver's Q-function.

use rand::SeedableRng;

use crate::error::Result;
use crate::nn::Linear;
use crate::params::{Gradient, ParamStore};
use crate::rng::{StreamRng, Streams};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub fn parity_reward(s1: u8, s2: u8, u2: u8) -> i32 {
    if (s1 + s2 + u2).is_multiple_of(2) {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParityReport {
    /// `E[ΔQ(s¹, m¹)]` for each `(s¹, m¹)` with a zero-initialized sender Q.
    pub expected_td_update: [[f64; 2]; 2],
    /// Expected reward of each fixed receiver action.
    pub expected_reward_fixed_action: [f64; 2],
    /// Norm of the expected DIAL gradient on the sender's parameters, one
    /// entry per random receiver initialization.
    pub dial_gradient_norms: Vec<f64>,
}

impl ParityReport {
    pub fn td_is_exactly_zero(&self) -> bool {
        self.expected_td_update.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn all_gradients_nonzero(&self) -> bool {
        self.dial_gradient_norms.iter().all(|&g| g > 0.0)
    }
}

/// Exact enumeration of the sender's expected TD error. The numerator is
/// summed in integers so the zero is exact rather than a rounding accident.
pub fn expected_td_update() -> [[f64; 2]; 2] {
    let q_sender = 0i32;
    let mut out = [[0.0; 2]; 2];
    for (s1, row) in out.iter_mut().enumerate() {
        for cell in row.iter_mut() {
            // The receiver has no protocol: its choice is uniform and
            // independent of the message.
            let mut sum = 0i32;
            for s2 in 0..2u8 {
                for u2 in 0..2u8 {
                    sum += q_sender - parity_reward(s1 as u8, s2, u2);
                }
            }
            *cell = f64::from(sum) / 4.0;
        }
    }
    out
}

pub fn expected_reward_fixed_action() -> [f64; 2] {
    let mut out = [0.0; 2];
    for (u2, cell) in out.iter_mut().enumerate() {
        let sum: i32 = (0..2u8)
            .flat_map(|s1| (0..2u8).map(move |s2| parity_reward(s1, s2, u2 as u8)))
            .sum();
        *cell = f64::from(sum) / 4.0;
    }
    out
}

/// Expected DIAL gradient `[∂/∂w, ∂/∂b]` on the sender for one random receiver.
///
/// Sender: `m¹ = w·s¹ + b`, `m̂ = logistic(m¹)`. Receiver: a random two-layer
/// tanh network `Q(s², m̂, ·)`. The loss `½(Q(s², m̂, u²) − r)²` is averaged
/// over all eight `(s¹, s², u²)`.
pub fn expected_dial_gradient(seed: u64) -> Result<[f64; 2]> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let w = store.add("sender/w", Tensor::uniform(&[1, 1], 1.0, &mut rng))?;
    let b = store.add("sender/b", Tensor::uniform(&[1], 1.0, &mut rng))?;
    let l1 = Linear::new(&mut store, "receiver/l1", 2, 8, &mut rng)?;
    let l2 = Linear::new(&mut store, "receiver/l2", 8, 2, &mut rng)?;

    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    let mut pick = Tensor::zeros(&[8, 2]);
    let mut target = Vec::new();
    for (row, code) in (0..8u8).enumerate() {
        let (a, c, u) = (code & 1, (code >> 1) & 1, (code >> 2) & 1);
        s1.push(f64::from(a));
        s2.push(f64::from(c));
        pick.data_mut()[row * 2 + u as usize] = 1.0;
        target.push(f64::from(parity_reward(a, c, u)));
    }
    let mut tape = Tape::new();
    let x1 = tape.constant(Tensor::matrix(8, 1, s1)?)?;
    let wv = tape.param(&store, w);
    let bv = tape.param(&store, b);
    let m = tape.matmul(x1, wv)?;
    let m = tape.add_rowwise(m, bv)?;
    let m_hat = tape.sigmoid(m)?;
    let x2 = tape.constant(Tensor::matrix(8, 1, s2)?)?;
    let inp = tape.concat(&[x2, m_hat])?;
    let h = l1.forward(&mut tape, &store, inp)?;
    let h = tape.tanh(h)?;
    let q = l2.forward(&mut tape, &store, h)?;
    let pick = tape.constant(pick)?;
    let q = tape.mul(q, pick)?;
    let ones = tape.constant(Tensor::full(&[2, 1], 1.0))?;
    let q = tape.matmul(q, ones)?;
    let y = tape.constant(Tensor::matrix(8, 1, target)?)?;
    let d = tape.sub(q, y)?;
    let sq = tape.square(d)?;
    let loss = tape.weighted_sum(sq, Tensor::full(&[8, 1], 0.5 / 8.0))?;
    let grads = tape.backward(loss)?;
    let mut grad = Gradient::zeros_like(&store);
    grad.accumulate(&tape, &grads)?;
    Ok([grad.get(w).item(), grad.get(b).item()])
}

pub fn toy_parity_demo(seeds: usize, master: u64) -> Result<ParityReport> {
    let streams = Streams::new(master);
    let dial_gradient_norms = (0..seeds)
        .map(|i| expected_dial_gradient(streams.seed_for("parity", i as u64)).map(|g| g[0].hypot(g[1])))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParityReport {
        expected_td_update: expected_td_update(),
        expected_reward_fixed_action: expected_reward_fixed_action(),
        dial_gradient_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_update_is_exactly_zero() {
        assert!(expected_td_update().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_actions_average_zero() {
        assert_eq!(expected_reward_fixed_action(), [0.0, 0.0]);
    }

    #[test]
    fn dial_gradient_nonzero_for_twenty_receivers() {
        let r = toy_parity_demo(20, 0).unwrap();
        assert_eq!(r.dial_gradient_norms.len(), 20);
        assert!(r.all_gradients_nonzero(), "{:?}", r.dial_gradient_norms);
        assert!(r.td_is_exactly_zero());
    }
}
