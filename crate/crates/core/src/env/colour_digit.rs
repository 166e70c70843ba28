//! Two agents each see a coloured digit. Step one exchanges one bit; at step
//! two each agent picks a binary action and is rewarded according to its own
//! action, both colours, and both digit parities.

use std::sync::Arc;

use super::digits::{Digit, DigitSet};
use super::mnist::colourize;
use super::{Environment, ObsSpec, Observation, StepResult};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::Rng;

fn sign(exp: u8) -> f64 {
    if exp.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Reward for agent `a` given its action `u`, its own colour and digit and
/// the other agent's colour and digit:
/// `2(−1)^{u + c_a + d_other} + (−1)^{u + d_a + c_other}`.
pub fn agent_reward(u: u8, c_own: u8, d_own: u8, c_other: u8, d_other: u8) -> f64 {
    2.0 * sign(u + c_own + d_other % 2) + sign(u + d_own % 2 + c_other)
}

/// Team reward for actions `u`, colours `c` and digits `d` of both agents.
pub fn colour_digit_reward(u: [u8; 2], c: [u8; 2], d: [u8; 2]) -> f64 {
    agent_reward(u[0], c[0], d[0], c[1], d[1]) + agent_reward(u[1], c[1], d[1], c[0], d[0])
}

/// Full-state optimum averaged over uniform colours and parities.
pub fn oracle_reward() -> f64 {
    let mut total = 0.0;
    for code in 0..16u8 {
        let c = [code & 1, (code >> 1) & 1];
        let d = [(code >> 2) & 1, (code >> 3) & 1];
        let best = |a: usize| {
            let o = 1 - a;
            (0..2u8)
                .map(|u| agent_reward(u, c[a], d[a], c[o], d[o]))
                .fold(f64::MIN, f64::max)
        };
        total += best(0) + best(1);
    }
    total / 16.0
}

#[derive(Debug)]
pub struct ColourDigitGame {
    digits: Arc<DigitSet>,
    t: usize,
    done: bool,
    samples: Vec<Digit>,
    colours: [u8; 2],
    views: Vec<Arc<Vec<f64>>>,
}

impl ColourDigitGame {
    pub const HORIZON: usize = 2;

    pub fn new(digits: Arc<DigitSet>) -> Self {
        ColourDigitGame {
            digits,
            t: 0,
            done: true,
            samples: Vec::new(),
            colours: [0, 0],
            views: Vec::new(),
        }
    }

    pub fn colours(&self) -> [u8; 2] {
        self.colours
    }

    pub fn digit_values(&self) -> [u8; 2] {
        [self.samples[0].digit, self.samples[1].digit]
    }
}

impl Environment for ColourDigitGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        Self::HORIZON
    }

    /// `2 · class + colour`.
    fn label(&self, agent: usize) -> Option<usize> {
        self.samples.get(agent).map(|s| 2 * s.class + usize::from(self.colours[agent]))
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Features {
            dim: 2 * self.digits.pixels_per_image(),
        }
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        self.samples = (0..2).map(|_| self.digits.sample(rng)).collect();
        self.colours = [u8::from(rng.random_bool(0.5)), u8::from(rng.random_bool(0.5))];
        self.views = self
            .samples
            .iter()
            .zip(self.colours)
            .map(|(s, c)| Arc::new(colourize(&s.pixels, c == 1)))
            .collect();
        self.t = 1;
        self.done = false;
    }

    fn t(&self) -> usize {
        self.t
    }

    fn done(&self) -> bool {
        self.done
    }

    fn observe(&self, agent: usize) -> Observation {
        Observation::Features(self.views[agent].clone())
    }

    fn available_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true, self.t == Self::HORIZON]
    }

    fn message_sender(&self, receiver: usize) -> Option<usize> {
        (self.t > 1).then_some(1 - receiver)
    }

    fn step(
        &mut self,
        actions: &[usize],
        _message_bits: &[Vec<bool>],
        _rng: &mut StreamRng,
    ) -> Result<StepResult> {
        if self.done {
            return Err(Error::Environment("step after episode end".into()));
        }
        if actions.len() != 2 {
            return Err(Error::Environment(format!("expected 2 actions, got {}", actions.len())));
        }
        if let Some(&u) = actions.iter().find(|&&u| u > 1) {
            return Err(Error::Environment(format!("action {u} out of range")));
        }
        if self.t == 1 {
            if actions.iter().any(|&u| u != 0) {
                return Err(Error::Environment("step one is message-only".into()));
            }
            self.t = 2;
            return Ok(StepResult {
                reward: 0.0,
                done: false,
                observations: (0..2).map(|a| self.observe(a)).collect(),
            });
        }
        self.done = true;
        let reward = colour_digit_reward(
            [actions[0] as u8, actions[1] as u8],
            self.colours,
            self.digit_values(),
        );
        Ok(StepResult {
            reward,
            done: true,
            observations: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn all_zero_gives_six() {
        assert_eq!(agent_reward(0, 0, 0, 0, 0), 3.0);
        assert_eq!(colour_digit_reward([0, 0], [0, 0], [2, 4]), 6.0);
    }

    #[test]
    fn flipping_action_negates_agent_reward() {
        for code in 0..16u8 {
            let (c0, d0, c1, d1) = (code & 1, (code >> 1) & 1, (code >> 2) & 1, (code >> 3) & 1);
            assert_eq!(agent_reward(0, c0, d0, c1, d1), -agent_reward(1, c0, d0, c1, d1));
        }
    }

    #[test]
    fn total_reward_takes_only_even_values() {
        let allowed = [-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0];
        for code in 0..64u8 {
            let b = |i: u8| (code >> i) & 1;
            let r = colour_digit_reward([b(0), b(1)], [b(2), b(3)], [b(4), b(5)]);
            assert!(allowed.contains(&r), "{r}");
        }
    }

    #[test]
    fn fixed_policies_without_communication_average_zero() {
        for u in 0..4u8 {
            let acts = [u & 1, u >> 1];
            let mut sum = 0.0;
            for code in 0..16u8 {
                let b = |i: u8| (code >> i) & 1;
                sum += colour_digit_reward(acts, [b(0), b(1)], [b(2), b(3)]);
            }
            assert_eq!(sum, 0.0);
        }
    }

    #[test]
    fn oracle_is_four() {
        assert_eq!(oracle_reward(), 4.0);
    }

    #[test]
    fn episode_flow() {
        let set = Arc::new(DigitSet::synthetic(&[0, 1], 3, 2, 0.1, 0));
        let mut g = ColourDigitGame::new(set);
        let mut rng = StreamRng::seed_from_u64(0);
        g.reset(&mut rng);
        assert_eq!(g.available_actions(0), vec![true, false]);
        assert_eq!(g.message_sender(0), None);
        assert!(g.step(&[1, 0], &[], &mut rng).is_err());
        let r = g.step(&[0, 0], &[], &mut rng).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(g.message_sender(0), Some(1));
        assert!(g.step(&[2, 0], &[], &mut rng).is_err());
        let r = g.step(&[1, 0], &[], &mut rng).unwrap();
        assert!(r.done);
        let expected = colour_digit_reward([1, 0], g.colours(), g.digit_values());
        assert_eq!(r.reward, expected);
    }
}
