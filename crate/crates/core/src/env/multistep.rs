//! Two agents each see a digit and exchange one bit per step; at the final
//! step each guesses the other's digit. The last message is never received.

use std::sync::Arc;

use super::digits::{Digit, DigitSet};
use super::{Environment, ObsSpec, Observation, StepResult};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug)]
pub struct MultiStepGame {
    digits: Arc<DigitSet>,
    steps: usize,
    t: usize,
    done: bool,
    samples: Vec<Digit>,
}

impl MultiStepGame {
    pub fn new(digits: Arc<DigitSet>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("multi-step game needs at least one step"));
        }
        Ok(MultiStepGame {
            digits,
            steps,
            t: 0,
            done: true,
            samples: Vec::new(),
        })
    }

    /// Class indices of both agents' digits.
    pub fn classes(&self) -> [usize; 2] {
        [self.samples[0].class, self.samples[1].class]
    }
}

impl Environment for MultiStepGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        self.digits.num_classes()
    }

    fn horizon(&self) -> usize {
        self.steps
    }

    fn label(&self, agent: usize) -> Option<usize> {
        self.samples.get(agent).map(|s| s.class)
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Features {
            dim: self.digits.pixels_per_image(),
        }
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        self.samples = (0..2).map(|_| self.digits.sample(rng)).collect();
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
        Observation::Features(self.samples[agent].pixels.clone())
    }

    fn available_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.n_actions()]
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
        if let Some(&u) = actions.iter().find(|&&u| u >= self.n_actions()) {
            return Err(Error::Environment(format!("guess {u} out of range")));
        }
        if self.t < self.steps {
            self.t += 1;
            return Ok(StepResult {
                reward: 0.0,
                done: false,
                observations: (0..2).map(|a| self.observe(a)).collect(),
            });
        }
        self.done = true;
        let [c0, c1] = self.classes();
        let reward = 0.5 * f64::from(u8::from(actions[0] == c1)) + 0.5 * f64::from(u8::from(actions[1] == c0));
        Ok(StepResult {
            reward,
            done: true,
            observations: Vec::new(),
        })
    }
}

/// Best expected reward of any deterministic protocol when each agent can
/// send `bits` bits about its own digit, digits uniform over `classes`.
///
/// Exhaustive search over encoders, enumerated as restricted-growth strings
/// (partitions of the classes into at most `2^bits` codewords). The receiver
/// decodes each codeword to its most likely class.
pub fn best_protocol_reward(classes: usize, bits: u32) -> f64 {
    let codes = 1usize.checked_shl(bits).unwrap_or(usize::MAX).min(classes.max(1));
    let mut best = 0.0f64;
    let mut rgs = vec![0usize; classes];
    loop {
        // A receiver can be right for at most one class per codeword.
        let used = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let per_agent = used as f64 / classes as f64;
        best = best.max(per_agent);
        // Next restricted-growth string with labels below `codes`.
        let mut i = classes;
        loop {
            if i <= 1 {
                return best; // both agents are symmetric: 0.5·p + 0.5·p
            }
            i -= 1;
            let prefix_max = rgs[..i].iter().copied().max().unwrap_or(0);
            if rgs[i] <= prefix_max && rgs[i] + 1 < codes {
                rgs[i] += 1;
                for r in rgs.iter_mut().skip(i + 1) {
                    *r = 0;
                }
                break;
            }
        }
    }
}
