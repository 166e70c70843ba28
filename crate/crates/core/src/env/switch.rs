//! The switch riddle: each day one of `n` agents, drawn uniformly with
//! replacement, enters a room holding a one-bit switch. The occupant may set
//! the switch and may announce that everyone has visited.

use num_bigint::BigUint;
use rand::Rng;

use super::{Environment, ObsSpec, Observation, StepResult};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum SwitchAction {
    None = 0,
    Tell = 1,
}

/// What an agent perceives: whether it is in the room, and the switch bit if
/// so.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchObs {
    pub in_room: bool,
    pub switch_bit: Option<bool>,
}

/// Horizon `T = 4n − 6`, floored at one day.
pub fn switch_horizon(n: usize) -> usize {
    (4 * n).saturating_sub(6).max(1)
}

#[derive(Clone, Debug)]
pub struct SwitchGame {
    n: usize,
    horizon: usize,
    t: usize,
    visited: Vec<bool>,
    occupant: usize,
    previous_occupant: Option<usize>,
    switch_bit: bool,
    done: bool,
}

impl SwitchGame {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_horizon(n, switch_horizon(n))
    }

    pub fn with_horizon(n: usize, horizon: usize) -> Result<Self> {
        if n == 0 || horizon == 0 {
            return Err(Error::invalid("switch riddle needs n >= 1 and T >= 1"));
        }
        Ok(SwitchGame {
            n,
            horizon,
            t: 0,
            visited: vec![false; n],
            occupant: 0,
            previous_occupant: None,
            switch_bit: false,
            done: true,
        })
    }

    pub fn occupant(&self) -> usize {
        self.occupant
    }

    pub fn switch_bit(&self) -> bool {
        self.switch_bit
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().all(|&v| v)
    }

    pub fn switch_obs(&self, agent: usize) -> SwitchObs {
        let in_room = agent == self.occupant;
        SwitchObs {
            in_room,
            switch_bit: in_room.then_some(self.switch_bit),
        }
    }

    /// Starts from a chosen occupant instead of a random draw.
    pub fn reset_with_occupant(&mut self, occupant: usize) {
        self.t = 1;
        self.visited = vec![false; self.n];
        self.previous_occupant = None;
        self.switch_bit = false;
        self.done = false;
        self.enter(occupant);
    }

    fn enter(&mut self, occupant: usize) {
        self.occupant = occupant;
        self.visited[occupant] = true;
    }

    /// Advances with an explicit next occupant (drawn by the caller).
    pub fn step_to(
        &mut self,
        actions: &[usize],
        occupant_bit: bool,
        next_occupant: usize,
    ) -> Result<StepResult> {
        if self.done {
            return Err(Error::Environment("step after episode end".into()));
        }
        if actions.len() != self.n {
            return Err(Error::Environment(format!(
                "expected {} actions, got {}",
                self.n,
                actions.len()
            )));
        }
        for (a, &u) in actions.iter().enumerate() {
            if a != self.occupant && u != SwitchAction::None as usize {
                return Err(Error::Environment(format!(
                    "agent {a} is not in the room and may only choose None (got {u})"
                )));
            }
            if u > SwitchAction::Tell as usize {
                return Err(Error::Environment(format!("action {u} out of range")));
            }
        }
        if actions[self.occupant] == SwitchAction::Tell as usize {
            self.done = true;
            let reward = if self.all_visited() { 1.0 } else { -1.0 };
            return Ok(StepResult {
                reward,
                done: true,
                observations: Vec::new(),
            });
        }
        self.switch_bit = occupant_bit;
        if self.t >= self.horizon {
            self.done = true;
            return Ok(StepResult {
                reward: 0.0,
                done: true,
                observations: Vec::new(),
            });
        }
        self.t += 1;
        self.previous_occupant = Some(self.occupant);
        self.enter(next_occupant);
        Ok(StepResult {
            reward: 0.0,
            done: false,
            observations: (0..self.n).map(|a| self.observe(a)).collect(),
        })
    }
}

impl Environment for SwitchGame {
    fn n_agents(&self) -> usize {
        self.n
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn obs_spec(&self) -> ObsSpec {
        ObsSpec::Index { vocab: 2 }
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        let first = rng.random_range(0..self.n);
        self.reset_with_occupant(first);
    }

    fn t(&self) -> usize {
        self.t
    }

    fn done(&self) -> bool {
        self.done
    }

    fn observe(&self, agent: usize) -> Observation {
        Observation::Index(usize::from(agent == self.occupant))
    }

    fn available_actions(&self, agent: usize) -> Vec<bool> {
        vec![true, agent == self.occupant]
    }

    fn message_sender(&self, receiver: usize) -> Option<usize> {
        if receiver == self.occupant {
            self.previous_occupant
        } else {
            None
        }
    }

    fn step(
        &mut self,
        actions: &[usize],
        message_bits: &[Vec<bool>],
        rng: &mut StreamRng,
    ) -> Result<StepResult> {
        let bit = message_bits
            .get(self.occupant)
            .and_then(|b| b.first().copied())
            .unwrap_or(false);
        let next = rng.random_range(0..self.n);
        self.step_to(actions, bit, next)
    }
}

/// Probability that all `n` agents have visited within `horizon` days, which
/// is the expected reward of the full-state policy (announce on the day the
/// set completes). Dynamic programming over the number of distinct visitors.
pub fn switch_oracle_exact(n: usize, horizon: usize) -> f64 {
    // p[k] = P(k distinct visitors after the current day)
    let mut p = vec![0.0; n + 1];
    p[1] = 1.0;
    for _ in 1..horizon {
        let mut next = vec![0.0; n + 1];
        for k in 1..=n {
            if p[k] == 0.0 {
                continue;
            }
            if k == n {
                next[n] += p[k];
                continue;
            }
            let stay = k as f64 / n as f64;
            next[k] += p[k] * stay;
            next[k + 1] += p[k] * (1.0 - stay);
        }
        p = next;
    }
    p[n]
}

/// Monte-Carlo mean reward of the full-state policy.
pub fn switch_oracle(n: usize, episodes: usize, rng: &mut StreamRng) -> Result<f64> {
    let mut game = SwitchGame::new(n)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        game.reset(rng);
        loop {
            let mut actions = vec![SwitchAction::None as usize; n];
            if game.all_visited() {
                actions[game.occupant()] = SwitchAction::Tell as usize;
            }
            let r = game.step(&actions, &[], rng)?;
            total += r.reward;
            if r.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Exponent `e` in the policy-space size `4^e` for horizon `T`:
/// single agent `(3^{T+1} − 3)/2`, and `n` times that for the team.
pub fn policy_space_exponent_for_horizon(horizon: usize, n: usize) -> (BigUint, BigUint) {
    let three = BigUint::from(3u32);
    let single = (three.pow(horizon as u32 + 1) - BigUint::from(3u32)) / BigUint::from(2u32);
    let team = &single * BigUint::from(n);
    (single, team)
}

/// Policy-space exponents for the `n`-agent riddle with `T = 4n − 6`.
pub fn policy_space_exponent(n: usize) -> (BigUint, BigUint) {
    policy_space_exponent_for_horizon(switch_horizon(n), n)
}
