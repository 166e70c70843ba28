//! Cooperative, partially observable benchmark games.
//!
//! Every environment delivers one shared team reward per step. Agents act
//! simultaneously; messages written at step `t − 1` are routed to receivers at
//! step `t` according to [`Environment::message_sender`].

mod colour_digit;
mod digits;
pub mod mnist;
mod multistep;
mod switch;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use colour_digit::{colour_digit_reward, ColourDigitGame};
pub use digits::{Digit, DigitSet, DigitSource};
pub use multistep::{best_protocol_reward, MultiStepGame};
pub use switch::{
    policy_space_exponent, policy_space_exponent_for_horizon, switch_horizon, switch_oracle,
    switch_oracle_exact, SwitchAction, SwitchGame, SwitchObs,
};

use crate::error::Result;
use crate::rng::StreamRng;

/// What one agent sees at one step.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// A categorical observation fed through a lookup table.
    Index(usize),
    /// A dense feature vector fed through the task MLP.
    Features(Arc<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsSpec {
    Index { vocab: usize },
    Features { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Team reward, identical for every agent.
    pub reward: f64,
    pub done: bool,
    /// Observations for the next step (empty when `done`).
    pub observations: Vec<Observation>,
}

pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn obs_spec(&self) -> ObsSpec;

    fn reset(&mut self, rng: &mut StreamRng);

    /// 1-based index of the current step.
    fn t(&self) -> usize;
    fn done(&self) -> bool;

    fn observe(&self, agent: usize) -> Observation;

    /// `mask[u]` is true when agent may take action `u` at this step.
    fn available_actions(&self, agent: usize) -> Vec<bool>;

    /// The agent whose previous-step message reaches `receiver` now.
    fn message_sender(&self, receiver: usize) -> Option<usize>;

    /// Hidden class behind the agent's observation, if the game has one.
    /// Used only for protocol analysis.
    fn label(&self, _agent: usize) -> Option<usize> {
        None
    }

    /// Advances one step once all agents have chosen. `message_bits` holds
    /// each agent's discrete outgoing bit vector (first bit used by
    /// environments whose state depends on it).
    fn step(
        &mut self,
        actions: &[usize],
        message_bits: &[Vec<bool>],
        rng: &mut StreamRng,
    ) -> Result<StepResult>;
}

/// Which game to build and its size parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Switch {
        n: usize,
        #[serde(default)]
        horizon: Option<usize>,
    },
    ColourDigit {
        #[serde(default)]
        digits: DigitSource,
    },
    MultiStep {
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default)]
        digits: DigitSource,
    },
}

fn default_steps() -> usize {
    5
}

impl EnvConfig {
    pub fn switch(n: usize) -> Self {
        EnvConfig::Switch { n, horizon: None }
    }
}

/// Builds independent environment instances sharing any loaded data.
#[derive(Clone)]
pub struct EnvFactory {
    config: EnvConfig,
    digits: Option<Arc<DigitSet>>,
}

impl EnvFactory {
    pub fn new(config: &EnvConfig, data_seed: u64) -> Result<Self> {
        let digits = match config {
            EnvConfig::Switch { .. } => None,
            EnvConfig::ColourDigit { digits } | EnvConfig::MultiStep { digits, .. } => {
                Some(Arc::new(digits.load(data_seed)?))
            }
        };
        Ok(EnvFactory {
            config: config.clone(),
            digits,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn digits(&self) -> Option<&Arc<DigitSet>> {
        self.digits.as_ref()
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match &self.config {
            EnvConfig::Switch { n, horizon } => {
                let h = horizon.unwrap_or_else(|| switch_horizon(*n));
                Box::new(SwitchGame::with_horizon(*n, h)?)
            }
            EnvConfig::ColourDigit { .. } => {
                Box::new(ColourDigitGame::new(self.digits.clone().expect("digits")))
            }
            EnvConfig::MultiStep { steps, .. } => Box::new(MultiStepGame::new(
                self.digits.clone().expect("digits"),
                *steps,
            )?),
        })
    }

    /// Best average reward attainable with access to the full state; the
    /// normalizer for learning curves.
    pub fn oracle_reward(&self) -> f64 {
        match &self.config {
            EnvConfig::Switch { n, horizon } => {
                switch_oracle_exact(*n, horizon.unwrap_or_else(|| switch_horizon(*n)))
            }
            EnvConfig::ColourDigit { .. } => colour_digit::oracle_reward(),
            EnvConfig::MultiStep { .. } => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.config {
            EnvConfig::Switch { .. } => "switch",
            EnvConfig::ColourDigit { .. } => "colour_digit",
            EnvConfig::MultiStep { .. } => "multi_step",
        }
    }
}
