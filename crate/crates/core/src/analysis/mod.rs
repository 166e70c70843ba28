//! Post-hoc inspection of trained agents: protocol tables, message
//! histograms and channel-noise sweeps. Everything here reads parameters and
//! never writes them.

mod gradcheck_suite;
mod histogram;
mod protocol;
mod sweep;

pub use gradcheck_suite::{gradcheck_suite, suite_table, SuiteEntry, PRIMITIVE_TOL, UNROLL_TOL};
pub use histogram::{activation_histogram, ActivationReport, Histogram, BINS};
pub use protocol::{
    optimal_switch_policy, replay_switch, replay_table, table_choice, DigitCodes, SwitchChoice,
    SwitchCondition, SwitchProtocol, SwitchReplay, SwitchTable, OPTIMAL_RATIO,
};
pub use sweep::{levels_csv, sigma_sweep, SweepCell, SweepResult, SIGMAS, STEPS};

use crate::env::{switch_horizon, EnvConfig};
use crate::error::Result;
use crate::rng::Streams;
use crate::train::Trainer;

/// Episodes replayed when scoring an extracted switch table.
pub const REPLAY_EPISODES: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Protocol {
    Switch {
        table: SwitchProtocol,
        replay: SwitchReplay,
    },
    Codes(DigitCodes),
}

/// Tallies the greedy, discretized behaviour of `trainer`'s agents over
/// `episodes` analysis episodes.
pub fn extract_protocol(trainer: &Trainer, episodes: usize) -> Result<Protocol> {
    let batches = trainer.greedy_batches(episodes, "analysis")?;
    match trainer.cfg.env {
        EnvConfig::Switch { n, horizon } => {
            let table = SwitchProtocol::from_batches(&batches)?;
            let mut rng = Streams::new(trainer.cfg.seed).stream("replay");
            let horizon = horizon.unwrap_or_else(|| switch_horizon(n));
            let replay = replay_table(n, horizon, &table.deterministic(), REPLAY_EPISODES, &mut rng)?;
            Ok(Protocol::Switch { table, replay })
        }
        _ => Ok(Protocol::Codes(DigitCodes::from_batches(&batches)?)),
    }
}
