use std::fmt::Write as _;

use crate::dru::decodable_levels;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::train::{csv_meta, TrainConfig, Trainer};

pub const SIGMAS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const STEPS: [usize; 4] = [2, 3, 4, 5];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub sigma: f64,
    pub steps: usize,
    /// Greedy reward through the discretized channel.
    pub eval_reward: f64,
    /// Greedy reward through the noisy continuous channel.
    pub train_reward: f64,
    pub ratio: f64,
    /// `None` when the cell trained to completion.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub episodes: usize,
    pub cells: Vec<SweepCell>,
    pub meta: Vec<(String, String)>,
}

impl SweepResult {
    fn cell(&self, sigma: f64, steps: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.sigma == sigma && c.steps == steps && c.failure.is_none())
    }

    /// Without noise the discretized channel never does better than the
    /// continuous one, up to `margin`.
    pub fn noiseless_not_above_one(&self, margin: f64) -> bool {
        self.cells
            .iter()
            .filter(|c| c.sigma == 0.0 && c.failure.is_none())
            .all(|c| c.ratio <= 1.0 + margin)
    }

    /// With σ = 2 discretization costs little at every length.
    pub fn high_noise_holds(&self, floor: f64) -> bool {
        self.cells
            .iter()
            .filter(|c| c.sigma == 2.0)
            .all(|c| c.failure.is_none() && c.ratio >= floor)
    }

    /// At σ = 0.5 the shortest game keeps less of its training reward than
    /// the longest.
    pub fn short_game_loses_more(&self) -> Option<bool> {
        let short = self.cell(0.5, 2)?;
        let long = self.cell(0.5, 5)?;
        Some(short.ratio < long.ratio)
    }

    /// Columns `sigma,steps,ratio,eval_reward,train_reward,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("sigma,steps,ratio,eval_reward,train_reward,status\n");
        for c in &self.cells {
            let status = c.failure.as_deref().unwrap_or("ok").replace(',', ";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.sigma, c.steps, c.ratio, c.eval_reward, c.train_reward, status
            );
        }
        out
    }
}

fn run_cell(cfg: TrainConfig, eval_episodes: usize) -> Result<(f64, f64)> {
    let mut t = Trainer::new(cfg)?;
    while t.episodes_done() < t.cfg.episodes {
        t.train_batch()?;
    }
    let eval = t.evaluate(eval_episodes)?;
    let batches = t.train_mode_batches(eval_episodes, "eval")?;
    let total: f64 = batches.iter().flat_map(|b| b.returns.iter()).sum();
    let count: usize = batches.iter().map(|b| b.batch).sum();
    Ok((eval, total / count.max(1) as f64))
}

/// Trains one multi-step run per `(σ, steps)` cell with `base`'s budget and
/// reports discretized over continuous greedy reward. A failing cell is
/// recorded and the sweep moves on.
pub fn sigma_sweep(base: &TrainConfig, sigmas: &[f64], steps: &[usize]) -> Result<SweepResult> {
    let EnvConfig::MultiStep { digits, .. } = &base.env else {
        return Err(Error::Config("the sigma sweep runs on the multi_step game".into()));
    };
    let mut meta = csv_meta(base);
    meta.push(("budget_note".into(), format!("reduced desk-scale budget of {} episodes per cell", base.episodes)));
    let mut cells = Vec::new();
    for &s in steps {
        for &sigma in sigmas {
            let mut cfg = base.clone();
            cfg.sigma = sigma;
            cfg.env = EnvConfig::MultiStep {
                steps: s,
                digits: digits.clone(),
            };
            let cell = match run_cell(cfg, base.eval_episodes) {
                Ok((eval_reward, train_reward)) => SweepCell {
                    sigma,
                    steps: s,
                    eval_reward,
                    train_reward,
                    ratio: if train_reward > 0.0 { eval_reward / train_reward } else { f64::NAN },
                    failure: None,
                },
                Err(e @ (Error::Diverged { .. } | Error::Episode { .. } | Error::NonFinite(_))) => SweepCell {
                    sigma,
                    steps: s,
                    eval_reward: f64::NAN,
                    train_reward: f64::NAN,
                    ratio: f64::NAN,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    Ok(SweepResult {
        episodes: base.episodes,
        cells,
        meta,
    })
}

/// Columns `sigma,levels` for reliably separable activations in
/// `[−10, 10]`. A noiseless channel has no finite count and is skipped.
pub fn levels_csv(sigmas: &[f64], epsilon: f64) -> Result<String> {
    let mut out = format!("# epsilon: {epsilon}\n# range: [-10, 10]\nsigma,levels\n");
    for &s in sigmas.iter().filter(|&&s| s > 0.0) {
        let n = decodable_levels(s, epsilon, -10.0, 10.0)?.count();
        let _ = writeln!(out, "{s},{n}");
    }
    Ok(out)
}
