use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commlab::analysis::{
    activation_histogram, extract_protocol, gradcheck_suite, levels_csv, sigma_sweep, suite_table, Protocol,
    SIGMAS, STEPS,
};
use commlab::nn::Checkpoint;
use commlab::train::parity::toy_parity_demo;
use commlab::train::{csv_meta, default_out_dir, TrainConfig, Trainer};
use commlab::Error;

#[derive(Parser)]
#[command(name = "commlab", version, about = "Train and inspect communicating Q-learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel noise override.
    #[arg(long)]
    sigma: Option<f64>,
    /// Training budget for `train` and `sweep` cells; number of episodes
    /// played for `eval` and `analyze`.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config; writes curve.csv, checkpoints and config.toml.
    Train(Common),
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out-dir>/checkpoints/final.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Protocol table and message histograms for a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Channel-noise sweep over the multi-step game.
    Sweep(Common),
    /// Exact expected updates of the two-agent parity toy.
    DemoParity(Common),
    /// Finite-difference check of every primitive, layer and a DIAL unroll.
    Gradcheck(Common),
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_config(c: &Common) -> std::result::Result<TrainConfig, Failure> {
    let path = c.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("config file not found: {}", path.display())));
    }
    let mut cfg = TrainConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.sigma {
        cfg.sigma = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &TrainConfig) -> std::result::Result<PathBuf, Failure> {
    let dir = c.out_dir.clone().unwrap_or_else(|| default_out_dir(cfg));
    fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("cannot create out-dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Run(Error::io(path, e)))
}

struct Restored {
    trainer: Trainer,
    dir: PathBuf,
    meta: Vec<(String, String)>,
}

fn restore(c: &Common, checkpoint: Option<PathBuf>, cfg: TrainConfig) -> std::result::Result<Restored, Failure> {
    let dir = c.out_dir.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let path = checkpoint.unwrap_or_else(|| dir.join("checkpoints").join("final.ckpt"));
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint not found: {}", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    let mut meta = vec![("checkpoint".to_string(), path.display().to_string())];
    for key in ["config_sha256", "episodes_done"] {
        if let Some(v) = ck.meta.get(key) {
            meta.push((format!("checkpoint_{key}"), v.clone()));
        }
    }
    Ok(Restored {
        trainer: Trainer::from_checkpoint(cfg, &ck)?,
        dir,
        meta,
    })
}

fn train(c: Common) -> Outcome {
    let mut cfg = load_config(&c)?;
    if let Some(e) = c.episodes {
        cfg.episodes = e;
    }
    let dir = out_dir(&c, &cfg)?;
    let mut t = Trainer::new(cfg)?;
    let curve = t.run(Some(&dir))?;
    let last = curve.last().cloned();
    println!(
        "{}",
        json!({
            "out_dir": dir,
            "episodes": t.episodes_done(),
            "final_norm_reward": last.as_ref().map(|r| r.norm_reward),
            "best_norm_reward": curve.best_norm(),
        })
    );
    Ok(())
}

fn eval(c: Common, checkpoint: Option<PathBuf>) -> Outcome {
    let cfg = load_config(&c)?;
    let episodes = c.episodes.unwrap_or(cfg.eval_episodes);
    let t = restore(&c, checkpoint, cfg)?.trainer;
    let reward = t.evaluate(episodes)?;
    println!(
        "{}",
        json!({ "episodes": episodes, "raw_reward": reward, "norm_reward": reward / t.oracle(), "oracle": t.oracle() })
    );
    Ok(())
}

fn analyze(c: Common, checkpoint: Option<PathBuf>) -> Outcome {
    let cfg = load_config(&c)?;
    let episodes = c.episodes.unwrap_or(1000);
    let Restored { trainer: t, dir, meta: ck_meta } = restore(&c, checkpoint, cfg)?;
    let dir = dir.join("analysis");
    fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let mut meta = csv_meta(&t.cfg);
    meta.extend(ck_meta);
    meta.push(("analysis_episodes".into(), episodes.to_string()));
    let mut summary = serde_json::Map::new();
    if t.cfg.method != commlab::agent::Method::NoComm {
        match extract_protocol(&t, episodes)? {
            Protocol::Switch { table, replay } => {
                write(&dir.join("protocol.csv"), &table.to_csv(&meta))?;
                summary.insert("consistency".into(), json!(table.consistency()));
                summary.insert("replay_reward".into(), json!(replay.reward));
                summary.insert("replay_ratio".into(), json!(replay.ratio));
                summary.insert("optimal".into(), json!(replay.optimal));
            }
            Protocol::Codes(codes) => {
                write(&dir.join("codes.csv"), &codes.to_csv(&meta))?;
                summary.insert("consistency".into(), json!(codes.consistency()));
                summary.insert("injective".into(), json!(codes.injective()));
                summary.insert("codes".into(), json!(codes.modal()));
            }
        }
        let hist = activation_histogram(&t, episodes)?;
        write(&dir.join("hist_m.csv"), &hist.m.to_csv(&meta))?;
        let mut hmeta = meta.clone();
        hmeta.push(("saturation_frac".into(), hist.saturation.to_string()));
        write(&dir.join("hist_m_hat.csv"), &hist.m_hat.to_csv(&hmeta))?;
        summary.insert("saturation_frac".into(), json!(hist.saturation));
    }
    summary.insert("out_dir".into(), json!(dir));
    println!("{}", serde_json::Value::Object(summary));
    Ok(())
}

fn sweep(c: Common) -> Outcome {
    let mut cfg = load_config(&c)?;
    cfg.episodes = c.episodes.unwrap_or(5000);
    let dir = out_dir(&c, &cfg)?;
    let sigmas: Vec<f64> = match c.sigma {
        Some(s) => vec![s],
        None => SIGMAS.to_vec(),
    };
    let result = sigma_sweep(&cfg, &sigmas, &STEPS)?;
    write(&dir.join("sweep.csv"), &result.to_csv())?;
    write(&dir.join("levels.csv"), &levels_csv(&SIGMAS, 0.1)?)?;
    println!(
        "{}",
        json!({
            "out_dir": dir,
            "cells": result.cells.len(),
            "failed_cells": result.cells.iter().filter(|c| c.failure.is_some()).count(),
            "noiseless_not_above_one": result.noiseless_not_above_one(0.05),
            "high_noise_holds": result.high_noise_holds(0.9),
            "short_game_loses_more": result.short_game_loses_more(),
        })
    );
    Ok(())
}

fn demo_parity(c: Common) -> Outcome {
    let r = toy_parity_demo(20, c.seed.unwrap_or(0))?;
    println!(
        "{}",
        json!({
            "expected_td_update": r.expected_td_update,
            "td_exactly_zero": r.td_is_exactly_zero(),
            "expected_reward_fixed_action": r.expected_reward_fixed_action,
            "dial_gradient_norms": r.dial_gradient_norms,
            "all_gradients_nonzero": r.all_gradients_nonzero(),
        })
    );
    Ok(())
}

fn gradcheck(c: Common) -> Outcome {
    let entries = gradcheck_suite(c.seed.unwrap_or(0))?;
    print!("{}", suite_table(&entries));
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(Error::invalid(format!("gradient checks failed: {}", failed.join(", ")))))
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().lines().next().unwrap_or("bad arguments"));
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Train(c) => train(c),
        Command::Eval { common, checkpoint } => eval(common, checkpoint),
        Command::Analyze { common, checkpoint } => analyze(common, checkpoint),
        Command::Sweep(c) => sweep(c),
        Command::DemoParity(c) => demo_parity(c),
        Command::Gradcheck(c) => gradcheck(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            error_line("usage", &m);
            ExitCode::from(2)
        }
        Err(Failure::Run(Error::Config(m))) => {
            error_line("config", &m);
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            error_line("runtime", &e.to_string());
            ExitCode::from(1)
        }
    }
}
