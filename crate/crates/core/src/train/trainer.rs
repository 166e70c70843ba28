use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::agent::{sync_target, CNet, CNetSpec, Method};
use crate::env::{EnvFactory, Environment};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, RmsProp};
use crate::params::ParamStore;
use crate::rng::{StreamRng, Streams};
use crate::tensor::Tensor;

use super::backward::{backward, compute_targets};
use super::config::TrainConfig;
use super::rollout::{rollout_batch, saturation_fraction, RolloutMode, TrajectoryBatch};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

type EnvSet = (Vec<Box<dyn Environment>>, Vec<StreamRng>);

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub raw_reward: f64,
    pub norm_reward: f64,
    /// Mean batch TD loss since the previous row.
    pub loss: f64,
    /// Share of routed train-mode channel outputs outside (0.05, 0.95) since
    /// the previous row.
    pub saturation_frac: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub oracle: f64,
    pub rows: Vec<CurveRow>,
    pub meta: Vec<(String, String)>,
}

impl LearningCurve {
    pub fn new(oracle: f64, meta: Vec<(String, String)>) -> Result<Self> {
        if !(oracle > 0.0) {
            return Err(Error::invalid(format!("oracle reward must be positive, got {oracle}")));
        }
        Ok(LearningCurve {
            oracle,
            rows: Vec::new(),
            meta,
        })
    }

    pub fn push(&mut self, episode: usize, raw_reward: f64, loss: f64, saturation_frac: f64) {
        self.rows.push(CurveRow {
            episode,
            raw_reward,
            norm_reward: raw_reward / self.oracle,
            loss,
            saturation_frac,
        });
    }

    pub fn last(&self) -> Option<&CurveRow> {
        self.rows.last()
    }

    /// First evaluated episode at which the normalized reward reached `level`.
    pub fn first_reaching(&self, level: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.norm_reward >= level).map(|r| r.episode)
    }

    pub fn best_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.norm_reward).fold(f64::MIN, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("episode,raw_reward,norm_reward,loss,saturation_frac\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.episode, r.raw_reward, r.norm_reward, r.loss, r.saturation_frac
            );
        }
        out
    }
}

/// Hex SHA-256 of the canonical TOML rendering of a config.
pub fn config_hash(cfg: &TrainConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

pub fn csv_meta(cfg: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("config_sha256".into(), config_hash(cfg)),
        ("seed".into(), cfg.seed.to_string()),
        ("version".into(), VERSION.into()),
        ("method".into(), cfg.label()),
        ("env".into(), format!("{:?}", cfg.env).replace('\n', " ")),
        ("budget".into(), format!("{} episodes", cfg.episodes)),
    ]
}

/// Statistics of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    pub loss: f64,
    pub mean_return: f64,
    pub routed: usize,
    pub saturated: usize,
}

/// Owns the networks, optimizer and random streams of one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub factory: EnvFactory,
    pub net: CNet,
    pub theta: ParamStore,
    pub target: ParamStore,
    pub opt: RmsProp,
    streams: Streams,
    explore: StreamRng,
    noise: StreamRng,
    episodes_done: usize,
    syncs: usize,
}

fn build_envs(factory: &EnvFactory, count: usize) -> Result<Vec<Box<dyn Environment>>> {
    (0..count).map(|_| factory.build()).collect()
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let streams = Streams::new(cfg.seed);
        let factory = EnvFactory::new(&cfg.env, streams.seed_for("data", 0))?;
        let probe = factory.build()?;
        let spec = CNetSpec {
            n_agents: probe.n_agents(),
            n_actions: probe.n_actions(),
            obs: probe.obs_spec(),
            method: cfg.method,
            message_bits: if cfg.method == Method::NoComm { 0 } else { cfg.message_bits },
            embed: cfg.embed,
            shared: cfg.shared,
        };
        let mut theta = ParamStore::new();
        let net = CNet::new(spec, &mut theta, &mut streams.stream("init"))?;
        let target = theta.clone();
        let opt = RmsProp::new(&theta, cfg.optimizer);
        Ok(Trainer {
            explore: streams.stream("explore"),
            noise: streams.stream("noise"),
            streams,
            factory,
            net,
            theta,
            target,
            opt,
            cfg,
            episodes_done: 0,
            syncs: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn syncs(&self) -> usize {
        self.syncs
    }

    pub fn oracle(&self) -> f64 {
        self.factory.oracle_reward()
    }

    fn fresh_envs(&self, first: usize, count: usize, stream: &str) -> Result<EnvSet> {
        let mut envs = build_envs(&self.factory, count)?;
        let mut rngs: Vec<StreamRng> = (0..count).map(|i| self.streams.indexed(stream, (first + i) as u64)).collect();
        for (e, r) in envs.iter_mut().zip(rngs.iter_mut()) {
            e.reset(r);
        }
        Ok((envs, rngs))
    }

    /// Rolls out the next training batch without updating anything.
    pub fn sample_batch(&mut self) -> Result<TrajectoryBatch> {
        let count = self.cfg.batch;
        let (mut envs, mut rngs) = self.fresh_envs(self.episodes_done, count, "env")?;
        let mode = RolloutMode::train(self.cfg.epsilon, self.cfg.sigma);
        rollout_batch(&self.net, &self.theta, &mut envs, &mut rngs, mode, &mut self.explore, &mut self.noise)
    }

    /// Rollout, backward pass, one optimizer step, running-statistics update
    /// and target sync.
    pub fn train_batch(&mut self) -> Result<BatchReport> {
        let episode = self.episodes_done;
        let data = self.sample_batch().map_err(|e| Error::Episode {
            episode,
            source: Box::new(e),
        })?;
        let targets = compute_targets(&self.net, &self.target, &data, self.cfg.gamma)?;
        let out = backward(&self.net, &self.theta, &data, &targets).map_err(|e| match e {
            Error::NonFinite(r) => Error::Diverged { episode, reason: r },
            e => e,
        })?;
        let mut grad = out.grad;
        let norm = grad.global_norm();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            grad.scale(self.cfg.clip_norm / norm);
        }
        self.opt.step(&mut self.theta, &grad).map_err(|e| Error::Diverged {
            episode,
            reason: e.to_string(),
        })?;
        for step in &data.steps {
            for (g, st) in step.stats.iter().enumerate() {
                if let Some(st) = st {
                    self.net.net(g).update_running(&mut self.theta, st)?;
                }
            }
        }
        if !self.theta.is_finite() {
            return Err(Error::Diverged {
                episode,
                reason: "non-finite parameters".into(),
            });
        }
        self.episodes_done += data.batch;
        let due = self.episodes_done / self.cfg.target_reset;
        if due > self.syncs {
            sync_target(&self.theta, &mut self.target)?;
            self.syncs = due;
        }
        let routed = data.routed_messages();
        let saturated = routed.iter().filter(|&&v| v <= 0.05 || v >= 0.95).count();
        Ok(BatchReport {
            loss: out.loss,
            mean_return: data.mean_return(),
            routed: routed.len(),
            saturated,
        })
    }

    /// Greedy rollouts (ε = 0, discretized channel, running batch-norm
    /// statistics) on a fixed set of evaluation episodes.
    pub fn evaluate(&self, episodes: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut done = 0;
        let mut explore = self.streams.stream("eval-explore");
        let mut noise = self.streams.stream("eval-noise");
        while done < episodes {
            let count = self.cfg.batch.min(episodes - done);
            let (mut envs, mut rngs) = self.fresh_envs(done, count, "eval")?;
            let data = rollout_batch(&self.net, &self.theta, &mut envs, &mut rngs, RolloutMode::greedy(), &mut explore, &mut noise)?;
            total += data.returns.iter().sum::<f64>();
            done += count;
        }
        Ok(total / episodes.max(1) as f64)
    }

    /// Greedy rollouts returning the full trajectories.
    pub fn greedy_batches(&self, episodes: usize, stream: &str) -> Result<Vec<TrajectoryBatch>> {
        let mut out = Vec::new();
        let mut done = 0;
        let mut explore = self.streams.stream("eval-explore");
        let mut noise = self.streams.stream("eval-noise");
        while done < episodes {
            let count = self.cfg.batch.min(episodes - done);
            let (mut envs, mut rngs) = self.fresh_envs(done, count, stream)?;
            out.push(rollout_batch(&self.net, &self.theta, &mut envs, &mut rngs, RolloutMode::greedy(), &mut explore, &mut noise)?);
            done += count;
        }
        Ok(out)
    }

    /// Train-mode rollouts (no exploration) returning the trajectories.
    pub fn train_mode_batches(&self, episodes: usize, stream: &str) -> Result<Vec<TrajectoryBatch>> {
        let mut out = Vec::new();
        let mut done = 0;
        let mut explore = self.streams.stream("analysis-explore");
        let mut noise = self.streams.stream("analysis-noise");
        let mode = RolloutMode::train(0.0, self.cfg.sigma);
        while done < episodes {
            let count = self.cfg.batch.min(episodes - done).max(2);
            let (mut envs, mut rngs) = self.fresh_envs(done, count, stream)?;
            out.push(rollout_batch(&self.net, &self.theta, &mut envs, &mut rngs, mode, &mut explore, &mut noise)?);
            done += count;
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("config_sha256", config_hash(&self.cfg));
        ck.set_meta("method", self.cfg.label());
        ck.set_meta("seed", self.cfg.seed);
        ck.set_meta("episodes_done", self.episodes_done);
        ck.set_meta("syncs", self.syncs);
        ck.set_meta("version", VERSION);
        ck.put_store("theta", &self.theta);
        ck.put_store("target", &self.target);
        for ((_, name, _), acc) in self.theta.iter().zip(self.opt.accumulators()) {
            ck.tensors.insert(format!("rmsprop/{name}"), acc.clone());
        }
        ck
    }

    /// Rebuilds a trainer from `cfg` and restores parameters, target network
    /// and optimizer state.
    pub fn from_checkpoint(cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        ck.restore_store("theta", &mut t.theta)?;
        ck.restore_store("target", &mut t.target)?;
        let acc = t
            .theta
            .iter()
            .map(|(_, name, _)| {
                ck.tensors
                    .get(&format!("rmsprop/{name}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))
            })
            .collect::<Result<Vec<Tensor>>>()?;
        t.opt.set_accumulators(acc)?;
        let num = |k: &str| -> Result<usize> {
            ck.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing meta {k}")))
        };
        t.episodes_done = num("episodes_done")?;
        t.syncs = num("syncs")?;
        Ok(t)
    }

    /// Trains for the configured budget, evaluating greedily at the start, at
    /// every `eval_every` episodes and at the end. With an output directory,
    /// the latest and best-evaluated checkpoints are kept alongside the final
    /// one.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<LearningCurve> {
        let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
        if let Some(d) = &ckpt_dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut curve = LearningCurve::new(self.oracle(), csv_meta(&self.cfg))?;
        let eval = |t: &Trainer| t.evaluate(t.cfg.eval_episodes);
        curve.push(self.episodes_done, eval(self)?, 0.0, 0.0);
        let mut best = f64::NEG_INFINITY;
        let mut losses = Vec::new();
        let (mut routed, mut saturated) = (0usize, 0usize);
        let mut evals = self.episodes_done.checked_div(self.cfg.eval_every).unwrap_or(0);
        while self.episodes_done < self.cfg.episodes {
            let report = match self.train_batch() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(d), Error::Diverged { .. }) = (&ckpt_dir, &e) {
                        self.checkpoint().save(&d.join("last_good.ckpt"))?;
                    }
                    return Err(e);
                }
            };
            losses.push(report.loss);
            routed += report.routed;
            saturated += report.saturated;
            let due = self.episodes_done.checked_div(self.cfg.eval_every).unwrap_or(0);
            let last = self.episodes_done >= self.cfg.episodes;
            if due > evals || last {
                evals = due;
                let loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
                let sat = if routed > 0 { saturated as f64 / routed as f64 } else { 0.0 };
                let reward = eval(self)?;
                curve.push(self.episodes_done, reward, loss, sat);
                losses.clear();
                routed = 0;
                saturated = 0;
                if let Some(d) = &ckpt_dir {
                    let ck = self.checkpoint();
                    ck.save(&d.join("latest.ckpt"))?;
                    if reward > best {
                        best = reward;
                        ck.save(&d.join("best.ckpt"))?;
                    }
                }
            }
        }
        if let Some(d) = out_dir {
            let path = d.join("curve.csv");
            fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))?;
            if let Some(c) = &ckpt_dir {
                self.checkpoint().save(&c.join("final.ckpt"))?;
            }
            let path = d.join("config.toml");
            fs::write(&path, self.cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(curve)
    }
}

/// Builds a trainer from `cfg` and runs it; artifacts go to `out_dir`.
pub fn train(cfg: TrainConfig, out_dir: Option<&Path>) -> Result<(LearningCurve, Trainer)> {
    let mut t = Trainer::new(cfg)?;
    let curve = t.run(out_dir)?;
    Ok((curve, t))
}

/// Saturation over a set of batches.
pub fn batches_saturation(batches: &[TrajectoryBatch]) -> f64 {
    let all: Vec<f64> = batches.iter().flat_map(|b| b.routed_messages()).collect();
    saturation_fraction(&all)
}

pub fn default_out_dir(cfg: &TrainConfig) -> PathBuf {
    PathBuf::from(format!("runs/{}-seed{}", cfg.label(), cfg.seed))
}
