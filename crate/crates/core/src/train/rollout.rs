//! Batched episode rollout. All episodes of a batch advance in lockstep; an
//! episode that has ended keeps producing (masked) rows until the last one
//! finishes.

use crate::agent::{epsilon_greedy, message_bits, CNet, CNetSpec, GroupInput, Method, ObsBatch, StepOut};
use crate::dru::{sample_noise, threshold, ChannelMode};
use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::nn::{BatchStats, NormMode};
use crate::params::ParamStore;
use crate::rng::StreamRng;
use crate::tape::{logistic, Tape, Var};
use crate::tensor::Tensor;

/// How actions and messages are produced during a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutMode {
    pub epsilon: f64,
    pub channel: ChannelMode,
    pub sigma: f64,
    pub norm: NormMode,
}

impl RolloutMode {
    pub fn train(epsilon: f64, sigma: f64) -> Self {
        RolloutMode {
            epsilon,
            channel: ChannelMode::Train,
            sigma,
            norm: NormMode::Train,
        }
    }

    /// Greedy actions, hard-thresholded messages, running batch-norm statistics.
    pub fn greedy() -> Self {
        RolloutMode {
            epsilon: 0.0,
            channel: ChannelMode::Exec,
            sigma: 0.0,
            norm: NormMode::Eval,
        }
    }
}

/// Everything recorded at one time step for the whole batch. Per-row vectors
/// are agent-major: index `a * batch + b`.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub inputs: Vec<GroupInput>,
    /// Sender whose previous message reached each row.
    pub route: Vec<Option<usize>>,
    pub h_prev: Vec<(Tensor, Tensor)>,
    /// Channel outputs of the previous step, per group (`rows × width`).
    pub m_hat_prev: Vec<Tensor>,
    /// Channel noise drawn at this step (train-mode DIAL).
    pub noise: Vec<Tensor>,
    /// Q-values over actions, per group.
    pub q: Vec<Tensor>,
    /// Pre-channel message head (DIAL) or message Q-values (RIAL), per group.
    pub head: Vec<Tensor>,
    /// Channel outputs of this step, per group.
    pub m_hat: Vec<Tensor>,
    pub actions: Vec<usize>,
    /// RIAL message indices.
    pub messages: Vec<usize>,
    pub avail: Vec<Vec<bool>>,
    /// Per episode.
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub alive: Vec<bool>,
    /// Train-mode message batch-norm statistics, per group.
    pub stats: Vec<Option<BatchStats>>,
}

/// A batch of trajectories.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub spec: CNetSpec,
    pub batch: usize,
    pub mode: RolloutMode,
    pub steps: Vec<StepRecord>,
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    /// Hidden class of each agent's observation, agent-major.
    pub labels: Vec<Option<usize>>,
}

impl TrajectoryBatch {
    pub fn method(&self) -> Method {
        self.spec.method
    }

    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.batch as f64
    }

    /// Channel outputs that reached a receiver on a live step.
    pub fn routed_messages(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let w = self.spec.message_width();
        if w == 0 {
            return out;
        }
        for t in 1..self.steps.len() {
            let step = &self.steps[t];
            for (row, sender) in step.route.iter().enumerate() {
                let b = row % self.batch;
                if let (Some(s), true) = (sender, step.alive[b]) {
                    let (g, r) = self.spec.locate(*s, b, self.batch);
                    out.extend_from_slice(step.m_hat_prev[g].row(r));
                }
            }
        }
        out
    }

    /// Pre-channel message values that reached a receiver (DIAL).
    pub fn routed_pre_channel(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.spec.method != Method::Dial {
            return out;
        }
        for t in 1..self.steps.len() {
            let step = &self.steps[t];
            for (row, sender) in step.route.iter().enumerate() {
                let b = row % self.batch;
                if let (Some(s), true) = (sender, step.alive[b]) {
                    let (g, r) = self.spec.locate(*s, b, self.batch);
                    out.extend_from_slice(self.steps[t - 1].head[g].row(r));
                }
            }
        }
        out
    }
}

/// Share of values outside `(0.05, 0.95)`.
pub fn saturation_fraction(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v <= 0.05 || v >= 0.95).count() as f64 / values.len() as f64
}

/// Selection matrices moving previous-step messages to receivers:
/// `sel[g][s]` is `rows_g × rows_s`, or `None` when nothing flows.
pub(crate) fn selection(spec: &CNetSpec, route: &[Option<usize>], batch: usize) -> Vec<Vec<Option<Tensor>>> {
    let groups = spec.groups();
    let rows = spec.group_rows(batch);
    let mut sel: Vec<Vec<Option<Tensor>>> = vec![vec![None; groups]; groups];
    for a in 0..spec.n_agents {
        for b in 0..batch {
            if let Some(s) = route[a * batch + b] {
                let (g, r) = spec.locate(a, b, batch);
                let (sg, sr) = spec.locate(s, b, batch);
                let m = sel[g][sg].get_or_insert_with(|| Tensor::zeros(&[rows, rows]));
                m.data_mut()[r * rows + sr] = 1.0;
            }
        }
    }
    sel
}

/// Builds one time step of every group's network on `tape`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_graph(
    net: &CNet,
    store: &ParamStore,
    tape: &mut Tape,
    inputs: &[GroupInput],
    sel: &[Vec<Option<Tensor>>],
    h_prev: &[(Var, Var)],
    m_prev: &[Var],
    norm: NormMode,
) -> Result<(Vec<StepOut>, Vec<Option<BatchStats>>)> {
    let spec = &net.spec;
    let w = spec.message_width();
    let mut outs = Vec::with_capacity(inputs.len());
    let mut stats = Vec::with_capacity(inputs.len());
    for (g, input) in inputs.iter().enumerate() {
        let incoming = if w > 0 {
            let mut acc: Option<Var> = None;
            for (s, m) in sel[g].iter().enumerate() {
                if let Some(m) = m {
                    let mv = tape.constant(m.clone())?;
                    let routed = tape.matmul(mv, m_prev[s])?;
                    acc = Some(match acc {
                        Some(x) => tape.add(x, routed)?,
                        None => routed,
                    });
                }
            }
            Some(match acc {
                Some(x) => x,
                None => tape.constant(Tensor::zeros(&[input.rows(), w]))?,
            })
        } else {
            None
        };
        let (h1, h2) = h_prev[g];
        let (out, st) = net.net(g).forward(spec, tape, store, input, incoming, h1, h2, norm)?;
        outs.push(out);
        stats.push(st);
    }
    Ok((outs, stats))
}

fn observation_batch(envs: &[Box<dyn Environment>], agents: &[usize], batch: usize) -> Result<ObsBatch> {
    let mut idx = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    let mut dim = 0;
    for &a in agents {
        for env in envs.iter().take(batch) {
            match env.observe(a) {
                Observation::Index(i) => idx.push(i),
                Observation::Features(f) => {
                    dim = f.len();
                    feats.extend_from_slice(&f);
                }
            }
        }
    }
    if idx.is_empty() {
        Ok(ObsBatch::Features(Tensor::matrix(agents.len() * batch, dim, feats)?))
    } else if feats.is_empty() {
        Ok(ObsBatch::Index(idx))
    } else {
        Err(Error::invalid("mixed observation kinds in one batch"))
    }
}

/// Plays one batch of episodes. `envs` must be freshly reset; `env_rngs`
/// drive each episode's dynamics.
pub fn rollout_batch(
    net: &CNet,
    store: &ParamStore,
    envs: &mut [Box<dyn Environment>],
    env_rngs: &mut [StreamRng],
    mode: RolloutMode,
    explore: &mut StreamRng,
    noise_rng: &mut StreamRng,
) -> Result<TrajectoryBatch> {
    let spec = net.spec;
    let batch = envs.len();
    let n = spec.n_agents;
    let w = spec.message_width();
    let groups = spec.groups();
    let rows = spec.group_rows(batch);
    if envs.iter().any(|e| e.n_agents() != n || e.n_actions() != spec.n_actions) {
        return Err(Error::invalid("environment does not match the network"));
    }
    let horizon = envs.iter().map(|e| e.horizon()).max().unwrap_or(0);
    let labels = (0..n).flat_map(|a| envs.iter().map(move |e| e.label(a))).collect();

    let mut h: Vec<(Tensor, Tensor)> = (0..groups).map(|_| net.initial_hidden(rows)).collect();
    let mut m_hat_prev: Vec<Tensor> = (0..groups).map(|_| Tensor::zeros(&[rows, w])).collect();
    let mut prev_action = vec![0usize; n * batch];
    let mut prev_msg = vec![0usize; n * batch];
    let mut alive = vec![true; batch];
    let mut returns = vec![0.0; batch];
    let mut lengths = vec![0usize; batch];
    let mut steps = Vec::new();

    for _ in 0..horizon {
        if !alive.iter().any(|&a| a) {
            break;
        }
        let route: Vec<Option<usize>> = (0..n)
            .flat_map(|a| {
                let alive = &alive;
                envs.iter().enumerate().map(move |(b, e)| if alive[b] { e.message_sender(a) } else { None })
            })
            .collect();
        let inputs = (0..groups)
            .map(|g| {
                let agents = spec.group_agents(g);
                let gather = |v: &[usize]| agents.iter().flat_map(|&a| v[a * batch..(a + 1) * batch].to_vec()).collect::<Vec<_>>();
                Ok(GroupInput {
                    obs: observation_batch(envs, &agents, batch)?,
                    agent: agents.iter().flat_map(|&a| std::iter::repeat_n(a, batch)).collect(),
                    prev_action: gather(&prev_action),
                    prev_own_msg: gather(&prev_msg),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sel = selection(&spec, &route, batch);

        let mut tape = Tape::new();
        let hv = h
            .iter()
            .map(|(a, b)| Ok((tape.constant(a.clone())?, tape.constant(b.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let mv = m_hat_prev.iter().map(|m| tape.constant(m.clone())).collect::<Result<Vec<_>>>()?;
        let (outs, stats) = step_graph(net, store, &mut tape, &inputs, &sel, &hv, &mv, mode.norm)?;

        let q: Vec<Tensor> = outs.iter().map(|o| tape.value(o.q).clone()).collect();
        let head: Vec<Tensor> = outs
            .iter()
            .map(|o| o.head.map_or_else(|| Tensor::zeros(&[rows, 0]), |v| tape.value(v).clone()))
            .collect();
        let noise: Vec<Tensor> = if spec.method == Method::Dial && mode.channel == ChannelMode::Train {
            (0..groups).map(|_| sample_noise(&[rows, w], mode.sigma, noise_rng)).collect()
        } else {
            Vec::new()
        };

        let mut actions = vec![0usize; n * batch];
        let mut messages = vec![0usize; n * batch];
        let mut avail = vec![Vec::new(); n * batch];
        let mut m_hat: Vec<Tensor> = (0..groups).map(|_| Tensor::zeros(&[rows, w])).collect();
        for a in 0..n {
            for b in 0..batch {
                let (g, r) = spec.locate(a, b, batch);
                let i = a * batch + b;
                avail[i] = envs[b].available_actions(a);
                if !alive[b] {
                    avail[i] = vec![true; spec.n_actions];
                    continue;
                }
                actions[i] = epsilon_greedy(q[g].row(r), &avail[i], mode.epsilon, explore)?;
                let out = &mut m_hat[g].data_mut()[r * w..(r + 1) * w];
                match spec.method {
                    Method::Dial => {
                        let m = head[g].row(r);
                        for j in 0..w {
                            out[j] = match mode.channel {
                                ChannelMode::Train => logistic(m[j] + noise[g].get2(r, j)),
                                ChannelMode::Exec => threshold(m[j]),
                            };
                        }
                    }
                    Method::Rial => {
                        let k = head[g].cols();
                        messages[i] = epsilon_greedy(head[g].row(r), &vec![true; k], mode.epsilon, explore)?;
                        out.copy_from_slice(&message_bits(messages[i], w));
                    }
                    Method::NoComm => {}
                }
            }
        }

        let mut reward = vec![0.0; batch];
        let mut terminal = vec![false; batch];
        let was_alive = alive.clone();
        for b in 0..batch {
            if !alive[b] {
                continue;
            }
            let acts: Vec<usize> = (0..n).map(|a| actions[a * batch + b]).collect();
            let bits: Vec<Vec<bool>> = (0..n)
                .map(|a| {
                    let (g, r) = spec.locate(a, b, batch);
                    m_hat[g].row(r).iter().map(|&v| v > 0.5).collect()
                })
                .collect();
            let res = envs[b].step(&acts, &bits, &mut env_rngs[b]).map_err(|e| Error::Episode {
                episode: b,
                source: Box::new(e),
            })?;
            reward[b] = res.reward;
            returns[b] += res.reward;
            lengths[b] += 1;
            if res.done {
                terminal[b] = true;
                alive[b] = false;
            }
        }

        for i in 0..n * batch {
            prev_action[i] = actions[i] + 1;
            prev_msg[i] = messages[i] + 1;
        }
        let h_prev = std::mem::replace(
            &mut h,
            outs.iter().map(|o| (tape.value(o.h1).clone(), tape.value(o.h2).clone())).collect(),
        );
        let m_prev = std::mem::replace(&mut m_hat_prev, m_hat.clone());
        steps.push(StepRecord {
            inputs,
            route,
            h_prev,
            m_hat_prev: m_prev,
            noise,
            q,
            head,
            m_hat,
            actions,
            messages,
            avail,
            reward,
            terminal,
            alive: was_alive,
            stats,
        });
    }
    if alive.iter().any(|&a| a) {
        return Err(Error::Environment("episode exceeded its horizon".into()));
    }
    Ok(TrajectoryBatch {
        spec,
        batch,
        mode,
        steps,
        returns,
        lengths,
        labels,
    })
}
