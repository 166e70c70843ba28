//! Gradients of the batch TD loss
//!
//! ```text
//! L = (1/B) Σ_b Σ_t Σ_a alive·(Q^a_t[u^a_t] − y^a_t)²
//! y^a_t = r_t                                  if the episode ended at t
//!       = r_t + γ · max_{u'} Q^a_{t+1}[u'; θ⁻]  otherwise
//! ```
//!
//! [`backward`] sweeps time backwards with one tape per step. Each tape
//! treats the previous hidden states and the previous step's channel outputs
//! as leaves and is seeded with the adjoints flowing in from step `t + 1`:
//! `adj_h` for the recurrent state and `μ` for the messages. The μ chain is
//! what carries gradient from receivers back into senders under DIAL.
//! [`reference_backward`] differentiates the whole unrolled batch on a single
//! tape and serves as the oracle.

use crate::agent::{max_masked, CNet, CNetSpec, Method, StepOut};
use crate::dru::ChannelMode;
use crate::error::{Error, Result};
use crate::params::{Gradient, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::rollout::{selection, step_graph, StepRecord, TrajectoryBatch};

/// Bootstrap targets, indexed `[t][a * batch + b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub y_u: Vec<Vec<f64>>,
    /// RIAL message-head targets.
    pub y_m: Vec<Vec<f64>>,
}

/// `μ[t][g]`: derivative of the total loss with respect to the channel
/// outputs sent at step `t` by the rows of group `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsgGradChain {
    pub mu: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct BackwardOut {
    pub grad: Gradient,
    pub loss: f64,
    pub chain: Option<MsgGradChain>,
}

fn group_values(spec: &CNetSpec, batch: usize, per_group: &[Tensor], a: usize, b: usize) -> Vec<f64> {
    let (g, r) = spec.locate(a, b, batch);
    per_group[g].row(r).to_vec()
}

/// Unrolls θ⁻ over the recorded inputs and forms the bootstrap targets. No
/// gradient is ever taken through this path.
pub fn compute_targets(net: &CNet, target: &ParamStore, data: &TrajectoryBatch, gamma: f64) -> Result<Targets> {
    let spec = net.spec;
    let batch = data.batch;
    let rows = spec.group_rows(batch);
    let groups = spec.groups();
    let mut h: Vec<(Tensor, Tensor)> = (0..groups).map(|_| net.initial_hidden(rows)).collect();
    let mut q_next: Vec<Vec<Tensor>> = Vec::with_capacity(data.steps.len());
    let mut head_next: Vec<Vec<Tensor>> = Vec::with_capacity(data.steps.len());
    for step in &data.steps {
        let mut tape = Tape::new();
        let hv = h
            .iter()
            .map(|(a, b)| Ok((tape.constant(a.clone())?, tape.constant(b.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let mv = step.m_hat_prev.iter().map(|m| tape.constant(m.clone())).collect::<Result<Vec<_>>>()?;
        let sel = selection(&spec, &step.route, batch);
        let (outs, _) = step_graph(net, target, &mut tape, &step.inputs, &sel, &hv, &mv, data.mode.norm)?;
        q_next.push(outs.iter().map(|o| tape.value(o.q).clone()).collect());
        head_next.push(
            outs.iter()
                .map(|o| o.head.map_or_else(|| Tensor::zeros(&[rows, 0]), |v| tape.value(v).clone()))
                .collect(),
        );
        h = outs.iter().map(|o| (tape.value(o.h1).clone(), tape.value(o.h2).clone())).collect();
    }
    let steps = data.steps.len();
    let n = spec.n_agents;
    let mut y_u = vec![vec![0.0; n * batch]; steps];
    let mut y_m = vec![Vec::new(); steps];
    for t in 0..steps {
        let step = &data.steps[t];
        if spec.method == Method::Rial {
            y_m[t] = vec![0.0; n * batch];
        }
        for a in 0..n {
            for b in 0..batch {
                let i = a * batch + b;
                if !step.alive[b] {
                    continue;
                }
                let r = step.reward[b];
                if step.terminal[b] {
                    y_u[t][i] = r;
                    if spec.method == Method::Rial {
                        y_m[t][i] = r;
                    }
                    continue;
                }
                let next = &data.steps[t + 1];
                let qn = group_values(&spec, batch, &q_next[t + 1], a, b);
                y_u[t][i] = r + gamma * max_masked(&qn, &next.avail[i])?;
                if spec.method == Method::Rial {
                    let hn = group_values(&spec, batch, &head_next[t + 1], a, b);
                    y_m[t][i] = r + gamma * max_masked(&hn, &vec![true; hn.len()])?;
                }
            }
        }
    }
    Ok(Targets { y_u, y_m })
}

/// `Σ_rows weight · (values[row, chosen] − y)²` on the tape.
fn chosen_sq_error(tape: &mut Tape, values: Var, chosen: &[usize], y: &[f64], weight: &[f64]) -> Result<Var> {
    let (rows, cols) = match tape.shape(values) {
        [r, c] => (*r, *c),
        s => return Err(Error::invalid(format!("expected a matrix of values, got {s:?}"))),
    };
    let mut onehot = Tensor::zeros(&[rows, cols]);
    for (r, &c) in chosen.iter().enumerate() {
        onehot.data_mut()[r * cols + c] = 1.0;
    }
    let mask = tape.constant(onehot)?;
    let picked = tape.mul(values, mask)?;
    let ones = tape.constant(Tensor::full(&[cols, 1], 1.0))?;
    let picked = tape.matmul(picked, ones)?;
    let target = tape.constant(Tensor::matrix(rows, 1, y.to_vec())?)?;
    let diff = tape.sub(picked, target)?;
    let sq = tape.square(diff)?;
    tape.weighted_sum(sq, Tensor::matrix(rows, 1, weight.to_vec())?)
}

/// TD loss of one step over all groups.
fn step_loss(
    tape: &mut Tape,
    spec: &CNetSpec,
    batch: usize,
    outs: &[StepOut],
    step: &StepRecord,
    y_u: &[f64],
    y_m: &[f64],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    let inv_b = 1.0 / batch as f64;
    for (g, out) in outs.iter().enumerate() {
        let agents = spec.group_agents(g);
        let idx: Vec<usize> = agents.iter().flat_map(|&a| (0..batch).map(move |b| a * batch + b)).collect();
        let weight: Vec<f64> = idx.iter().map(|&i| if step.alive[i % batch] { inv_b } else { 0.0 }).collect();
        let chosen: Vec<usize> = idx.iter().map(|&i| step.actions[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| y_u[i]).collect();
        let mut l = chosen_sq_error(tape, out.q, &chosen, &y, &weight)?;
        if spec.method == Method::Rial {
            let head = out.head.ok_or_else(|| Error::invalid("RIAL network without message head"))?;
            let chosen: Vec<usize> = idx.iter().map(|&i| step.messages[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| y_m[i]).collect();
            let lm = chosen_sq_error(tape, head, &chosen, &y, &weight)?;
            l = tape.add(l, lm)?;
        }
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::invalid("no groups"))
}

fn check_batch(net: &CNet, data: &TrajectoryBatch, targets: &Targets) -> Result<()> {
    if net.spec != data.spec {
        return Err(Error::invalid("trajectory batch was produced by a different network layout"));
    }
    if data.spec.method == Method::Dial && data.mode.channel == ChannelMode::Exec {
        return Err(Error::invalid(
            "DIAL gradients need train-mode channel outputs; this batch used the discretized channel",
        ));
    }
    if targets.y_u.len() != data.steps.len() {
        return Err(Error::invalid("targets do not match the batch length"));
    }
    Ok(())
}

/// Backward sweep with per-step tapes and the message-gradient chain.
pub fn backward(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets) -> Result<BackwardOut> {
    check_batch(net, data, targets)?;
    let spec = net.spec;
    let batch = data.batch;
    let groups = spec.groups();
    let rows = spec.group_rows(batch);
    let w = spec.message_width();
    let dial = spec.method == Method::Dial;
    let steps = data.steps.len();

    let mut grad = Gradient::zeros_like(theta);
    let mut loss = 0.0;
    let mut adj: Vec<Option<(Tensor, Tensor)>> = vec![None; groups];
    let mut mu: Vec<Option<Tensor>> = vec![None; groups];
    let mut chain = vec![vec![Tensor::zeros(&[rows, w]); groups]; steps];

    for t in (0..steps).rev() {
        let step = &data.steps[t];
        let mut tape = Tape::new();
        let hv = step
            .h_prev
            .iter()
            .map(|(a, b)| Ok((tape.variable(a.clone())?, tape.variable(b.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let mv = step
            .m_hat_prev
            .iter()
            .map(|m| if dial { tape.variable(m.clone()) } else { tape.constant(m.clone()) })
            .collect::<Result<Vec<_>>>()?;
        let sel = selection(&spec, &step.route, batch);
        let (outs, _) = step_graph(net, theta, &mut tape, &step.inputs, &sel, &hv, &mv, data.mode.norm)?;
        let ym = targets.y_m.get(t).map_or(&[][..], |v| &v[..]);
        let lt = step_loss(&mut tape, &spec, batch, &outs, step, &targets.y_u[t], ym)?;
        let mut surrogate = lt;
        for (g, out) in outs.iter().enumerate() {
            if let Some((a1, a2)) = adj[g].take() {
                let s1 = tape.weighted_sum(out.h1, a1)?;
                let s2 = tape.weighted_sum(out.h2, a2)?;
                surrogate = tape.add(surrogate, s1)?;
                surrogate = tape.add(surrogate, s2)?;
            }
            if let (true, Some(m)) = (dial, mu[g].take()) {
                let head = out.head.ok_or_else(|| Error::invalid("DIAL network without message head"))?;
                let noise = tape.constant(step.noise[g].clone())?;
                let pre = tape.add(head, noise)?;
                let m_hat = tape.sigmoid(pre)?;
                let s = tape.weighted_sum(m_hat, m)?;
                surrogate = tape.add(surrogate, s)?;
            }
        }
        loss += tape.value(lt).item();
        let grads = tape.backward(surrogate)?;
        grad.accumulate(&tape, &grads)?;
        for g in 0..groups {
            adj[g] = Some((grads.wrt(hv[g].0).clone(), grads.wrt(hv[g].1).clone()));
            if dial {
                let m = grads.wrt(mv[g]).clone();
                if t > 0 {
                    chain[t - 1][g] = m.clone();
                }
                mu[g] = Some(m);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("TD loss".into()));
    }
    Ok(BackwardOut {
        grad,
        loss,
        chain: dial.then_some(MsgGradChain { mu: chain }),
    })
}

/// DIAL update: requires a DIAL batch recorded with the noisy channel.
pub fn dial_backward(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets) -> Result<BackwardOut> {
    if data.method() != Method::Dial {
        return Err(Error::invalid("dial_backward needs a DIAL batch"));
    }
    backward(net, theta, data, targets)
}

/// RIAL update: DQN losses on both heads; messages enter as data, so no
/// gradient crosses between agents.
pub fn rial_update(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets) -> Result<BackwardOut> {
    if data.method() != Method::Rial {
        return Err(Error::invalid("rial_update needs a RIAL batch"));
    }
    backward(net, theta, data, targets)
}

fn unroll_loss(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets, tape: &mut Tape) -> Result<Var> {
    check_batch(net, data, targets)?;
    let spec = net.spec;
    let batch = data.batch;
    let rows = spec.group_rows(batch);
    let w = spec.message_width();
    let groups = spec.groups();
    let mut hv = (0..groups)
        .map(|_| {
            let (a, b) = net.initial_hidden(rows);
            Ok((tape.constant(a)?, tape.constant(b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mv = (0..groups)
        .map(|_| tape.constant(Tensor::zeros(&[rows, w])))
        .collect::<Result<Vec<_>>>()?;
    let mut total: Option<Var> = None;
    for (t, step) in data.steps.iter().enumerate() {
        let sel = selection(&spec, &step.route, batch);
        let (outs, _) = step_graph(net, theta, tape, &step.inputs, &sel, &hv, &mv, data.mode.norm)?;
        let ym = targets.y_m.get(t).map_or(&[][..], |v| &v[..]);
        let lt = step_loss(tape, &spec, batch, &outs, step, &targets.y_u[t], ym)?;
        total = Some(match total {
            Some(x) => tape.add(x, lt)?,
            None => lt,
        });
        hv = outs.iter().map(|o| (o.h1, o.h2)).collect();
        mv = match spec.method {
            Method::Dial => outs
                .iter()
                .enumerate()
                .map(|(g, o)| {
                    let noise = tape.constant(step.noise[g].clone())?;
                    let pre = tape.add(o.head.expect("head"), noise)?;
                    tape.sigmoid(pre)
                })
                .collect::<Result<Vec<_>>>()?,
            _ => step.m_hat.iter().map(|m| tape.constant(m.clone())).collect::<Result<Vec<_>>>()?,
        };
    }
    total.ok_or_else(|| Error::invalid("empty batch"))
}

/// Full backpropagation through the unrolled batch on one tape.
pub fn reference_backward(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets) -> Result<(Gradient, f64)> {
    let mut tape = Tape::new();
    let loss = unroll_loss(net, theta, data, targets, &mut tape)?;
    let grads = tape.backward(loss)?;
    let mut grad = Gradient::zeros_like(theta);
    grad.accumulate(&tape, &grads)?;
    Ok((grad, tape.value(loss).item()))
}

/// Loss value only (recorded noise and inputs, fixed targets).
pub fn batch_loss(net: &CNet, theta: &ParamStore, data: &TrajectoryBatch, targets: &Targets) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = unroll_loss(net, theta, data, targets, &mut tape)?;
    Ok(tape.value(loss).item())
}
