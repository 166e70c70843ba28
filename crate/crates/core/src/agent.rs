//! The C-Net: per-agent recurrent Q-network with an outgoing message head,
//! plus action/message selection and target-network handling.
//!
//! Inputs are embedded and summed:
//!
//! ```text
//! z = Task(o) + Msg(BN(m̂_in)) + Lookup(u_prev) + Lookup(agent) [+ Lookup(m_prev_own)]
//! h1 = GRU1(z, h1);  h2 = GRU2(h1, h2)
//! [Q_u | head] = Linear(ReLU(Linear(h2)))
//! ```
//!
//! Rows of a batch are processed together. With parameter sharing every
//! agent's rows go through one network (agent-major order); otherwise each
//! agent has its own network and its own group of rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dru::{dru, DruConfig};
use crate::env::ObsSpec;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, BatchStats, Embedding, GruCell, Linear, NormMode};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Discrete messages learned by independent Q-learning on a second head.
    Rial,
    /// Real-valued messages through the DRU with gradients across agents.
    Dial,
    /// No channel: the DIAL network without a message path.
    NoComm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rial => "rial",
            Method::Dial => "dial",
            Method::NoComm => "nocomm",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rial" => Ok(Method::Rial),
            "dial" => Ok(Method::Dial),
            "nocomm" => Ok(Method::NoComm),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CNetSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs: ObsSpec,
    pub method: Method,
    /// Bits per message. RIAL chooses among `2^bits` discrete messages.
    pub message_bits: usize,
    pub embed: usize,
    pub shared: bool,
}

impl CNetSpec {
    /// Width of a transmitted message vector.
    pub fn message_width(&self) -> usize {
        match self.method {
            Method::NoComm => 0,
            _ => self.message_bits,
        }
    }

    pub fn num_messages(&self) -> usize {
        match self.method {
            Method::Rial => 1 << self.message_bits,
            _ => 0,
        }
    }

    /// Width of the output layer beyond the action values.
    pub fn head_width(&self) -> usize {
        match self.method {
            Method::Rial => self.num_messages(),
            Method::Dial => self.message_bits,
            Method::NoComm => 0,
        }
    }

    pub fn groups(&self) -> usize {
        if self.shared {
            1
        } else {
            self.n_agents
        }
    }

    /// `(group, row)` of agent `a` in episode `b` for a batch of `batch`.
    pub fn locate(&self, agent: usize, b: usize, batch: usize) -> (usize, usize) {
        if self.shared {
            (0, agent * batch + b)
        } else {
            (agent, b)
        }
    }

    pub fn group_rows(&self, batch: usize) -> usize {
        if self.shared {
            self.n_agents * batch
        } else {
            batch
        }
    }

    /// Agents whose rows make up `group`, in row order.
    pub fn group_agents(&self, group: usize) -> Vec<usize> {
        if self.shared {
            (0..self.n_agents).collect()
        } else {
            vec![group]
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_actions == 0 || self.embed == 0 {
            return Err(Error::Config("agents, actions and embed width must be positive".into()));
        }
        if self.method != Method::NoComm && self.message_bits == 0 {
            return Err(Error::Config("communicating methods need at least one message bit".into()));
        }
        if self.method == Method::Rial && self.message_bits > 8 {
            return Err(Error::Config("RIAL supports at most 8 message bits".into()));
        }
        Ok(())
    }
}

/// Decodes a RIAL message index into its bit vector.
pub fn message_bits(index: usize, bits: usize) -> Vec<f64> {
    (0..bits).map(|j| ((index >> j) & 1) as f64).collect()
}

#[derive(Clone, Debug)]
pub enum TaskNet {
    Lookup(Embedding),
    Mlp(Linear, Linear),
}

/// Parameters of one C-Net.
#[derive(Clone, Debug)]
pub struct AgentNet {
    pub task: TaskNet,
    pub msg_norm: Option<BatchNorm>,
    pub msg_in: Option<Linear>,
    pub agent_embed: Embedding,
    pub action_embed: Embedding,
    pub own_msg_embed: Option<Embedding>,
    pub gru1: GruCell,
    pub gru2: GruCell,
    pub out1: Linear,
    pub out2: Linear,
}

/// Observations for a group of rows.
#[derive(Clone, Debug, PartialEq)]
pub enum ObsBatch {
    Index(Vec<usize>),
    Features(Tensor),
}

/// Everything one network needs at one step, apart from the recurrent state
/// and incoming messages.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupInput {
    pub obs: ObsBatch,
    pub agent: Vec<usize>,
    /// `0` before the first action, `u + 1` afterwards.
    pub prev_action: Vec<usize>,
    /// RIAL only: `0` before the first message, `m + 1` afterwards.
    pub prev_own_msg: Vec<usize>,
}

impl GroupInput {
    pub fn rows(&self) -> usize {
        self.agent.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOut {
    /// `rows × |U|`.
    pub q: Var,
    /// `rows × head` (message logits for DIAL, message values for RIAL).
    pub head: Option<Var>,
    pub h1: Var,
    pub h2: Var,
}

impl AgentNet {
    fn new<R: Rng + ?Sized>(spec: &CNetSpec, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        let e = spec.embed;
        let name = |s: &str| format!("{prefix}{s}");
        let task = match spec.obs {
            ObsSpec::Index { vocab } => TaskNet::Lookup(Embedding::new(store, &name("task"), vocab, e, rng)?),
            ObsSpec::Features { dim } => TaskNet::Mlp(
                Linear::new(store, &name("task/l1"), dim, e, rng)?,
                Linear::new(store, &name("task/l2"), e, e, rng)?,
            ),
        };
        let width = spec.message_width();
        let (msg_norm, msg_in) = if width > 0 {
            (
                Some(BatchNorm::new(store, &name("msg/bn"), width)?),
                Some(Linear::new(store, &name("msg/l1"), width, e, rng)?),
            )
        } else {
            (None, None)
        };
        let agent_embed = Embedding::new(store, &name("agent"), spec.n_agents, e, rng)?;
        let action_embed = Embedding::new(store, &name("prev_action"), spec.n_actions + 1, e, rng)?;
        let own_msg_embed = if spec.method == Method::Rial {
            Some(Embedding::new(store, &name("prev_msg"), spec.num_messages() + 1, e, rng)?)
        } else {
            None
        };
        Ok(AgentNet {
            task,
            msg_norm,
            msg_in,
            agent_embed,
            action_embed,
            own_msg_embed,
            gru1: GruCell::new(store, &name("gru1"), e, e, rng)?,
            gru2: GruCell::new(store, &name("gru2"), e, e, rng)?,
            out1: Linear::new(store, &name("out/l1"), e, e, rng)?,
            out2: Linear::new(store, &name("out/l2"), e, spec.n_actions + spec.head_width(), rng)?,
        })
    }

    /// One forward step for a group of rows. Returns the outputs and, in
    /// train mode, the message batch-norm statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        spec: &CNetSpec,
        tape: &mut Tape,
        store: &ParamStore,
        input: &GroupInput,
        incoming: Option<Var>,
        h1: Var,
        h2: Var,
        norm: NormMode,
    ) -> Result<(StepOut, Option<BatchStats>)> {
        let rows = input.rows();
        for h in [h1, h2] {
            if tape.shape(h) != [rows, spec.embed] {
                return Err(Error::ShapeMismatch {
                    op: "cnet hidden state",
                    lhs: tape.shape(h).to_vec(),
                    rhs: vec![rows, spec.embed],
                });
            }
        }
        let mut z = match (&self.task, &input.obs) {
            (TaskNet::Lookup(emb), ObsBatch::Index(idx)) => emb.forward(tape, store, idx)?,
            (TaskNet::Mlp(l1, l2), ObsBatch::Features(x)) => {
                let x = tape.constant(x.clone())?;
                let a = l1.forward(tape, store, x)?;
                let a = tape.relu(a)?;
                l2.forward(tape, store, a)?
            }
            _ => return Err(Error::invalid("observation kind does not match the task network")),
        };
        let mut stats = None;
        if let (Some(bn), Some(lin)) = (&self.msg_norm, &self.msg_in) {
            let m = incoming.ok_or_else(|| Error::invalid("network expects incoming messages"))?;
            let (normed, s) = bn.forward(tape, store, m, norm)?;
            stats = s;
            let e = lin.forward(tape, store, normed)?;
            let e = tape.relu(e)?;
            z = tape.add(z, e)?;
        }
        let a = self.agent_embed.forward(tape, store, &input.agent)?;
        z = tape.add(z, a)?;
        let u = self.action_embed.forward(tape, store, &input.prev_action)?;
        z = tape.add(z, u)?;
        if let Some(emb) = &self.own_msg_embed {
            let m = emb.forward(tape, store, &input.prev_own_msg)?;
            z = tape.add(z, m)?;
        }
        let h1 = self.gru1.step(tape, store, z, h1)?;
        let h2 = self.gru2.step(tape, store, h1, h2)?;
        let o = self.out1.forward(tape, store, h2)?;
        let o = tape.relu(o)?;
        let out = self.out2.forward(tape, store, o)?;
        let (q, head) = if spec.head_width() > 0 {
            (
                tape.slice_cols(out, 0, spec.n_actions)?,
                Some(tape.slice_cols(out, spec.n_actions, spec.n_actions + spec.head_width())?),
            )
        } else {
            (out, None)
        };
        Ok((StepOut { q, head, h1, h2 }, stats))
    }

    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats) -> Result<()> {
        match &self.msg_norm {
            Some(bn) => bn.update_running(store, stats),
            None => Ok(()),
        }
    }
}

/// A C-Net for every agent (one shared copy, or one per agent).
#[derive(Clone, Debug)]
pub struct CNet {
    pub spec: CNetSpec,
    pub nets: Vec<AgentNet>,
}

impl CNet {
    pub fn new<R: Rng + ?Sized>(spec: CNetSpec, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let nets = (0..spec.groups())
            .map(|g| {
                let prefix = if spec.shared { String::new() } else { format!("agent{g}/") };
                AgentNet::new(&spec, store, &prefix, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CNet { spec, nets })
    }

    pub fn net(&self, group: usize) -> &AgentNet {
        &self.nets[group]
    }

    /// Zero recurrent state for `rows` rows.
    pub fn initial_hidden(&self, rows: usize) -> (Tensor, Tensor) {
        (
            Tensor::zeros(&[rows, self.spec.embed]),
            Tensor::zeros(&[rows, self.spec.embed]),
        )
    }
}

/// `θ⁻ ← θ`.
pub fn sync_target(theta: &ParamStore, target: &mut ParamStore) -> Result<()> {
    target.copy_from(theta)
}

/// Index of the largest available value; ties go to the lowest index.
pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::invalid("no available action"))
}

/// Maximum over available entries.
pub fn max_masked(values: &[f64], mask: &[bool]) -> Result<f64> {
    argmax_masked(values, mask).map(|i| values[i])
}

/// Uniformly random available index with probability `eps`, else greedy.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], mask: &[bool], eps: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::invalid(format!("epsilon {eps} outside [0, 1]")));
    }
    if values.len() != mask.len() {
        return Err(Error::invalid("action mask does not match Q-values"));
    }
    let greedy = argmax_masked(values, mask)?;
    if eps > 0.0 && rng.random_bool(eps) {
        let available: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        return Ok(available[rng.random_range(0..available.len())]);
    }
    Ok(greedy)
}

/// Independent ε-greedy choices over the action head and the message head.
pub fn select_rial<R: Rng + ?Sized>(
    q_u: &[f64],
    mask: &[bool],
    q_m: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let u = epsilon_greedy(q_u, mask, eps, rng)?;
    let m = epsilon_greedy(q_m, &vec![true; q_m.len()], eps, rng)?;
    Ok((u, m))
}

/// ε-greedy over actions; the message bypasses the selector and goes through
/// the channel unit.
pub fn select_dial<R: Rng + ?Sized>(
    q_u: &[f64],
    mask: &[bool],
    message: &[f64],
    eps: f64,
    channel: DruConfig,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    let u = epsilon_greedy(q_u, mask, eps, rng)?;
    Ok((u, dru(message, channel, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(method: Method, shared: bool) -> CNetSpec {
        CNetSpec {
            n_agents: 3,
            n_actions: 2,
            obs: ObsSpec::Index { vocab: 2 },
            method,
            message_bits: 1,
            embed: 6,
            shared,
        }
    }

    fn input(spec: &CNetSpec, rows: usize, agents: &[usize]) -> GroupInput {
        GroupInput {
            obs: ObsBatch::Index((0..rows).map(|r| r % 2).collect()),
            agent: agents.to_vec(),
            prev_action: (0..rows).map(|r| r % (spec.n_actions + 1)).collect(),
            prev_own_msg: vec![0; rows],
        }
    }

    fn run(net: &CNet, store: &ParamStore, inp: &GroupInput, msg: Tensor, norm: NormMode) -> (Tensor, Option<Tensor>) {
        let mut tape = Tape::new();
        let rows = inp.rows();
        let (h1, h2) = net.initial_hidden(rows);
        let h1 = tape.constant(h1).unwrap();
        let h2 = tape.constant(h2).unwrap();
        let m = tape.constant(msg).unwrap();
        let (out, _) = net.net(0).forward(&net.spec, &mut tape, store, inp, Some(m), h1, h2, norm).unwrap();
        (tape.value(out.q).clone(), out.head.map(|h| tape.value(h).clone()))
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.zero_all();
        // keep running variance positive
        let rv = store.lookup("msg/bn/running_var").unwrap();
        store.set(rv, Tensor::vector(vec![1.0])).unwrap();
        let inp = input(&s, 3, &[0, 1, 2]);
        let (q, m) = run(&net, &store, &inp, Tensor::zeros(&[3, 1]), NormMode::Eval);
        assert!(q.data().iter().all(|&v| v == 0.0));
        assert!(m.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uninitialized_hidden_rejected() {
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let inp = input(&s, 3, &[0, 1, 2]);
        let h = tape.constant(Tensor::zeros(&[0, 6])).unwrap();
        let m = tape.constant(Tensor::zeros(&[3, 1])).unwrap();
        assert!(net.net(0).forward(&s, &mut tape, &store, &inp, Some(m), h, h, NormMode::Eval).is_err());
    }

    #[test]
    fn agent_index_differentiates_outputs() {
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut inp = input(&s, 2, &[0, 1]);
        inp.obs = ObsBatch::Index(vec![1, 1]);
        inp.prev_action = vec![0, 0];
        let (q, _) = run(&net, &store, &inp, Tensor::zeros(&[2, 1]), NormMode::Eval);
        assert_ne!(q.row(0), q.row(1));
    }

    #[test]
    fn identical_incoming_messages_commute() {
        // Two receivers with identical inputs and identical incoming messages
        // produce identical outputs regardless of which sender they came from.
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let inp = GroupInput {
            obs: ObsBatch::Index(vec![1, 1]),
            agent: vec![2, 2],
            prev_action: vec![1, 1],
            prev_own_msg: vec![0, 0],
        };
        let (q, _) = run(&net, &store, &inp, Tensor::matrix(2, 1, vec![0.3, 0.3]).unwrap(), NormMode::Eval);
        assert_eq!(q.row(0), q.row(1));
    }

    #[test]
    fn separate_parameters_without_sharing() {
        let s = spec(Method::Rial, false);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(net.nets.len(), 3);
        assert!(store.lookup("agent2/gru1/w_z").is_some());
        let inp = input(&s, 2, &[1, 1]);
        let (q0, _) = run(&net, &store, &inp, Tensor::zeros(&[2, 1]), NormMode::Eval);
        assert_eq!(q0.cols(), 2);
    }

    /// Scalar re-implementation of one forward row in eval mode.
    fn scalar_forward(net: &AgentNet, spec: &CNetSpec, store: &ParamStore, obs: usize, agent: usize, prev: usize, msg: f64) -> Vec<f64> {
        let e = spec.embed;
        let row = |id, i: usize| store.get(id).row(i).to_vec();
        let affine = |lin: &Linear, x: &[f64]| -> Vec<f64> {
            let w = store.get(lin.weight);
            let b = store.get(lin.bias);
            (0..lin.fan_out)
                .map(|o| b.data()[o] + (0..lin.fan_in).map(|i| w.get2(o, i) * x[i]).sum::<f64>())
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let mut z = match &net.task {
            TaskNet::Lookup(emb) => row(emb.table, obs),
            TaskNet::Mlp(..) => unreachable!(),
        };
        let bn = net.msg_norm.as_ref().unwrap();
        let mean = store.get(bn.running_mean).data()[0];
        let var = store.get(bn.running_var).data()[0];
        let g = store.get(bn.gamma).data()[0];
        let bb = store.get(bn.beta).data()[0];
        let normed = (msg - mean) / (var + bn.eps).sqrt() * g + bb;
        let me = relu(affine(net.msg_in.as_ref().unwrap(), &[normed]));
        let a = row(net.agent_embed.table, agent);
        let u = row(net.action_embed.table, prev);
        for i in 0..e {
            z[i] += me[i] + a[i] + u[i];
        }
        let gru = |cell: &GruCell, x: &[f64], h: &[f64]| -> Vec<f64> {
            let mv = |w, v: &[f64]| -> Vec<f64> {
                let m = store.get(w);
                (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get2(r, c) * v[c]).sum()).collect()
            };
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let add3 = |a: Vec<f64>, b: Vec<f64>, c| -> Vec<f64> {
                let c = store.get(c).data().to_vec();
                (0..a.len()).map(|i| a[i] + b[i] + c[i]).collect()
            };
            let zg: Vec<f64> = add3(mv(cell.w_z, x), mv(cell.u_z, h), cell.b_z).into_iter().map(sig).collect();
            let rg: Vec<f64> = add3(mv(cell.w_r, x), mv(cell.u_r, h), cell.b_r).into_iter().map(sig).collect();
            let rh: Vec<f64> = (0..h.len()).map(|i| rg[i] * h[i]).collect();
            let ht: Vec<f64> = add3(mv(cell.w_h, x), mv(cell.u_h, &rh), cell.b_h).into_iter().map(f64::tanh).collect();
            (0..h.len()).map(|i| (1.0 - zg[i]) * h[i] + zg[i] * ht[i]).collect()
        };
        let zero = vec![0.0; e];
        let h1 = gru(&net.gru1, &z, &zero);
        let h2 = gru(&net.gru2, &h1, &zero);
        let o = relu(affine(&net.out1, &h2));
        affine(&net.out2, &o)
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let bn = net.net(0).msg_norm.clone().unwrap();
        store.set(bn.running_mean, Tensor::vector(vec![0.3])).unwrap();
        store.set(bn.running_var, Tensor::vector(vec![0.7])).unwrap();
        let inp = GroupInput {
            obs: ObsBatch::Index(vec![1, 0, 1]),
            agent: vec![0, 2, 1],
            prev_action: vec![2, 0, 1],
            prev_own_msg: vec![0; 3],
        };
        let msgs = [0.9, 0.1, 0.55];
        let (q, m) = run(&net, &store, &inp, Tensor::matrix(3, 1, msgs.to_vec()).unwrap(), NormMode::Eval);
        let m = m.unwrap();
        for r in 0..3 {
            let ObsBatch::Index(obs) = &inp.obs else { unreachable!() };
            let want = scalar_forward(net.net(0), &s, &store, obs[r], inp.agent[r], inp.prev_action[r], msgs[r]);
            for c in 0..2 {
                assert!((q.get2(r, c) - want[c]).abs() < 1e-12);
            }
            assert!((m.get2(r, 0) - want[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = Streams::new(0).stream("explore");
        assert_eq!(epsilon_greedy(&[1.0, 3.0, 2.0], &[true; 3], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], &[true; 2], 0.0, &mut rng).unwrap(), 0);
        assert_eq!(argmax_masked(&[1.0, 5.0], &[true, false]).unwrap(), 0);
        assert!(argmax_masked(&[], &[]).is_err());
        assert!(epsilon_greedy(&[1.0], &[true], 1.5, &mut rng).is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        // χ² with 3 (actions) and 1 (messages) degrees of freedom at p = 0.01.
        let mut rng = Streams::new(1).stream("explore");
        let n = 100_000;
        let mut cu = [0usize; 4];
        let mut cm = [0usize; 2];
        for _ in 0..n {
            let (u, m) = select_rial(&[0.0, 1.0, 2.0, 3.0], &[true; 4], &[5.0, 0.0], 1.0, &mut rng).unwrap();
            cu[u] += 1;
            cm[m] += 1;
        }
        let chi = |c: &[usize]| {
            let e = n as f64 / c.len() as f64;
            c.iter().map(|&x| (x as f64 - e).powi(2) / e).sum::<f64>()
        };
        assert!(chi(&cu) < 11.34, "{cu:?}");
        assert!(chi(&cm) < 6.63, "{cm:?}");
    }

    #[test]
    fn dial_selection_channel_modes() {
        let mut rng = Streams::new(2).stream("explore");
        let (u, m) = select_dial(&[0.0, 1.0], &[true; 2], &[-0.5], 0.0, DruConfig::exec(), &mut rng).unwrap();
        assert_eq!((u, m[0]), (1, 0.0));
        for _ in 0..100 {
            let (_, m) = select_dial(&[0.0], &[true], &[3.0], 0.0, DruConfig::train(2.0).unwrap(), &mut rng).unwrap();
            assert!(m[0] > 0.0 && m[0] < 1.0);
        }
    }

    #[test]
    fn sync_copies_and_matches_forward() {
        let s = spec(Method::Dial, true);
        let mut store = ParamStore::new();
        let net = CNet::new(s, &mut store, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut target = store.clone();
        let first = store.ids().next().unwrap();
        store.get_mut(first).data_mut()[0] += 1.0;
        let inp = input(&s, 3, &[0, 1, 2]);
        let msg = Tensor::matrix(3, 1, vec![0.2, 0.4, 0.9]).unwrap();
        assert_ne!(run(&net, &store, &inp, msg.clone(), NormMode::Train).0, run(&net, &target, &inp, msg.clone(), NormMode::Train).0);
        sync_target(&store, &mut target).unwrap();
        assert_eq!(run(&net, &store, &inp, msg.clone(), NormMode::Train).0, run(&net, &target, &inp, msg, NormMode::Train).0);
    }

    #[test]
    fn message_bit_decoding() {
        assert_eq!(message_bits(5, 3), vec![1.0, 0.0, 1.0]);
        assert_eq!(message_bits(0, 1), vec![0.0]);
    }
}
