//! Condition → behaviour tables read off greedy, discretized rollouts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::agent::Method;
use crate::env::{switch_oracle_exact, Environment, SwitchGame};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::train::TrajectoryBatch;

/// What the switch occupant knows that a flat table can key on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwitchCondition {
    pub day: usize,
    pub bit_seen: bool,
    pub visited_before: bool,
}

/// The occupant's response: announce or not, and the bit left on the switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwitchChoice {
    pub tell: bool,
    pub bit: bool,
}

impl SwitchChoice {
    const ALL: [SwitchChoice; 4] = [
        SwitchChoice { tell: false, bit: false },
        SwitchChoice { tell: false, bit: true },
        SwitchChoice { tell: true, bit: false },
        SwitchChoice { tell: true, bit: true },
    ];

    fn index(self) -> usize {
        usize::from(self.tell) * 2 + usize::from(self.bit)
    }
}

/// Observed choice counts per condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwitchProtocol {
    pub n: usize,
    pub episodes: usize,
    pub counts: BTreeMap<SwitchCondition, [usize; 4]>,
}

/// A deterministic switch policy as a lookup table.
pub type SwitchTable = BTreeMap<SwitchCondition, SwitchChoice>;

impl SwitchProtocol {
    /// Tallies every occupant decision in `batches` (switch riddle only).
    pub fn from_batches(batches: &[TrajectoryBatch]) -> Result<Self> {
        let mut out = SwitchProtocol::default();
        for data in batches {
            let spec = data.spec;
            if spec.n_actions != 2 {
                return Err(Error::invalid("switch protocol needs a switch-riddle batch"));
            }
            out.n = spec.n_agents;
            out.episodes += data.batch;
            let w = spec.message_width();
            for b in 0..data.batch {
                let mut visited = vec![false; spec.n_agents];
                for (t, step) in data.steps.iter().enumerate() {
                    if !step.alive[b] {
                        break;
                    }
                    let Some(a) = (0..spec.n_agents).find(|&a| step.avail[a * data.batch + b][1]) else {
                        continue;
                    };
                    let i = a * data.batch + b;
                    let bit_seen = match step.route[i] {
                        Some(s) if w > 0 => {
                            let (g, r) = spec.locate(s, b, data.batch);
                            step.m_hat_prev[g].get2(r, 0) > 0.5
                        }
                        _ => false,
                    };
                    let bit = if w > 0 {
                        let (g, r) = spec.locate(a, b, data.batch);
                        step.m_hat[g].get2(r, 0) > 0.5
                    } else {
                        false
                    };
                    let cond = SwitchCondition {
                        day: t + 1,
                        bit_seen,
                        visited_before: visited[a],
                    };
                    let choice = SwitchChoice {
                        tell: step.actions[i] == 1,
                        bit,
                    };
                    out.counts.entry(cond).or_insert([0; 4])[choice.index()] += 1;
                    visited[a] = true;
                }
            }
        }
        Ok(out)
    }

    pub fn decisions(&self) -> usize {
        self.counts.values().flatten().sum()
    }

    /// Most frequent choice per condition (ties to the earlier choice).
    pub fn deterministic(&self) -> SwitchTable {
        self.counts
            .iter()
            .map(|(&c, k)| {
                let best = (0..4).fold(0, |best, j| if k[j] > k[best] { j } else { best });
                (c, SwitchChoice::ALL[best])
            })
            .collect()
    }

    /// Share of decisions that agree with the modal choice of their condition.
    pub fn consistency(&self) -> f64 {
        let total = self.decisions();
        if total == 0 {
            return 0.0;
        }
        let modal: usize = self.counts.values().map(|k| *k.iter().max().unwrap_or(&0)).sum();
        modal as f64 / total as f64
    }

    /// Columns `day,bit_seen,visited_before,tell,bit_written,count,freq`.
    pub fn to_csv(&self, meta: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# episodes: {}", self.episodes);
        let _ = writeln!(out, "# decisions: {}", self.decisions());
        out.push_str("day,bit_seen,visited_before,tell,bit_written,count,freq\n");
        for (c, k) in &self.counts {
            let total: usize = k.iter().sum();
            for choice in SwitchChoice::ALL {
                let count = k[choice.index()];
                if count == 0 {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.day,
                    u8::from(c.bit_seen),
                    u8::from(c.visited_before),
                    u8::from(choice.tell),
                    u8::from(choice.bit),
                    count,
                    count as f64 / total as f64
                );
            }
        }
        out
    }
}

/// Looks up a condition; unseen conditions leave the switch alone and stay
/// silent.
pub fn table_choice(table: &SwitchTable, cond: SwitchCondition) -> SwitchChoice {
    table.get(&cond).copied().unwrap_or(SwitchChoice {
        tell: false,
        bit: cond.bit_seen,
    })
}

/// Mean reward of a condition-table policy on `episodes` fresh switch games.
pub fn replay_switch<F>(n: usize, horizon: usize, episodes: usize, rng: &mut StreamRng, policy: F) -> Result<f64>
where
    F: Fn(SwitchCondition) -> SwitchChoice,
{
    let mut env = SwitchGame::with_horizon(n, horizon)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng);
        let mut seen = vec![false; n];
        while !env.done() {
            let a = env.occupant();
            let choice = policy(SwitchCondition {
                day: env.t(),
                bit_seen: env.switch_bit(),
                visited_before: seen[a],
            });
            seen[a] = true;
            let mut actions = vec![0; n];
            actions[a] = usize::from(choice.tell);
            let next = rng.random_range(0..n);
            total += env.step_to(&actions, choice.bit, next)?.reward;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// A hand-written optimal policy for three agents. The bit means "at least
/// two agents have been in the room"; a newcomer who finds it set knows that
/// everyone has now visited.
pub fn optimal_switch_policy(cond: SwitchCondition) -> SwitchChoice {
    match (cond.day, cond.visited_before, cond.bit_seen) {
        (1, _, _) => SwitchChoice { tell: false, bit: false },
        (_, false, true) => SwitchChoice { tell: true, bit: true },
        (_, false, false) => SwitchChoice { tell: false, bit: true },
        (_, true, bit) => SwitchChoice { tell: false, bit },
    }
}

/// Replay of an extracted table against the full-information oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchReplay {
    pub reward: f64,
    pub oracle: f64,
    pub ratio: f64,
    /// The table reaches oracle-level reward.
    pub optimal: bool,
}

pub const OPTIMAL_RATIO: f64 = 0.95;

pub fn replay_table(
    n: usize,
    horizon: usize,
    table: &SwitchTable,
    episodes: usize,
    rng: &mut StreamRng,
) -> Result<SwitchReplay> {
    let reward = replay_switch(n, horizon, episodes, rng, |c| table_choice(table, c))?;
    let oracle = switch_oracle_exact(n, horizon);
    let ratio = reward / oracle;
    Ok(SwitchReplay {
        reward,
        oracle,
        ratio,
        optimal: ratio >= OPTIMAL_RATIO,
    })
}

/// Code words an agent sent, keyed by the hidden class of its observation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DigitCodes {
    pub episodes: usize,
    pub counts: BTreeMap<usize, BTreeMap<String, usize>>,
}

impl DigitCodes {
    /// Collects the bits each agent sent on every step but its episode's
    /// last (the final message is never received).
    pub fn from_batches(batches: &[TrajectoryBatch]) -> Result<Self> {
        let mut out = DigitCodes::default();
        for data in batches {
            let spec = data.spec;
            let w = spec.message_width();
            if w == 0 {
                return Err(Error::invalid("batch carries no messages"));
            }
            out.episodes += data.batch;
            for a in 0..spec.n_agents {
                for b in 0..data.batch {
                    let i = a * data.batch + b;
                    let Some(label) = data.labels[i] else {
                        return Err(Error::invalid("environment exposes no hidden labels"));
                    };
                    let (g, r) = spec.locate(a, b, data.batch);
                    let mut code = String::new();
                    for step in data.steps.iter().take(data.lengths[b].saturating_sub(1)) {
                        let bits: Vec<bool> = match spec.method {
                            Method::Rial => {
                                let m = step.messages[i];
                                (0..w).map(|j| (m >> j) & 1 == 1).collect()
                            }
                            _ => step.m_hat[g].row(r).iter().map(|&v| v > 0.5).collect(),
                        };
                        code.extend(bits.iter().map(|&x| if x { '1' } else { '0' }));
                    }
                    *out.counts.entry(label).or_default().entry(code).or_insert(0) += 1;
                }
            }
        }
        Ok(out)
    }

    /// Most frequent code per label.
    pub fn modal(&self) -> BTreeMap<usize, String> {
        self.counts
            .iter()
            .filter_map(|(&l, codes)| {
                codes
                    .iter()
                    .max_by(|x, y| x.1.cmp(y.1).then_with(|| y.0.cmp(x.0)))
                    .map(|(c, _)| (l, c.clone()))
            })
            .collect()
    }

    /// Share of samples that sent their label's modal code.
    pub fn consistency(&self) -> f64 {
        let total: usize = self.counts.values().flat_map(|c| c.values()).sum();
        if total == 0 {
            return 0.0;
        }
        let modal: usize = self.counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
        modal as f64 / total as f64
    }

    /// Distinct labels map to distinct modal codes.
    pub fn injective(&self) -> bool {
        let modal = self.modal();
        let mut codes: Vec<&String> = modal.values().collect();
        codes.sort();
        codes.dedup();
        codes.len() == modal.len()
    }

    /// Columns `label,code,count,freq`.
    pub fn to_csv(&self, meta: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# episodes: {}", self.episodes);
        let _ = writeln!(out, "# consistency: {}", self.consistency());
        let _ = writeln!(out, "# injective: {}", self.injective());
        out.push_str("label,code,count,freq\n");
        for (l, codes) in &self.counts {
            let total: usize = codes.values().sum();
            for (c, k) in codes {
                let _ = writeln!(out, "{l},{c},{k},{}", *k as f64 / total as f64);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn hand_coded_policy_meets_the_oracle() {
        let mut rng = StreamRng::seed_from_u64(3);
        let reward = replay_switch(3, 6, 20_000, &mut rng, optimal_switch_policy).unwrap();
        let oracle: f64 = 540.0 / 729.0;
        // Rewards are 0 or 1 under this policy: binomial standard error.
        let se = (oracle * (1.0 - oracle) / 20_000.0).sqrt();
        assert!((reward - oracle).abs() < 4.0 * se, "{reward} vs {oracle}");
    }

    #[test]
    fn hand_coded_policy_never_tells_wrongly() {
        // Exhaustive over occupant sequences of length T = 6.
        let n = 3;
        for code in 0..3usize.pow(6) {
            let seq: Vec<usize> = (0..6).map(|i| code / 3usize.pow(i) % 3).collect();
            let mut env = SwitchGame::new(n).unwrap();
            env.reset_with_occupant(seq[0]);
            let mut seen = vec![false; n];
            let mut day = 0;
            while !env.done() {
                let a = env.occupant();
                let c = optimal_switch_policy(SwitchCondition {
                    day: env.t(),
                    bit_seen: env.switch_bit(),
                    visited_before: seen[a],
                });
                seen[a] = true;
                let mut actions = vec![0; n];
                actions[a] = usize::from(c.tell);
                let next = seq.get(day + 1).copied().unwrap_or(0);
                let r = env.step_to(&actions, c.bit, next).unwrap();
                assert!(r.reward >= 0.0);
                if r.done {
                    let all = (0..n).all(|x| seq.iter().take(day + 1).any(|&s| s == x));
                    assert_eq!(r.reward == 1.0, all, "{seq:?}");
                }
                day += 1;
            }
        }
    }

    #[test]
    fn modal_table_and_consistency() {
        let c = SwitchCondition { day: 2, bit_seen: false, visited_before: false };
        let mut p = SwitchProtocol { n: 3, episodes: 4, counts: BTreeMap::new() };
        p.counts.insert(c, [1, 3, 0, 0]);
        let t = p.deterministic();
        assert_eq!(t[&c], SwitchChoice { tell: false, bit: true });
        assert_eq!(p.consistency(), 0.75);
        let csv = p.to_csv(&[]);
        assert!(csv.contains("2,0,0,0,1,3,0.75"));
    }

    #[test]
    fn injectivity_check() {
        let mut d = DigitCodes::default();
        d.counts.entry(0).or_default().insert("01".into(), 5);
        d.counts.entry(1).or_default().insert("10".into(), 4);
        d.counts.entry(1).or_default().insert("01".into(), 1);
        assert!(d.injective());
        assert_eq!(d.consistency(), 0.9);
        d.counts.entry(2).or_default().insert("01".into(), 9);
        assert!(!d.injective());
    }
}
