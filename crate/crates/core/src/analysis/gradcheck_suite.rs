//! The full finite-difference suite: every tape primitive, every layer and a
//! complete two-agent, three-step DIAL unroll with pinned channel noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::Method;
use crate::dru::dru_on_tape;
use crate::env::{DigitSource, EnvConfig};
use crate::error::Result;
use crate::gradcheck::{grad_check, grad_check_model, grad_check_params, GradCheckReport};
use crate::nn::{BatchNorm, Embedding, GruCell, Linear, NormMode};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::{batch_loss, compute_targets, dial_backward, TrainConfig, Trainer};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const UNROLL_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub tol: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tol)
    }
}

fn rand(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Uniform values with magnitude in [0.2, 1.2], clear of the ReLU kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    rand(shape, rng).map(|x| x + 0.2 * x.signum())
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn primitives(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Build, Vec<Tensor>)> {
    // Every output is reduced against fixed random weights so that each
    // output coordinate carries a distinct adjoint.
    let w34 = rand(&[3, 4], rng);
    let w32 = rand(&[3, 2], rng);
    let w33 = rand(&[3, 3], rng);
    let w37 = rand(&[3, 7], rng);
    let w52 = rand(&[5, 2], rng);
    let w4 = rand(&[4], rng);
    let w32b = rand(&[3, 2], rng);
    let wt = rand(&[3, 4], rng);
    let reduce = |t: Tensor| move |tape: &mut Tape, v: Var| tape.weighted_sum(v, t.clone());
    let r34 = reduce(w34);
    let mut out: Vec<(&'static str, Build, Vec<Tensor>)> = Vec::new();
    macro_rules! unary {
        ($name:literal, $op:ident, $inputs:expr) => {{
            let r = r34.clone();
            out.push(($name, Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.$op(v[0])?;
                r(t, y)
            }), $inputs));
        }};
    }
    macro_rules! binary {
        ($name:literal, $op:ident) => {{
            let r = r34.clone();
            out.push(($name, Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.$op(v[0], v[1])?;
                r(t, y)
            }), vec![rand(&[3, 4], rng), rand(&[3, 4], rng)]));
        }};
    }
    binary!("add", add);
    binary!("sub", sub);
    binary!("mul", mul);
    unary!("sigmoid", sigmoid, vec![rand(&[3, 4], rng).map(|x| 3.0 * x)]);
    unary!("tanh", tanh, vec![rand(&[3, 4], rng).map(|x| 2.0 * x)]);
    unary!("relu", relu, vec![away_from_zero(&[3, 4], rng)]);
    unary!("square", square, vec![rand(&[3, 4], rng)]);
    unary!("rsqrt", rsqrt, vec![rand(&[3, 4], rng).map(|x| 1.0 + x.abs())]);
    let r = reduce(w32);
    out.push(("matmul", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.matmul(v[0], v[1])?;
        r(t, y)
    }), vec![rand(&[3, 4], rng), rand(&[4, 2], rng)]));
    let r = reduce(w33);
    out.push(("matmul_t", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.matmul_t(v[0], v[1])?;
        r(t, y)
    }), vec![rand(&[3, 4], rng), rand(&[3, 4], rng)]));
    let r = r34.clone();
    out.push(("add_rowwise", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.add_rowwise(v[0], v[1])?;
        r(t, y)
    }), vec![rand(&[3, 4], rng), rand(&[4], rng)]));
    let r = r34.clone();
    out.push(("repeat_rows", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.repeat_rows(v[0], 3)?;
        r(t, y)
    }), vec![rand(&[4], rng)]));
    let r = r34.clone();
    out.push(("scale", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.scale(v[0], -1.7)?;
        r(t, y)
    }), vec![rand(&[3, 4], rng)]));
    let r = r34.clone();
    out.push(("add_scalar", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.add_scalar(v[0], 0.3)?;
        let y = t.square(y)?;
        r(t, y)
    }), vec![rand(&[3, 4], rng)]));
    let r = reduce(w37);
    out.push(("concat", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.concat(&[v[0], v[1]])?;
        r(t, y)
    }), vec![rand(&[3, 4], rng), rand(&[3, 3], rng)]));
    let r = reduce(w32b);
    out.push(("slice_cols", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.slice_cols(v[0], 1, 3)?;
        r(t, y)
    }), vec![rand(&[3, 4], rng)]));
    let r = reduce(w52);
    out.push(("gather", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.gather(v[0], &[2, 0, 2, 3, 1])?;
        r(t, y)
    }), vec![rand(&[4, 2], rng)]));
    out.push(("sum", Box::new(|t: &mut Tape, v: &[Var]| {
        let y = t.square(v[0])?;
        t.sum(y)
    }), vec![rand(&[3, 4], rng)]));
    let r = reduce(w4);
    out.push(("sum_rows", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = t.sum_rows(v[0])?;
        r(t, y)
    }), vec![rand(&[3, 4], rng)]));
    out.push(("weighted_sum", Box::new(move |t: &mut Tape, v: &[Var]| t.weighted_sum(v[0], wt.clone())), vec![rand(&[3, 4], rng)]));
    let noise = rand(&[3, 4], rng).map(|x| 2.0 * x);
    let r = r34.clone();
    out.push(("dru", Box::new(move |t: &mut Tape, v: &[Var]| {
        let y = dru_on_tape(t, v[0], &noise)?;
        r(t, y)
    }), vec![rand(&[3, 4], rng)]));
    out
}

fn layers(rng: &mut ChaCha8Rng) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut push = |name, report| out.push(SuiteEntry { name, tol: PRIMITIVE_TOL, report });

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 4, 3, rng)?;
    let x = rand(&[5, 4], rng);
    let wo = rand(&[5, 3], rng);
    push("linear", grad_check_model(&store, |t, s| {
        let xv = t.constant(x.clone())?;
        let y = lin.forward(t, s, xv)?;
        let y = t.tanh(y)?;
        t.weighted_sum(y, wo.clone())
    }, H)?);

    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "emb", 4, 3, rng)?;
    let wo = rand(&[5, 3], rng);
    push("embedding", grad_check_model(&store, |t, s| {
        let y = emb.forward(t, s, &[0, 3, 3, 1, 2])?;
        let y = t.square(y)?;
        t.weighted_sum(y, wo.clone())
    }, H)?);

    let mut store = ParamStore::new();
    let gru = GruCell::new(&mut store, "gru", 3, 4, rng)?;
    let x = rand(&[2, 3], rng);
    let h = rand(&[2, 4], rng).map(|v| 0.8 * v);
    let wo = rand(&[2, 4], rng);
    push("gru", grad_check_model(&store, |t, s| {
        let xv = t.constant(x.clone())?;
        let hv = t.constant(h.clone())?;
        let y = gru.step(t, s, xv, hv)?;
        let y = gru.step(t, s, xv, y)?;
        t.weighted_sum(y, wo.clone())
    }, H)?);

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3)?;
    let x = rand(&[6, 3], rng).map(|v| 2.0 * v);
    let wo = rand(&[6, 3], rng);
    push("batchnorm (parameters)", grad_check_model(&store, |t, s| {
        let xv = t.constant(x.clone())?;
        let (y, _) = bn.forward(t, s, xv, NormMode::Train)?;
        let y = t.tanh(y)?;
        t.weighted_sum(y, wo.clone())
    }, H)?);
    let wo2 = wo.clone();
    let bn2 = bn.clone();
    let store2 = store.clone();
    push("batchnorm (input)", grad_check(move |t, v| {
        let (y, _) = bn2.forward(t, &store2, v[0], NormMode::Train)?;
        let y = t.tanh(y)?;
        t.weighted_sum(y, wo2.clone())
    }, &[x], H)?);
    Ok(out)
}

/// Two agents, three steps, shared parameters, pinned channel noise.
fn dial_unroll() -> Result<GradCheckReport> {
    let env = EnvConfig::MultiStep {
        steps: 3,
        digits: DigitSource {
            classes: vec![0, 1, 2],
            synthetic_side: 3,
            synthetic_per_class: 4,
            ..DigitSource::default()
        },
    };
    let mut cfg = TrainConfig::new(Method::Dial, env, 64);
    cfg.batch = 4;
    cfg.embed = 5;
    cfg.epsilon = 0.3;
    cfg.sigma = 1.0;
    cfg.seed = 17;
    let mut t = Trainer::new(cfg)?;
    t.train_batch()?;
    let data = t.sample_batch()?;
    let targets = compute_targets(&t.net, &t.target, &data, t.cfg.gamma)?;
    let out = dial_backward(&t.net, &t.theta, &data, &targets)?;
    grad_check_params(&t.theta, &out.grad, |s| batch_loss(&t.net, s, &data, &targets), H, None)
}

pub fn gradcheck_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, f, point) in primitives(&mut rng) {
        out.push(SuiteEntry {
            name,
            tol: PRIMITIVE_TOL,
            report: grad_check(f, &point, H)?,
        });
    }
    out.extend(layers(&mut rng)?);
    out.push(SuiteEntry {
        name: "dial unroll (2 agents, 3 steps)",
        tol: UNROLL_TOL,
        report: dial_unroll()?,
    });
    Ok(out)
}

/// Fixed-width table of suite results.
pub fn suite_table(entries: &[SuiteEntry]) -> String {
    let mut out = format!("{:<34} {:>8} {:>12} {:>9}  result\n", "check", "coords", "max_rel_err", "tol");
    for e in entries {
        out.push_str(&format!(
            "{:<34} {:>8} {:>12.3e} {:>9.0e}  {}\n",
            e.name,
            e.report.coordinates,
            e.report.max_rel_error,
            e.tol,
            if e.passed() { "ok" } else { "FAIL" }
        ));
    }
    out
}
