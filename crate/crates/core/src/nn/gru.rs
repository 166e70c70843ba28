use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bw = super::fan_in_bound(input_dim);
        let bu = super::fan_in_bound(hidden_dim);
        let w = |gate: &str, store: &mut ParamStore, rng: &mut R| -> Result<[ParamId; 3]> {
            Ok([
                store.add(
                    &format!("{name}/w_{gate}"),
                    Tensor::uniform(&[hidden_dim, input_dim], bw, rng),
                )?,
                store.add(
                    &format!("{name}/u_{gate}"),
                    Tensor::uniform(&[hidden_dim, hidden_dim], bu, rng),
                )?,
                store.add(
                    &format!("{name}/b_{gate}"),
                    Tensor::uniform(&[hidden_dim], bu, rng),
                )?,
            ])
        };
        let [w_z, u_z, b_z] = w("z", store, rng)?;
        let [w_r, u_r, b_r] = w("r", store, rng)?;
        let [w_h, u_h, b_h] = w("h", store, rng)?;
        Ok(GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input_dim,
            hidden_dim,
        })
    }

    fn gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        ids: [ParamId; 3],
    ) -> Result<Var> {
        let w = tape.param(store, ids[0]);
        let u = tape.param(store, ids[1]);
        let b = tape.param(store, ids[2]);
        let wx = tape.matmul_t(x, w)?;
        let uh = tape.matmul_t(h, u)?;
        let s = tape.add(wx, uh)?;
        tape.add_rowwise(s, b)
    }

    /// One step over a batch: `x` is `B × input_dim`, `h` is `B × hidden_dim`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (tape.shape(x).to_vec(), tape.shape(h).to_vec());
        if xs.len() != 2
            || hs.len() != 2
            || xs[1] != self.input_dim
            || hs[1] != self.hidden_dim
            || xs[0] != hs[0]
        {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                lhs: xs,
                rhs: hs,
            });
        }
        let z_pre = self.gate(tape, store, x, h, [self.w_z, self.u_z, self.b_z])?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.gate(tape, store, x, h, [self.w_r, self.u_r, self.b_r])?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let c_pre = self.gate(tape, store, x, rh, [self.w_h, self.u_h, self.b_h])?;
        let cand = tape.tanh(c_pre)?;
        // h' = h + z ⊙ (h̃ − h)
        let diff = tape.sub(cand, h)?;
        let zd = tape.mul(z, diff)?;
        tape.add(h, zd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_model};
    use crate::tape::logistic;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64, din: usize, dh: usize) -> (ParamStore, GruCell) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = GruCell::new(&mut store, "gru", din, dh, &mut rng).unwrap();
        (store, c)
    }

    fn run(store: &ParamStore, c: &GruCell, x: &Tensor, h: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let hv = tape.constant(h.clone()).unwrap();
        let out = c.step(&mut tape, store, xv, hv).unwrap();
        tape.value(out).clone()
    }

    /// Scalar-loop evaluation of the four GRU equations, independent of the tape.
    fn reference(store: &ParamStore, c: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let affine = |w: ParamId, u: ParamId, b: ParamId, hin: &[f64], i: usize| {
            let (w, u, b) = (store.get(w), store.get(u), store.get(b));
            let mut s = b.data()[i];
            for (k, xk) in x.iter().enumerate() {
                s += w.get2(i, k) * xk;
            }
            for (k, hk) in hin.iter().enumerate() {
                s += u.get2(i, k) * hk;
            }
            s
        };
        let n = c.hidden_dim;
        let z: Vec<f64> = (0..n).map(|i| logistic(affine(c.w_z, c.u_z, c.b_z, h, i))).collect();
        let r: Vec<f64> = (0..n).map(|i| logistic(affine(c.w_r, c.u_r, c.b_r, h, i))).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = (0..n).map(|i| affine(c.w_h, c.u_h, c.b_h, &rh, i).tanh()).collect();
        (0..n).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let (mut store, c) = cell(1, 3, 4);
        store.zero_all();
        let out = run(&store, &c, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 4]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_update_gate_holds_state() {
        let (mut store, c) = cell(2, 3, 4);
        store.set(c.b_z, Tensor::full(&[4], -50.0)).unwrap();
        let h = Tensor::matrix(1, 4, vec![0.3, -0.7, 0.9, 0.0]).unwrap();
        let x = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let out = run(&store, &c, &x, &h);
        for (a, b) in out.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let (store, c) = cell(3, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Tensor::uniform(&[3, 5], 2.0, &mut rng);
        let h = Tensor::uniform(&[3, 4], 0.9, &mut rng);
        let out = run(&store, &c, &x, &h);
        for b in 0..3 {
            let want = reference(&store, &c, x.row(b), h.row(b));
            for (got, want) in out.row(b).iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (store, c) = cell(4, 3, 4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        let h = tape.constant(Tensor::zeros(&[2, 4])).unwrap();
        assert!(c.step(&mut tape, &store, x, h).is_err());
    }

    #[test]
    fn single_step_gradient_check() {
        let (store, c) = cell(5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h = Tensor::uniform(&[2, 4], 0.8, &mut rng);
        let wrt_inputs = grad_check(
            |tape, v| {
                let out = c.step(tape, &store, v[0], v[1])?;
                let sq = tape.square(out)?;
                tape.sum(sq)
            },
            &[x.clone(), h.clone()],
            1e-5,
        )
        .unwrap();
        assert!(wrt_inputs.passed(1e-6), "inputs: {}", wrt_inputs.max_rel_error);

        let wrt_params = grad_check_model(
            &store,
            |tape, s| {
                let xv = tape.constant(x.clone())?;
                let hv = tape.constant(h.clone())?;
                let out = c.step(tape, s, xv, hv)?;
                let sq = tape.square(out)?;
                tape.sum(sq)
            },
            1e-5,
        )
        .unwrap();
        assert_eq!(wrt_params.coordinates, store.num_trainable_values());
        assert!(wrt_params.passed(1e-6), "params: {}", wrt_params.max_rel_error);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn hidden_state_stays_bounded(seed in 0u64..10_000, scale in 0.1f64..20.0, h0 in 0.0f64..3.0) {
            let (store, c) = cell(seed, 3, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut h = Tensor::uniform(&[2, 5], h0, &mut rng);
            let bound = 1.0 + h.max_abs();
            for _ in 0..12 {
                let x = Tensor::uniform(&[2, 3], scale, &mut rng);
                h = run(&store, &c, &x, &h);
                prop_assert!(h.max_abs() < bound);
            }
        }
    }
}
