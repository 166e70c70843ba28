use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize by the batch's own statistics.
    Train,
    /// Normalize by the running statistics.
    Eval,
}

/// Per-feature batch statistics produced by a train-mode forward pass. They
/// are folded into the running estimates later, at the optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(&format!("{name}/gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.add(&format!("{name}/beta"), Tensor::zeros(&[dim]))?,
            running_mean: store.add_buffer(&format!("{name}/running_mean"), Tensor::zeros(&[dim]))?,
            running_var: store.add_buffer(&format!("{name}/running_var"), Tensor::full(&[dim], 1.0))?,
            dim,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        })
    }

    /// Normalizes `x` (`B × dim`) and applies the learned scale and shift.
    /// Train mode also returns the batch statistics it used.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (rows, cols) = match tape.shape(x) {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "batchnorm",
                    lhs: s.to_vec(),
                    rhs: vec![self.dim],
                })
            }
        };
        if cols != self.dim {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                lhs: vec![rows, cols],
                rhs: vec![self.dim],
            });
        }
        let (normalized, stats) = match mode {
            NormMode::Train => {
                if rows < 2 {
                    return Err(Error::invalid(
                        "train-mode batch norm needs at least two rows",
                    ));
                }
                let inv_n = 1.0 / rows as f64;
                let total = tape.sum_rows(x)?;
                let mean = tape.scale(total, inv_n)?;
                let mean_b = tape.repeat_rows(mean, rows)?;
                let centered = tape.sub(x, mean_b)?;
                let sq = tape.square(centered)?;
                let sq_total = tape.sum_rows(sq)?;
                let var = tape.scale(sq_total, inv_n)?;
                let var_eps = tape.add_scalar(var, self.eps)?;
                let inv_std = tape.rsqrt(var_eps)?;
                let inv_std_b = tape.repeat_rows(inv_std, rows)?;
                let out = tape.mul(centered, inv_std_b)?;
                let stats = BatchStats {
                    mean: tape.value(mean).data().to_vec(),
                    var: tape.value(var).data().to_vec(),
                };
                (out, Some(stats))
            }
            NormMode::Eval => {
                let mean = store.get(self.running_mean).clone();
                let inv_std = store
                    .get(self.running_var)
                    .map(|v| 1.0 / (v + self.eps).sqrt());
                let mean = tape.constant(mean)?;
                let mean_b = tape.repeat_rows(mean, rows)?;
                let centered = tape.sub(x, mean_b)?;
                let inv_std = tape.constant(inv_std)?;
                let inv_std_b = tape.repeat_rows(inv_std, rows)?;
                (tape.mul(centered, inv_std_b)?, None)
            }
        };
        let gamma = tape.param(store, self.gamma);
        let gamma_b = tape.repeat_rows(gamma, rows)?;
        let scaled = tape.mul(normalized, gamma_b)?;
        let beta = tape.param(store, self.beta);
        Ok((tape.add_rowwise(scaled, beta)?, stats))
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats) -> Result<()> {
        if stats.mean.len() != self.dim || stats.var.len() != self.dim {
            return Err(Error::invalid("batch statistics do not match layer width"));
        }
        let m = self.momentum;
        let mean = store.get_mut(self.running_mean);
        for (r, b) in mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let var = store.get_mut(self.running_var);
        for (r, b) in var.data_mut().iter_mut().zip(&stats.var) {
            *r = ((1.0 - m) * *r + m * b).max(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(dim: usize) -> (ParamStore, BatchNorm) {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", dim).unwrap();
        (store, bn)
    }

    fn forward(store: &ParamStore, bn: &BatchNorm, x: Tensor, mode: NormMode) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x).unwrap();
        let (y, _) = bn.forward(&mut tape, store, xv, mode).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_column_maps_to_beta() {
        let (mut store, bn) = layer(2);
        store.set(bn.beta, Tensor::vector(vec![0.7, -0.2])).unwrap();
        let x = Tensor::matrix(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let y = forward(&store, &bn, x, NormMode::Train);
        for r in 0..3 {
            assert!((y.get2(r, 0) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_standardizes() {
        let (store, bn) = layer(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(&[16, 3], 4.0, &mut rng);
        let y = forward(&store, &bn, x, NormMode::Train);
        for c in 0..3 {
            let col: Vec<f64> = (0..16).map(|r| y.get2(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let (mut store, mut bn) = layer(1);
        bn.eps = 1e-12;
        store.set(bn.running_mean, Tensor::vector(vec![2.0])).unwrap();
        store.set(bn.running_var, Tensor::vector(vec![4.0])).unwrap();
        let y = forward(&store, &bn, Tensor::matrix(1, 1, vec![4.0]).unwrap(), NormMode::Eval);
        assert!((y.item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_row_train_rejected() {
        let (store, bn) = layer(2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(bn.forward(&mut tape, &store, x, NormMode::Train).is_err());
    }

    #[test]
    fn running_update_follows_momentum() {
        let (mut store, bn) = layer(1);
        let stats = BatchStats {
            mean: vec![1.0],
            var: vec![3.0],
        };
        bn.update_running(&mut store, &stats).unwrap();
        assert!((store.get(bn.running_mean).item() - 0.1).abs() < 1e-15);
        assert!((store.get(bn.running_var).item() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, bn) = layer(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        store.set(bn.gamma, Tensor::uniform(&[3], 1.5, &mut rng)).unwrap();
        store.set(bn.beta, Tensor::uniform(&[3], 1.0, &mut rng)).unwrap();
        store.set(bn.running_mean, Tensor::vector(vec![0.2, -0.1, 0.4])).unwrap();
        store.set(bn.running_var, Tensor::vector(vec![0.5, 2.0, 1.3])).unwrap();
        let x = Tensor::uniform(&[5, 3], 2.0, &mut rng);
        let w = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        for mode in [NormMode::Train, NormMode::Eval] {
            let wrt_x = grad_check(
                |tape, v| {
                    let (y, _) = bn.forward(tape, &store, v[0], mode)?;
                    let t = tape.tanh(y)?;
                    tape.weighted_sum(t, w.clone())
                },
                &[x.clone()],
                1e-5,
            )
            .unwrap();
            assert!(wrt_x.passed(1e-6), "{mode:?} x: {}", wrt_x.max_rel_error);
            let wrt_p = grad_check_model(
                &store,
                |tape, s| {
                    let xv = tape.constant(x.clone())?;
                    let (y, _) = bn.forward(tape, s, xv, mode)?;
                    let t = tape.tanh(y)?;
                    tape.weighted_sum(t, w.clone())
                },
                1e-5,
            )
            .unwrap();
            assert!(wrt_p.passed(1e-6), "{mode:?} params: {}", wrt_p.max_rel_error);
        }
    }
}
