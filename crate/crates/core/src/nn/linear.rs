use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Affine map `y = x Wᵀ + b` over a batch of rows; `W` is `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = super::fan_in_bound(fan_in);
        let weight = store.add(
            &format!("{name}/weight"),
            Tensor::uniform(&[fan_out, fan_in], bound, rng),
        )?;
        let bias = store.add(
            &format!("{name}/bias"),
            Tensor::uniform(&[fan_out], bound, rng),
        )?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul_t(x, w)?;
        tape.add_rowwise(xw, b)
    }
}
