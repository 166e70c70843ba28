use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const INIT_BOUND: f64 = 0.08;

/// Lookup table of `vocab` rows of width `dim`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add(
            &format!("{name}/table"),
            Tensor::uniform(&[vocab, dim], INIT_BOUND, rng),
        )?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, indices: &[usize]) -> Result<Var> {
        let table = tape.param(store, self.table);
        tape.gather(table, indices)
    }
}
