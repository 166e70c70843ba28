use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradient, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Smoothing of the squared-gradient average.
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 5e-4,
            decay: 0.95,
            eps: 1e-8,
        }
    }
}

/// RMSProp without a heavy-ball term:
///
/// ```text
/// acc ← decay·acc + (1 − decay)·g²
/// p   ← p − lr · g / (√acc + eps)
/// ```
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    acc: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, config: RmsPropConfig) -> Self {
        RmsProp {
            config,
            acc: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.acc
    }

    pub fn set_accumulators(&mut self, acc: Vec<Tensor>) -> Result<()> {
        if acc.len() != self.acc.len()
            || acc.iter().zip(&self.acc).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        self.acc = acc;
        Ok(())
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter or accumulator is touched.
    pub fn step(&mut self, store: &mut ParamStore, grad: &Gradient) -> Result<()> {
        if grad.len() != store.len() {
            return Err(Error::invalid("gradient does not match parameter store"));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient (optimizer step aborted)".into()));
        }
        let RmsPropConfig { lr, decay, eps } = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grad.get(id);
            let acc = &mut self.acc[id.index()];
            let p = store.get_mut(id);
            for ((pv, av), gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *av = decay * *av + (1.0 - decay) * gv * gv;
                *pv -= lr * gv / (av.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tape::Tape;
    use proptest::prelude::*;

    fn single(value: f64) -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![value])).unwrap();
        (store, id)
    }

    fn grad_of(store: &ParamStore, g: f64) -> Gradient {
        // Build a gradient through the tape: loss = g·p.
        let mut tape = Tape::new();
        let id = store.ids().next().unwrap();
        let p = tape.param(store, id);
        let loss = tape.weighted_sum(p, Tensor::vector(vec![g])).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut out = Gradient::zeros_like(store);
        out.accumulate(&tape, &grads).unwrap();
        out
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = single(0.42);
        let mut opt = RmsProp::new(&store, RmsPropConfig::default());
        let g = grad_of(&store, 0.0);
        opt.step(&mut store, &g).unwrap();
        assert_eq!(store.get(id).item(), 0.42);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let (mut store, id) = single(0.0);
        let mut opt = RmsProp::new(&store, RmsPropConfig::default());
        let g = grad_of(&store, 1.0);
        opt.step(&mut store, &g).unwrap();
        let expected = -5e-4 / (0.05f64.sqrt() + 1e-8);
        assert!((store.get(id).item() - expected).abs() < 1e-18);
    }

    #[test]
    fn repeated_steps_shrink() {
        let (mut store, id) = single(0.0);
        let mut opt = RmsProp::new(&store, RmsPropConfig::default());
        let g = grad_of(&store, 1.0);
        opt.step(&mut store, &g).unwrap();
        let d1 = store.get(id).item().abs();
        let before = store.get(id).item();
        opt.step(&mut store, &g).unwrap();
        let d2 = (store.get(id).item() - before).abs();
        assert!(d2 < d1);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut store, id) = single(1.0);
        let mut opt = RmsProp::new(&store, RmsPropConfig::default());
        let mut g = grad_of(&store, 1.0);
        g.scale(f64::NAN);
        assert!(opt.step(&mut store, &g).is_err());
        assert_eq!(store.get(id).item(), 1.0);
        assert_eq!(opt.accumulators()[0].item(), 0.0);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0])).unwrap();
        let buf = store.add_buffer("stat", Tensor::vector(vec![5.0])).unwrap();
        let mut opt = RmsProp::new(&store, RmsPropConfig::default());
        let g = Gradient::zeros_like(&store);
        opt.step(&mut store, &g).unwrap();
        assert_eq!(store.get(buf).item(), 5.0);
    }

    proptest! {
        #[test]
        fn step_opposes_gradient(g in -100.0f64..100.0, warm in 0usize..4) {
            prop_assume!(g.abs() > 1e-6);
            let (mut store, id) = single(0.0);
            let mut opt = RmsProp::new(&store, RmsPropConfig::default());
            let grad = grad_of(&store, g);
            for _ in 0..warm {
                opt.step(&mut store, &grad).unwrap();
            }
            let before = store.get(id).item();
            opt.step(&mut store, &grad).unwrap();
            let delta = store.get(id).item() - before;
            prop_assert!(delta * g < 0.0);
            prop_assert!(opt.accumulators()[0].item() >= 0.0);
        }
    }
}
