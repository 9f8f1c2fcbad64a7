//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::tensor::{Gradients, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let m: Vec<Matrix> = store
            .iter()
            .map(|(_, _, w)| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update of every parameter that received a gradient. Parameters
    /// absent from `grads` are left untouched, weight decay included.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        binding: &Binding,
        grads: &Gradients,
    ) -> Result<()> {
        let updates: Vec<_> = binding
            .iter()
            .filter_map(|(id, x)| grads.wrt(x).map(|g| (id, g)))
            .collect();
        self.apply(store, updates.into_iter())
    }

    /// Update from explicit `(parameter, gradient)` pairs.
    pub fn apply<'g>(
        &mut self,
        store: &mut ParamStore,
        updates: impl Iterator<Item = (crate::params::ParamId, &'g Matrix)>,
    ) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store holds {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in updates {
            let i = id.index();
            let theta = store.get_mut(id);
            if g.shape() != theta.shape() {
                return Err(Error::shape("adam_step", theta.shape(), g.shape()));
            }
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (((t, &g), m), v) in theta
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * m_hat / (v_hat.sqrt() + eps) + lr * weight_decay * *t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn scalar_store(theta: f64) -> (ParamStore, crate::params::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("theta", Matrix::scalar(theta));
        (store, id)
    }

    #[test]
    fn first_step_closed_form() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let g = Matrix::scalar(1.0);
        opt.apply(&mut store, std::iter::once((id, &g))).unwrap();
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((store.get(id).get(0, 0) - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = scalar_store(0.7);
        let mut opt = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let g = Matrix::scalar(0.0);
        for _ in 0..3 {
            opt.apply(&mut store, std::iter::once((id, &g))).unwrap();
        }
        assert_eq!(store.get(id).get(0, 0), 0.7);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient_signal() {
        let (mut store, id) = scalar_store(2.0);
        let mut opt = AdamState::new(
            &store,
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..AdamConfig::default()
            },
        );
        let g = Matrix::scalar(0.0);
        opt.apply(&mut store, std::iter::once((id, &g))).unwrap();
        assert!((store.get(id).get(0, 0) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn descends_on_square() {
        let (mut store, id) = scalar_store(1.0);
        let mut opt = AdamState::new(&store, AdamConfig::default());
        let mut prev = 1.0;
        for _ in 0..10 {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let sq = tape.mul(&p[id], &p[id]).unwrap();
            let loss = tape.sum(&sq);
            let grads = tape.backward(&loss).unwrap();
            opt.step(&mut store, &p, &grads).unwrap();
            let f = store.get(id).get(0, 0).powi(2);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (mut store, id) = scalar_store(1.0);
        let mut opt = AdamState::new(&store, AdamConfig::default());
        let g = Matrix::zeros(2, 1);
        assert!(matches!(
            opt.apply(&mut store, std::iter::once((id, &g))),
            Err(Error::Shape { .. })
        ));
    }
}
