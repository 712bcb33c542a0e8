use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Heavy-ball SGD: `v ← μ·v + g`, `p ← p − η·v`. Frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(store: &ParamStore<S>, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<S>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<S>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity.iter().zip(&self.velocity).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::config("optimizer state does not match the parameter layout"));
        }
        self.velocity = velocity;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>]) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.velocity.len()
            )));
        }
        let mu = S::lit(self.momentum);
        let lr = S::lit(self.lr);
        let ids: Vec<_> = store.ids().collect();
        for (id, (g, v)) in ids.into_iter().zip(grads.iter().zip(&mut self.velocity)) {
            if !store.is_trainable(id) {
                continue;
            }
            let p = store.get_mut(id);
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = mu * *vi + *gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
