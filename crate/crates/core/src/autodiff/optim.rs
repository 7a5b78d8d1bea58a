use super::params::{Gradients, ParameterStore};
use super::tensor::Real;
use crate::error::{MossError, Result};

fn check_finite<T: Real>(store: &ParameterStore<T>, grads: &Gradients<T>) -> Result<()> {
    for (id, name, _) in store.iter() {
        if grads.get(id).iter().any(|v| !v.is_finite()) {
            return Err(MossError::Training(format!(
                "non-finite gradient in parameter `{name}`"
            )));
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd { lr }
    }

    pub fn step<T: Real>(
        &mut self,
        store: &mut ParameterStore<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        check_finite(store, grads)?;
        let lr = T::of(self.lr);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            for (p, &gv) in store.get_mut(id).data_mut().iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
        grads.clear();
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step<T: Real>(
        &mut self,
        store: &mut ParameterStore<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        check_finite(store, grads)?;
        if self.m.len() != store.len() {
            self.m = (0..store.len())
                .map(|i| vec![0.0; grads.slots[i].len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                let gk = g[k].as_f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                *p -= T::of(update);
            }
        }
        grads.clear();
        Ok(())
    }
}
