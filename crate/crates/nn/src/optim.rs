//! Adam with bias correction over a `ParamStore`.

use crate::matrix::Matrix;
use crate::tape::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Adam {
        let m = (0..store.len())
            .map(|i| Matrix::zeros(store.value(i).rows, store.value(i).cols))
            .collect();
        let v = (0..store.len())
            .map(|i| Matrix::zeros(store.value(i).rows, store.value(i).cols))
            .collect();
        Adam {
            config,
            m,
            v,
            t: 0,
        }
    }

    /// Apply one update from the store's accumulated gradients, then leave
    /// the gradients untouched (caller zeroes them per step).
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let g = store.grad(i).data.clone();
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            let p = &mut store.value_mut(i).data;
            for j in 0..g.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}
