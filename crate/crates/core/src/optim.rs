//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients accumulated on `vars` (bound
    /// from `store` in the same order). Parameters that received no gradient
    /// are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, g: &Graph, vars: &[Var]) -> Result<()> {
        if vars.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Parameter(format!(
                "optimizer tracks {} tensors, store has {}, {} bound",
                self.m.len(),
                store.len(),
                vars.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (tensor, &var)) in store.tensors_mut().iter_mut().zip(vars).enumerate() {
            let Some(grad) = g.grad(var) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let gj = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
