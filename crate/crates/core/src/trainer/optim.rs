use crate::diffcore::{GradientSet, Params};
use crate::error::{Error, Result};

use super::config::{OptimizerConfig, OptimizerKind};

/// Adam or plain SGD, with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|(_, t)| vec![0.0; t.len()]).collect();
        let (m, v) = match cfg.kind {
            OptimizerKind::Adam => (zeros.clone(), zeros),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { cfg, t: 0, m, v }
    }

    pub fn restore(cfg: OptimizerConfig, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Self {
        Self { cfg, t, m, v }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut Params, grad: &GradientSet) -> Result<()> {
        if grad.params.len() != params.tensors().count() {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        self.t += 1;
        let c = &self.cfg;
        let (bc1, bc2) = (1.0 - c.beta1.powi(self.t as i32), 1.0 - c.beta2.powi(self.t as i32));
        for (i, (_, tensor)) in params.tensors_mut().enumerate() {
            let g = &grad.params[i];
            for (k, w) in tensor.data.iter_mut().enumerate() {
                let gk = g[k] + c.weight_decay * *w;
                match c.kind {
                    OptimizerKind::Sgd => *w -= c.lr * gk,
                    OptimizerKind::Adam => {
                        let m = &mut self.m[i][k];
                        let v = &mut self.v[i][k];
                        *m = c.beta1 * *m + (1.0 - c.beta1) * gk;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * gk * gk;
                        *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
