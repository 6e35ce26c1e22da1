use serde::{Deserialize, Serialize};

use crate::model::{ModelGrads, ModelParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd_momentum() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam()
    }
}

/// First-order optimizer over every tensor of a [`ModelParams`], in
/// manifest order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        Self::for_tensors(kind, lr, params.tensors())
    }

    pub fn for_tensors<'a>(kind: OptimizerKind, lr: f64, tensors: impl Iterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = tensors.map(|t| vec![0.0; t.len()]).collect();
        Optimizer {
            kind,
            lr,
            step: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) {
        self.step_tensors(params.tensors_mut(), grads.tensors());
    }

    /// Updates `params` in place; both iterators must follow the order
    /// the optimizer was created with.
    pub fn step_tensors<'a, 'b>(
        &mut self,
        params: impl Iterator<Item = &'a mut Tensor>,
        grads: impl Iterator<Item = &'b Tensor>,
    ) {
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    for ((pv, &gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *vel = momentum * *vel + gv;
                        *pv -= self.lr * *vel;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
