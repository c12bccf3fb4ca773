//! SGD and Adam with per-block state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{GradientSet, ParamBlock, ToyTransformer};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Optimizer state keyed by parameter block. Blocks that never receive a
/// gradient never get state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    state: [Option<Moments>; 8],
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            state: Default::default(),
        })
    }

    pub fn has_state(&self, block: ParamBlock) -> bool {
        self.state[block.index()].is_some()
    }

    pub fn step_block(&mut self, block: ParamBlock, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                left: param.shape(),
                right: grad.shape(),
            });
        }
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in param.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let n = grad.as_slice().len();
                let st = self.state[block.index()].get_or_insert_with(|| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    t: 0,
                });
                st.t += 1;
                let c1 = 1.0 - libm::pow(ADAM_BETA1, st.t as f64);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, st.t as f64);
                for (((p, g), m), v) in param
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(st.m.iter_mut())
                    .zip(st.v.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
                }
            }
        }
        Ok(())
    }

    /// Applies every gradient in `grads` to `model`. A gradient for a frozen
    /// `B` is an error rather than a silent no-op.
    pub fn step(&mut self, model: &mut ToyTransformer, grads: &GradientSet) -> Result<()> {
        if grads.get(ParamBlock::AdapterB).is_some()
            && model.attention.adapter.as_ref().is_some_and(|a| a.b_frozen())
        {
            return Err(Error::Config("gradient supplied for frozen adapter B".into()));
        }
        for (block, g) in grads.iter() {
            let p = model
                .param_mut(block)
                .ok_or_else(|| Error::Config(format!("model has no {} block", block.name())))?;
            self.step_block(block, p, g)?;
        }
        Ok(())
    }
}

/// One optimizer update of `model` from `grads`.
pub fn optimizer_step(model: &mut ToyTransformer, grads: &GradientSet, state: &mut Optimizer) -> Result<()> {
    state.step(model, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_unit_rate_on_self_gradient_zeroes() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25]]).unwrap();
        let g = p.clone();
        Optimizer::new(OptimizerKind::Sgd, 1.0)
            .unwrap()
            .step_block(ParamBlock::FfnW1, &mut p, &g)
            .unwrap();
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn adam_first_step_is_sign_times_rate() {
        let mut p = Matrix::zeros(1, 4);
        let g = Matrix::from_rows(&[[0.3, -2.0, 1e-3, -50.0]]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01).unwrap();
        opt.step_block(ParamBlock::OutProj, &mut p, &g).unwrap();
        for (x, gg) in p.as_slice().iter().zip(g.as_slice()) {
            assert!((x + 0.01 * gg.signum()).abs() < 1e-7, "{x}");
        }
        assert!(opt.has_state(ParamBlock::OutProj));
        assert!(!opt.has_state(ParamBlock::AdapterB));
    }

    #[test]
    fn sgd_solves_quadratic_bowl() {
        let curv = [0.5, 0.9, 1.2, 1.5];
        let target = [1.0, -3.0, 0.25, 7.0];
        let mut p = Matrix::zeros(1, 4);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.8).unwrap();
        for _ in 0..100 {
            let g = Matrix::from_fn(1, 4, |_, i| curv[i] * (p.get(0, i) - target[i])).unwrap();
            opt.step_block(ParamBlock::FfnW2, &mut p, &g).unwrap();
        }
        for i in 0..4 {
            assert!((p.get(0, i) - target[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_and_bad_rate() {
        let mut p = Matrix::zeros(2, 2);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1).unwrap();
        assert!(opt.step_block(ParamBlock::Embed, &mut p, &Matrix::zeros(1, 2)).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.0).is_err());
        assert!(Optimizer::new(OptimizerKind::Sgd, f64::NAN).is_err());
    }
}
