//! First-order update rules over a list of parameter tensors.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

/// Adam first/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn check_shapes(params: &[Matrix], others: &[Matrix], op: &'static str) -> Result<()> {
    if params.len() != others.len() {
        return Err(CoreError::shape(op, (params.len(), 0), (others.len(), 0)));
    }
    for (p, g) in params.iter().zip(others) {
        if !p.same_shape(g) {
            return Err(CoreError::shape(op, p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    check_shapes(params, grads, "adam_step")?;
    check_shapes(params, &state.m, "adam_step")?;
    check_shapes(params, &state.v, "adam_step")?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
    let c2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pi, &gi), (mi, vi)) in iter {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (libm::sqrt(vhat) + ADAM_EPS);
        }
    }
    Ok(())
}

/// Plain gradient descent: `p -= lr * g`.
pub fn sgd_step(params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    check_shapes(params, grads, "sgd_step")?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

/// Optimizer configuration plus its running state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, adam: None }
    }

    /// Clears accumulated moments (the learning rate and kind are kept).
    pub fn reset(&mut self) {
        self.adam = None;
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.lr),
            OptimizerKind::Adam => {
                let state = self.adam.get_or_insert_with(|| AdamState::for_params(params));
                adam_step(params, grads, state, self.lr)
            }
        }
    }
}
