use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const DEFAULT_LR: f64 = 1e-4;
pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, one buffer per parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(params: &dyn ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .slots()
            .iter()
            .map(|s| alloc::vec![0.0; s.data.len()])
            .collect();
        OptimState {
            v: zeros.clone(),
            m: zeros,
            step: 0,
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Bias-corrected Adam update of every slot.
pub fn adam_step(
    params: &mut dyn ParamSet,
    grads: &dyn ParamSet,
    state: &mut OptimState,
) -> Result<()> {
    adam_step_masked(params, grads, state, None)
}

/// As [`adam_step`], but slots with `trainable[i] == false` are left alone
/// (their moments stay at zero).
pub fn adam_step_masked(
    params: &mut dyn ParamSet,
    grads: &dyn ParamSet,
    state: &mut OptimState,
    trainable: Option<&[bool]>,
) -> Result<()> {
    let gslots = grads.slots();
    let lens: Vec<usize> = params.slots().iter().map(|s| s.data.len()).collect();
    let glens: Vec<usize> = gslots.iter().map(|s| s.data.len()).collect();
    let mlens: Vec<usize> = state.m.iter().map(Vec::len).collect();
    if lens != glens || lens != mlens {
        return Err(Error::contract(
            "adam_step",
            "parameter, gradient and moment layouts differ",
        ));
    }
    let mut offset = 0;
    for s in &gslots {
        if let Some(i) = s.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index: offset + i });
        }
        offset += s.data.len();
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (i, (p, g)) in params.slots_mut().into_iter().zip(&gslots).enumerate() {
        if trainable.is_some_and(|t| !t[i]) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] -= lr * mh / (libm::sqrt(vh) + eps);
        }
    }
    Ok(())
}
