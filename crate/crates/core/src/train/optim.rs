use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamKind};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, step counter and the EMA shadow weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: usize,
    pub ema: ModelParams,
}

impl OptimizerState {
    /// Zero moments; the EMA starts at the initial weights.
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            ema: params.clone(),
        }
    }

    /// `ema <- alpha * ema + (1 - alpha) * params`.
    pub fn update_ema(&mut self, params: &ModelParams, alpha: f64) {
        let src = params.to_flat();
        let mut at = 0;
        self.ema.visit_mut(&mut |_, t, _| {
            for v in t.data_mut() {
                *v = alpha * *v + (1.0 - alpha) * src[at];
                at += 1;
            }
        });
    }
}

/// One Adam step with bias correction and decoupled weight decay
/// `lr * weight_decay * theta` on the decaying parameter kinds.
pub fn adamw_step(params: &mut ModelParams, grads: &[Tensor], state: &mut OptimizerState, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} gradients for {} parameters", grads.len(), state.m.len()),
        ));
    }
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            detail: format!("non-finite gradient in {}", params.names()[bad]),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut i = 0;
    let mut shape_error = None;
    params.visit_mut(&mut |name, p, kind| {
        let g = &grads[i];
        if g.len() != p.len() {
            shape_error.get_or_insert(name);
            i += 1;
            return;
        }
        let decay = if ParamKind::decays(kind) { weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *w -= lr * (update + decay * *w);
        }
        i += 1;
    });
    match shape_error {
        Some(name) => Err(Error::shape("adamw_step", format!("gradient shape mismatch for {name}"))),
        None => Ok(()),
    }
}
