//! Quadratic communication priorities and their 8-bit quantization.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AgentId, AgentModel};
use crate::error::{Error, Result};
use crate::estimator::EstimationError;

/// Delay between a priority round and the round in which its winners send.
pub const SCHEDULING_DELAY: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priority {
    pub agent: AgentId,
    pub raw: f64,
    pub quantized: u8,
    pub k: u64,
}

/// Linear floor-and-saturate map from raw priorities to `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    scale: f64,
}

impl Quantizer {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!("quantization scale must be positive, got {scale}")));
        }
        Ok(Quantizer { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn quantize(&self, raw: f64) -> u8 {
        quantize(raw, self.scale)
    }
}

/// `min(255, floor(raw / scale))`; negative or NaN input maps to 0.
#[inline]
pub fn quantize(raw: f64, scale: f64) -> u8 {
    let q = (raw / scale).floor();
    if q >= 255.0 {
        255
    } else if q >= 0.0 {
        q as u8
    } else {
        0
    }
}

#[inline]
pub(crate) fn quadratic_form(weight: &DMatrix<f64>, e: &DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
    scratch.gemv(1.0, weight, e, 0.0);
    e.dot(scratch).max(0.0)
}

/// `g = eᵀ W e` with the agent's priority weight `W`, plus its quantized value.
///
/// With the default weight `W = (Ãᵀ)²Ã²` this is the squared norm of the
/// error predicted two rounds ahead, `‖predict_error(e, 2)‖²`.
pub fn compute_priority(model: &AgentModel, e: &EstimationError, quantizer: &Quantizer) -> Result<Priority> {
    if e.e.len() != model.state_dim() {
        return Err(Error::dim("compute_priority error", model.state_dim(), e.e.len()));
    }
    let mut scratch = DVector::zeros(e.e.len());
    let raw = quadratic_form(&model.priority_weight, &e.e, &mut scratch);
    Ok(Priority {
        agent: e.owner,
        raw,
        quantized: quantizer.quantize(raw),
        k: e.k,
    })
}

/// Noise-free mean prediction `Ã^horizon e` of the estimation error, where
/// `Ã = A + B F_self` is the error propagation of the silent extrapolation.
/// The returned error keeps the round index of `e_now`.
pub fn predict_error(model: &AgentModel, e_now: &EstimationError, horizon: u32) -> Result<EstimationError> {
    if e_now.e.len() != model.state_dim() {
        return Err(Error::dim("predict_error", model.state_dim(), e_now.e.len()));
    }
    let at = model.error_dynamics();
    let mut e = e_now.e.clone();
    for _ in 0..horizon {
        e = &at * e;
    }
    Ok(EstimationError {
        owner: e_now.owner,
        e,
        k: e_now.k,
    })
}
