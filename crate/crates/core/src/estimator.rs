//! Network-shared state extrapolates and the self-computed estimation error.
//!
//! Every agent runs the same extrapolation on the same inputs (schedule,
//! transmitted measurements, models), so one estimate per agent is stored
//! and shared by all observers.

use nalgebra::DVector;

use crate::controller;
use crate::dynamics::{AgentId, AgentModel, TrueState};
use crate::error::{Error, Result};

/// Shared extrapolate `x̂_ℓ(k)` of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEstimate {
    pub owner: AgentId,
    pub x_hat: DVector<f64>,
    pub k: u64,
}

/// The shared estimates of all agents at round `k`, indexed by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedEstimates {
    pub k: u64,
    pub x_hat: Vec<DVector<f64>>,
}

impl SharedEstimates {
    pub fn get(&self, id: AgentId) -> Option<RemoteEstimate> {
        self.x_hat.get(id.index()).map(|x| RemoteEstimate {
            owner: id,
            x_hat: x.clone(),
            k: self.k,
        })
    }
}

/// `e_ii(k) = x_i(k) − x̂_i(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationError {
    pub owner: AgentId,
    pub e: DVector<f64>,
    pub k: u64,
}

/// One-step extrapolation of agent `est.owner`'s shared estimate.
///
/// Without a message the closed-loop model is run from the old estimate,
/// `x̂' = A x̂ + B (F_self x̂ + Σ F_cross x̂_ℓ)`. With a message the same step is
/// taken from the received measurement `x(k)` instead, which accounts for the
/// one-round transmission delay.
pub fn propagate_estimate(
    model: &AgentModel,
    est: &RemoteEstimate,
    others: &SharedEstimates,
    received: Option<&TrueState>,
) -> Result<RemoteEstimate> {
    if est.owner != model.id {
        return Err(Error::Invariant(format!(
            "estimate of agent {} propagated with model of agent {}",
            est.owner, model.id
        )));
    }
    if others.k != est.k {
        return Err(Error::Invariant(format!(
            "estimate at round {} propagated with shared estimates of round {}",
            est.k, others.k
        )));
    }
    let n = model.state_dim();
    let base = match received {
        Some(meas) => {
            if meas.k != est.k {
                return Err(Error::Invariant(format!(
                    "measurement of round {} received at round {}",
                    meas.k, est.k
                )));
            }
            &meas.x
        }
        None => &est.x_hat,
    };
    if base.len() != n {
        return Err(Error::dim("propagate_estimate state", n, base.len()));
    }
    for (other, gain) in &model.f_cross {
        match others.x_hat.get(other.index()) {
            Some(x) if x.len() == gain.ncols() => {}
            Some(x) => return Err(Error::dim(format!("estimate of agent {other}"), gain.ncols(), x.len())),
            None => return Err(Error::config(format!("missing estimate of coupled agent {other}"))),
        }
    }
    let mut u = DVector::zeros(model.input_dim());
    let mut x_hat = DVector::zeros(n);
    closed_loop_step_into(model, base, &others.x_hat, &mut u, &mut x_hat);
    Ok(RemoteEstimate {
        owner: est.owner,
        x_hat,
        k: est.k + 1,
    })
}

/// `out = A x + B (F_self x + Σ F_cross x̂_ℓ)`, with the control written to `u`.
pub(crate) fn closed_loop_step_into(
    model: &AgentModel,
    x: &DVector<f64>,
    estimates: &[DVector<f64>],
    u: &mut DVector<f64>,
    out: &mut DVector<f64>,
) {
    controller::control_into(model, x, estimates, u);
    out.gemv(1.0, &model.a, x, 0.0);
    out.gemv(1.0, &model.b, u, 1.0);
}

/// Componentwise `x − x̂` at a common round.
pub fn compute_error(x: &TrueState, est: &RemoteEstimate) -> Result<EstimationError> {
    if x.k != est.k {
        return Err(Error::Invariant(format!(
            "error of agent {} computed from state at round {} and estimate at round {}",
            est.owner, x.k, est.k
        )));
    }
    if x.x.len() != est.x_hat.len() {
        return Err(Error::dim("compute_error", est.x_hat.len(), x.x.len()));
    }
    Ok(EstimationError {
        owner: est.owner,
        e: &x.x - &est.x_hat,
        k: x.k,
    })
}
