//! Synchronizing state feedback `u_i = F_ii x_i + Σ_ℓ F_iℓ x̂_ℓ`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AgentModel, TrueState};
use crate::error::{Error, Result};
use crate::estimator::SharedEstimates;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub u: DVector<f64>,
    pub k: u64,
}

/// Control input from the agent's own measurement and the shared estimates of
/// every coupled agent.
pub fn control(model: &AgentModel, x_self: &TrueState, estimates: &SharedEstimates) -> Result<ControlInput> {
    if x_self.x.len() != model.state_dim() {
        return Err(Error::dim("control state", model.state_dim(), x_self.x.len()));
    }
    if estimates.k != x_self.k {
        return Err(Error::Invariant(format!(
            "control at round {} with estimates of round {}",
            x_self.k, estimates.k
        )));
    }
    for (other, gain) in &model.f_cross {
        let est = estimates
            .x_hat
            .get(other.index())
            .ok_or_else(|| Error::config(format!("agent {} has no estimate for coupled agent {other}", model.id)))?;
        if est.len() != gain.ncols() {
            return Err(Error::dim(format!("estimate of agent {other}"), gain.ncols(), est.len()));
        }
    }
    let mut u = DVector::zeros(model.input_dim());
    control_into(model, &x_self.x, &estimates.x_hat, &mut u);
    Ok(ControlInput { u, k: x_self.k })
}

/// Unchecked variant writing into `out`. Both the plant and every estimator
/// go through this function so identical arguments give identical bits.
pub(crate) fn control_into(
    model: &AgentModel,
    x_self: &DVector<f64>,
    estimates: &[DVector<f64>],
    out: &mut DVector<f64>,
) {
    out.gemv(1.0, &model.f_self, x_self, 0.0);
    for (other, gain) in &model.f_cross {
        out.gemv(1.0, gain, &estimates[other.index()], 1.0);
    }
}

/// Block matrices `(A, B, F)` of the stacked multi-agent system. Agents are
/// stacked in id order.
pub fn assemble_global(models: &[AgentModel]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n_off: Vec<usize> = models
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.state_dim();
            Some(o)
        })
        .collect();
    let p_off: Vec<usize> = models
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.input_dim();
            Some(o)
        })
        .collect();
    let n: usize = models.iter().map(|m| m.state_dim()).sum();
    let p: usize = models.iter().map(|m| m.input_dim()).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, p);
    let mut f = DMatrix::zeros(p, n);
    for (i, m) in models.iter().enumerate() {
        let (ni, pi) = (m.state_dim(), m.input_dim());
        a.view_mut((n_off[i], n_off[i]), (ni, ni)).copy_from(&m.a);
        b.view_mut((n_off[i], p_off[i]), (ni, pi)).copy_from(&m.b);
        f.view_mut((p_off[i], n_off[i]), (pi, ni)).copy_from(&m.f_self);
        for (other, gain) in &m.f_cross {
            let j = other.index();
            f.view_mut((p_off[i], n_off[j]), gain.shape()).copy_from(gain);
        }
    }
    (a, b, f)
}

/// Spectral radius of the global closed loop `A + B F`.
pub fn closed_loop_spectral_radius(models: &[AgentModel]) -> f64 {
    let (a, b, f) = assemble_global(models);
    linalg::spectral_radius(&(a + b * f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AgentId;

    fn agent(id: u32, f_self: DMatrix<f64>, cross: &[(u32, DMatrix<f64>)]) -> AgentModel {
        let n = f_self.ncols();
        AgentModel {
            id: AgentId(id),
            a: DMatrix::identity(n, n),
            b: DMatrix::identity(n, f_self.nrows()),
            f_self,
            f_cross: cross.iter().map(|(i, g)| (AgentId(*i), g.clone())).collect(),
            noise_cov: DMatrix::zeros(n, n),
            priority_weight: DMatrix::identity(n, n),
        }
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn zero_gains_give_zero_input() {
        let m = agent(1, DMatrix::zeros(2, 2), &[(2, DMatrix::zeros(2, 2))]);
        let est = SharedEstimates { k: 0, x_hat: vec![v(&[1.0, 1.0]), v(&[3.0, 4.0])] };
        let u = control(&m, &TrueState { x: v(&[5.0, 6.0]), k: 0 }, &est).unwrap();
        assert_eq!(u.u, v(&[0.0, 0.0]));
    }

    #[test]
    fn negative_identity_gain() {
        let m = agent(1, -DMatrix::identity(2, 2), &[]);
        let est = SharedEstimates { k: 0, x_hat: vec![v(&[0.0, 0.0])] };
        let u = control(&m, &TrueState { x: v(&[2.0, -1.0]), k: 0 }, &est).unwrap();
        assert_eq!(u.u, v(&[-2.0, 1.0]));
    }

    #[test]
    fn missing_estimate_is_config_error() {
        let m = agent(1, DMatrix::zeros(1, 1), &[(3, DMatrix::zeros(1, 1))]);
        let est = SharedEstimates { k: 0, x_hat: vec![v(&[0.0]), v(&[0.0])] };
        assert!(matches!(control(&m, &TrueState { x: v(&[0.0]), k: 0 }, &est), Err(Error::Config(_))));
    }

    #[test]
    fn round_mismatch_is_invariant_error() {
        let m = agent(1, DMatrix::zeros(1, 1), &[]);
        let est = SharedEstimates { k: 2, x_hat: vec![v(&[0.0])] };
        assert!(matches!(control(&m, &TrueState { x: v(&[0.0]), k: 1 }, &est), Err(Error::Invariant(_))));
    }

    #[test]
    fn global_assembly_places_blocks() {
        let a1 = agent(1, DMatrix::from_element(1, 1, -0.5), &[(2, DMatrix::from_element(1, 1, 0.25))]);
        let a2 = agent(2, DMatrix::from_element(1, 1, -0.5), &[(1, DMatrix::from_element(1, 1, 0.25))]);
        let (a, b, f) = assemble_global(&[a1, a2]);
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(b, DMatrix::identity(2, 2));
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[-0.5, 0.25, 0.25, -0.5]));
        let rho = closed_loop_spectral_radius(&[
            agent(1, DMatrix::from_element(1, 1, -0.5), &[(2, DMatrix::from_element(1, 1, 0.25))]),
            agent(2, DMatrix::from_element(1, 1, -0.5), &[(1, DMatrix::from_element(1, 1, 0.25))]),
        ]);
        // eigenvalues of I + F are 0.75 and 0.25
        assert!((rho - 0.75).abs() < 1e-12);
    }
}
