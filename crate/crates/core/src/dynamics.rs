//! Linear agent dynamics `x(k+1) = A x(k) + B u(k) + v(k)` and the Gaussian
//! process-noise source.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// One-based agent identifier, as used in config files, CSV output and the
/// scheduler's tie-break rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    /// Zero-based position in per-agent vectors.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn from_index(index: usize) -> Self {
        AgentId(index as u32 + 1)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Linear model of one agent together with its feedback gains, noise
/// covariance and priority weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub id: AgentId,
    /// n×n state matrix.
    pub a: DMatrix<f64>,
    /// n×p input matrix.
    pub b: DMatrix<f64>,
    /// p×n gain on the agent's own measured state.
    pub f_self: DMatrix<f64>,
    /// p×n_ℓ gains on the shared estimates of the coupled agents.
    pub f_cross: BTreeMap<AgentId, DMatrix<f64>>,
    /// n×n process-noise covariance.
    pub noise_cov: DMatrix<f64>,
    /// n×n weight of the quadratic priority.
    pub priority_weight: DMatrix<f64>,
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Error propagation matrix of the closed-loop extrapolation, `A + B F_self`.
    pub fn error_dynamics(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.f_self
    }

    /// `(Ãᵀ)² Ã²` for `Ã = A + B F_self`.
    pub fn quadratic_priority_weight(&self) -> DMatrix<f64> {
        let at = self.error_dynamics();
        let at2 = &at * &at;
        at2.transpose() * at2
    }

    /// Checks the internal dimensions and the PSD invariants. `state_dims` maps
    /// every agent of the system to its state dimension, for the cross gains.
    pub fn validate(&self, state_dims: &BTreeMap<AgentId, usize>) -> Result<()> {
        let ctx = |what: &str| format!("agent {} {what}", self.id);
        let n = self.a.nrows();
        if !self.a.is_square() {
            return Err(Error::dim(ctx("A"), format!("{n}x{n}"), shape(&self.a)));
        }
        if self.b.nrows() != n {
            return Err(Error::dim(ctx("B rows"), n, self.b.nrows()));
        }
        let p = self.b.ncols();
        if self.f_self.shape() != (p, n) {
            return Err(Error::dim(ctx("F_self"), format!("{p}x{n}"), shape(&self.f_self)));
        }
        for (other, gain) in &self.f_cross {
            let n_other = *state_dims
                .get(other)
                .ok_or_else(|| Error::config(format!("agent {} couples to unknown agent {other}", self.id)))?;
            if *other == self.id {
                return Err(Error::config(format!("agent {} lists itself in F_cross", self.id)));
            }
            if gain.shape() != (p, n_other) {
                return Err(Error::dim(
                    ctx(&format!("F_cross[{other}]")),
                    format!("{p}x{n_other}"),
                    shape(gain),
                ));
            }
        }
        for (name, m) in [("noise_cov", &self.noise_cov), ("priority_weight", &self.priority_weight)] {
            if m.shape() != (n, n) {
                return Err(Error::dim(ctx(name), format!("{n}x{n}"), shape(m)));
            }
            if !linalg::is_psd(m) {
                return Err(Error::config(format!(
                    "agent {} {name} is not symmetric positive semidefinite",
                    self.id
                )));
            }
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&self.a) && finite(&self.b) && finite(&self.f_self)) {
            return Err(Error::config(format!("agent {} has non-finite model entries", self.id)));
        }
        Ok(())
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// True state of one agent at round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl TrueState {
    pub fn zeros(n: usize) -> Self {
        TrueState {
            x: DVector::zeros(n),
            k: 0,
        }
    }
}

/// `x' = A x + B u + noise`, advancing the round counter by one.
pub fn step_agent(
    model: &AgentModel,
    state: &TrueState,
    u: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<TrueState> {
    let n = model.state_dim();
    if state.x.len() != n {
        return Err(Error::dim("step_agent state", n, state.x.len()));
    }
    if u.len() != model.input_dim() {
        return Err(Error::dim("step_agent input", model.input_dim(), u.len()));
    }
    if noise.len() != n {
        return Err(Error::dim("step_agent noise", n, noise.len()));
    }
    let x = &model.a * &state.x + &model.b * u + noise;
    Ok(TrueState { x, k: state.k + 1 })
}

/// Zero-mean Gaussian noise with a fixed covariance.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    factor: DMatrix<f64>,
    zero: bool,
}

impl NoiseSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !linalg::is_psd(cov) {
            return Err(Error::config("noise covariance is not positive semidefinite"));
        }
        let factor = linalg::psd_factor(cov);
        let zero = factor.iter().all(|v| *v == 0.0);
        Ok(NoiseSampler { factor, zero })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Writes one draw into `out`. The standard-normal draws are consumed even
    /// for a zero covariance so stream positions do not depend on it.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut DVector<f64>, out: &mut DVector<f64>) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        if self.zero {
            out.fill(0.0);
        } else {
            out.gemv(1.0, &self.factor, z, 0.0);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let mut z = DVector::zeros(n);
        let mut out = DVector::zeros(n);
        self.sample_into(rng, &mut z, &mut out);
        out
    }
}

/// One process-noise draw for `model`.
pub fn sample_noise<R: Rng + ?Sized>(model: &AgentModel, rng: &mut R) -> Result<DVector<f64>> {
    Ok(NoiseSampler::new(&model.noise_cov)?.sample(rng))
}

/// Physical parameters of the linearized cart-pole. State ordering is
/// `[cart position, pole angle, cart velocity, pole angular velocity]`,
/// input is the force on the cart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Full length of the (uniform) pole.
    pub pole_length: f64,
    pub gravity: f64,
    /// Sample time of one communication round.
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 0.57,
            pole_mass: 0.23,
            pole_length: 0.64,
            gravity: 9.81,
            dt: 0.1,
        }
    }
}

impl CartPoleParams {
    /// Continuous-time linearization about the upright equilibrium for a
    /// uniform rod (center of mass at half length, inertia m L²/12).
    pub fn continuous(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (mc, m, g) = (self.cart_mass, self.pole_mass, self.gravity);
        let l = self.pole_length / 2.0;
        let inertia = m * self.pole_length * self.pole_length / 12.0;
        let den = inertia * (mc + m) + mc * m * l * l;
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 1)] = -m * m * g * l * l / den;
        a[(3, 1)] = m * g * l * (mc + m) / den;
        let mut b = DMatrix::zeros(4, 1);
        b[(2, 0)] = (inertia + m * l * l) / den;
        b[(3, 0)] = -m * l / den;
        (a, b)
    }

    pub fn discrete(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (ac, bc) = self.continuous();
        linalg::zoh_discretize(&ac, &bc, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(a: DMatrix<f64>, b: DMatrix<f64>) -> AgentModel {
        let n = a.nrows();
        let p = b.ncols();
        AgentModel {
            id: AgentId(1),
            a,
            b,
            f_self: DMatrix::zeros(p, n),
            f_cross: BTreeMap::new(),
            noise_cov: DMatrix::zeros(n, n),
            priority_weight: DMatrix::identity(n, n),
        }
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identity_dynamics_keep_state() {
        let m = model(DMatrix::identity(2, 2), DMatrix::zeros(2, 2));
        let s = TrueState { x: v(&[1.0, 2.0]), k: 3 };
        let next = step_agent(&m, &s, &v(&[5.0, -7.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(next.x, v(&[1.0, 2.0]));
        assert_eq!(next.k, 4);
    }

    #[test]
    fn input_and_noise_superpose() {
        let m = model(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let s = TrueState::zeros(2);
        let next = step_agent(&m, &s, &v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(next.x, v(&[1.0, 1.0]));
    }

    #[test]
    fn cartpole_equilibrium_is_fixed_point() {
        let (a, b) = CartPoleParams::default().discrete();
        let m = model(a, b);
        let s = TrueState::zeros(4);
        let next = step_agent(&m, &s, &v(&[0.0]), &DVector::zeros(4)).unwrap();
        assert_eq!(next.x, DVector::zeros(4));
    }

    #[test]
    fn cartpole_is_open_loop_unstable() {
        let (a, _) = CartPoleParams::default().discrete();
        assert!(linalg::spectral_radius(&a) > 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = model(DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
        let s = TrueState::zeros(3);
        assert!(matches!(
            step_agent(&m, &s, &v(&[0.0]), &DVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
        let s = TrueState::zeros(2);
        assert!(step_agent(&m, &s, &v(&[0.0, 1.0]), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_noise() {
        let m = model(DMatrix::identity(4, 4), DMatrix::zeros(4, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_noise(&m, &mut rng).unwrap(), DVector::zeros(4));
        }
    }

    #[test]
    fn noise_covariance_matches_within_ten_percent() {
        let mut m = model(DMatrix::identity(4, 4), DMatrix::zeros(4, 1));
        m.noise_cov = DMatrix::identity(4, 4) * 3e-4;
        let sampler = NoiseSampler::new(&m.noise_cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = DVector::zeros(4);
        let mut sq = DVector::zeros(4);
        for _ in 0..n {
            let w = sampler.sample(&mut rng);
            sum += &w;
            sq += w.component_mul(&w);
        }
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!((var - 3e-4).abs() <= 0.1 * 3e-4, "component {i}: {var}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut m = model(DMatrix::identity(4, 4), DMatrix::zeros(4, 1));
        m.noise_cov = DMatrix::identity(4, 4) * 3e-4;
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .flat_map(|_| sample_noise(&m, &mut rng).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(NoiseSampler::new(&cov).is_err());
        let mut m = model(DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
        m.noise_cov = cov;
        let dims = BTreeMap::from([(AgentId(1), 2)]);
        assert!(m.validate(&dims).is_err());
    }
}
