//! Multi-agent system configuration: TOML file format, validation, and the
//! cart-pole synchronization preset with LQR-designed gains.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller;
use crate::dynamics::{AgentId, AgentModel, CartPoleParams};
use crate::error::{Error, Result};
use crate::linalg::{self, MatrixSpec};
use crate::priority::Quantizer;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Weights of the synchronization LQR: `Σ xᵢᵀQ_self xᵢ + Σ_{i<j} (xᵢ−xⱼ)ᵀQ_sync(xᵢ−xⱼ) + Σ r uᵢ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncLqrWeights {
    pub q_self: Vec<f64>,
    pub q_sync: Vec<f64>,
    pub r: f64,
}

impl Default for SyncLqrWeights {
    fn default() -> Self {
        SyncLqrWeights {
            q_self: vec![1.0, 1.0, 0.0, 0.0],
            q_sync: vec![1000.0, 0.0, 0.0, 0.0],
            r: 0.1,
        }
    }
}

/// How a cart-pole system file was generated; informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub cart_pole: CartPoleParams,
    pub lqr: SyncLqrWeights,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CrossGainSpec {
    agent: AgentId,
    gain: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentSpec {
    id: AgentId,
    a: MatrixSpec,
    b: MatrixSpec,
    f_self: MatrixSpec,
    noise_cov: MatrixSpec,
    priority_weight: MatrixSpec,
    #[serde(default)]
    f_cross: Vec<CrossGainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SystemFile {
    format_version: u32,
    name: String,
    bandwidth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantization_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    build: Option<BuildInfo>,
    agents: Vec<AgentSpec>,
}

/// A validated multi-agent system: models, nominal bandwidth `M`, and the
/// priority quantization scale once calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub name: String,
    pub agents: Vec<AgentModel>,
    pub bandwidth: usize,
    pub quantization_scale: Option<f64>,
    pub build: Option<BuildInfo>,
}

impl System {
    pub fn new(name: impl Into<String>, agents: Vec<AgentModel>, bandwidth: usize) -> Result<Self> {
        let sys = System {
            name: name.into(),
            agents,
            bandwidth,
            quantization_scale: None,
            build: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::config("system has no agents"));
        }
        if self.bandwidth == 0 {
            return Err(Error::config("bandwidth M must be at least 1"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.id != AgentId::from_index(i) {
                return Err(Error::config(format!(
                    "agents must be listed with ids 1..=N in order; position {} has id {}",
                    i + 1,
                    a.id
                )));
            }
        }
        let dims: BTreeMap<AgentId, usize> = self.agents.iter().map(|a| (a.id, a.state_dim())).collect();
        for a in &self.agents {
            a.validate(&dims)?;
        }
        if let Some(s) = self.quantization_scale {
            Quantizer::new(s)?;
        }
        Ok(())
    }

    pub fn agent(&self, id: AgentId) -> Result<&AgentModel> {
        (id.0 >= 1)
            .then(|| self.agents.get(id.index()))
            .flatten()
            .ok_or_else(|| Error::config(format!("unknown agent id {id}")))
    }

    pub fn quantizer(&self) -> Result<Quantizer> {
        let scale = self
            .quantization_scale
            .ok_or_else(|| Error::config("system has no quantization scale; run calibration first"))?;
        Quantizer::new(scale)
    }

    pub fn closed_loop_spectral_radius(&self) -> f64 {
        controller::closed_loop_spectral_radius(&self.agents)
    }

    /// With `assume_stable`, refuses gains whose global closed loop has
    /// spectral radius ≥ 1; otherwise only logs a warning.
    pub fn check_stability(&self, assume_stable: bool) -> Result<f64> {
        let rho = self.closed_loop_spectral_radius();
        if rho >= 1.0 {
            if assume_stable {
                return Err(Error::config(format!(
                    "closed loop A+BF has spectral radius {rho:.6} ≥ 1"
                )));
            }
            log::warn!("closed loop A+BF has spectral radius {rho:.6} ≥ 1");
        }
        Ok(rho)
    }

    /// Digest of everything that shapes an agent's priority distribution.
    /// Agents with equal signatures share calibration samples.
    pub fn signature(&self, id: AgentId) -> Result<[u8; 16]> {
        let a = self.agent(id)?;
        let mut h = Sha256::new();
        for m in [&a.a, &a.b, &a.f_self, &a.noise_cov, &a.priority_weight] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        Ok(out)
    }

    /// Short hex digest of the serialized configuration.
    pub fn config_hash(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    fn to_file(&self) -> SystemFile {
        SystemFile {
            format_version: CONFIG_FORMAT_VERSION,
            name: self.name.clone(),
            bandwidth: self.bandwidth,
            quantization_scale: self.quantization_scale,
            build: self.build.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentSpec {
                    id: a.id,
                    a: (&a.a).into(),
                    b: (&a.b).into(),
                    f_self: (&a.f_self).into(),
                    noise_cov: (&a.noise_cov).into(),
                    priority_weight: (&a.priority_weight).into(),
                    f_cross: a
                        .f_cross
                        .iter()
                        .map(|(id, g)| CrossGainSpec { agent: *id, gain: g.into() })
                        .collect(),
                })
                .collect(),
        }
    }

    fn from_file(file: SystemFile) -> Result<Self> {
        if file.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported config format version {}",
                file.format_version
            )));
        }
        let mut agents = Vec::with_capacity(file.agents.len());
        for spec in file.agents {
            let ctx = |m: &str| format!("agent {} {m}", spec.id);
            let mut f_cross = BTreeMap::new();
            for c in &spec.f_cross {
                if f_cross.insert(c.agent, c.gain.to_matrix(&ctx("f_cross"))?).is_some() {
                    return Err(Error::config(format!("agent {} lists coupling to {} twice", spec.id, c.agent)));
                }
            }
            agents.push(AgentModel {
                id: spec.id,
                a: spec.a.to_matrix(&ctx("a"))?,
                b: spec.b.to_matrix(&ctx("b"))?,
                f_self: spec.f_self.to_matrix(&ctx("f_self"))?,
                f_cross,
                noise_cov: spec.noise_cov.to_matrix(&ctx("noise_cov"))?,
                priority_weight: spec.priority_weight.to_matrix(&ctx("priority_weight"))?,
            });
        }
        let sys = System {
            name: file.name,
            agents,
            bandwidth: file.bandwidth,
            quantization_scale: file.quantization_scale,
            build: file.build,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::config(format!("serializing system: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SystemFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SystemFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values))
}

/// Gains of the synchronization LQR for `n_agents` identical agents, as the
/// p×(N·n) row blocks `F_i` of the global gain `u = F x`.
pub fn synchronization_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n_agents: usize,
    weights: &SyncLqrWeights,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let p = b.ncols();
    if weights.q_self.len() != n || weights.q_sync.len() != n {
        return Err(Error::dim("LQR weight diagonals", n, weights.q_self.len().min(weights.q_sync.len())));
    }
    let big_n = n_agents;
    let mut ag = DMatrix::zeros(big_n * n, big_n * n);
    let mut bg = DMatrix::zeros(big_n * n, big_n * p);
    let q1 = diag(&weights.q_self);
    let q2 = diag(&weights.q_sync);
    let mut qg = DMatrix::zeros(big_n * n, big_n * n);
    for i in 0..big_n {
        ag.view_mut((i * n, i * n), (n, n)).copy_from(a);
        bg.view_mut((i * n, i * p), (n, p)).copy_from(b);
        for j in 0..big_n {
            let lap = if i == j { (big_n - 1) as f64 } else { -1.0 };
            let mut block = &q2 * lap;
            if i == j {
                block += &q1;
            }
            qg.view_mut((i * n, j * n), (n, n)).copy_from(&block);
        }
    }
    let rg = DMatrix::identity(big_n * p, big_n * p) * weights.r;
    linalg::dlqr_gain(&ag, &bg, &qg, &rg)
}

/// `n_agents` identical cart-poles, synchronized by the LQR design, with
/// isotropic process noise of the given variance.
pub fn cartpole_system(
    n_agents: usize,
    bandwidth: usize,
    params: CartPoleParams,
    weights: SyncLqrWeights,
    noise_variance: f64,
) -> Result<System> {
    if n_agents == 0 {
        return Err(Error::config("system has no agents"));
    }
    let (a, b) = params.discrete();
    let n = a.nrows();
    let p = b.ncols();
    let f = synchronization_gains(&a, &b, n_agents, &weights)?;
    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let f_self = f.view((i * p, i * n), (p, n)).into_owned();
        let f_cross = (0..n_agents)
            .filter(|&j| j != i)
            .map(|j| (AgentId::from_index(j), f.view((i * p, j * n), (p, n)).into_owned()))
            .collect();
        let mut model = AgentModel {
            id: AgentId::from_index(i),
            a: a.clone(),
            b: b.clone(),
            f_self,
            f_cross,
            noise_cov: DMatrix::identity(n, n) * noise_variance,
            priority_weight: DMatrix::zeros(n, n),
        };
        let w = model.quadratic_priority_weight();
        model.priority_weight = (&w + w.transpose()) * 0.5;
        agents.push(model);
    }
    // Identical agents must be bit-identical so they pool in calibration.
    let reference = agents[0].clone();
    for agent in agents.iter_mut().skip(1) {
        agent.f_self = reference.f_self.clone();
        agent.priority_weight = reference.priority_weight.clone();
        let cross = reference.f_cross.values().next().cloned();
        if let Some(c) = cross {
            for g in agent.f_cross.values_mut() {
                *g = c.clone();
            }
        }
    }
    let mut sys = System::new(format!("cartpole-n{n_agents}-m{bandwidth}"), agents, bandwidth)?;
    sys.build = Some(BuildInfo {
        cart_pole: params,
        lqr: weights,
        noise_variance,
    });
    Ok(sys)
}

/// The default desk-scale system: six cart-poles, two slots per round.
pub fn desk_system() -> Result<System> {
    cartpole_system(6, 2, CartPoleParams::default(), SyncLqrWeights::default(), 3e-4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Plain Riccati value iteration, independent of the doubling solver.
    fn riccati_iteration(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: f64) -> DMatrix<f64> {
        let rm = DMatrix::identity(b.ncols(), b.ncols()) * r;
        let mut p = q.clone();
        for _ in 0..200_000 {
            let s = &rm + b.transpose() * &p * b;
            let k = s.try_inverse().unwrap() * b.transpose() * &p * a;
            let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
            let done = (&next - &p).amax() < 1e-13 * next.amax();
            p = next;
            if done {
                break;
            }
        }
        let s = &rm + b.transpose() * &p * b;
        -(s.try_inverse().unwrap() * b.transpose() * &p * a)
    }

    #[test]
    fn global_gains_match_modal_decomposition() {
        // For identical agents the Laplacian cost splits into the consensus
        // mode (weight Q1) and N−1 disagreement modes (weight Q1 + N·Q2).
        let (a, b) = CartPoleParams::default().discrete();
        let w = SyncLqrWeights::default();
        let n_agents = 4;
        let f = synchronization_gains(&a, &b, n_agents, &w).unwrap();
        let q1 = diag(&w.q_self);
        let q2 = diag(&w.q_sync);
        let f0 = riccati_iteration(&a, &b, &q1, w.r);
        let f1 = riccati_iteration(&a, &b, &(&q1 + &q2 * n_agents as f64), w.r);
        let nf = n_agents as f64;
        let f_self = (&f0 + &f1 * (nf - 1.0)) / nf;
        let f_cross = (&f0 - &f1) / nf;
        for i in 0..n_agents {
            for j in 0..n_agents {
                let block = f.view((i, j * 4), (1, 4)).into_owned();
                let expected = if i == j { &f_self } else { &f_cross };
                assert_relative_eq!(block, expected.clone(), epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn desk_system_is_stable_and_round_trips() {
        let sys = desk_system().unwrap();
        assert_eq!(sys.n_agents(), 6);
        assert!(sys.closed_loop_spectral_radius() < 1.0);
        assert!(sys.check_stability(true).is_ok());
        let text = sys.to_toml().unwrap();
        let back = System::from_toml(&text).unwrap();
        assert_eq!(back, sys);
        assert_eq!(back.config_hash(), sys.config_hash());
        assert_eq!(sys.signature(AgentId(1)).unwrap(), sys.signature(AgentId(6)).unwrap());
    }

    #[test]
    fn unstable_gains_are_refused_when_stability_is_assumed() {
        let mut sys = desk_system().unwrap();
        for a in &mut sys.agents {
            a.f_self.fill(0.0);
            for g in a.f_cross.values_mut() {
                g.fill(0.0);
            }
        }
        assert!(sys.check_stability(true).is_err());
        assert!(sys.check_stability(false).is_ok());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let sys = desk_system().unwrap();
        let text = sys.to_toml().unwrap();
        assert!(System::from_toml(&text.replacen("format_version = 1", "format_version = 2", 1)).is_err());
        let mut bad = sys.clone();
        bad.agents.swap(0, 1);
        assert!(bad.validate().is_err());
        let mut bad = sys.clone();
        bad.agents[2].noise_cov[(0, 0)] = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = sys;
        bad.bandwidth = 0;
        assert!(bad.validate().is_err());
    }
}
