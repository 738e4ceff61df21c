//! One simulation run: plants, shared estimates, errors, priorities and the
//! network, advanced one round at a time.
//!
//! A round `k` runs in this order:
//! 1. scenario events scheduled at `k` are applied;
//! 2. the winners selected at `k − 2` send their measurement `x(k)`;
//! 3. every agent computes its priority from `e(k)`;
//! 4. the top-`M` agents are selected for round `k + 2`;
//! 5. plants and the shared estimates advance to `k + 1`.
//!
//! The error is carried as `e(k+1) = (plant drift − model drift) + noise`,
//! so after a delivered message it equals the injected noise bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::System;
use crate::controller::control_into;
use crate::dynamics::{AgentId, AgentModel, NoiseSampler};
use crate::error::{Error, Result};
use crate::estimator::closed_loop_step_into;
use crate::network::{select_top_by, Network, ScheduleHistory};
use crate::priority::{quadratic_form, Quantizer};
use crate::rng::{stream, StreamPurpose};
use crate::scenarios::{Mutation, Scenario};

/// What the network ranks agents by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduling {
    /// 8-bit quantized priorities, as deployed.
    Quantized(Quantizer),
    /// Unquantized priorities. Used to calibrate the quantization scale
    /// itself; quantized priorities read as zero.
    Raw,
}

#[derive(Debug, Clone)]
struct Disturbance {
    sampler: NoiseSampler,
    until: u64,
}

#[derive(Debug, Clone)]
struct AgentStreams {
    noise: ChaCha8Rng,
    disturbance: ChaCha8Rng,
    loss: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct World {
    models: Vec<AgentModel>,
    plant_b: Vec<DMatrix<f64>>,
    samplers: Vec<NoiseSampler>,
    disturbances: Vec<Option<Disturbance>>,
    streams: Vec<AgentStreams>,
    scheduling: Scheduling,
    loss_probability: f64,
    network: Network,
    history: ScheduleHistory,
    scenario: Option<Scenario>,
    k: u64,

    x: Vec<DVector<f64>>,
    x_hat: Vec<DVector<f64>>,
    e: Vec<DVector<f64>>,
    last_noise: Vec<DVector<f64>>,

    raw: Vec<f64>,
    quantized: Vec<u8>,
    senders: Vec<AgentId>,
    delivered: Vec<bool>,
    selected: Vec<AgentId>,

    u: Vec<DVector<f64>>,
    u_model: Vec<DVector<f64>>,
    plant_drift: Vec<DVector<f64>>,
    model_drift: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    extra: Vec<DVector<f64>>,
    scratch: Vec<DVector<f64>>,
}

impl World {
    /// A fresh run with all states, estimates and errors at zero. Random
    /// streams are keyed by `(seed, run)`.
    pub fn new(system: &System, scheduling: Scheduling, seed: u64, run: u64) -> Result<Self> {
        system.validate()?;
        Self::with_retention(system, scheduling, seed, run, 64)
    }

    /// Like [`World::new`], with an explicit schedule-history retention.
    pub fn with_retention(
        system: &System,
        scheduling: Scheduling,
        seed: u64,
        run: u64,
        retention: usize,
    ) -> Result<Self> {
        let n_agents = system.n_agents();
        let models = system.agents.clone();
        let samplers = models
            .iter()
            .map(|m| NoiseSampler::new(&m.noise_cov))
            .collect::<Result<Vec<_>>>()?;
        let streams = (0..n_agents)
            .map(|i| AgentStreams {
                noise: stream(seed, run, i, StreamPurpose::ProcessNoise),
                disturbance: stream(seed, run, i, StreamPurpose::Disturbance),
                loss: stream(seed, run, i, StreamPurpose::MessageLoss),
            })
            .collect();
        let zeros = |f: &dyn Fn(&AgentModel) -> usize| -> Vec<DVector<f64>> {
            models.iter().map(|m| DVector::zeros(f(m))).collect()
        };
        let n = |m: &AgentModel| m.state_dim();
        let p = |m: &AgentModel| m.input_dim();
        Ok(World {
            plant_b: models.iter().map(|m| m.b.clone()).collect(),
            samplers,
            disturbances: vec![None; n_agents],
            streams,
            scheduling,
            loss_probability: 0.0,
            network: Network::new(n_agents, system.bandwidth)?,
            history: ScheduleHistory::new(n_agents, retention),
            scenario: None,
            k: 0,
            x: zeros(&n),
            x_hat: zeros(&n),
            e: zeros(&n),
            last_noise: zeros(&n),
            raw: vec![0.0; n_agents],
            quantized: vec![0; n_agents],
            senders: Vec::with_capacity(system.bandwidth),
            delivered: vec![false; n_agents],
            selected: Vec::with_capacity(system.bandwidth),
            u: zeros(&p),
            u_model: zeros(&p),
            plant_drift: zeros(&n),
            model_drift: zeros(&n),
            z: zeros(&n),
            extra: zeros(&n),
            scratch: zeros(&n),
            models,
        })
    }

    /// Installs a scenario whose events fire as their rounds come up.
    pub fn set_scenario(&mut self, scenario: Scenario) {
        self.scenario = Some(scenario);
    }

    /// i.i.d. probability that a scheduled message is lost. A lost message
    /// still occupies its slot and still counts as sent.
    pub fn set_loss_probability(&mut self, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("loss probability must lie in [0, 1], got {p}")));
        }
        self.loss_probability = p;
        Ok(())
    }

    pub fn apply(&mut self, mutation: &Mutation) -> Result<()> {
        let idx = |id: AgentId, n: usize| -> Result<usize> {
            if id.0 >= 1 && id.index() < n {
                Ok(id.index())
            } else {
                Err(Error::config(format!("unknown agent id {id}")))
            }
        };
        let n = self.models.len();
        match mutation {
            Mutation::SetInputZero { agents } => {
                for id in agents {
                    self.plant_b[idx(*id, n)?].fill(0.0);
                }
            }
            Mutation::SetBandwidth { m } => self.network.set_bandwidth(*m)?,
            Mutation::AddDisturbance {
                agent,
                covariance,
                duration,
            } => {
                let i = idx(*agent, n)?;
                let cov = covariance.to_matrix("disturbance covariance")?;
                if cov.nrows() != self.models[i].state_dim() {
                    return Err(Error::dim("disturbance covariance", self.models[i].state_dim(), cov.nrows()));
                }
                self.disturbances[i] = Some(Disturbance {
                    sampler: NoiseSampler::new(&cov)?,
                    until: self.k + duration,
                });
            }
        }
        Ok(())
    }

    /// Runs round `k` and advances to `k + 1`.
    pub fn step(&mut self) -> Result<()> {
        let k = self.k;
        if let Some(scenario) = self.scenario.take() {
            let res = scenario.events_at(k).try_for_each(|m| self.apply(m));
            self.scenario = Some(scenario);
            res?;
        }

        let senders = self.network.take_senders();
        self.history.push_round(&senders);
        self.delivered.fill(false);
        for s in &senders {
            let lost = self.loss_probability > 0.0 && self.streams[s.index()].loss.random::<f64>() < self.loss_probability;
            self.delivered[s.index()] = !lost;
        }
        self.senders = senders;

        for (i, m) in self.models.iter().enumerate() {
            self.raw[i] = quadratic_form(&m.priority_weight, &self.e[i], &mut self.scratch[i]);
        }
        let bandwidth = self.network.bandwidth();
        let n_agents = self.models.len();
        let winners = match self.scheduling {
            Scheduling::Quantized(q) => {
                for (g, r) in self.quantized.iter_mut().zip(&self.raw) {
                    *g = q.quantize(*r);
                }
                let g = &self.quantized;
                select_top_by(n_agents, bandwidth, |a, b| g[a].cmp(&g[b]))
            }
            Scheduling::Raw => {
                let r = &self.raw;
                select_top_by(n_agents, bandwidth, |a, b| r[a].total_cmp(&r[b]))
            }
        };
        self.selected.clone_from(&winners);
        self.network.enqueue(winners);

        for i in 0..n_agents {
            let m = &self.models[i];
            control_into(m, &self.x[i], &self.x_hat, &mut self.u[i]);
            let pd = &mut self.plant_drift[i];
            pd.gemv(1.0, &m.a, &self.x[i], 0.0);
            pd.gemv(1.0, &self.plant_b[i], &self.u[i], 1.0);
            let base = if self.delivered[i] { &self.x[i] } else { &self.x_hat[i] };
            closed_loop_step_into(m, base, &self.x_hat, &mut self.u_model[i], &mut self.model_drift[i]);
        }

        for i in 0..n_agents {
            let st = &mut self.streams[i];
            self.samplers[i].sample_into(&mut st.noise, &mut self.z[i], &mut self.last_noise[i]);
            if let Some(dist) = &self.disturbances[i] {
                if k < dist.until {
                    dist.sampler.sample_into(&mut st.disturbance, &mut self.z[i], &mut self.extra[i]);
                    self.last_noise[i] += &self.extra[i];
                }
            }
            let v = &self.last_noise[i];
            self.e[i].copy_from(&self.plant_drift[i]);
            self.e[i] -= &self.model_drift[i];
            self.e[i] += v;
            self.x[i].copy_from(&self.plant_drift[i]);
            self.x[i] += v;
            std::mem::swap(&mut self.x_hat[i], &mut self.model_drift[i]);
        }
        self.k = k + 1;
        Ok(())
    }

    /// Index of the next round to run; state accessors refer to this round.
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn n_agents(&self) -> usize {
        self.models.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.network.bandwidth()
    }

    pub fn history(&self) -> &ScheduleHistory {
        &self.history
    }

    pub fn state(&self, agent: AgentId) -> &DVector<f64> {
        &self.x[agent.index()]
    }

    pub fn estimate(&self, agent: AgentId) -> &DVector<f64> {
        &self.x_hat[agent.index()]
    }

    pub fn error(&self, agent: AgentId) -> &DVector<f64> {
        &self.e[agent.index()]
    }

    /// Noise (plus disturbance) injected into the plant in the last round.
    pub fn last_noise(&self, agent: AgentId) -> &DVector<f64> {
        &self.last_noise[agent.index()]
    }

    /// Raw priorities of the last round, by agent index.
    pub fn raw_priorities(&self) -> &[f64] {
        &self.raw
    }

    /// Quantized priorities of the last round, by agent index.
    pub fn quantized_priorities(&self) -> &[u8] {
        &self.quantized
    }

    /// Agents with `γ = 1` in the last round.
    pub fn senders(&self) -> &[AgentId] {
        &self.senders
    }

    /// Whether each agent's message reached the others in the last round.
    pub fn delivered(&self) -> &[bool] {
        &self.delivered
    }

    /// Winners selected in the last round, sending two rounds later.
    pub fn selected(&self) -> &[AgentId] {
        &self.selected
    }
}
