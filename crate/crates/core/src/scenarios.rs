//! Declarative fault and disturbance injection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::System;
use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::linalg::MatrixSpec;

/// Round at which the preset scenarios inject their event.
pub const DEFAULT_EVENT_ROUND: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mutation {
    /// Actuator failure: the plant input matrix of each listed agent becomes
    /// zero. Shared models and estimators keep the nominal `B`.
    SetInputZero { agents: Vec<AgentId> },
    /// Bandwidth change, effective from this round's selection on.
    SetBandwidth { m: usize },
    /// Extra zero-mean Gaussian plant noise for `duration` rounds.
    AddDisturbance {
        agent: AgentId,
        covariance: MatrixSpec,
        duration: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub k: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Whether the closed loop is expected to stay stable. Scenarios that
    /// break agents on purpose set this to false, which turns the gain
    /// stability check into a warning.
    #[serde(default = "default_true")]
    pub stability_assumed: bool,
    /// Agents the scenario breaks; used to split reports into faulty and
    /// healthy groups.
    #[serde(default)]
    pub faulty: Vec<AgentId>,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_true() -> bool {
    true
}

pub const PRESETS: [&str; 4] = ["fault-free", "actuator-failure", "bandwidth-loss", "shaken-pendulum"];

impl Scenario {
    pub fn fault_free() -> Self {
        Scenario {
            name: "fault-free".into(),
            stability_assumed: true,
            faulty: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn actuator_failure(agents: Vec<AgentId>, k: u64) -> Self {
        Scenario {
            name: "actuator-failure".into(),
            stability_assumed: false,
            faulty: agents.clone(),
            events: vec![Event {
                k,
                mutation: Mutation::SetInputZero { agents },
            }],
        }
    }

    pub fn bandwidth_loss(m: usize, k: u64) -> Self {
        Scenario {
            name: "bandwidth-loss".into(),
            stability_assumed: true,
            faulty: Vec::new(),
            events: vec![Event {
                k,
                mutation: Mutation::SetBandwidth { m },
            }],
        }
    }

    /// Wiggling the top of one pole: extra noise on the angle and angular
    /// velocity of a four-state cart-pole.
    pub fn shaken_pendulum(agent: AgentId, k: u64, variance: f64, duration: u64) -> Self {
        let mut data = vec![0.0; 16];
        data[5] = variance;
        data[15] = variance;
        Scenario {
            name: "shaken-pendulum".into(),
            stability_assumed: true,
            faulty: vec![agent],
            events: vec![Event {
                k,
                mutation: Mutation::AddDisturbance {
                    agent,
                    covariance: MatrixSpec { rows: 4, cols: 4, data },
                    duration,
                },
            }],
        }
    }

    /// Named preset sized for `system`. Actuator failure breaks agents 2–5
    /// on systems with at least ten agents and agent 2 alone on smaller ones.
    pub fn preset(name: &str, system: &System) -> Result<Self> {
        let n = system.n_agents();
        let s = match name {
            "fault-free" => Scenario::fault_free(),
            "actuator-failure" => {
                let agents = if n >= 10 { (2..=5).map(AgentId).collect() } else { vec![AgentId(2.min(n as u32))] };
                Scenario::actuator_failure(agents, DEFAULT_EVENT_ROUND)
            }
            "bandwidth-loss" => Scenario::bandwidth_loss(system.bandwidth.saturating_sub(1).max(1), DEFAULT_EVENT_ROUND),
            "shaken-pendulum" => Scenario::shaken_pendulum(AgentId(1), DEFAULT_EVENT_ROUND, 0.05, 20),
            other => {
                return Err(Error::config(format!(
                    "unknown scenario preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        s.validate(system)?;
        Ok(s)
    }

    /// Sorts events by round and checks every agent reference and
    /// dimension against `system`.
    pub fn validate(&self, system: &System) -> Result<()> {
        if self.events.windows(2).any(|w| w[0].k > w[1].k) {
            return Err(Error::config(format!("scenario {:?}: events are not sorted by round", self.name)));
        }
        let check = |id: AgentId| system.agent(id).map(|_| ());
        for id in &self.faulty {
            check(*id)?;
        }
        for ev in &self.events {
            match &ev.mutation {
                Mutation::SetInputZero { agents } => {
                    for id in agents {
                        check(*id)?;
                    }
                }
                Mutation::SetBandwidth { m } => {
                    if *m == 0 {
                        return Err(Error::config("bandwidth M must be at least 1"));
                    }
                }
                Mutation::AddDisturbance { agent, covariance, .. } => {
                    let n = system.agent(*agent)?.state_dim();
                    let cov = covariance.to_matrix("disturbance covariance")?;
                    if cov.nrows() != n || cov.ncols() != n {
                        return Err(Error::dim(
                            format!("disturbance covariance of agent {agent}"),
                            format!("{n}x{n}"),
                            format!("{}x{}", cov.nrows(), cov.ncols()),
                        ));
                    }
                    if !crate::linalg::is_psd(&cov) {
                        return Err(Error::config("disturbance covariance is not positive semidefinite"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Events scheduled at round `k`.
    pub fn events_at(&self, k: u64) -> impl Iterator<Item = &Mutation> {
        self.events.iter().filter(move |e| e.k == k).map(|e| &e.mutation)
    }

    /// First event round, if any.
    pub fn first_event(&self) -> Option<u64> {
        self.events.first().map(|e| e.k)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        s.events.sort_by_key(|e| e.k);
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing scenario: {e}")))
    }

    /// Loads a scenario file, or a preset when `name_or_path` names one.
    pub fn resolve(name_or_path: &str, system: &System) -> Result<Self> {
        if PRESETS.contains(&name_or_path) {
            return Scenario::preset(name_or_path, system);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s = Scenario::from_toml(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        s.validate(system)?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::desk_system;

    #[test]
    fn presets_validate_and_round_trip() {
        let sys = desk_system().unwrap();
        for name in PRESETS {
            let s = Scenario::preset(name, &sys).unwrap();
            let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
            assert_eq!(back, s, "{name}");
        }
        assert!(Scenario::preset("meteor-strike", &sys).is_err());
    }

    #[test]
    fn unknown_agents_are_config_errors() {
        let sys = desk_system().unwrap();
        let s = Scenario::actuator_failure(vec![AgentId(7)], 100);
        assert!(matches!(s.validate(&sys), Err(Error::Config(_))));
        let s = Scenario::shaken_pendulum(AgentId(0), 100, 1.0, 3);
        assert!(s.validate(&sys).is_err());
    }

    #[test]
    fn scenario_file_syntax() {
        let text = r#"
name = "custom"
stability_assumed = false

[[events]]
k = 120
kind = "set-bandwidth"
m = 1

[[events]]
k = 100
kind = "set-input-zero"
agents = [2, 3]
"#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.first_event(), Some(100));
        assert_eq!(s.events_at(120).collect::<Vec<_>>(), vec![&Mutation::SetBandwidth { m: 1 }]);
        assert!(!s.stability_assumed);
    }
}
