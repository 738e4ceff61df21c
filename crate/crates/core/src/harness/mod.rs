//! Monte Carlo experiment batches: per-timestep alarm probabilities,
//! interval false-positive rates, detection delays and state bands.

mod bench;
mod csv_io;

pub use bench::{bench_detectors, record_trace, synthetic_table, BenchReport, TimingStats, Trace};
pub use csv_io::{
    emit_alarm_probabilities, emit_records, emit_state_bands, emit_summary, parse_records, write_outputs, CsvMeta,
};

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::config::System;
use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::fd_dynamic::{DynamicDetectorState, ThresholdTable};
use crate::fd_static::StaticDetectorState;
use crate::scenarios::Scenario;
use crate::world::{Scheduling, World};

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    Static,
    Dynamic,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::Static, Detector::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Static => "sfd",
            Detector::Dynamic => "dfd",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Which runs keep their full per-round record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordPolicy {
    None,
    First(usize),
    All,
}

impl RecordPolicy {
    fn keeps(self, run: u64) -> bool {
        match self {
            RecordPolicy::None => false,
            RecordPolicy::First(n) => run < n as u64,
            RecordPolicy::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub runs: usize,
    pub run_length: usize,
    pub seed: u64,
    pub record: RecordPolicy,
    /// State components written to run records.
    pub record_components: Vec<usize>,
    /// Agent and state component whose mean ± one standard deviation band
    /// is reported.
    pub band_agent: AgentId,
    pub band_component: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            runs: 10_000,
            run_length: 300,
            seed: 2,
            record: RecordPolicy::None,
            record_components: vec![0, 1],
            band_agent: AgentId(1),
            band_component: 2,
        }
    }
}

/// Thresholds of both detectors for every agent of a system.
#[derive(Debug, Clone)]
pub struct DetectorSet {
    tables: Vec<ThresholdTable>,
    /// Table index per agent.
    table_of: Vec<usize>,
}

impl DetectorSet {
    /// Matches each agent to the table calibrated for its signature and
    /// checks every table against the system's quantization scale.
    pub fn new(system: &System, tables: Vec<ThresholdTable>) -> Result<Self> {
        let scale = system.quantizer()?.scale();
        let first = tables
            .first()
            .ok_or_else(|| Error::TableMismatch("no threshold tables given".into()))?
            .header
            .clone();
        for t in &tables {
            t.check_compatible(first.eta, first.d as usize, first.b as usize, scale)?;
            if t.header.n_agents as usize != system.n_agents() || t.header.bandwidth as usize != system.bandwidth {
                return Err(Error::TableMismatch(format!(
                    "table calibrated for N={}, M={} but system has N={}, M={}",
                    t.header.n_agents,
                    t.header.bandwidth,
                    system.n_agents(),
                    system.bandwidth
                )));
            }
        }
        let mut table_of = Vec::with_capacity(system.n_agents());
        for a in &system.agents {
            let sig = system.signature(a.id)?;
            let idx = tables.iter().position(|t| t.header.signature == sig).ok_or_else(|| {
                Error::TableMismatch(format!("no table matches the dynamics of agent {}", a.id))
            })?;
            table_of.push(idx);
        }
        Ok(DetectorSet { tables, table_of })
    }

    pub fn table(&self, agent: AgentId) -> &ThresholdTable {
        &self.tables[self.table_of[agent.index()]]
    }

    pub fn tables(&self) -> &[ThresholdTable] {
        &self.tables
    }

    pub fn d(&self) -> usize {
        self.tables[0].header.d as usize
    }

    pub fn b(&self) -> usize {
        self.tables[0].header.b as usize
    }
}

/// One round of one agent in a recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub k: u64,
    pub agent: AgentId,
    pub gamma: bool,
    pub priority: u8,
    pub sfd: bool,
    pub dfd: bool,
    /// Selected components of `x(k)`.
    pub states: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u64,
    pub seed: u64,
    pub components: Vec<usize>,
    /// Ordered by round, then agent.
    pub rows: Vec<RecordRow>,
}

/// Alarm counts, delays and diagnostics aggregated over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub runs: u64,
    pub run_length: usize,
    pub n_agents: usize,
    /// Event round of the scenario, if any.
    pub event_round: Option<u64>,
    pub faulty: Vec<AgentId>,
    /// `alarms[detector][k · N + agent index]`: runs alarming at round `k`.
    pub alarms: [Vec<u64>; 2],
    /// Rounds from the event to the first alarm, over runs and faulty
    /// agents, with the count of never-detected cases.
    pub delays: [BTreeMap<u64, u64>; 2],
    pub undetected: [u64; 2],
    /// `Σ_runs ‖e_i(k)‖²`, indexed `k · N + agent index`.
    pub error_energy: Vec<f64>,
    /// Sums of the band state component and its square, per round.
    pub band_sum: Vec<f64>,
    pub band_sum_sq: Vec<f64>,
}

impl AggregateReport {
    pub fn empty(n_agents: usize, run_length: usize, scenario: &Scenario) -> Self {
        let cells = n_agents * run_length;
        AggregateReport {
            runs: 0,
            run_length,
            n_agents,
            event_round: scenario.first_event(),
            faulty: scenario.faulty.clone(),
            alarms: [vec![0; cells], vec![0; cells]],
            delays: Default::default(),
            undetected: [0; 2],
            error_energy: vec![0.0; cells],
            band_sum: vec![0.0; run_length],
            band_sum_sq: vec![0.0; run_length],
        }
    }

    /// Fraction of runs alarming at round `k` for `agent`.
    pub fn alarm_probability(&self, det: Detector, agent: AgentId, k: usize) -> f64 {
        self.alarms[det.slot()][k * self.n_agents + agent.index()] as f64 / self.runs as f64
    }

    /// Mean over `agents` and rounds `ks` of the per-timestep alarm
    /// probability.
    pub fn interval_rate(&self, det: Detector, agents: &[AgentId], ks: RangeInclusive<usize>) -> f64 {
        let (mut sum, mut n) = (0u64, 0u64);
        for k in ks.filter(|&k| k < self.run_length) {
            for a in agents {
                sum += self.alarms[det.slot()][k * self.n_agents + a.index()];
                n += 1;
            }
        }
        sum as f64 / (n as f64 * self.runs as f64)
    }

    /// Largest per-timestep alarm probability among `agents` over `ks`.
    pub fn max_probability(&self, det: Detector, agents: &[AgentId], ks: RangeInclusive<usize>) -> f64 {
        ks.filter(|&k| k < self.run_length)
            .flat_map(|k| agents.iter().map(move |a| self.alarm_probability(det, *a, k)))
            .fold(0.0, f64::max)
    }

    pub fn mean_error_energy(&self, agent: AgentId, k: usize) -> f64 {
        self.error_energy[k * self.n_agents + agent.index()] / self.runs as f64
    }

    /// Mean and standard deviation of the band component at round `k`.
    pub fn band(&self, k: usize) -> (f64, f64) {
        let n = self.runs as f64;
        let mean = self.band_sum[k] / n;
        let var = (self.band_sum_sq[k] / n - mean * mean).max(0.0);
        (mean, var.sqrt())
    }

    pub fn healthy(&self) -> Vec<AgentId> {
        (0..self.n_agents)
            .map(AgentId::from_index)
            .filter(|a| !self.faulty.contains(a))
            .collect()
    }

    fn absorb(&mut self, run: &RunOutput) {
        self.runs += 1;
        for (slot, bits) in [1u8, 2].into_iter().enumerate() {
            for (c, flags) in self.alarms[slot].iter_mut().zip(&run.alarms) {
                *c += (flags & bits != 0) as u64;
            }
        }
        self.absorb_delays(&run.alarms);
        for (a, b) in self.error_energy.iter_mut().zip(&run.error_energy) {
            *a += b;
        }
        for (k, v) in run.band.iter().enumerate() {
            self.band_sum[k] += v;
            self.band_sum_sq[k] += v * v;
        }
    }

    fn absorb_delays(&mut self, alarms: &[u8]) {
        let Some(event) = self.event_round else { return };
        for a in &self.faulty {
            for (slot, bits) in [1u8, 2].into_iter().enumerate() {
                let first = (event as usize..self.run_length)
                    .find(|&k| alarms[k * self.n_agents + a.index()] & bits != 0);
                match first {
                    Some(k) => *self.delays[slot].entry(k as u64 - event).or_default() += 1,
                    None => self.undetected[slot] += 1,
                }
            }
        }
    }

    /// Alarm counts and delays rebuilt from full run records.
    pub fn from_records(records: &[RunRecord], n_agents: usize, run_length: usize, scenario: &Scenario) -> Result<Self> {
        let mut rep = AggregateReport::empty(n_agents, run_length, scenario);
        for rec in records {
            if rec.rows.len() != n_agents * run_length {
                return Err(Error::config(format!(
                    "run {} has {} rows, expected {}",
                    rec.run,
                    rec.rows.len(),
                    n_agents * run_length
                )));
            }
            let mut alarms = vec![0u8; n_agents * run_length];
            for row in &rec.rows {
                alarms[row.k as usize * n_agents + row.agent.index()] = row.sfd as u8 | (row.dfd as u8) << 1;
            }
            rep.runs += 1;
            for (slot, bits) in [1u8, 2].into_iter().enumerate() {
                for (c, flags) in rep.alarms[slot].iter_mut().zip(&alarms) {
                    *c += (flags & bits != 0) as u64;
                }
            }
            rep.absorb_delays(&alarms);
        }
        Ok(rep)
    }
}

struct RunOutput {
    alarms: Vec<u8>,
    error_energy: Vec<f64>,
    band: Vec<f64>,
    record: Option<RunRecord>,
}

fn simulate_run(
    system: &System,
    scenario: &Scenario,
    detectors: &DetectorSet,
    cfg: &BatchConfig,
    run: u64,
) -> Result<RunOutput> {
    let n = system.n_agents();
    let quantizer = system.quantizer()?;
    let mut world = World::new(system, Scheduling::Quantized(quantizer), cfg.seed, run)?;
    world.set_scenario(scenario.clone());
    let d = detectors.d();
    let mut sfd: Vec<StaticDetectorState> = system
        .agents
        .iter()
        .map(|a| StaticDetectorState::new(a.id, d, detectors.table(a.id).header.sfd_kappa))
        .collect();
    let mut dfd: Vec<DynamicDetectorState> =
        system.agents.iter().map(|a| DynamicDetectorState::new(a.id, d, detectors.b())).collect();
    let mut out = RunOutput {
        alarms: vec![0; n * cfg.run_length],
        error_energy: vec![0.0; n * cfg.run_length],
        band: vec![0.0; cfg.run_length],
        record: cfg.record.keeps(run).then(|| RunRecord {
            run,
            seed: cfg.seed,
            components: cfg.record_components.clone(),
            rows: Vec::with_capacity(n * cfg.run_length),
        }),
    };
    let mut gamma = vec![false; n];
    let mut states: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in 0..cfg.run_length {
        for (i, st) in states.iter_mut().enumerate() {
            let id = AgentId::from_index(i);
            out.error_energy[k * n + i] = world.error(id).norm_squared();
            if out.record.is_some() {
                let x = world.state(id);
                *st = cfg.record_components.iter().map(|&c| x[c]).collect();
            }
        }
        out.band[k] = world.state(cfg.band_agent)[cfg.band_component];
        world.step()?;
        gamma.fill(false);
        for s in world.senders() {
            gamma[s.index()] = true;
        }
        let g = world.quantized_priorities();
        for i in 0..n {
            let id = AgentId::from_index(i);
            let vs = sfd[i].update(g[i]).is_fault();
            let vd = dfd[i].update(gamma[i], g[i], detectors.table(id)).is_fault();
            out.alarms[k * n + i] = vs as u8 | (vd as u8) << 1;
            if let Some(rec) = &mut out.record {
                rec.rows.push(RecordRow {
                    k: k as u64,
                    agent: id,
                    gamma: gamma[i],
                    priority: g[i],
                    sfd: vs,
                    dfd: vd,
                    states: std::mem::take(&mut states[i]),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub report: AggregateReport,
    pub records: Vec<RunRecord>,
}

/// Runs `cfg.runs` independent simulations of `system` under `scenario`
/// with both detectors attached to every agent. Deterministic in
/// `(system, scenario, tables, cfg)` regardless of thread count.
pub fn run_batch(system: &System, scenario: &Scenario, detectors: &DetectorSet, cfg: &BatchConfig) -> Result<BatchOutput> {
    scenario.validate(system)?;
    system.check_stability(scenario.stability_assumed)?;
    let n = system.n_agents();
    if cfg.band_agent.0 == 0 || cfg.band_agent.index() >= n {
        return Err(Error::config(format!("band agent {} out of range", cfg.band_agent)));
    }
    let dim = system.agent(cfg.band_agent)?.state_dim();
    if cfg.band_component >= dim || cfg.record_components.iter().any(|&c| c >= dim) {
        return Err(Error::config(format!("state component out of range (state dimension {dim})")));
    }
    let mut report = AggregateReport::empty(n, cfg.run_length, scenario);
    let mut records = Vec::new();
    let runs: Vec<u64> = (0..cfg.runs as u64).collect();
    for chunk in runs.chunks(CHUNK) {
        let outs = chunk
            .par_iter()
            .map(|&run| simulate_run(system, scenario, detectors, cfg, run))
            .collect::<Result<Vec<_>>>()?;
        for mut o in outs {
            report.absorb(&o);
            if let Some(r) = o.record.take() {
                records.push(r);
            }
        }
    }
    Ok(BatchOutput { report, records })
}
