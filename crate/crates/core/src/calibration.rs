//! Monte Carlo calibration of the quantization scale, the static threshold
//! and the dynamic threshold table from fault-free runs.
//!
//! Percentiles use the nearest-rank rule: the `100(1−p)`th percentile of `n`
//! samples is the sample of rank `⌈(1−p)·n⌉` (1-indexed) in ascending order.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::config::System;
use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::fd_dynamic::{DynamicDetectorState, TableHeader, ThresholdTable};
use crate::fd_static::StaticDetectorState;
use crate::priority::Quantizer;
use crate::world::{Scheduling, World};

/// Raw-priority percentile that the quantization scale maps to level 199.
pub const SCALE_PERCENTILE: f64 = 0.999;
pub const SCALE_LEVEL: f64 = 199.0;
const SCALE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub eta: f64,
    pub d: usize,
    pub b: usize,
    pub runs: usize,
    pub run_length: usize,
    pub seed: u64,
    pub warmup_discard: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            eta: 0.01,
            d: 10,
            b: 40,
            runs: 2000,
            run_length: 300,
            seed: 1,
            warmup_discard: 50,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.d == 0 || self.b == 0 || self.runs == 0 {
            return Err(Error::config("d, b and runs must all be at least 1"));
        }
        if self.run_length <= self.warmup_discard {
            return Err(Error::config(format!(
                "run length {} leaves nothing after the {}-round warm-up discard",
                self.run_length, self.warmup_discard
            )));
        }
        Ok(())
    }
}

/// 1-indexed nearest rank of the `100(1−p)`th percentile of `n` samples.
pub fn nearest_rank(n: u64, p: f64) -> u64 {
    // ⌈(1−p)n⌉ = n − ⌊p·n⌋; the tolerance absorbs representation error in p.
    let drop = (p * n as f64 + 1e-9).floor() as u64;
    n.saturating_sub(drop).max(1)
}

/// Nearest-rank `100(1−p)`th percentile of unsorted samples.
pub fn percentile<T: Copy + PartialOrd>(samples: &mut [T], p: f64) -> Option<T> {
    if samples.is_empty() {
        return None;
    }
    let rank = nearest_rank(samples.len() as u64, p) as usize;
    let (_, v, _) = samples.select_nth_unstable_by(rank - 1, |a, b| a.partial_cmp(b).expect("NaN sample"));
    Some(*v)
}

/// Counts of nonnegative integer samples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn add(&mut self, value: u32) {
        let v = value as usize;
        if v >= self.counts.len() {
            self.counts.resize(v + 1, 0);
        }
        self.counts[v] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, value: u32) -> u64 {
        self.counts.get(value as usize).copied().unwrap_or(0)
    }

    /// Nearest-rank `100(1−p)`th percentile.
    pub fn percentile(&self, p: f64) -> Option<u32> {
        if self.total == 0 {
            return None;
        }
        let rank = nearest_rank(self.total, p);
        let mut cum = 0;
        for (v, c) in self.counts.iter().enumerate() {
            cum += c;
            if cum >= rank {
                return Some(v as u32);
            }
        }
        unreachable!("rank within total")
    }
}

/// Period signature `(T1, T2, a)` of dynamic-detector samples.
pub type CellKey = (u32, u32, u8);

/// Origin of one calibration sample, kept only when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOrigin {
    pub run: u64,
    pub k: u64,
    pub agent: AgentId,
    /// `None` for a static-window sum.
    pub cell: Option<CellKey>,
    pub sum: u32,
}

/// Fault-free window sums and period sums pooled over runs, rounds and
/// agents with the same signature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBank {
    pub window: Histogram,
    pub cells: BTreeMap<CellKey, Histogram>,
    pub trace: Option<Vec<SampleOrigin>>,
}

impl SampleBank {
    pub fn with_trace() -> Self {
        SampleBank {
            trace: Some(Vec::new()),
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: SampleBank) {
        self.window.merge(&other.window);
        for (key, h) in &other.cells {
            self.cells.entry(*key).or_default().merge(h);
        }
        if let (Some(mine), Some(theirs)) = (&mut self.trace, other.trace) {
            mine.extend(theirs);
        }
    }

    pub fn period_samples(&self) -> u64 {
        self.cells.values().map(Histogram::total).sum()
    }
}

/// Per-agent sample collector fed one round at a time.
#[derive(Debug, Clone)]
pub struct TraceObserver {
    agent: AgentId,
    b: usize,
    warmup_discard: u64,
    sfd: StaticDetectorState,
    dfd: DynamicDetectorState,
}

impl TraceObserver {
    pub fn new(agent: AgentId, cfg: &CalibrationConfig) -> Self {
        TraceObserver {
            agent,
            b: cfg.b,
            warmup_discard: cfg.warmup_discard as u64,
            sfd: StaticDetectorState::new(agent, cfg.d, f64::INFINITY),
            dfd: DynamicDetectorState::new(agent, cfg.d, cfg.b),
        }
    }

    /// Records round `k` and adds its window sum and every period sum with
    /// `T2 ≤ b` to `bank`, once past the warm-up discard.
    pub fn observe(&mut self, bank: &mut SampleBank, run: u64, k: u64, gamma: bool, g: u8) {
        self.sfd.update(g);
        self.dfd.observe(gamma, g);
        if k < self.warmup_discard || !self.sfd.is_warm() {
            return;
        }
        let sum = self.sfd.window_sum();
        bank.window.add(sum);
        let agent = self.agent;
        let mut origins = bank.trace.take();
        if let Some(t) = &mut origins {
            t.push(SampleOrigin { run, k, agent, cell: None, sum });
        }
        let b = self.b as u32;
        let cells = &mut bank.cells;
        self.dfd.visit_periods(self.b, |p, s, _| {
            if p.t2 > b {
                return;
            }
            let key = (p.t1, p.t2, p.is_last as u8);
            cells.entry(key).or_default().add(s);
            if let Some(t) = &mut origins {
                t.push(SampleOrigin { run, k, agent, cell: Some(key), sum: s });
            }
        });
        bank.trace = origins;
    }
}

/// Agents grouped by signature, in ascending signature order.
pub fn signature_groups(system: &System) -> Result<Vec<([u8; 16], Vec<AgentId>)>> {
    let mut groups: BTreeMap<[u8; 16], Vec<AgentId>> = BTreeMap::new();
    for a in &system.agents {
        groups.entry(system.signature(a.id)?).or_default().push(a.id);
    }
    Ok(groups.into_iter().collect())
}

fn run_fault_free(
    system: &System,
    cfg: &CalibrationConfig,
    quantizer: Quantizer,
    groups: &[([u8; 16], Vec<AgentId>)],
    run: u64,
) -> Result<Vec<SampleBank>> {
    let mut world = World::new(system, Scheduling::Quantized(quantizer), cfg.seed, run)?;
    let mut observers: Vec<TraceObserver> = system.agents.iter().map(|a| TraceObserver::new(a.id, cfg)).collect();
    let mut group_of = vec![0; system.n_agents()];
    for (gi, (_, agents)) in groups.iter().enumerate() {
        for a in agents {
            group_of[a.index()] = gi;
        }
    }
    let mut banks = vec![SampleBank::default(); groups.len()];
    let mut gamma = vec![false; system.n_agents()];
    for k in 0..cfg.run_length as u64 {
        world.step()?;
        gamma.fill(false);
        for s in world.senders() {
            gamma[s.index()] = true;
        }
        let g = world.quantized_priorities();
        for (i, obs) in observers.iter_mut().enumerate() {
            obs.observe(&mut banks[group_of[i]], run, k, gamma[i], g[i]);
        }
    }
    Ok(banks)
}

/// Fault-free sample banks, one per signature group, from `cfg.runs`
/// independent runs.
pub fn collect_samples(system: &System, cfg: &CalibrationConfig, quantizer: Quantizer) -> Result<Vec<SampleBank>> {
    cfg.validate()?;
    system.check_stability(true)?;
    let groups = signature_groups(system)?;
    let empty = || vec![SampleBank::default(); groups.len()];
    (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| run_fault_free(system, cfg, quantizer, &groups, run))
        .try_reduce(empty, |mut acc, banks| {
            for (a, b) in acc.iter_mut().zip(banks) {
                a.merge(b);
            }
            Ok(acc)
        })
}

/// Nearest-rank `100(1−η)`th percentile of the pooled window sums.
pub fn sfd_threshold(bank: &SampleBank, eta: f64) -> Result<f64> {
    let need = (100.0 / eta).ceil() as usize;
    let have = bank.window.total() as usize;
    if have < need {
        return Err(Error::InsufficientSamples { have, need });
    }
    Ok(bank.window.percentile(eta).expect("nonempty") as f64)
}

/// Threshold table from pooled period sums: for each `H`, the
/// `100(1−η/H)`th percentile of the cell's samples, or `+∞` when the cell
/// has fewer than `20·H/η` samples.
pub fn dfd_table(bank: &SampleBank, header: TableHeader) -> ThresholdTable {
    let eta = header.eta;
    let d = header.d as usize;
    let mut table = ThresholdTable::filled(header, f32::INFINITY);
    let mut starved = 0usize;
    for (&(t1, t2, a), hist) in &bank.cells {
        for h in 1..=d {
            let need = 20.0 * h as f64 / eta;
            if (hist.total() as f64) < need {
                starved += 1;
                continue;
            }
            let kappa = hist.percentile(eta / h as f64).expect("nonempty");
            table.set(t1, t2, h, a as usize, kappa as f32).expect("cell within table bounds");
        }
    }
    if starved > 0 {
        log::warn!("{starved} observed (T1, T2, H, a) cells have too few samples and stay at +inf");
    }
    table
}

/// Static threshold for a system from fresh fault-free runs.
pub fn calibrate_sfd(system: &System, cfg: &CalibrationConfig, quantizer: Quantizer) -> Result<Vec<f64>> {
    collect_samples(system, cfg, quantizer)?
        .iter()
        .map(|bank| sfd_threshold(bank, cfg.eta))
        .collect()
}

/// Dynamic threshold tables for a system from fresh fault-free runs, one per
/// signature group.
pub fn calibrate_dfd(system: &System, cfg: &CalibrationConfig, quantizer: Quantizer) -> Result<Vec<ThresholdTable>> {
    Ok(calibrate_with(system, cfg, quantizer)?.groups.into_iter().map(|g| g.table).collect())
}

/// Quantization scale placing the 99.9th percentile of fault-free raw
/// priorities at level 199. The network ranks raw priorities during this
/// pass since no scale exists yet.
pub fn calibrate_scale(system: &System, cfg: &CalibrationConfig) -> Result<f64> {
    cfg.validate()?;
    system.check_stability(true)?;
    let seed = cfg.seed ^ SCALE_SEED_SALT;
    let per_run: Vec<Vec<f64>> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| -> Result<Vec<f64>> {
            let mut world = World::new(system, Scheduling::Raw, seed, run)?;
            let mut out = Vec::with_capacity((cfg.run_length - cfg.warmup_discard) * system.n_agents());
            for k in 0..cfg.run_length {
                world.step()?;
                if k >= cfg.warmup_discard {
                    out.extend_from_slice(world.raw_priorities());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<f64> = per_run.into_iter().flatten().collect();
    let p = percentile(&mut all, 1.0 - SCALE_PERCENTILE).ok_or(Error::InsufficientSamples { have: 0, need: 1 })?;
    if p.is_nan() || p <= 0.0 {
        return Err(Error::config("fault-free raw priorities are all zero; cannot derive a quantization scale"));
    }
    Ok(p / SCALE_LEVEL)
}

/// Thresholds for one group of identical agents.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedGroup {
    pub signature: [u8; 16],
    pub agents: Vec<AgentId>,
    pub bank: SampleBank,
    pub table: ThresholdTable,
}

impl CalibratedGroup {
    pub fn sfd_kappa(&self) -> f64 {
        self.table.header.sfd_kappa
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scale: f64,
    pub groups: Vec<CalibratedGroup>,
}

impl Calibration {
    pub fn table_for(&self, agent: AgentId) -> Option<&ThresholdTable> {
        self.groups.iter().find(|g| g.agents.contains(&agent)).map(|g| &g.table)
    }
}

/// Static and dynamic thresholds for a fixed quantizer.
pub fn calibrate_with(system: &System, cfg: &CalibrationConfig, quantizer: Quantizer) -> Result<Calibration> {
    let banks = collect_samples(system, cfg, quantizer)?;
    let groups = signature_groups(system)?;
    let mut out = Vec::with_capacity(groups.len());
    for ((signature, agents), bank) in groups.into_iter().zip(banks) {
        let sfd_kappa = sfd_threshold(&bank, cfg.eta)?;
        let header = TableHeader {
            eta: cfg.eta,
            d: cfg.d as u32,
            b: cfg.b as u32,
            bandwidth: system.bandwidth as u32,
            n_agents: system.n_agents() as u32,
            scale: quantizer.scale(),
            seed: cfg.seed,
            sample_count: bank.window.total(),
            sfd_kappa,
            signature,
        };
        log::info!(
            "group of {} agents: {} window sums, {} period sums, sFD kappa {}",
            agents.len(),
            bank.window.total(),
            bank.period_samples(),
            sfd_kappa
        );
        let table = dfd_table(&bank, header);
        out.push(CalibratedGroup {
            signature,
            agents,
            bank,
            table,
        });
    }
    Ok(Calibration {
        scale: quantizer.scale(),
        groups: out,
    })
}

/// Full calibration: the quantization scale from the system file if set,
/// else from a raw-priority pass, then both detectors' thresholds.
pub fn calibrate(system: &System, cfg: &CalibrationConfig) -> Result<Calibration> {
    let scale = match system.quantization_scale {
        Some(s) => s,
        None => calibrate_scale(system, cfg)?,
    };
    calibrate_with(system, cfg, Quantizer::new(scale)?)
}

/// Cell coverage report: per observed `(T1, T2, a)` the sample count, the
/// largest `H` with enough samples for a finite threshold, and `κ(H = 1)`.
pub fn write_coverage_report(group: &CalibratedGroup, out: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::io("coverage report", e);
    let h = &group.table.header;
    writeln!(
        out,
        "# signature={} eta={} d={} b={} window_samples={} sfd_kappa={}",
        hex::encode(group.signature),
        h.eta,
        h.d,
        h.b,
        group.bank.window.total(),
        h.sfd_kappa
    )
    .map_err(io)?;
    let mut w = csv::WriterBuilder::new().delimiter(b';').from_writer(out);
    let csv_err = |e: csv::Error| Error::config(format!("writing coverage report: {e}"));
    w.write_record(["t1", "t2", "a", "samples", "max_h", "kappa_h1"]).map_err(csv_err)?;
    for (&(t1, t2, a), hist) in &group.bank.cells {
        let max_h = (1..=h.d as usize)
            .filter(|&hh| hist.total() as f64 >= 20.0 * hh as f64 / h.eta)
            .max()
            .unwrap_or(0);
        let k1 = group.table.lookup(t1, t2, 1, a as usize).unwrap_or(f64::INFINITY);
        w.write_record([
            t1.to_string(),
            t2.to_string(),
            a.to_string(),
            hist.total().to_string(),
            max_h.to_string(),
            k1.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_of_one_to_thousand() {
        let mut xs: Vec<u32> = (1..=1000).rev().collect();
        assert_eq!(percentile(&mut xs, 0.01), Some(990));
        let mut h = Histogram::default();
        for x in 1..=1000 {
            h.add(x);
        }
        assert_eq!(h.percentile(0.01), Some(990));
        assert_eq!(h.percentile(0.0), Some(1000));
        assert_eq!(h.percentile(0.999_999), Some(1));
    }

    #[test]
    fn degenerate_distribution_gives_its_value() {
        let mut h = Histogram::default();
        for _ in 0..10_000 {
            h.add(42);
        }
        let bank = SampleBank {
            window: h,
            ..Default::default()
        };
        assert_eq!(sfd_threshold(&bank, 0.01).unwrap(), 42.0);
    }

    #[test]
    fn too_few_samples_are_refused() {
        let mut bank = SampleBank::default();
        for v in 0..9999 {
            bank.window.add(v % 7);
        }
        assert!(matches!(
            sfd_threshold(&bank, 0.01),
            Err(Error::InsufficientSamples { have: 9999, need: 10000 })
        ));
    }

    #[test]
    fn sparse_cells_stay_infinite() {
        let mut bank = SampleBank::default();
        let cell = bank.cells.entry((1, 1, 1)).or_default();
        for v in 0..4000u32 {
            cell.add(v % 100);
        }
        let header = TableHeader {
            eta: 0.01,
            d: 4,
            b: 5,
            bandwidth: 1,
            n_agents: 2,
            scale: 1.0,
            seed: 0,
            sample_count: 0,
            sfd_kappa: 0.0,
            signature: [0; 16],
        };
        let t = dfd_table(&bank, header);
        // 4000 samples cover H ≤ 2 at η = 1 %.
        assert_eq!(t.lookup(1, 1, 1, 1).unwrap(), 98.0);
        assert_eq!(t.lookup(1, 1, 2, 1).unwrap(), 99.0);
        assert_eq!(t.lookup(1, 1, 3, 1).unwrap(), f64::INFINITY);
        assert_eq!(t.lookup(1, 1, 1, 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn merging_is_order_free() {
        let mut a = SampleBank::default();
        let mut b = SampleBank::default();
        a.window.add(3);
        a.cells.entry((1, 2, 0)).or_default().add(5);
        b.window.add(300);
        b.cells.entry((1, 2, 0)).or_default().add(1);
        b.cells.entry((2, 2, 1)).or_default().add(9);
        let mut ab = a.clone();
        ab.merge(b.clone());
        let mut ba = b;
        ba.merge(a);
        assert_eq!(ab, ba);
        assert_eq!(ab.period_samples(), 3);
    }

    #[test]
    fn observer_pools_periods_and_traces_origins() {
        let cfg = CalibrationConfig {
            d: 3,
            b: 4,
            warmup_discard: 0,
            ..Default::default()
        };
        let mut obs = TraceObserver::new(AgentId(1), &cfg);
        let mut bank = SampleBank::with_trace();
        // γ: 1 0 0 1 0 with priorities 1 2 3 4 5
        for (k, (gm, g)) in [(true, 1), (false, 2), (false, 3), (true, 4), (false, 5)].into_iter().enumerate() {
            obs.observe(&mut bank, 0, k as u64, gm, g);
        }
        // k=2: [0] has no earlier send, T1 = b+1 > b: dropped; [1..2] (1,2,last) sum 5.
        // k=3: [1..3] after the send at 0: (1,3,last) sum 9.
        // k=4: [2..3] (2,3) sum 7, [4] (1,1,last) sum 5.
        assert_eq!(bank.window.total(), 3);
        assert_eq!(bank.cells[&(1, 2, 1)].count(5), 1);
        assert_eq!(bank.cells[&(1, 3, 1)].count(9), 1);
        assert_eq!(bank.cells[&(2, 3, 0)].count(7), 1);
        assert_eq!(bank.cells[&(1, 1, 1)].count(5), 1);
        assert_eq!(bank.period_samples(), 4);
        assert_eq!(bank.trace.as_ref().unwrap().len(), 7);
    }
}
