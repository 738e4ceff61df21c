//! Per-update timing of both detectors on a recorded schedule trace.

use std::hint::black_box;
use std::time::Instant;

use crate::config::System;
use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::fd_dynamic::{DynamicDetectorState, TableHeader, ThresholdTable};
use crate::fd_static::StaticDetectorState;
use crate::world::{Scheduling, World};

/// Updates timed together; the per-update cost is the block time divided by
/// this.
const BLOCK: usize = 32;

/// Schedule bits and quantized priorities of one agent, one entry per round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub gammas: Vec<bool>,
    pub priorities: Vec<u8>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Fault-free trace of `agent` over `rounds` rounds.
pub fn record_trace(system: &System, agent: AgentId, rounds: usize, seed: u64) -> Result<Trace> {
    system.agent(agent)?;
    let mut world = World::new(system, Scheduling::Quantized(system.quantizer()?), seed, 0)?;
    let mut t = Trace {
        gammas: Vec::with_capacity(rounds),
        priorities: Vec::with_capacity(rounds),
    };
    for _ in 0..rounds {
        world.step()?;
        t.gammas.push(world.senders().contains(&agent));
        t.priorities.push(world.quantized_priorities()[agent.index()]);
    }
    Ok(t)
}

/// Table of horizon `d` with every valid cell at `value`. Large values keep
/// the detector from short-circuiting, so every period is summed.
pub fn synthetic_table(d: usize, b: usize, value: f32) -> ThresholdTable {
    ThresholdTable::filled(
        TableHeader {
            eta: 0.01,
            d: d as u32,
            b: b as u32,
            bandwidth: 1,
            n_agents: 1,
            scale: 1.0,
            seed: 0,
            sample_count: 0,
            sfd_kappa: value as f64,
            signature: [0; 16],
        },
        value,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub updates: usize,
    pub mean_ns: f64,
    pub p99_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub d: usize,
    pub sfd: TimingStats,
    pub dfd: TimingStats,
}

fn stats(mut per_update: Vec<f64>, updates: usize) -> TimingStats {
    let mean_ns = per_update.iter().sum::<f64>() / per_update.len().max(1) as f64;
    let p99_ns = crate::calibration::percentile(&mut per_update, 0.01).unwrap_or(0.0);
    TimingStats {
        updates,
        mean_ns,
        p99_ns,
    }
}

fn time_blocks(trace: &Trace, repeats: usize, mut update: impl FnMut(bool, u8) -> bool) -> TimingStats {
    let mut samples = Vec::with_capacity(repeats * trace.len() / BLOCK + 1);
    let mut updates = 0;
    for _ in 0..repeats {
        for (gs, ps) in trace.gammas.chunks_exact(BLOCK).zip(trace.priorities.chunks_exact(BLOCK)) {
            let t0 = Instant::now();
            for (&gm, &g) in gs.iter().zip(ps) {
                black_box(update(black_box(gm), black_box(g)));
            }
            samples.push(t0.elapsed().as_nanos() as f64 / BLOCK as f64);
            updates += BLOCK;
        }
    }
    stats(samples, updates)
}

/// Mean and 99th-percentile per-update cost of both detectors replaying the
/// same trace `repeats` times back to back.
pub fn bench_detectors(table: &ThresholdTable, trace: &Trace, repeats: usize) -> Result<BenchReport> {
    if trace.len() < BLOCK {
        return Err(Error::config(format!("trace too short for timing ({} rounds)", trace.len())));
    }
    let d = table.header.d as usize;
    let b = table.header.b as usize;
    let kappa = table.header.sfd_kappa;
    let mut sfd = StaticDetectorState::new(AgentId(1), d, kappa);
    let sfd_stats = time_blocks(trace, repeats, |_, g| sfd.update(g).is_fault());
    let mut dfd = DynamicDetectorState::new(AgentId(1), d, b);
    let dfd_stats = time_blocks(trace, repeats, |gm, g| dfd.update(gm, g, table).is_fault());
    Ok(BenchReport {
        d,
        sfd: sfd_stats,
        dfd: dfd_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_runs_on_a_short_trace() {
        let trace = Trace {
            gammas: (0..256).map(|i| i % 3 == 0).collect(),
            priorities: (0..256).map(|i| (i * 7 % 256) as u8).collect(),
        };
        let rep = bench_detectors(&synthetic_table(10, 40, 1e6), &trace, 2).unwrap();
        assert_eq!(rep.sfd.updates, 512);
        assert!(rep.dfd.mean_ns > 0.0);
        let short = Trace {
            gammas: vec![true; 4],
            priorities: vec![0; 4],
        };
        assert!(bench_detectors(&synthetic_table(10, 40, 1e6), &short, 1).is_err());
    }
}
