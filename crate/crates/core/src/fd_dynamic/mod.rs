//! History-adaptive detector.
//!
//! The window `[k−d+1, k]` is split at the monitored agent's communication
//! rounds into periods. Each period's priority sum is compared against a
//! threshold looked up by the period's start delay `T1`, end delay `T2`, the
//! number of periods `H`, and whether it is the last (still open) period. Any
//! period above its threshold raises an alarm.
//!
//! Delays are measured from the last communication round before the period:
//! `T1` to the period's first round, `T2` to its last round. Periods after the
//! first start right after a communication, so their `T1` is 1. If no
//! communication is found within `b` rounds before the window, the first
//! period's `T1` is capped at `b + 1`, which puts its `T2` beyond the table and
//! its threshold at `+∞`.

mod table;

pub use table::{TableHeader, ThresholdTable, TABLE_MAGIC, TABLE_VERSION};

use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::fd_static::Verdict;
use crate::network::ScheduleHistory;

/// One communication-delimited period of the detection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    /// One-based position within the window.
    pub h: usize,
    /// First and last round (inclusive).
    pub start: i64,
    pub end: i64,
    pub t1: u32,
    pub t2: u32,
    pub is_last: bool,
}

impl Period {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn last_flag(&self) -> usize {
        self.is_last as usize
    }
}

/// Partition of `[k−d+1, k]` given the schedule bits as a function of the
/// round index. Only rounds in `[k−d−b+1, k]` are consulted.
pub fn partition_with(gamma: impl Fn(i64) -> bool, k: i64, d: usize, b: usize) -> Vec<Period> {
    let mut periods = Vec::new();
    for_each_period(&gamma, k, d, b, |p| periods.push(p));
    periods
}

#[inline]
fn first_start_delay(gamma: &impl Fn(i64) -> bool, start: i64, b: usize) -> u32 {
    (1..=b as i64)
        .find(|j| gamma(start - j))
        .map_or(b as u32 + 1, |j| j as u32)
}

#[inline]
fn for_each_period(gamma: &impl Fn(i64) -> bool, k: i64, d: usize, b: usize, mut f: impl FnMut(Period)) {
    let start = k - d as i64 + 1;
    let mut last_comm = start - first_start_delay(gamma, start, b) as i64;
    let mut period_start = start;
    let mut h = 0;
    for r in start..=k {
        if r == k || gamma(r) {
            h += 1;
            f(Period {
                h,
                start: period_start,
                end: r,
                t1: (period_start - last_comm) as u32,
                t2: (r - last_comm) as u32,
                is_last: r == k,
            });
            last_comm = r;
            period_start = r + 1;
        }
    }
}

/// Partition of the monitored agent's window ending at round `k`, read from
/// the shared schedule history.
pub fn partition_window(history: &ScheduleHistory, agent: AgentId, k: u64, d: usize, b: usize) -> Vec<Period> {
    partition_with(|r| history.gamma(agent, r).unwrap_or(false), k as i64, d, b)
}

/// Number of periods in the window ending at `k`.
#[inline]
fn period_count(gamma: &impl Fn(i64) -> bool, k: i64, d: usize) -> usize {
    let start = k - d as i64 + 1;
    1 + (start..k).filter(|&r| gamma(r)).count()
}

/// Core evaluation: `∃h: s_h > κ(T1_h, T2_h, H, a_h)`.
#[inline]
pub fn evaluate_with(
    gamma: impl Fn(i64) -> bool,
    priority: impl Fn(i64) -> u8,
    k: i64,
    table: &ThresholdTable,
) -> bool {
    let d = table.header.d as usize;
    let b = table.header.b as usize;
    let h_count = period_count(&gamma, k, d);
    let mut alarm = false;
    for_each_period(&gamma, k, d, b, |p| {
        if alarm {
            return;
        }
        let kappa = table.threshold(p.t1, p.t2, h_count, p.is_last);
        if kappa.is_finite() {
            let sum: u32 = (p.start..=p.end).map(|r| priority(r) as u32).sum();
            if sum as f64 > kappa {
                alarm = true;
            }
        }
    });
    alarm
}

/// Evaluates the detector at round `k`. `priorities` holds the last `d`
/// quantized priorities, oldest first, ending at round `k`.
pub fn dfd_evaluate(
    history: &ScheduleHistory,
    agent: AgentId,
    priorities: &[u8],
    table: &ThresholdTable,
    k: u64,
) -> Result<Verdict> {
    let d = table.header.d as usize;
    if priorities.len() != d {
        return Err(Error::dim("dfd_evaluate priorities", d, priorities.len()));
    }
    if k + 1 < d as u64 {
        return Ok(Verdict::NoFault);
    }
    let start = k as i64 - d as i64 + 1;
    let alarm = evaluate_with(
        |r| history.gamma(agent, r).unwrap_or(false),
        |r| priorities[(r - start) as usize],
        k as i64,
        table,
    );
    Ok(Verdict::from_alarm(alarm))
}

/// `κ(T1, T2, H, a)`, or `+∞` when `T2 > b`.
pub fn lookup(table: &ThresholdTable, t1: u32, t2: u32, h: usize, a: usize) -> Result<f64> {
    table.lookup(t1, t2, h, a)
}

/// Streaming detector for one monitored agent with its own ring buffers of
/// schedule bits (`d + b` rounds) and priorities (`d` rounds).
#[derive(Debug, Clone)]
pub struct DynamicDetectorState {
    pub agent: AgentId,
    d: usize,
    gammas: Box<[bool]>,
    prios: Box<[u8]>,
    rounds: u64,
}

impl DynamicDetectorState {
    pub fn new(agent: AgentId, d: usize, b: usize) -> Self {
        let d = d.max(1);
        DynamicDetectorState {
            agent,
            d,
            gammas: vec![false; d + b + 1].into_boxed_slice(),
            prios: vec![0; d].into_boxed_slice(),
            rounds: 0,
        }
    }

    /// Records round `k = rounds()` with its schedule bit and priority.
    #[inline]
    pub fn observe(&mut self, gamma: bool, g: u8) {
        let k = self.rounds;
        let glen = self.gammas.len() as u64;
        self.gammas[(k % glen) as usize] = gamma;
        self.prios[(k % self.d as u64) as usize] = g;
        self.rounds += 1;
    }

    /// Whether a full window of `d` rounds has been observed.
    pub fn is_warm(&self) -> bool {
        self.rounds >= self.d as u64
    }

    fn gamma_at(&self, k: i64, r: i64) -> bool {
        let glen = self.gammas.len() as i64;
        r >= 0 && k - r < glen && self.gammas[(r % glen) as usize]
    }

    /// Calls `f(period, period sum, H)` for each period of the window ending
    /// at the latest observed round.
    pub fn visit_periods(&self, b: usize, mut f: impl FnMut(&Period, u32, usize)) {
        if !self.is_warm() {
            return;
        }
        let k = self.rounds as i64 - 1;
        let d = self.d as i64;
        let gamma = |r| self.gamma_at(k, r);
        let h_count = period_count(&gamma, k, self.d);
        for_each_period(&gamma, k, self.d, b, |p| {
            let sum = (p.start..=p.end).map(|r| self.prios[(r % d) as usize] as u32).sum();
            f(&p, sum, h_count);
        });
    }

    /// Records a round and evaluates the detector on the window ending at
    /// it. `NoFault` until `d` rounds have been seen.
    #[inline]
    pub fn update(&mut self, gamma: bool, g: u8, table: &ThresholdTable) -> Verdict {
        self.observe(gamma, g);
        if !self.is_warm() {
            return Verdict::NoFault;
        }
        let k = self.rounds as i64 - 1;
        let d = self.d as i64;
        let alarm = evaluate_with(
            |r| self.gamma_at(k, r),
            |r| self.prios[(r % d) as usize],
            k,
            table,
        );
        Verdict::from_alarm(alarm)
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }
}
