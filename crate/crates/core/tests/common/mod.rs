#![allow(dead_code)]

use std::collections::BTreeMap;

/// Reference partition of the window `[k−d+1, k]`: rounds are grouped by the
/// last communication strictly before them. Returns `(start, end, T1, T2,
/// is_last)` per period.
pub fn brute_partition(gamma: &[bool], k: usize, d: usize, b: usize) -> Vec<(i64, i64, u32, u32, bool)> {
    let start = k as i64 - d as i64 + 1;
    let sent = |r: i64| r >= 0 && (r as usize) < gamma.len() && gamma[r as usize];
    let last_before = |r: i64| (start - b as i64..r).rev().find(|&j| sent(j));
    let mut groups: Vec<(Option<i64>, Vec<i64>)> = Vec::new();
    for r in start..=k as i64 {
        let key = last_before(r);
        match groups.last_mut() {
            Some(g) if g.0 == key => g.1.push(r),
            _ => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(last, rounds)| {
            let first = rounds[0];
            let end = *rounds.last().unwrap();
            let anchor = last.unwrap_or(start - b as i64 - 1);
            (first, end, (first - anchor) as u32, (end - anchor) as u32, end == k as i64)
        })
        .collect()
}

/// Toy system for the union-bound oracle: two agents, one slot, error levels
/// `0..=3` used directly as priorities. Each round every agent draws a fair
/// bit `n`; a sender's error becomes `n`, a silent agent's error becomes
/// `min(3, e + n)`. The higher priority wins the slot two rounds later, ties
/// going to agent 1.
pub struct Toy {
    pub rounds: usize,
}

/// Agent-1 schedule and priority trace of one outcome sequence.
pub struct ToyTrace {
    pub gamma: Vec<bool>,
    pub prio: Vec<u8>,
}

impl Toy {
    /// Number of equiprobable outcome sequences.
    pub fn sequences(&self) -> u64 {
        1u64 << (2 * (self.rounds - 1))
    }

    /// Trace of agent 1 over rounds `0..rounds` for sequence `seq`, whose
    /// bit pairs are the noise draws of rounds `0..rounds−1`.
    pub fn trace(&self, seq: u64) -> ToyTrace {
        let mut e = [0u8; 2];
        let mut pending: [Option<usize>; 2] = [None, None];
        let mut gamma = Vec::with_capacity(self.rounds);
        let mut prio = Vec::with_capacity(self.rounds);
        for k in 0..self.rounds {
            let sender = pending[0];
            pending[0] = pending[1];
            pending[1] = Some(if e[1] > e[0] { 1 } else { 0 });
            gamma.push(sender == Some(0));
            prio.push(e[0]);
            if k + 1 == self.rounds {
                break;
            }
            for (i, ei) in e.iter_mut().enumerate() {
                let n = ((seq >> (2 * k + i)) & 1) as u8;
                *ei = if sender == Some(i) { n } else { (*ei + n).min(3) };
            }
        }
        ToyTrace { gamma, prio }
    }
}

/// Occurrence counts of period sums keyed by `(T1, T2, H, a)`.
pub type CellCounts = BTreeMap<(u32, u32, usize, u8), BTreeMap<u32, u64>>;

/// Smallest `κ` whose exceedance count is at most `η_pct/(100·H)` of the
/// cell total, in integer arithmetic.
pub fn exact_quantile(counts: &BTreeMap<u32, u64>, h: usize, eta_pct: u64) -> u32 {
    let total: u64 = counts.values().sum();
    *counts
        .keys()
        .find(|&&v| {
            let exceed: u64 = counts.range(v + 1..).map(|(_, c)| c).sum();
            exceed * h as u64 * 100 <= eta_pct * total
        })
        .expect("the largest value always qualifies")
}
