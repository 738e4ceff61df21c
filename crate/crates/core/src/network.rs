//! Round-based many-to-all network: top-M selection on quantized priorities,
//! the two-round delivery pipeline, and the per-agent schedule history.

use std::cmp::Ordering;
use std::collections::VecDeque;

use nalgebra::DVector;

use crate::dynamics::AgentId;
use crate::error::{Error, Result};
use crate::priority::{Priority, SCHEDULING_DELAY};

/// The `min(m, N)` agents with the largest priorities, ties broken by
/// ascending id. Returned in ascending id order.
pub fn select_senders(priorities: &[u8], m: usize) -> Result<Vec<AgentId>> {
    if m == 0 {
        return Err(Error::config("bandwidth M must be at least 1"));
    }
    Ok(select_top_by(priorities.len(), m, |a, b| priorities[a].cmp(&priorities[b])))
}

/// Top-`m` selection under an arbitrary priority order (`cmp(a, b)` compares
/// the priorities of agent indices `a` and `b`).
pub(crate) fn select_top_by(n: usize, m: usize, cmp: impl Fn(usize, usize) -> Ordering) -> Vec<AgentId> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(b, a).then(a.cmp(&b)));
    let mut winners: Vec<AgentId> = order.into_iter().take(m).map(AgentId::from_index).collect();
    winners.sort_unstable();
    winners
}

/// Outcome of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub k: u64,
    /// Priorities collected from every agent this round.
    pub priorities: Vec<Priority>,
    /// Agents with `γ(k) = 1`, in ascending id order.
    pub senders: Vec<AgentId>,
    /// Measurements `x(k)` that reached every agent this round.
    pub delivered: Vec<(AgentId, DVector<f64>)>,
    /// Winner set selected from this round's priorities, sending at `k + 2`.
    pub selected: Vec<AgentId>,
}

/// Selection and the delivery pipeline. Winners chosen at round `k` send at
/// round `k + 2`; the first two rounds deliver nothing.
#[derive(Debug, Clone)]
pub struct Network {
    n_agents: usize,
    bandwidth: usize,
    pipeline: VecDeque<Vec<AgentId>>,
}

impl Network {
    pub fn new(n_agents: usize, bandwidth: usize) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::config("bandwidth M must be at least 1"));
        }
        if n_agents == 0 {
            return Err(Error::config("system has no agents"));
        }
        Ok(Network {
            n_agents,
            bandwidth,
            pipeline: VecDeque::with_capacity(SCHEDULING_DELAY as usize + 1),
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Takes effect at the next selection; in-flight winner sets still send.
    pub fn set_bandwidth(&mut self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::config("bandwidth M must be at least 1"));
        }
        self.bandwidth = m;
        Ok(())
    }

    /// Senders of the current round, i.e. the winners selected two rounds ago.
    pub fn take_senders(&mut self) -> Vec<AgentId> {
        if self.pipeline.len() >= SCHEDULING_DELAY as usize {
            self.pipeline.pop_front().unwrap_or_default()
        } else {
            Vec::new()
        }
    }

    pub(crate) fn enqueue(&mut self, winners: Vec<AgentId>) {
        debug_assert!(winners.len() <= self.n_agents);
        self.pipeline.push_back(winners);
    }

    pub fn select(&mut self, quantized: &[u8]) -> Result<Vec<AgentId>> {
        if quantized.len() != self.n_agents {
            return Err(Error::dim("priority collection", self.n_agents, quantized.len()));
        }
        let winners = select_senders(quantized, self.bandwidth)?;
        self.enqueue(winners.clone());
        Ok(winners)
    }
}

/// Per-agent ring buffer of schedule bits `γ_i(k)`. Rounds before the start of
/// the run read as "no communication"; rounds older than the retention are
/// unavailable.
#[derive(Debug, Clone)]
pub struct ScheduleHistory {
    n_agents: usize,
    retention: usize,
    /// `bits[slot * n_agents + agent]`, slot = round mod retention.
    bits: Vec<bool>,
    rounds: u64,
}

impl ScheduleHistory {
    pub fn new(n_agents: usize, retention: usize) -> Self {
        let retention = retention.max(1);
        ScheduleHistory {
            n_agents,
            retention,
            bits: vec![false; n_agents * retention],
            rounds: 0,
        }
    }

    /// Retention that covers a detection window of `d` rounds plus the
    /// `b`-round look-back for the first period's start delay.
    pub fn retention_for(d: usize, b: usize) -> usize {
        d + b + 2
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn retention(&self) -> usize {
        self.retention
    }

    /// Number of rounds recorded so far; the latest round is `rounds() - 1`.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn push_round(&mut self, senders: &[AgentId]) {
        let slot = (self.rounds % self.retention as u64) as usize;
        let row = &mut self.bits[slot * self.n_agents..(slot + 1) * self.n_agents];
        row.fill(false);
        for s in senders {
            row[s.index()] = true;
        }
        self.rounds += 1;
    }

    /// `γ_agent(round)` for a signed round index; `Some(false)` before the run
    /// start, `None` if not yet recorded or beyond retention.
    pub fn gamma(&self, agent: AgentId, round: i64) -> Option<bool> {
        if round < 0 {
            return Some(false);
        }
        let r = round as u64;
        if r >= self.rounds || self.rounds - r > self.retention as u64 {
            return None;
        }
        let slot = (r % self.retention as u64) as usize;
        Some(self.bits[slot * self.n_agents + agent.index()])
    }

    /// Schedule bits of one agent for rounds `[end + 1 − len, end]`, oldest
    /// first, with unavailable rounds reported as `false`.
    pub fn agent_bits(&self, agent: AgentId, end: u64, len: usize) -> Vec<bool> {
        (0..len)
            .map(|i| {
                let r = end as i64 - (len - 1 - i) as i64;
                self.gamma(agent, r).unwrap_or(false)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[u32]) -> Vec<AgentId> {
        xs.iter().map(|&x| AgentId(x)).collect()
    }

    #[test]
    fn top_two_by_priority() {
        assert_eq!(select_senders(&[5, 3, 9, 1], 2).unwrap(), ids(&[1, 3]));
    }

    #[test]
    fn equal_priorities_prefer_low_ids() {
        assert_eq!(select_senders(&[7, 7, 7, 7], 2).unwrap(), ids(&[1, 2]));
        assert_eq!(select_senders(&[1, 7, 7, 7], 2).unwrap(), ids(&[2, 3]));
    }

    #[test]
    fn bandwidth_saturates_at_n() {
        assert_eq!(select_senders(&[0, 4, 2], 5).unwrap(), ids(&[1, 2, 3]));
        assert!(select_senders(&[0, 4, 2], 0).is_err());
    }

    #[test]
    fn pipeline_delays_two_rounds() {
        let mut net = Network::new(3, 1).unwrap();
        let rounds: [[u8; 3]; 5] = [[0, 9, 0], [0, 0, 9], [9, 0, 0], [9, 0, 8], [0, 0, 0]];
        let mut sent = Vec::new();
        for (k, prios) in rounds.iter().enumerate() {
            sent.push(net.take_senders());
            if k == 2 {
                net.set_bandwidth(2).unwrap();
            }
            net.select(prios).unwrap();
        }
        assert_eq!(sent, vec![ids(&[]), ids(&[]), ids(&[2]), ids(&[3]), ids(&[1, 2])]);
        assert_eq!(net.take_senders(), ids(&[1, 3]));
    }

    #[test]
    fn history_ring_buffer() {
        let mut h = ScheduleHistory::new(2, 3);
        assert_eq!(h.gamma(AgentId(1), -1), Some(false));
        assert_eq!(h.gamma(AgentId(1), 0), None);
        h.push_round(&ids(&[1]));
        h.push_round(&ids(&[2]));
        h.push_round(&ids(&[]));
        h.push_round(&ids(&[1, 2]));
        assert_eq!(h.gamma(AgentId(1), 0), None);
        assert_eq!(h.gamma(AgentId(2), 1), Some(true));
        assert_eq!(h.gamma(AgentId(1), 1), Some(false));
        assert_eq!(h.gamma(AgentId(1), 3), Some(true));
        assert_eq!(h.agent_bits(AgentId(2), 3, 3), vec![true, false, true]);
    }
}
