//! Static-threshold detector: the sum of the last `d` quantized priorities of
//! the monitored agent against a single calibrated threshold.

use crate::dynamics::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    NoFault,
    Fault,
}

impl Verdict {
    pub fn is_fault(self) -> bool {
        self == Verdict::Fault
    }

    pub fn from_alarm(alarm: bool) -> Self {
        if alarm {
            Verdict::Fault
        } else {
            Verdict::NoFault
        }
    }
}

/// Sliding-window state of one (observer, monitored agent) pair.
#[derive(Debug, Clone)]
pub struct StaticDetectorState {
    pub agent: AgentId,
    kappa: f64,
    window: Box<[u8]>,
    head: usize,
    filled: usize,
    sum: u32,
}

impl StaticDetectorState {
    /// `d` is clamped to at least one round.
    pub fn new(agent: AgentId, d: usize, kappa: f64) -> Self {
        StaticDetectorState {
            agent,
            kappa,
            window: vec![0u8; d.max(1)].into_boxed_slice(),
            head: 0,
            filled: 0,
            sum: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.window.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn window_sum(&self) -> u32 {
        self.sum
    }

    pub fn is_warm(&self) -> bool {
        self.filled == self.window.len()
    }

    /// Pushes this round's priority and evaluates `Σ window > κ`. Reports
    /// `NoFault` until `d` priorities have been seen.
    #[inline]
    pub fn update(&mut self, g_new: u8) -> Verdict {
        let old = std::mem::replace(&mut self.window[self.head], g_new);
        self.sum = self.sum - old as u32 + g_new as u32;
        self.head += 1;
        if self.head == self.window.len() {
            self.head = 0;
        }
        if self.filled < self.window.len() {
            self.filled += 1;
            if self.filled < self.window.len() {
                return Verdict::NoFault;
            }
        }
        Verdict::from_alarm(self.sum as f64 > self.kappa)
    }

    /// Recomputes the window sum from the buffer.
    pub fn recomputed_sum(&self) -> u32 {
        self.window.iter().map(|&g| g as u32).sum()
    }
}

/// Free-function form of [`StaticDetectorState::update`].
pub fn sfd_update(state: &mut StaticDetectorState, g_new: u8) -> Verdict {
    state.update(g_new)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_priorities_never_alarm() {
        let mut s = StaticDetectorState::new(AgentId(1), 10, 0.5);
        for _ in 0..100 {
            assert_eq!(s.update(0), Verdict::NoFault);
        }
    }

    #[test]
    fn saturated_priorities_alarm_after_warmup() {
        let mut s = StaticDetectorState::new(AgentId(1), 10, 2549.0);
        for k in 0..30 {
            let v = s.update(255);
            assert_eq!(v.is_fault(), k >= 9, "round {k}");
        }
        assert_eq!(s.window_sum(), 2550);
    }

    #[test]
    fn comparison_is_strict() {
        let mut s = StaticDetectorState::new(AgentId(1), 2, 10.0);
        s.update(5);
        assert_eq!(s.update(5), Verdict::NoFault);
        assert_eq!(s.update(6), Verdict::Fault);
    }

    #[test]
    fn sum_tracks_buffer() {
        let mut s = StaticDetectorState::new(AgentId(3), 4, 1e9);
        for g in [1u8, 200, 3, 255, 0, 17, 99, 4, 4] {
            s.update(g);
            assert_eq!(s.window_sum(), s.recomputed_sum());
        }
    }
}
