//! Fixtures shared by the benchmarks.

use priofd::calibration::{calibrate_scale, CalibrationConfig};
use priofd::config::{desk_system, System};
use priofd::dynamics::AgentId;
use priofd::harness::{record_trace, Trace};

/// Six-agent cart-pole system with a quantization scale from a short
/// raw-priority pass.
pub fn desk_fixture() -> System {
    let mut sys = desk_system().expect("desk system builds");
    let cfg = CalibrationConfig {
        runs: 100,
        ..Default::default()
    };
    sys.quantization_scale = Some(calibrate_scale(&sys, &cfg).expect("scale pass"));
    sys
}

/// Fault-free schedule and priority trace of agent 1.
pub fn trace_fixture(sys: &System, rounds: usize) -> Trace {
    record_trace(sys, AgentId(1), rounds, 7).expect("trace records")
}
