//! Remote fault detection for multi-agent systems under predictive-triggering
//! priority scheduling.

pub mod calibration;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod fd_dynamic;
pub mod fd_static;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod priority;
pub mod rng;
pub mod scenarios;
pub mod world;

pub use error::{Error, Result};
