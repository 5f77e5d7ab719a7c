//! Experiment plumbing: data generation, trace recording, detectors,
//! reports and the acceptance checks.

pub mod checks;
pub mod data;
pub mod detect;
pub mod experiment;
pub mod report;
pub mod trace;
