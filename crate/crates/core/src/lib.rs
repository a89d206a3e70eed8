//! Simulator of CoreSight ETM trace resources repurposed as per-core memory
//! bandwidth regulators, together with software baselines, a register
//! program compiler and an experiment harness.

pub mod accounting;
pub mod fabric;
pub mod harness;
pub mod machine;
pub mod regprog;
pub mod regulators;
