//! Closed-loop evaluation harness for language-model driving agents: a
//! desk-scale simulator, a fast/slow model pipeline, metrics, scenario
//! generation and a hardware-in-the-loop bridge.

pub mod adapters;
pub mod campaign;
pub mod domain;
pub mod dualsys;
pub mod hil;
pub mod metrics;
pub mod scengen;
pub mod sim;
