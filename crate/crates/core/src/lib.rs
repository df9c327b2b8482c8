//! Vibration fault diagnosis: synthetic signals, multi-domain features, a
//! Naive Bayes rule engine, expert arbitration with abstention, confidence
//! calibration and selective-prediction metrics.

pub mod arbiter;
pub mod bayes;
pub mod calibration;
pub mod chart;
pub mod class;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod signal;
pub mod synth;

pub use class::FaultClass;
pub use error::{Error, Result};
pub use signal::Signal;
