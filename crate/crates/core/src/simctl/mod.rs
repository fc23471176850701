//! Scenario orchestration: configuration, the three-rate closed loop and
//! the run log.

mod config;
mod log;
mod run;

pub use config::*;
pub use log::*;
pub use run::*;
