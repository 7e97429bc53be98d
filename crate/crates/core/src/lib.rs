//! Distributed observers for jointly observable discrete-time linear plants.
//!
//! Agents each measure part of the output, run a local Luenberger-style
//! estimator on what they can observe, and between event times exchange
//! estimates in `q` rounds of projected consensus over a switching,
//! strongly connected network. The crate designs the gains, picks `q`,
//! certifies the resulting error dynamics and simulates the agents.

pub mod certify;
pub mod design;
pub mod error;
pub mod generate;
pub mod linalg;
pub mod network;
pub mod plant;
pub mod simulator;
pub mod synthesis;

pub use error::{Error, Result};
