//! Superprocesses with dependent spatial motion and interactive immigration,
//! built pathwise from Poisson random measures of Feller-diffusion excursions
//! carried by a correlated stochastic flow, plus a Monte Carlo harness that
//! checks the resulting paths against their martingale problems, Laplace
//! transforms and moment duals.

pub mod config;
pub mod dual;
pub mod error;
pub mod excursions;
pub mod feller;
pub mod flow;
pub mod harness;
pub mod kernels;
pub mod measures;
pub mod output;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod superprocess;

pub use config::{Scenario, ScenarioConfig};
pub use error::{Error, Result};
pub use measures::{AtomicMeasure, TestFunction};
