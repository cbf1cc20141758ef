//! Two-factor stochastic volatility with linear and nonlinear physical
//! variance drifts: simulation, EML/SML estimation and forecast evaluation.

pub mod config;
pub mod data;
pub mod eml;
pub mod error;
pub mod exec;
pub mod fit;
pub mod forecast;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
