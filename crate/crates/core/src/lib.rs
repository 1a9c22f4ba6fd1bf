//! Reactive power management for radial distribution feeders: branch flow
//! physics, its second-order cone relaxation, a conic interior-point solver,
//! online and baseline controllers, and a Monte Carlo harness.

pub mod branchflow;
pub mod cli;
pub mod conic;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod network;
pub mod relaxation;
pub mod sim;

pub use error::{Error, NetworkError, Result};
