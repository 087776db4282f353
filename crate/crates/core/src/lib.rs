//! Simulation and signature-based reconstruction for the CFN-Indel model of
//! binary sequence evolution.

pub mod bitstring;
pub mod error;
pub mod estimators;
pub mod newick;
pub mod quartet;
pub mod reconstruct;
pub mod rng;
pub mod signature;
pub mod sim;
pub mod tree;
pub mod unrooted;
pub mod validation;

pub use error::{Error, Result};
