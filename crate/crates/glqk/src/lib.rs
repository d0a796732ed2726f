//! Geometrically local quantum kernels over classical shadows.
//!
//! The crate covers the full desk-scale pipeline: exact state-vector simulation of
//! small spin systems, randomized Pauli (classical shadow) measurements, locality-aware
//! shadow kernels and their Gram matrices, kernel ridge regression / SVM / kernel PCA on
//! top of them, analytic resource planners, and a batch experiment harness behind the
//! `glqk` command-line tool.

pub mod cluster;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod lattice;
pub mod learn;
pub mod pauli;
pub mod plan;
pub mod qsim;
pub mod seed;
pub mod shadows;

pub use error::{Error, Result};
