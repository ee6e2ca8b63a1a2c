//! Hyperparameter selection for manifold-regularized semi-supervised
//! learners (LapRLS and a smoothed-hinge LapSVM).
//!
//! Exact t-fold cross-validation retrains once per fold. The approximate
//! criterion trains once on the full data and corrects the fitted values
//! along each fold's Bouligand influence direction, optionally solving with
//! a Nyström/Woodbury approximation of the curvature matrix.

pub mod bif;
pub mod cv;
pub mod data;
pub mod error;
pub mod graph;
pub mod kernels;
mod linalg;
pub mod losses;
pub mod lowrank;
pub mod select;
pub mod synth;
pub mod trainers;

pub use error::{Error, Result};
