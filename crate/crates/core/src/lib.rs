//! Stochastic graph neural networks over random-edge graph models, trained under
//! output-variance constraints with a primal-dual method.

pub mod data;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod graph;
pub mod io;
pub mod gres;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod moments;
pub mod objective;
pub mod parallel;
pub mod rng;
pub mod suite;
pub mod training;
pub mod verify;

pub use error::{Result, SgnnError};
