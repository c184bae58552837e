//! Context-augmented sparse coding of pedestrian trajectories with Gaussian
//! process motion patterns, for predicting intent at signalized
//! intersections.

pub mod cli;
pub mod context;
pub mod dataset;
pub mod dictionary;
pub mod error;
pub mod evalkit;
pub mod gproc;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod predictor;
pub mod scenariosim;
pub mod trajkit;

pub use error::{Error, Result};
