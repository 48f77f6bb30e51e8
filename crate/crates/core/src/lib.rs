//! Gibbs samplers for two-level hierarchical models together with the
//! analytic machinery that predicts how fast they mix: Fisher information,
//! limiting spectral gaps, mixing-time bounds, and the empirical diagnostics
//! (IAT, ESS, total variation) used to check the predictions.

pub mod ars;
pub mod asymptotics;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gibbs;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod quadrature;

pub use error::{Error, Result};
