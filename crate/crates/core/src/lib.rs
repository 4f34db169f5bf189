//! Distributionally robust chance-constrained MDPs with KL ambiguity sets.

pub mod conic;
pub mod distributions;
pub mod error;
pub mod instance;
pub mod kl;
pub mod mdp;
pub mod montecarlo;
pub mod parallel;
pub mod problem;
pub mod reformulate;
pub mod report;
pub mod search;
pub mod solve;
pub mod sweep;

pub use error::{Error, Result};
