//! Single-sample actor-critic on finite MDPs, with exact oracles for every
//! quantity the analysis depends on.

pub mod actor_critic;
pub mod analysis;
pub mod cli_io;
pub mod critic;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod sampler;

pub use error::{Error, Result};
