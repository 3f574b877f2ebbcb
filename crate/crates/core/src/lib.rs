pub mod agent;
pub mod baselines;
pub mod dsu;
pub mod env;
pub mod error;
pub mod flowtable;
pub mod harness;
pub mod nn;
pub mod topology;

pub use error::{Error, Result};
