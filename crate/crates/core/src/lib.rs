pub mod baselines;
pub mod cli;
pub mod collision;
pub mod config;
pub mod domains;
pub mod error;
pub mod filter;
pub mod gaussian;
pub mod quadform;
pub mod roadmap;

pub use error::{Error, Result};
