pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod inject;
pub mod model;
pub mod envs;
pub mod error;
pub mod numerics;
pub mod rollout;
pub mod train;
pub(crate) mod seeds;

pub use error::{Error, Result};
