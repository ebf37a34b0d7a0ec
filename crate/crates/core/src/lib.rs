pub mod cli;
pub mod config;
pub mod data;
pub mod egnn;
pub mod error;
pub mod flow;
pub mod generate;
pub mod graph3d;
pub mod heads;
pub mod model;
pub mod nnkit;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
