pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tensorfile;
pub mod video;

pub use error::{Error, Result};
