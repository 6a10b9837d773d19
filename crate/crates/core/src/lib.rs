pub mod cli;
pub mod cohort;
pub mod config;
pub mod cv;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linkage;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod selection;
pub mod split;
pub mod stats;
pub mod synthetic;
pub mod table;

pub use error::{Error, Result};
