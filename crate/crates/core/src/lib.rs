pub mod autodiff;
pub mod cli;
pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod ontology;
pub mod textpipe;
pub mod train;

pub use error::{Error, Result};
