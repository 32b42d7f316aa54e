pub mod config;
pub mod dagmm;
pub mod data;
pub mod error;
pub mod eval;
pub mod ghmm;
pub mod iob;
pub mod kcluster;
pub mod pipeline;
pub mod selector;
pub mod spans;
pub mod synth;
pub mod tagger;
pub mod tensor;

pub use error::{Error, Result};
