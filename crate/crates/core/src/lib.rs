pub mod audio;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod gru;
pub mod lte;
pub mod manifest;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod svm;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
