pub mod channel;
pub mod config;
pub mod dft;
pub mod error;
pub mod estimator;
pub mod iq;
pub mod metrics;
pub mod par;
pub mod scenario;
pub mod sequence;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;
