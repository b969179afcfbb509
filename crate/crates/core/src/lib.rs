//! Spectral dynamic graph representation learning: FFT-based attention over
//! temporal neighborhoods, frequency-domain node memory and link prediction.

pub mod autograd;
pub mod decoder;
pub mod encoder;
pub mod encodings;
pub mod error;
pub mod fgat;
pub mod graph;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod spectral;
pub mod state;
pub mod train;

pub use error::{Error, Result};
