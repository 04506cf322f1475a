//! Residual compression of step-wise activation streams: codecs, the
//! error-feedback pipeline, synthetic processes, steady-state error bounds
//! and a simulated device mesh.

pub mod compress;
pub mod experiment;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod process;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use compress::{decode, encode, CodecError, CompressedPayload, CompressorSpec};
pub use rng::Rng;
pub use tensor::{Matrix, TensorError};
