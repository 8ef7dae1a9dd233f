//! Reverse-mode autodiff, coordinate MLPs, Adam and the SPAV checkpoint format.

pub mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod graph;
pub mod mlp;
pub mod tensor;

pub use adam::AdamState;
pub use autoencoder::{AutoencoderSpec, ColorAutoencoder};
pub use checkpoint::{parameter_digest, Checkpoint};
pub use graph::{positional_encoding, scaled_softmax, Gradients, Graph, MixRows, Var};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use tensor::Tensor;
