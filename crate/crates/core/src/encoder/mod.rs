//! Hierarchical grid-pooling encoder with mask-token input substitution and
//! parameter-free multi-scale feature up-casting.

mod config;
mod model;
mod upcast;

pub use config::EncoderConfig;
pub use model::{input_features, Encoder, EncoderOutput, Structure, INPUT_DIM, MASK_TOKEN};
pub use upcast::{upcast, upcast_channels, upcast_full, upcast_tensors};
