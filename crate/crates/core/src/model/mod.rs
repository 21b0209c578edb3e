//! Model assembly: configuration, parameters, and the forward pass.

pub mod config;
pub mod features;
pub mod net;
pub mod params;

pub use config::{Modality, ModelConfig};
pub use features::ModalityFeatures;
pub use net::{forward, logits_to_probs, predict, Ablation};
pub use params::{BoundParams, ParameterStore};
