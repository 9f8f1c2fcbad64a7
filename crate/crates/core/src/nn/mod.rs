//! The joint spatial-temporal layer and the stacked encoder.

mod backbone;
mod encoder;
mod layer;
mod lstm;

pub use backbone::{mean_weights, Backbone, BackboneKind, GAT_NEGATIVE_SLOPE};
pub use encoder::{dropout, Encoder, EncoderConfig, Mode};
pub use layer::{Activation, SistLayer};
pub use lstm::{detach_states, LayerState, LstmCell};
