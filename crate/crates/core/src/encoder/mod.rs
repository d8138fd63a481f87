//! Spatio-temporal encoder: block table, receptive-field arithmetic, model.

pub mod model;
pub mod spec;

pub use model::{Encoder, FeaturePyramid};
pub use spec::{receptive_field, AxisConv, BlockKind, BlockSpec, EncoderSpec, ReceptiveField, RfLine};
