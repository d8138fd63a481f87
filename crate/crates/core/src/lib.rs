//! Multi-view contrastive pretraining for video: a stochastic view
//! generator over clip windows, a receptive-field-limited spatio-temporal
//! encoder, a multi-scale infoNCE objective, and a fine-tuning/evaluation
//! harness, all runnable on a built-in synthetic motion dataset.

pub mod checkpoint;
pub mod config;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod infomax;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod pretrain;
pub mod seeding;
pub mod selfcheck;
pub mod video_io;
pub mod view;

pub use error::{Result, VdimError};
