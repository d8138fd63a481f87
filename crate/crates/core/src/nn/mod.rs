//! Minimal f64 neural-network substrate: parameters, convolutions, batch
//! normalization, linear layers, Adam, and finite-difference checking.
//!
//! Everything here is deterministic: forward and backward passes write
//! disjoint output regions from parallel workers and reduce partial sums in
//! a fixed order, so results are bit-identical across runs and thread counts.
//!
//! Activations use the layout `(N, T, C, H, W)` so that spatial convolutions
//! see contiguous `(C, H, W)` frames and temporal convolutions see contiguous
//! `(C, H, W)` slices per time step.

pub mod adam;
pub mod conv1d;
pub mod conv2d;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod param;

pub use adam::Adam;
pub use conv1d::Conv1dTemporal;
pub use conv2d::Conv2dSpatial;
pub use linear::Linear;
pub use norm::{BatchNorm1d, BatchNorm3d};
pub use ops::{Dropout, Relu};
pub use param::{Param, ParamWalk};

/// Output length of a 1D convolution with `valid + p` zero padding.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let padded = input + 2 * pad;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}
