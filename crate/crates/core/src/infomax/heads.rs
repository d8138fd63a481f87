//! Contrastive heads: per tap layer, batch norm on the encoder output
//! followed by a location-wise residual MLP projecting local features into
//! the shared score space.
//!
//! The MLP is applied row-wise over flattened locations, which is the
//! 1x1-convolution weight sharing: every location of a layer goes through
//! identical weights.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Array5, Ix2};
use rand_chacha::ChaCha8Rng;

use crate::encoder::EncoderSpec;
use crate::error::{Result, VdimError};
use crate::nn::{BatchNorm1d, BatchNorm3d, Linear, Param, ParamWalk, Relu};

/// Flattens `(B, T, C, X, Y)` into location rows `(B*T*X*Y, C)`.
pub fn flatten_locations(tap: &Array5<f64>) -> Array2<f64> {
    let (b, t, c, x, y) = tap.dim();
    let perm = tap.view().permuted_axes([0, 1, 3, 4, 2]);
    let mut rows = Array2::zeros((b * t * x * y, c));
    for (dst, src) in rows.iter_mut().zip(perm.iter()) {
        *dst = *src;
    }
    rows
}

/// Inverse of [`flatten_locations`].
pub fn unflatten_locations(rows: &Array2<f64>, dim: (usize, usize, usize, usize, usize)) -> Array5<f64> {
    let (b, t, c, x, y) = dim;
    debug_assert_eq!(rows.dim(), (b * t * x * y, c));
    let mut out = Array5::zeros(dim);
    {
        let mut perm = out.view_mut().permuted_axes([0, 1, 3, 4, 2]);
        for (dst, src) in perm.iter_mut().zip(rows.iter()) {
            *dst = *src;
        }
    }
    out
}

/// One layer's head: tap batch norm + residual MLP with one hidden layer.
#[derive(Debug, Clone)]
struct LayerHead {
    bn_tap: BatchNorm3d,
    shortcut: Option<Linear>, // identity when in_dim == out_dim
    lin1: Linear,
    bn_hidden: BatchNorm1d,
    relu: Relu<Ix2>,
    lin2: Linear,
}

impl LayerHead {
    fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerHead {
            bn_tap: BatchNorm3d::new(&format!("{name}.bn_tap"), in_dim),
            shortcut: (in_dim != out_dim).then(|| Linear::new(&format!("{name}.shortcut"), in_dim, out_dim, rng)),
            lin1: Linear::new(&format!("{name}.lin1"), in_dim, out_dim, rng),
            bn_hidden: BatchNorm1d::new(&format!("{name}.bn_hidden"), out_dim),
            relu: Relu::new(),
            lin2: Linear::new(&format!("{name}.lin2"), out_dim, out_dim, rng),
        }
    }

    fn project(&mut self, rows: &Array2<f64>, train: bool) -> Array2<f64> {
        let h = self.lin1.forward(rows, train);
        let h = self.bn_hidden.forward(&h, train);
        let h = self.relu.forward_owned(h, train);
        let mut y = self.lin2.forward(&h, train);
        match &mut self.shortcut {
            Some(proj) => y += &proj.forward(rows, train),
            None => y += rows,
        }
        y
    }

    fn project_backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let g_hidden = self.lin2.backward(gy);
        let g_hidden = self.relu.backward(&g_hidden);
        let g_hidden = self.bn_hidden.backward(&g_hidden);
        let mut gx = self.lin1.backward(&g_hidden);
        match &mut self.shortcut {
            Some(proj) => gx += &proj.backward(gy),
            None => gx += gy,
        }
        gx
    }
}

impl ParamWalk for LayerHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn_tap.visit_params(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params(f);
        }
        self.lin1.visit_params(f);
        self.bn_hidden.visit_params(f);
        self.lin2.visit_params(f);
    }
}

/// The set of per-layer contrastive models, sharing one output dimension.
#[derive(Debug, Clone)]
pub struct ContrastiveHeads {
    pub out_dim: usize,
    heads: BTreeMap<usize, LayerHead>,
}

impl ContrastiveHeads {
    /// Builds heads for every layer in `layers`, inferring input widths from
    /// the encoder spec.
    pub fn build(spec: &EncoderSpec, layers: &BTreeSet<usize>, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut heads = BTreeMap::new();
        for &j in layers {
            if !spec.tap_layers.contains(&j) {
                return Err(VdimError::Config(format!(
                    "head layer {j} is not an encoder tap (taps: {:?})",
                    spec.tap_layers
                )));
            }
            heads.insert(j, LayerHead::new(&format!("heads.j{j}"), spec.tap_channels(j), out_dim, rng));
        }
        Ok(ContrastiveHeads { out_dim, heads })
    }

    pub fn layers(&self) -> Vec<usize> {
        self.heads.keys().copied().collect()
    }

    /// Freeze (or unfreeze) batch-norm statistics in every head.
    pub fn set_bn_frozen(&mut self, frozen: bool) {
        for head in self.heads.values_mut() {
            head.bn_tap.frozen_stats = frozen;
            head.bn_hidden.frozen_stats = frozen;
        }
    }

    fn head(&mut self, j: usize) -> Result<&mut LayerHead> {
        self.heads
            .get_mut(&j)
            .ok_or_else(|| VdimError::invalid(format!("no head for layer {j}")))
    }

    /// Batch norm on the encoder output of layer `j` (applied before any
    /// temporal-difference transform and before projection).
    pub fn normalize_tap(&mut self, j: usize, tap: &Array5<f64>, train: bool) -> Result<Array5<f64>> {
        Ok(self.head(j)?.bn_tap.forward(tap, train))
    }

    pub fn normalize_tap_backward(&mut self, j: usize, gy: &Array5<f64>) -> Result<Array5<f64>> {
        Ok(self.head(j)?.bn_tap.backward(gy))
    }

    /// Projects flattened location rows `(rows, C_j)` to `(rows, out_dim)`.
    pub fn project_rows(&mut self, j: usize, rows: &Array2<f64>, train: bool) -> Result<Array2<f64>> {
        Ok(self.head(j)?.project(rows, train))
    }

    pub fn project_rows_backward(&mut self, j: usize, gy: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.head(j)?.project_backward(gy))
    }

    /// Single-role convenience: tap batch norm, flatten, project. Returns
    /// `(B*N_j, out_dim)` rows in location-major order per sample.
    pub fn project_tap(&mut self, j: usize, tap: &Array5<f64>, train: bool) -> Result<Array2<f64>> {
        let normed = self.normalize_tap(j, tap, train)?;
        let rows = flatten_locations(&normed);
        self.project_rows(j, &rows, train)
    }
}

impl ParamWalk for ContrastiveHeads {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for head in self.heads.values_mut() {
            head.visit_params(f);
        }
    }
}

/// Applies heads to every tap of a pyramid (eval path), preserving grid
/// geometry: returns per layer `(B, N_j, out_dim)`.
pub fn apply_heads(
    pyramid: &crate::encoder::FeaturePyramid,
    heads: &mut ContrastiveHeads,
    train: bool,
) -> Result<BTreeMap<usize, ndarray::Array3<f64>>> {
    let mut out = BTreeMap::new();
    for j in heads.layers() {
        let tap = pyramid
            .taps
            .get(&j)
            .ok_or_else(|| VdimError::invalid(format!("pyramid missing tap {j}")))?;
        let (b, t, _c, x, y) = tap.dim();
        let rows = heads.project_tap(j, tap, train)?;
        let n = t * x * y;
        let proj = rows.into_shape_with_order((b, n, heads.out_dim)).unwrap();
        out.insert(j, proj);
    }
    Ok(out)
}
