//! The spatio-temporal encoder: R(2+1)D conv pairs assembled per the block
//! table, with feature taps exposed as a pyramid of local feature grids.

use std::collections::BTreeMap;

use ndarray::{s, Array5, Ix5};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VdimError};
use crate::nn::{BatchNorm3d, Conv1dTemporal, Conv2dSpatial, Param, ParamWalk, Relu};

use super::spec::{BlockSpec, EncoderSpec};

/// Ordered per-tap feature grids, layout `(N, T, C, H, W)`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub taps: BTreeMap<usize, Array5<f64>>,
}

impl FeaturePyramid {
    /// Shape of one tap as `(C, T, X, Y)` (per sample).
    pub fn tap_shape(&self, tap: usize) -> Option<(usize, usize, usize, usize)> {
        self.taps.get(&tap).map(|a| {
            let (_n, t, c, h, w) = a.dim();
            (c, t, h, w)
        })
    }

    /// Number of local feature locations at a tap.
    pub fn locations(&self, tap: usize) -> Option<usize> {
        self.tap_shape(tap).map(|(_, t, x, y)| t * x * y)
    }
}

/// One R(2+1)D conv pair: spatial conv, temporal conv, optional batch norms,
/// optional residual shortcut, trailing ReLU.
#[derive(Debug, Clone)]
struct ConvUnit {
    spatial: Conv2dSpatial,
    bn_s: Option<BatchNorm3d>,
    relu_mid: Relu<Ix5>,
    temporal: Conv1dTemporal,
    bn_t: Option<BatchNorm3d>,
    shortcut: Option<Shortcut>,
    relu_out: Relu<Ix5>,
    /// First layer of the network: skip input-gradient computation.
    first: bool,
}

#[derive(Debug, Clone)]
enum Shortcut {
    /// Same shape in and out (1x1 tail blocks).
    Identity,
    /// Center-aligned crop/subsample, with a 1x1 channel projection when the
    /// channel counts differ.
    Crop {
        proj: Option<Conv2dSpatial>,
        spatial: (usize, usize), // (offset, stride)
        temporal: (usize, usize),
        in_dim: Option<(usize, usize, usize, usize, usize)>,
    },
}

impl ConvUnit {
    fn set_bn_frozen(&mut self, frozen: bool) {
        if let Some(bn) = &mut self.bn_s {
            bn.frozen_stats = frozen;
        }
        if let Some(bn) = &mut self.bn_t {
            bn.frozen_stats = frozen;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        spec: &BlockSpec,
        one_by_one: bool,
        norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (sp, tp) = if one_by_one {
            (crate::encoder::spec::AxisConv::new(1, 1, 0), crate::encoder::spec::AxisConv::new(1, 1, 0))
        } else {
            (spec.spatial, spec.temporal)
        };
        let bias = !norm;
        let spatial = Conv2dSpatial::new(&format!("{name}.spatial"), c_in, c_out, sp.kernel, sp.stride, sp.pad, bias, rng);
        let temporal = Conv1dTemporal::new(&format!("{name}.temporal"), c_out, c_out, tp.kernel, tp.stride, tp.pad, bias, rng);
        let residual = if one_by_one {
            true
        } else {
            spec.residual
        };
        let shortcut = if !residual {
            None
        } else if one_by_one {
            Some(Shortcut::Identity)
        } else {
            let proj = (c_in != c_out).then(|| {
                Conv2dSpatial::new(&format!("{name}.proj"), c_in, c_out, 1, 1, 0, false, rng)
            });
            Some(Shortcut::Crop {
                proj,
                spatial: ((sp.kernel - 1) / 2, sp.stride),
                temporal: ((tp.kernel - 1) / 2, tp.stride),
                in_dim: None,
            })
        };
        ConvUnit {
            spatial,
            bn_s: norm.then(|| BatchNorm3d::new(&format!("{name}.bn_s"), c_out)),
            relu_mid: Relu::new(),
            temporal,
            bn_t: norm.then(|| BatchNorm3d::new(&format!("{name}.bn_t"), c_out)),
            shortcut,
            relu_out: Relu::new(),
            first: false,
        }
    }

    fn forward(&mut self, x: &Array5<f64>, train: bool) -> Array5<f64> {
        let mut h = self.spatial.forward(x, train);
        if let Some(bn) = &mut self.bn_s {
            h = bn.forward(&h, train);
        }
        let h = self.relu_mid.forward_owned(h, train);
        let mut y = self.temporal.forward(&h, train);
        if let Some(bn) = &mut self.bn_t {
            y = bn.forward(&y, train);
        }
        if let Some(shortcut) = &mut self.shortcut {
            let skip = shortcut.forward(x, y.dim(), train);
            y += &skip;
        }
        self.relu_out.forward_owned(y, train)
    }

    fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        let g = self.relu_out.backward(gy);
        let g_skip = self.shortcut.as_mut().map(|s| s.backward(&g));
        let mut g = g;
        if let Some(bn) = &mut self.bn_t {
            g = bn.backward(&g);
        }
        let g = self.temporal.backward(&g);
        let g = self.relu_mid.backward(&g);
        let mut g = g;
        if let Some(bn) = &mut self.bn_s {
            g = bn.backward(&g);
        }
        if self.first && self.shortcut.is_none() {
            self.spatial.backward_params_only(&g);
            return Array5::zeros((0, 0, 0, 0, 0));
        }
        let mut gx = self.spatial.backward(&g);
        if let Some(gs) = g_skip {
            gx += &gs;
        }
        gx
    }
}

impl Shortcut {
    fn forward(&mut self, x: &Array5<f64>, out_dim: (usize, usize, usize, usize, usize), train: bool) -> Array5<f64> {
        match self {
            Shortcut::Identity => x.clone(),
            Shortcut::Crop { proj, spatial, temporal, in_dim } => {
                let (_n, _t, _c, h, w) = x.dim();
                let (_, to, _, ho, wo) = out_dim;
                let (so, ss) = *spatial;
                let (tf, ts) = *temporal;
                debug_assert!(so + (ho - 1) * ss < h && so + (wo - 1) * ss < w);
                let sliced = x
                    .slice(s![
                        ..,
                        tf..tf + (to - 1) * ts + 1;ts,
                        ..,
                        so..so + (ho - 1) * ss + 1;ss,
                        so..so + (wo - 1) * ss + 1;ss
                    ])
                    .to_owned();
                if train {
                    *in_dim = Some(x.dim());
                }
                match proj {
                    Some(conv) => conv.forward(&sliced, train),
                    None => sliced,
                }
            }
        }
    }

    fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        match self {
            Shortcut::Identity => gy.clone(),
            Shortcut::Crop { proj, spatial, temporal, in_dim } => {
                let g = match proj {
                    Some(conv) => conv.backward(gy),
                    None => gy.clone(),
                };
                let dim = in_dim.take().expect("shortcut backward without forward");
                let (_, to, _, ho, wo) = g.dim();
                let (so, ss) = *spatial;
                let (tf, ts) = *temporal;
                let mut gx = Array5::zeros(dim);
                gx.slice_mut(s![
                    ..,
                    tf..tf + (to - 1) * ts + 1;ts,
                    ..,
                    so..so + (ho - 1) * ss + 1;ss,
                    so..so + (wo - 1) * ss + 1;ss
                ])
                .assign(&g);
                gx
            }
        }
    }
}

impl ParamWalk for ConvUnit {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.spatial.visit_params(f);
        if let Some(bn) = &mut self.bn_s {
            bn.visit_params(f);
        }
        self.temporal.visit_params(f);
        if let Some(bn) = &mut self.bn_t {
            bn.visit_params(f);
        }
        if let Some(Shortcut::Crop { proj: Some(conv), .. }) = &mut self.shortcut {
            conv.visit_params(f);
        }
    }
}

/// One block-table row: the main conv pair plus any trailing 1x1 blocks.
#[derive(Debug, Clone)]
struct EncoderBlock {
    main: ConvUnit,
    tail: Vec<ConvUnit>,
}

impl EncoderBlock {
    fn forward(&mut self, x: &Array5<f64>, train: bool) -> Array5<f64> {
        let mut y = self.main.forward(x, train);
        for unit in &mut self.tail {
            y = unit.forward(&y, train);
        }
        y
    }

    fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        let mut g = gy.clone();
        for unit in self.tail.iter_mut().rev() {
            g = unit.backward(&g);
        }
        self.main.backward(&g)
    }
}

impl ParamWalk for EncoderBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.main.visit_params(f);
        for unit in &mut self.tail {
            unit.visit_params(f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub spec: EncoderSpec,
    blocks: Vec<EncoderBlock>,
}

impl Encoder {
    /// Freeze (or unfreeze) batch-norm statistics across every block.
    pub fn set_bn_frozen(&mut self, frozen: bool) {
        for block in &mut self.blocks {
            block.main.set_bn_frozen(frozen);
            for unit in &mut block.tail {
                unit.set_bn_frozen(frozen);
            }
        }
    }

    /// Builds the encoder, validating the spec and asserting that realized
    /// block shapes match the expected-shape column.
    pub fn build(spec: EncoderSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut c_in = spec.in_channels;
        for (i, b) in spec.blocks.iter().enumerate() {
            let name = format!("encoder.block{}", i + 1);
            let mut main = ConvUnit::new(&name, c_in, b.out_channels, b, false, spec.block_norm, rng);
            main.first = i == 0 && !b.residual;
            let tail = (0..b.one_by_one)
                .map(|k| {
                    ConvUnit::new(
                        &format!("{name}.tail{k}"),
                        b.out_channels,
                        b.out_channels,
                        b,
                        true,
                        spec.block_norm,
                        rng,
                    )
                })
                .collect();
            blocks.push(EncoderBlock { main, tail });
            c_in = b.out_channels;
        }
        Ok(Encoder { spec, blocks })
    }

    fn check_input(&self, x: &Array5<f64>) -> Result<()> {
        let (_n, t, c, h, w) = x.dim();
        let want = (self.spec.input_len, self.spec.in_channels, self.spec.input_size, self.spec.input_size);
        if (t, c, h, w) != want {
            return Err(VdimError::shape("encoder input (T,C,H,W)", want, (t, c, h, w)));
        }
        Ok(())
    }

    /// Forward pass through blocks `1..=max(tap_layers)`, returning the
    /// feature pyramid at the configured taps.
    pub fn encode(&mut self, x: &Array5<f64>, train: bool) -> Result<FeaturePyramid> {
        self.check_input(x)?;
        let last = *self.spec.tap_layers.iter().max().unwrap();
        let mut taps = BTreeMap::new();
        let mut h = x.clone();
        for (i, block) in self.blocks.iter_mut().take(last).enumerate() {
            h = block.forward(&h, train);
            if self.spec.tap_layers.contains(&(i + 1)) {
                taps.insert(i + 1, h.clone());
            }
        }
        Ok(FeaturePyramid { taps })
    }

    /// Backward pass from per-tap gradients accumulated by the heads.
    /// Gradients of blocks past the highest tap are untouched.
    pub fn backward(&mut self, mut tap_grads: BTreeMap<usize, Array5<f64>>) {
        let last = *self.spec.tap_layers.iter().max().unwrap();
        let mut g: Option<Array5<f64>> = None;
        for idx in (1..=last).rev() {
            if let Some(tg) = tap_grads.remove(&idx) {
                g = Some(match g {
                    Some(mut acc) => {
                        acc += &tg;
                        acc
                    }
                    None => tg,
                });
            }
            if let Some(grad) = g {
                g = Some(self.blocks[idx - 1].backward(&grad));
            }
        }
    }

    /// Runs every block in eval mode and reports realized output shapes as
    /// `(C, T, X, Y)`; used by the shape-conformance check.
    pub fn probe_shapes(&mut self, batch: usize) -> Result<Vec<(usize, usize, usize, usize)>> {
        let x = Array5::zeros((
            batch,
            self.spec.input_len,
            self.spec.in_channels,
            self.spec.input_size,
            self.spec.input_size,
        ));
        let mut shapes = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in self.blocks.iter_mut() {
            h = block.forward(&h, false);
            let (_n, t, c, hh, ww) = h.dim();
            shapes.push((c, t, hh, ww));
        }
        Ok(shapes)
    }

    /// Total conv-weight element count of one block (excluding norm layers),
    /// for the factorization accounting test.
    pub fn block_conv_weight_count(&self, idx: usize) -> usize {
        let b = &self.blocks[idx];
        let count_unit = |u: &ConvUnit| {
            let mut n = u.spatial.w.value.len();
            if let Some(bias) = &u.spatial.b {
                n += bias.value.len();
            }
            n += u.temporal.w.value.len();
            if let Some(bias) = &u.temporal.b {
                n += bias.value.len();
            }
            if let Some(Shortcut::Crop { proj: Some(p), .. }) = &u.shortcut {
                n += p.w.value.len();
            }
            n
        };
        count_unit(&b.main) + b.tail.iter().map(count_unit).sum::<usize>()
    }
}

impl ParamWalk for Encoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for block in &mut self.blocks {
            block.visit_params(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_encoder() -> Encoder {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        Encoder::build(EncoderSpec::tiny(), &mut rng).unwrap()
    }

    #[test]
    fn tiny_shapes_match_spec() {
        let mut enc = tiny_encoder();
        let shapes = enc.probe_shapes(1).unwrap();
        assert_eq!(shapes, enc.spec.expected_shapes);
    }

    #[test]
    fn taps_have_expected_grids() {
        let mut enc = tiny_encoder();
        let x = Array5::zeros((2, 16, 3, 64, 64));
        let pyr = enc.encode(&x, false).unwrap();
        assert_eq!(pyr.tap_shape(5), Some((64, 3, 5, 5)));
        assert_eq!(pyr.tap_shape(6), Some((64, 3, 3, 3)));
        assert_eq!(pyr.tap_shape(8), Some((64, 1, 1, 1)));
        assert!(pyr.locations(5) >= pyr.locations(6));
        assert_eq!(pyr.locations(8), Some(1));
    }

    #[test]
    fn zero_input_yields_finite_output() {
        let mut enc = tiny_encoder();
        let x = Array5::zeros((1, 16, 3, 64, 64));
        let pyr = enc.encode(&x, false).unwrap();
        for tap in pyr.taps.values() {
            assert!(tap.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn identical_batch_rows_encode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut enc = tiny_encoder();
        let one = Array5::from_shape_simple_fn((1, 16, 3, 64, 64), || rand::Rng::gen::<f64>(&mut rng));
        let mut two = Array5::zeros((2, 16, 3, 64, 64));
        two.slice_mut(s![0..1, .., .., .., ..]).assign(&one);
        two.slice_mut(s![1..2, .., .., .., ..]).assign(&one);
        let pyr = enc.encode(&two, false).unwrap();
        for tap in pyr.taps.values() {
            let a = tap.index_axis(ndarray::Axis(0), 0);
            let b = tap.index_axis(ndarray::Axis(0), 1);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn wrong_input_shape_errors() {
        let mut enc = tiny_encoder();
        let x = Array5::zeros((1, 8, 3, 64, 64));
        assert!(enc.encode(&x, false).is_err());
    }
}
