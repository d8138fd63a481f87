//! Encoder architecture description: per-block kernel/stride/padding on the
//! spatial and temporal axes, expected output shapes, and tap layers.
//!
//! The published block arguments underdetermine some output shapes, so each
//! preset records the concrete kernel/stride/padding combination that
//! reproduces the expected shape column exactly; construction re-derives the
//! shapes and fails loudly on any mismatch.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VdimError};
use crate::nn::conv_out_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Plain R(2+1)D conv pair, optionally residual.
    Conv,
    /// Residual conv pair followed by `one_by_one` 1x1 R(2+1)D blocks.
    Res,
}

/// Kernel/stride/padding for one axis of a conv pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisConv {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl AxisConv {
    pub const fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        AxisConv { kernel, stride, pad }
    }

    pub fn out_len(&self, n: usize) -> usize {
        conv_out_len(n, self.kernel, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub spatial: AxisConv,
    pub temporal: AxisConv,
    /// Count of trailing 1x1 R(2+1)D blocks (res blocks only).
    pub one_by_one: usize,
    pub residual: bool,
    pub out_channels: usize,
}

impl BlockSpec {
    pub const fn conv(spatial: AxisConv, temporal: AxisConv, out_channels: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Conv,
            spatial,
            temporal,
            one_by_one: 0,
            residual: false,
            out_channels,
        }
    }

    pub const fn res(spatial: AxisConv, temporal: AxisConv, one_by_one: usize, out_channels: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Res,
            spatial,
            temporal,
            one_by_one,
            residual: true,
            out_channels,
        }
    }
}

/// Output shape of one block as `(C, T, X, Y)`.
pub type BlockShape = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: String,
    pub in_channels: usize,
    /// Input temporal extent (frames per view).
    pub input_len: usize,
    /// Input spatial extent (square frames).
    pub input_size: usize,
    pub blocks: Vec<BlockSpec>,
    /// 1-based block indices whose outputs are exposed as feature taps.
    pub tap_layers: BTreeSet<usize>,
    /// Expected `(C, T, X, Y)` output of every block, asserted at build time.
    pub expected_shapes: Vec<BlockShape>,
    /// Batch norm after each conv inside blocks (ablatable).
    pub block_norm: bool,
}

impl EncoderSpec {
    /// The full-size encoder: 8 blocks, input 3 x 32 x 128 x 128, taps {5, 6, 8}.
    pub fn full() -> Self {
        let blocks = vec![
            BlockSpec::conv(AxisConv::new(5, 2, 2), AxisConv::new(5, 2, 2), 64),
            BlockSpec::conv(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 64),
            BlockSpec::res(AxisConv::new(4, 2, 0), AxisConv::new(1, 1, 0), 3, 128),
            BlockSpec::res(AxisConv::new(4, 2, 0), AxisConv::new(1, 1, 0), 3, 256),
            BlockSpec::res(AxisConv::new(2, 2, 0), AxisConv::new(1, 2, 0), 3, 512),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 3, 512),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 3, 512),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 0, 512),
        ];
        let expected_shapes = vec![
            (64, 16, 64, 64),
            (64, 14, 62, 62),
            (128, 14, 30, 30),
            (256, 14, 14, 14),
            (512, 7, 7, 7),
            (512, 5, 5, 5),
            (512, 3, 3, 3),
            (512, 1, 1, 1),
        ];
        EncoderSpec {
            name: "full".into(),
            in_channels: 3,
            input_len: 32,
            input_size: 128,
            blocks,
            tap_layers: BTreeSet::from([5, 6, 8]),
            expected_shapes,
            block_norm: true,
        }
    }

    /// Reduced-width encoder (widths / 8, input 3 x 16 x 64 x 64) for fast
    /// tests and desk-scale experiments. Same block kinds as `full`.
    pub fn tiny() -> Self {
        let blocks = vec![
            BlockSpec::conv(AxisConv::new(5, 2, 2), AxisConv::new(5, 2, 2), 8),
            BlockSpec::conv(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 8),
            BlockSpec::res(AxisConv::new(4, 2, 0), AxisConv::new(1, 1, 0), 3, 16),
            BlockSpec::res(AxisConv::new(2, 2, 0), AxisConv::new(1, 1, 0), 3, 32),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(1, 2, 0), 3, 64),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(1, 1, 0), 3, 64),
            BlockSpec::res(AxisConv::new(3, 1, 0), AxisConv::new(3, 1, 0), 3, 64),
            BlockSpec::res(AxisConv::new(1, 1, 0), AxisConv::new(1, 1, 0), 0, 64),
        ];
        let expected_shapes = vec![
            (8, 8, 32, 32),
            (8, 6, 30, 30),
            (16, 6, 14, 14),
            (32, 6, 7, 7),
            (64, 3, 5, 5),
            (64, 3, 3, 3),
            (64, 1, 1, 1),
            (64, 1, 1, 1),
        ];
        EncoderSpec {
            name: "tiny".into(),
            in_channels: 3,
            input_len: 16,
            input_size: 64,
            blocks,
            tap_layers: BTreeSet::from([5, 6, 8]),
            expected_shapes,
            block_norm: true,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(VdimError::Config(format!("unknown encoder preset `{other}`"))),
        }
    }

    /// Walks the conv arithmetic and returns the realized `(C, T, X, Y)` of
    /// every block for the configured input extents.
    pub fn realized_shapes(&self) -> Vec<BlockShape> {
        let mut t = self.input_len;
        let mut x = self.input_size;
        let mut shapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            x = b.spatial.out_len(x);
            t = b.temporal.out_len(t);
            shapes.push((b.out_channels, t, x, x));
        }
        shapes
    }

    /// Validates invariants and the expected-shape column.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(VdimError::Config("encoder needs at least one block".into()));
        }
        if self.blocks.len() != self.expected_shapes.len() {
            return Err(VdimError::Config(format!(
                "encoder has {} blocks but {} expected shapes",
                self.blocks.len(),
                self.expected_shapes.len()
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for ax in [&b.spatial, &b.temporal] {
                if ax.kernel == 0 || ax.stride == 0 {
                    return Err(VdimError::Config(format!("block {}: zero kernel or stride", i + 1)));
                }
            }
            if b.kind == BlockKind::Conv && b.one_by_one != 0 {
                return Err(VdimError::Config(format!("block {}: conv blocks take no 1x1 tail", i + 1)));
            }
            if b.residual && (b.spatial.pad != 0 || b.temporal.pad != 0) {
                // residual shortcut alignment assumes unpadded main convs
                return Err(VdimError::Config(format!("block {}: residual blocks must be unpadded", i + 1)));
            }
        }
        for &tap in &self.tap_layers {
            if tap == 0 || tap > self.blocks.len() {
                return Err(VdimError::Config(format!(
                    "tap layer {tap} outside 1..={}",
                    self.blocks.len()
                )));
            }
        }
        if self.tap_layers.is_empty() {
            return Err(VdimError::Config("at least one tap layer required".into()));
        }
        let realized = self.realized_shapes();
        for (i, (r, e)) in realized.iter().zip(&self.expected_shapes).enumerate() {
            if r != e {
                return Err(VdimError::Shape {
                    site: format!("encoder block {}", i + 1),
                    expected: format!("{e:?}"),
                    got: format!("{r:?}"),
                });
            }
        }
        Ok(())
    }

    /// Feature dimension (channels) of a tap layer.
    pub fn tap_channels(&self, tap: usize) -> usize {
        self.blocks[tap - 1].out_channels
    }

    /// Grid shape `(T, X, Y)` of a tap layer.
    pub fn tap_grid(&self, tap: usize) -> (usize, usize, usize) {
        let (_, t, x, y) = self.expected_shapes[tap - 1];
        (t, x, y)
    }

    /// Number of local feature locations at a tap layer.
    pub fn tap_locations(&self, tap: usize) -> usize {
        let (t, x, y) = self.tap_grid(tap);
        t * x * y
    }
}

/// Per-axis receptive-field line: output index `i` depends on input interval
/// `[i*jump + offset, i*jump + offset + size)` before clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfLine {
    pub jump: usize,
    pub size: usize,
    pub offset: isize,
}

impl RfLine {
    fn identity() -> Self {
        RfLine { jump: 1, size: 1, offset: 0 }
    }

    fn compose(&mut self, ax: &AxisConv) {
        self.size += (ax.kernel - 1) * self.jump;
        self.offset -= (ax.pad * self.jump) as isize;
        self.jump *= ax.stride;
    }

    /// Input interval `[start, end)` for output location `i`, clipped to
    /// `[0, extent)`.
    pub fn interval(&self, i: usize, extent: usize) -> (usize, usize) {
        let start = i as isize * self.jump as isize + self.offset;
        let end = start + self.size as isize;
        (start.max(0) as usize, (end.max(0) as usize).min(extent))
    }
}

/// Analytic receptive field of one tap layer: temporal and spatial lines.
#[derive(Debug, Clone, Copy)]
pub struct ReceptiveField {
    pub temporal: RfLine,
    pub spatial: RfLine,
}

impl ReceptiveField {
    /// Input region `((t0,t1),(x0,x1),(y0,y1))` feeding tap location `(t,x,y)`.
    pub fn region(
        &self,
        loc: (usize, usize, usize),
        input_len: usize,
        input_size: usize,
    ) -> ((usize, usize), (usize, usize), (usize, usize)) {
        (
            self.temporal.interval(loc.0, input_len),
            self.spatial.interval(loc.1, input_size),
            self.spatial.interval(loc.2, input_size),
        )
    }
}

/// Composes kernel/stride/padding across blocks `1..=tap`.
///
/// Residual shortcuts and 1x1 tails never widen the window of the main conv
/// pair, so the composition over main convs is exact.
pub fn receptive_field(spec: &EncoderSpec, tap: usize) -> ReceptiveField {
    assert!(tap >= 1 && tap <= spec.blocks.len(), "tap out of range");
    let mut temporal = RfLine::identity();
    let mut spatial = RfLine::identity();
    for b in &spec.blocks[..tap] {
        spatial.compose(&b.spatial);
        temporal.compose(&b.temporal);
    }
    ReceptiveField { temporal, spatial }
}
