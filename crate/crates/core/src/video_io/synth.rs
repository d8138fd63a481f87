//! Synthetic motion dataset: each class is a motion pattern of a rendered
//! square (drift left/right, grow, shrink) over a noise background that is
//! regenerated every frame, so background texture carries no information
//! across time or across views. Appearance — color, size range, start
//! position, speed — is randomized independently of the class, so labels
//! are motion-borne only.
//!
//! Rendering is a pure function of `(spec seed, motion kind, instance,
//! frame)`, with anti-aliased edges and toroidal wrapping so no class can be
//! told apart by edge clipping.

use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VdimError};
use crate::seeding::{mix_seed, rng_from, tag};

use super::{DatasetItem, DatasetSplit, VideoClip, VideoSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    DriftLeft,
    DriftRight,
    Grow,
    Shrink,
}

impl MotionKind {
    pub fn name(&self) -> &'static str {
        match self {
            MotionKind::DriftLeft => "drift_left",
            MotionKind::DriftRight => "drift_right",
            MotionKind::Grow => "grow",
            MotionKind::Shrink => "shrink",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            MotionKind::DriftLeft => 11,
            MotionKind::DriftRight => 12,
            MotionKind::Grow => 13,
            MotionKind::Shrink => 14,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticMotionSpec {
    pub class_count: usize,
    pub clip_length: usize,
    pub resolution: (usize, usize),
    pub clips_per_class: usize,
    pub seed: u64,
    /// Motion pattern per class; label is the index in this list.
    pub motion_classes: Vec<MotionKind>,
    pub train_fraction: f64,
    pub fps: f64,
}

impl Default for SyntheticMotionSpec {
    fn default() -> Self {
        SyntheticMotionSpec {
            class_count: 4,
            clip_length: 96,
            resolution: (64, 64),
            clips_per_class: 125,
            seed: 0,
            motion_classes: vec![
                MotionKind::DriftLeft,
                MotionKind::DriftRight,
                MotionKind::Grow,
                MotionKind::Shrink,
            ],
            train_fraction: 0.8,
            fps: 25.0,
        }
    }
}

impl SyntheticMotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(VdimError::Dataset("synthetic spec needs at least one class".into()));
        }
        if self.clips_per_class == 0 {
            return Err(VdimError::Dataset("clips_per_class must be positive".into()));
        }
        if self.class_count != self.motion_classes.len() {
            return Err(VdimError::Dataset(format!(
                "class_count {} != motion_classes length {}",
                self.class_count,
                self.motion_classes.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for k in &self.motion_classes {
            if !seen.insert(k.tag()) {
                return Err(VdimError::Dataset("duplicate motion kinds".into()));
            }
        }
        if self.clip_length == 0 {
            return Err(VdimError::Dataset("clip_length must be positive".into()));
        }
        let (h, w) = self.resolution;
        if h < 16 || w < 16 {
            return Err(VdimError::Dataset("resolution must be at least 16x16".into()));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(VdimError::Dataset("train_fraction must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// A renderable synthetic video; carries everything needed to reproduce its
/// frames byte for byte.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub kind: MotionKind,
    pub instance: usize,
    pub seed: u64,
    pub clip_length: usize,
    pub resolution: (usize, usize),
    pub fps: f64,
}

/// Appearance and motion parameters drawn once per video, independent of the
/// class label.
struct DrawParams {
    color: [f64; 3],
    size0: f64,
    grow_total: f64,
    /// Static fraction of the grow ramp; gives constant-size classes the
    /// same size marginal as grow/shrink sampled at a uniform frame.
    phase: f64,
    speed: f64,
    cx0: f64,
    cy0: f64,
    bg_seed: u64,
}

const SIZE_MIN: f64 = 10.0;
const SIZE_MAX: f64 = 26.0;

impl SyntheticVideo {
    fn params(&self) -> DrawParams {
        let mut rng = rng_from(&[self.seed, tag::SYNTH_VIDEO, self.kind.tag(), self.instance as u64]);
        let (h, w) = self.resolution;
        let scale = w.min(h) as f64 / 64.0;
        let grow_total = 10.0 * scale;
        // size range chosen so the size marginal at a uniformly random frame
        // overlaps heavily between grow, shrink and constant-size drift
        let size0 = rng.gen_range(SIZE_MIN * scale..(SIZE_MAX * scale - grow_total));
        DrawParams {
            color: [
                rng.gen_range(0.55..1.0),
                rng.gen_range(0.55..1.0),
                rng.gen_range(0.55..1.0),
            ],
            size0,
            grow_total,
            phase: rng.gen_range(0.0..1.0),
            speed: rng.gen_range(0.4..0.9) * scale,
            cx0: rng.gen_range(0.0..w as f64),
            cy0: rng.gen_range(0.0..h as f64),
            bg_seed: rng.gen(),
        }
    }

    /// Per-frame background noise; temporally white by design so the only
    /// temporally stable content is the moving square.
    fn background(&self, p: &DrawParams, t: usize) -> Array3<f64> {
        let (h, w) = self.resolution;
        let mut rng = rng_from(&[p.bg_seed, t as u64]);
        Array3::from_shape_simple_fn((h, w, 3), || rng.gen_range(0.25..0.55))
    }

    /// Square center and side length at frame `t`.
    fn square_at(&self, p: &DrawParams, t: usize) -> (f64, f64, f64) {
        let tf = t as f64;
        let total = self.clip_length.max(2) as f64 - 1.0;
        match self.kind {
            MotionKind::DriftLeft => (p.cx0 - p.speed * tf, p.cy0, p.size0 + p.grow_total * p.phase),
            MotionKind::DriftRight => (p.cx0 + p.speed * tf, p.cy0, p.size0 + p.grow_total * p.phase),
            MotionKind::Grow => (p.cx0, p.cy0, p.size0 + p.grow_total * tf / total),
            MotionKind::Shrink => (p.cx0, p.cy0, p.size0 + p.grow_total * (1.0 - tf / total)),
        }
    }

    /// Renders one frame as `(H, W, C)`; used directly where a full clip is
    /// not needed.
    pub fn render_frame(&self, t: usize) -> Array3<f64> {
        let p = self.params();
        let mut frame = self.background(&p, t);
        self.draw_square(&p, t, &mut frame);
        frame
    }

    fn draw_square(&self, p: &DrawParams, t: usize, frame: &mut Array3<f64>) {
        let (h, w) = self.resolution;
        let (cx, cy, size) = self.square_at(p, t);
        let half = size / 2.0;
        let (x0, y0) = (cx - half, cy - half);
        // toroidal coverage: 1D overlap of pixel [i, i+1) with the square
        // interval shifted by every wrap offset
        let cover = |i: usize, lo: f64, len: f64, extent: usize| -> f64 {
            let mut c = 0.0;
            let e = extent as f64;
            let base = lo.rem_euclid(e);
            for shift in [-e, 0.0, e] {
                let a = base + shift;
                let b = a + len;
                let o = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                c += o.min(1.0);
            }
            c.min(1.0)
        };
        for py in 0..h {
            let cy_cov = cover(py, y0, size, h);
            if cy_cov == 0.0 {
                continue;
            }
            for px in 0..w {
                let cov = cy_cov * cover(px, x0, size, w);
                if cov == 0.0 {
                    continue;
                }
                for ch in 0..3 {
                    let bg = frame[[py, px, ch]];
                    frame[[py, px, ch]] = bg * (1.0 - cov) + p.color[ch] * cov;
                }
            }
        }
    }

    pub fn render_clip(&self, label: Option<usize>, source_id: &str) -> Result<VideoClip> {
        let (h, w) = self.resolution;
        let p = self.params();
        let mut frames = Array4::zeros((self.clip_length, h, w, 3));
        for t in 0..self.clip_length {
            let mut frame = self.background(&p, t);
            self.draw_square(&p, t, &mut frame);
            frames.index_axis_mut(ndarray::Axis(0), t).assign(&frame);
        }
        VideoClip::new(frames, self.fps, label, source_id)
    }
}

pub fn source_id_for(kind: MotionKind, instance: usize) -> String {
    format!("synth/{}/{instance:05}", kind.name())
}

/// Builds balanced, disjoint train/test splits of synthetic videos.
/// Deterministic given the spec seed.
pub fn generate_synthetic_dataset(spec: &SyntheticMotionSpec) -> Result<(DatasetSplit, DatasetSplit)> {
    spec.validate()?;
    let train_per_class = ((spec.clips_per_class as f64) * spec.train_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, &kind) in spec.motion_classes.iter().enumerate() {
        for instance in 0..spec.clips_per_class {
            let video = SyntheticVideo {
                kind,
                instance,
                seed: spec.seed,
                clip_length: spec.clip_length,
                resolution: spec.resolution,
                fps: spec.fps,
            };
            let item = DatasetItem {
                source: VideoSource::Synthetic(video),
                label,
                source_id: source_id_for(kind, instance),
            };
            if instance < train_per_class {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    Ok((
        DatasetSplit::new(train, "train", spec.class_count)?,
        DatasetSplit::new(test, "test", spec.class_count)?,
    ))
}

/// Seed stream for golden checks that need one random frame per clip.
pub fn golden_frame_index(spec_seed: u64, source_id: &str, clip_length: usize) -> usize {
    let sid = source_id.bytes().fold(0u64, |acc, b| acc.wrapping_mul(131).wrapping_add(b as u64));
    (mix_seed(&[spec_seed, tag::EVAL, sid]) % clip_length as u64) as usize
}
