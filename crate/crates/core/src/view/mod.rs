//! The stochastic view operator: split a frame window into subsequences,
//! temporally downsample each by index striding, and apply frame-consistent
//! augmentation per view. All randomness is drawn into a [`ViewPlan`] up
//! front, so applying a plan is pure.

pub mod apply;
pub mod color;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VdimError};

pub use apply::{apply_views, generate_views, ViewSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// Both views start at frame 0.
    Zero,
    /// Second view starts `n` frames in.
    FixedOffset(usize),
    /// Views partition the window proportionally to their downsample
    /// factors (d1:d2, so (1,2) gives a 1/3 : 2/3 split).
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Random color jitter plus random grayscale.
    JitterGray,
    /// RGB -> scaled Lab, then zero one random channel.
    LabDropout,
    /// RGB -> scaled Lab with no channel dropped (evaluation counterpart of
    /// `LabDropout`).
    LabConvert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewConfig {
    /// Frames per view after downsampling.
    pub final_length: usize,
    pub offset_mode: OffsetMode,
    pub downsample_factors: (usize, usize),
    /// Random-resized-crop area fraction range.
    pub crop_scale: (f64, f64),
    /// Random-resized-crop aspect ratio range.
    pub crop_ratio: (f64, f64),
    /// Square output size after the resized crop.
    pub output_size: usize,
    /// Jitter strengths (brightness, contrast, saturation, hue).
    pub jitter: (f64, f64, f64, f64),
    pub grayscale_prob: f64,
    /// Random quarter-turn rotation, shared across a view's frames.
    pub rotation: bool,
    pub color_mode: ColorMode,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            final_length: 32,
            offset_mode: OffsetMode::Zero,
            downsample_factors: (1, 2),
            crop_scale: (0.3, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            output_size: 128,
            jitter: (0.4, 0.4, 0.4, 0.1),
            grayscale_prob: 0.25,
            rotation: false,
            color_mode: ColorMode::JitterGray,
        }
    }
}

impl ViewConfig {
    /// Degenerate augmentation: full-frame crop, no jitter, no rotation.
    /// Views equal the raw subsampled frames resized to `output_size`.
    pub fn identity(final_length: usize, output_size: usize) -> Self {
        ViewConfig {
            final_length,
            offset_mode: OffsetMode::Zero,
            downsample_factors: (1, 1),
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            output_size,
            jitter: (0.0, 0.0, 0.0, 0.0),
            grayscale_prob: 0.0,
            rotation: false,
            color_mode: ColorMode::JitterGray,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.final_length == 0 {
            return Err(VdimError::Config("final_length must be >= 1".into()));
        }
        let (d1, d2) = self.downsample_factors;
        if d1 == 0 || d2 == 0 {
            return Err(VdimError::Config("downsample factors must be >= 1".into()));
        }
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(VdimError::Config(format!("bad crop_scale ({lo}, {hi})")));
        }
        let (rlo, rhi) = self.crop_ratio;
        if !(0.0 < rlo && rlo <= rhi) {
            return Err(VdimError::Config(format!("bad crop_ratio ({rlo}, {rhi})")));
        }
        if self.output_size == 0 {
            return Err(VdimError::Config("output_size must be >= 1".into()));
        }
        let (b, c, s, h) = self.jitter;
        if b < 0.0 || c < 0.0 || s < 0.0 || !(0.0..=0.5).contains(&h) {
            return Err(VdimError::Config("bad jitter strengths".into()));
        }
        if !(0.0..=1.0).contains(&self.grayscale_prob) {
            return Err(VdimError::Config("grayscale_prob must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Frames the window must provide for this config's plan.
    pub fn required_window(&self) -> usize {
        let (d1, d2) = self.downsample_factors;
        let raw1 = self.final_length * d1;
        let raw2 = self.final_length * d2;
        match self.offset_mode {
            OffsetMode::Zero => raw1.max(raw2),
            OffsetMode::FixedOffset(n) => raw1.max(n + raw2),
            OffsetMode::Disjoint => raw1 + raw2,
        }
    }
}

/// A normalized crop rectangle (fractions of the source frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ColorDraw {
    Jitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
        hue: f64,
        grayscale: bool,
    },
    LabDrop {
        /// `None` converts to Lab without dropping (the eval-time
        /// counterpart of training-time channel dropout).
        channel: Option<usize>,
    },
}

/// Concrete augmentation parameters, shared by every frame of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugDraw {
    pub crop: CropRect,
    pub quarter_turns: u8,
    pub color: ColorDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerViewPlan {
    pub start_frame: usize,
    pub raw_length: usize,
    pub downsample: usize,
    pub draw: AugDraw,
}

/// A sampled realization of the view operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPlan {
    pub views: Vec<PerViewPlan>,
}

impl ViewPlan {
    pub fn required_window(&self) -> usize {
        self.views.iter().map(|v| v.start_frame + v.raw_length).max().unwrap_or(0)
    }
}

fn draw_crop(cfg: &ViewConfig, rng: &mut ChaCha8Rng) -> CropRect {
    let (slo, shi) = cfg.crop_scale;
    let (rlo, rhi) = cfg.crop_ratio;
    for _ in 0..10 {
        let area = if slo == shi { slo } else { rng.gen_range(slo..=shi) };
        let ratio = if rlo == rhi {
            rlo
        } else {
            rng.gen_range(rlo.ln()..=rhi.ln()).exp()
        };
        let w = (area * ratio).sqrt();
        let h = (area / ratio).sqrt();
        if w <= 1.0 && h <= 1.0 {
            let x0 = if w < 1.0 { rng.gen_range(0.0..=1.0 - w) } else { 0.0 };
            let y0 = if h < 1.0 { rng.gen_range(0.0..=1.0 - h) } else { 0.0 };
            return CropRect { x0, y0, w, h };
        }
    }
    // fallback: centered square at the mean scale
    let side = ((slo + shi) / 2.0).sqrt().min(1.0);
    CropRect {
        x0: (1.0 - side) / 2.0,
        y0: (1.0 - side) / 2.0,
        w: side,
        h: side,
    }
}

pub(crate) fn draw_augmentation(cfg: &ViewConfig, rng: &mut ChaCha8Rng) -> AugDraw {
    let crop = draw_crop(cfg, rng);
    let quarter_turns = if cfg.rotation { rng.gen_range(0..4u8) } else { 0 };
    let color = match cfg.color_mode {
        ColorMode::JitterGray => {
            let (b, c, s, h) = cfg.jitter;
            let f = |rng: &mut ChaCha8Rng, strength: f64| {
                if strength == 0.0 {
                    1.0
                } else {
                    rng.gen_range((1.0 - strength).max(0.0)..=1.0 + strength)
                }
            };
            ColorDraw::Jitter {
                brightness: f(rng, b),
                contrast: f(rng, c),
                saturation: f(rng, s),
                hue: if h == 0.0 { 0.0 } else { rng.gen_range(-h..=h) },
                grayscale: rng.gen::<f64>() < cfg.grayscale_prob,
            }
        }
        ColorMode::LabDropout => ColorDraw::LabDrop {
            channel: Some(rng.gen_range(0..3)),
        },
        ColorMode::LabConvert => ColorDraw::LabDrop { channel: None },
    };
    AugDraw {
        crop,
        quarter_turns,
        color,
    }
}

/// Samples a two-view plan for a window of `window_length` frames.
///
/// View 1 starts at frame 0 with `final_length * d1` raw frames; view 2
/// starts per the offset mode with `final_length * d2` raw frames. Each
/// view's augmentation is drawn independently; every frame within a view
/// shares the same draw.
pub fn plan_views(window_length: usize, cfg: &ViewConfig, rng: &mut ChaCha8Rng) -> Result<ViewPlan> {
    cfg.validate()?;
    let (d1, d2) = cfg.downsample_factors;
    let raw1 = cfg.final_length * d1;
    let raw2 = cfg.final_length * d2;
    let start2 = match cfg.offset_mode {
        OffsetMode::Zero => 0,
        OffsetMode::FixedOffset(n) => n,
        OffsetMode::Disjoint => raw1,
    };
    let required = cfg.required_window();
    if window_length < required {
        return Err(VdimError::invalid(format!(
            "window of {window_length} frames too short: plan requires {required}"
        )));
    }
    let views = vec![
        PerViewPlan {
            start_frame: 0,
            raw_length: raw1,
            downsample: d1,
            draw: draw_augmentation(cfg, rng),
        },
        PerViewPlan {
            start_frame: start2,
            raw_length: raw2,
            downsample: d2,
            draw: draw_augmentation(cfg, rng),
        },
    ];
    Ok(ViewPlan { views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    #[test]
    fn disjoint_split_proportions() {
        // d=(1,2): first view gets 1/3 of the frames, second the rest
        let cfg = ViewConfig {
            final_length: 32,
            offset_mode: OffsetMode::Disjoint,
            downsample_factors: (1, 2),
            ..ViewConfig::default()
        };
        let plan = plan_views(96, &cfg, &mut rng_from(&[1])).unwrap();
        assert_eq!(plan.views[0].start_frame, 0);
        assert_eq!(plan.views[0].raw_length, 32);
        assert_eq!(plan.views[1].start_frame, 32);
        assert_eq!(plan.views[1].raw_length, 64);
        assert_eq!(plan.required_window(), 96);
    }

    #[test]
    fn zero_offset_identity_factors() {
        let cfg = ViewConfig {
            final_length: 32,
            offset_mode: OffsetMode::Zero,
            downsample_factors: (1, 1),
            ..ViewConfig::default()
        };
        let plan = plan_views(32, &cfg, &mut rng_from(&[2])).unwrap();
        for v in &plan.views {
            assert_eq!(v.start_frame, 0);
            assert_eq!(v.raw_length, 32);
        }
    }

    #[test]
    fn fixed_offset_with_stride3() {
        let cfg = ViewConfig {
            final_length: 32,
            offset_mode: OffsetMode::FixedOffset(32),
            downsample_factors: (1, 3),
            ..ViewConfig::default()
        };
        let plan = plan_views(128, &cfg, &mut rng_from(&[3])).unwrap();
        assert_eq!(plan.views[1].start_frame, 32);
        assert_eq!(plan.views[1].raw_length, 96);
        // stride-3 subsample indices stay within [32, 128)
        let last = 32 + (32 - 1) * 3;
        assert!(last < 128);
    }

    #[test]
    fn too_short_window_names_requirement() {
        let cfg = ViewConfig {
            final_length: 32,
            offset_mode: OffsetMode::Disjoint,
            downsample_factors: (1, 2),
            ..ViewConfig::default()
        };
        let err = plan_views(95, &cfg, &mut rng_from(&[4])).unwrap_err().to_string();
        assert!(err.contains("96"), "{err}");
    }

    #[test]
    fn draws_are_independent_across_views() {
        // rank correlation of the two views' crop x-offsets over many plans
        let cfg = ViewConfig::default();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..1000 {
            let plan = plan_views(cfg.required_window(), &cfg, &mut rng_from(&[5, i])).unwrap();
            xs.push(plan.views[0].draw.crop.x0);
            ys.push(plan.views[1].draw.crop.x0);
        }
        let rho = spearman(&xs, &ys);
        assert!(rho.abs() < 0.1, "rank correlation {rho}");
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        };
        let ra = rank(a);
        let rb = rank(b);
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..a.len() {
            num += (ra[i] - mean) * (rb[i] - mean);
            da += (ra[i] - mean).powi(2);
            db += (rb[i] - mean).powi(2);
        }
        num / (da.sqrt() * db.sqrt())
    }

    #[test]
    fn lab_dropout_channel_roughly_uniform() {
        let cfg = ViewConfig {
            color_mode: ColorMode::LabDropout,
            ..ViewConfig::default()
        };
        let mut counts = [0usize; 3];
        for i in 0..600 {
            let plan = plan_views(cfg.required_window(), &cfg, &mut rng_from(&[6, i])).unwrap();
            if let ColorDraw::LabDrop { channel: Some(channel) } = plan.views[0].draw.color {
                counts[channel] += 1;
            } else {
                panic!("expected lab drop");
            }
        }
        for &c in &counts {
            assert!(c > 120, "channel counts {counts:?}");
        }
    }
}
