//! Dataset ingestion: decoded clips, train/test splits, window sampling, the
//! synthetic motion dataset, and the frame-directory format.

pub mod frames;
pub mod synth;

use ndarray::{Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VdimError};

pub use frames::{export_frame_directory, load_frame_directory_dataset};
pub use synth::{generate_synthetic_dataset, MotionKind, SyntheticMotionSpec, SyntheticVideo};

/// A decoded clip: frames `(T, H, W, C)` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Array4<f64>,
    pub fps: f64,
    pub label: Option<usize>,
    /// Stable identifier of the originating video; constant across windows
    /// sampled from the same video.
    pub source_id: String,
}

impl VideoClip {
    pub fn new(frames: Array4<f64>, fps: f64, label: Option<usize>, source_id: impl Into<String>) -> Result<Self> {
        let (t, h, w, c) = frames.dim();
        if t < 1 || h < 1 || w < 1 {
            return Err(VdimError::invalid(format!("empty clip: shape {:?}", (t, h, w, c))));
        }
        if c != 3 {
            return Err(VdimError::shape("clip channels", 3usize, c));
        }
        if !frames.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(VdimError::invalid("clip values must be finite and within [0,1]"));
        }
        Ok(VideoClip {
            frames,
            fps,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a dataset item's frames come from.
#[derive(Debug, Clone)]
pub enum VideoSource {
    Synthetic(SyntheticVideo),
    FrameDir {
        dir: std::path::PathBuf,
        resize: Option<(usize, usize)>,
        fps: f64,
    },
}

/// One video reference with its label.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub source: VideoSource,
    pub label: usize,
    pub source_id: String,
}

impl DatasetItem {
    /// Decodes the full clip. Pure function of the item, so repeated decodes
    /// are identical and parallel decoding is safe.
    pub fn decode(&self) -> Result<VideoClip> {
        match &self.source {
            VideoSource::Synthetic(v) => v.render_clip(Some(self.label), &self.source_id),
            VideoSource::FrameDir { dir, resize, fps } => {
                frames::decode_frame_dir(dir, *resize, *fps, Some(self.label), &self.source_id)
            }
        }
    }
}

/// An immutable list of items forming one split.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub items: Vec<DatasetItem>,
    pub split_name: String,
    pub class_count: usize,
}

impl DatasetSplit {
    pub fn new(items: Vec<DatasetItem>, split_name: impl Into<String>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(VdimError::Dataset("class_count must be positive".into()));
        }
        for item in &items {
            if item.label >= class_count {
                return Err(VdimError::Dataset(format!(
                    "label {} out of range [0, {}) for item {}",
                    item.label, class_count, item.source_id
                )));
            }
        }
        Ok(DatasetSplit {
            items,
            split_name: split_name.into(),
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Draws a contiguous window of exactly `window_length` frames, start index
/// uniform over valid starts. A clip shorter than the window is extended by
/// repeating its last frame.
pub fn sample_window(clip: &VideoClip, window_length: usize, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    if window_length == 0 {
        return Err(VdimError::invalid("window_length must be >= 1"));
    }
    let t = clip.len();
    if t == 0 {
        return Err(VdimError::invalid("cannot sample a window from an empty clip"));
    }
    let (_t, h, w, c) = clip.frames.dim();
    let frames = if t >= window_length {
        let start = rng.gen_range(0..=t - window_length);
        clip.frames
            .slice(ndarray::s![start..start + window_length, .., .., ..])
            .to_owned()
    } else {
        let mut out = Array4::zeros((window_length, h, w, c));
        out.slice_mut(ndarray::s![..t, .., .., ..]).assign(&clip.frames);
        let last = clip.frames.index_axis(Axis(0), t - 1);
        for ti in t..window_length {
            out.index_axis_mut(Axis(0), ti).assign(&last);
        }
        out
    };
    Ok(VideoClip {
        frames,
        fps: clip.fps,
        label: clip.label,
        source_id: clip.source_id.clone(),
    })
}
