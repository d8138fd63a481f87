//! Supervised fine-tuning and evaluation: K offset views per clip, global
//! features through the layer-8 head, concatenation, a small classifier,
//! step-decay learning rate, and clip-level probability averaging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array4, Array5, Axis, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::encoder::Encoder;
use crate::error::{Result, VdimError};
use crate::infomax::heads::flatten_locations;
use crate::infomax::ContrastiveHeads;
use crate::metrics::MetricsWriter;
use crate::nn::{Adam, Dropout, Linear, Param, ParamWalk, Relu};
use crate::pretrain::TrainState;
use crate::seeding::{rng_from, tag};
use crate::video_io::{sample_window, DatasetSplit, VideoClip};
use crate::view::{apply_views, ColorMode, OffsetMode, PerViewPlan, ViewConfig, ViewPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Number of offset views per clip (K).
    pub views: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Steps between learning-rate decays.
    pub decay_every: u64,
    /// Temporal downsampling of each view.
    pub downsample: usize,
    pub color_mode: ColorMode,
    pub steps: u64,
    pub batch_size: usize,
    /// Train only the classifier; encoder and heads stay fixed.
    pub freeze_encoder: bool,
    /// Keep batch-norm statistics at their pretrained values.
    pub freeze_bn_stats: bool,
    /// Use raw global-tap features instead of the head projection.
    pub raw_features: bool,
    /// Apply training-time augmentation (random resized crop + color
    /// transform); identity views when false.
    pub augment: bool,
    /// Windows per video at evaluation time.
    pub samples_per_video: usize,
    /// Crop scale range during fine-tuning augmentation.
    pub crop_scale: (f64, f64),
    pub log_interval: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            views: 4,
            classifier_hidden: 1024,
            dropout: 0.2,
            initial_lr: 1e-3,
            decay_factor: 0.5,
            decay_every: 500,
            downsample: 1,
            color_mode: ColorMode::LabDropout,
            steps: 1000,
            batch_size: 16,
            freeze_encoder: false,
            freeze_bn_stats: false,
            raw_features: false,
            augment: true,
            samples_per_video: 8,
            crop_scale: (0.8, 1.0),
            log_interval: 25,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(VdimError::Config("views (K) must be >= 1".into()));
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return Err(VdimError::Config("decay_factor must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(VdimError::Config("dropout must be in [0, 1)".into()));
        }
        if self.downsample == 0 {
            return Err(VdimError::Config("downsample must be >= 1".into()));
        }
        if self.decay_every == 0 {
            return Err(VdimError::Config("decay_every must be >= 1".into()));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(VdimError::Config("batch_size and steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Closed-form step-decay schedule.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.initial_lr * self.decay_factor.powi((step / self.decay_every) as i32)
    }

    /// Frames a clip window must provide for K offset views.
    pub fn required_window(&self, final_length: usize) -> usize {
        (self.views - 1) * final_length + final_length * self.downsample
    }

    /// Augmentation used while fine-tuning.
    fn train_view_config(&self, final_length: usize, output_size: usize) -> ViewConfig {
        if !self.augment {
            return self.eval_view_config(final_length, output_size);
        }
        ViewConfig {
            final_length,
            output_size,
            offset_mode: OffsetMode::Zero,
            downsample_factors: (self.downsample, self.downsample),
            crop_scale: self.crop_scale,
            color_mode: self.color_mode,
            ..ViewConfig::default()
        }
    }

    /// Identity augmentation (center crop) for evaluation; Lab conversion is
    /// kept when training used Lab dropout, with no channel dropped.
    fn eval_view_config(&self, final_length: usize, output_size: usize) -> ViewConfig {
        let mut cfg = ViewConfig::identity(final_length, output_size);
        cfg.downsample_factors = (self.downsample, self.downsample);
        cfg.color_mode = match self.color_mode {
            ColorMode::LabDropout | ColorMode::LabConvert => ColorMode::LabConvert,
            ColorMode::JitterGray => ColorMode::JitterGray,
        };
        cfg
    }
}

/// Classifier head: one hidden layer with dropout over concatenated view
/// features.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub lin1: Linear,
    relu: Relu<Ix2>,
    dropout: Dropout,
    pub lin2: Linear,
}

impl Classifier {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Classifier {
            lin1: Linear::new("classifier.lin1", input_dim, hidden, rng),
            relu: Relu::new(),
            dropout: Dropout::new(dropout),
            lin2: Linear::new("classifier.lin2", hidden, classes, rng),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool, rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
        let h = self.lin1.forward(x, train);
        let h = self.relu.forward_owned(h, train);
        let h = self.dropout.forward(&h, train, rng);
        self.lin2.forward(&h, train)
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let g = self.lin2.backward(gy);
        let g = self.dropout.backward(&g);
        let g = self.relu.backward(&g);
        self.lin1.backward(&g)
    }
}

impl ParamWalk for Classifier {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.lin1.visit_params(f);
        self.lin2.visit_params(f);
    }
}

/// Encoder + global head + classifier; the fine-tuned model.
#[derive(Debug, Clone)]
pub struct DownstreamModel {
    pub encoder: Encoder,
    pub heads: ContrastiveHeads,
    pub classifier: Classifier,
    /// Tap used for downstream features (the global layer).
    pub feature_tap: usize,
    pub views: usize,
    pub raw_features: bool,
}

impl DownstreamModel {
    pub fn feature_dim(&self) -> usize {
        let per_view = if self.raw_features {
            self.encoder.spec.tap_channels(self.feature_tap)
        } else {
            self.heads.out_dim
        };
        self.views * per_view
    }

    pub fn set_bn_frozen(&mut self, frozen: bool) {
        self.encoder.set_bn_frozen(frozen);
        self.heads.set_bn_frozen(frozen);
    }
}

impl ParamWalk for DownstreamModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_params(f);
        self.heads.visit_params(f);
        self.classifier.visit_params(f);
    }
}

/// Builds the K-view plan for one window: offsets are multiples of the final
/// view length, each view downsampled by the same factor, augmentation drawn
/// independently per view.
fn k_view_plan(k: usize, final_length: usize, cfg: &ViewConfig, rng: &mut rand_chacha::ChaCha8Rng) -> ViewPlan {
    let (d, _) = cfg.downsample_factors;
    let views = (0..k)
        .map(|i| {
            let draw = crate::view::draw_augmentation(cfg, rng);
            PerViewPlan {
                start_frame: i * final_length,
                raw_length: final_length * d,
                downsample: d,
                draw,
            }
        })
        .collect();
    ViewPlan { views }
}

/// Extracts the concatenated downstream feature vector for a batch of
/// windows: every view of every sample goes through the encoder and the
/// global head in one fused batch. Returns `(B, K * feature_dim)` rows.
pub fn extract_downstream_features(
    model: &mut DownstreamModel,
    windows: &[VideoClip],
    view_cfg: &ViewConfig,
    seed_tags: &[u64],
    train: bool,
) -> Result<Array2<f64>> {
    let b = windows.len();
    let k = model.views;
    let t = view_cfg.final_length;
    let out = view_cfg.output_size;
    let tap = model.feature_tap;

    // render all views: rows grouped sample-major, view-minor
    let rendered: Vec<Result<Vec<Array4<f64>>>> = windows
        .par_iter()
        .enumerate()
        .map(|(i, win)| {
            let mut rng = rng_from(&[seed_tags[0], tag::VIEW, seed_tags[1], i as u64]);
            let plan = k_view_plan(k, t, view_cfg, &mut rng);
            // pad short windows by repeating the last frame
            let needed = plan.required_window();
            let padded;
            let source = if win.len() < needed {
                let mut norng = rng_from(&[0]);
                padded = sample_window(win, needed, &mut norng)?;
                &padded
            } else {
                win
            };
            Ok(apply_views(source, &plan, view_cfg)?.views)
        })
        .collect();

    let mut batch = Array5::zeros((b * k, t, 3, out, out));
    for (i, views) in rendered.into_iter().enumerate() {
        let views = views?;
        for (vi, view) in views.iter().enumerate() {
            let row = i * k + vi;
            let mut dst = batch.index_axis_mut(Axis(0), row);
            let (tt, h, w, _c) = view.dim();
            for ti in 0..tt {
                for c in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            dst[[ti, c, y, x]] = view[[ti, y, x, c]];
                        }
                    }
                }
            }
        }
    }

    let pyramid = model.encoder.encode(&batch, train)?;
    let grid = pyramid
        .taps
        .get(&tap)
        .ok_or_else(|| VdimError::invalid(format!("encoder produced no tap {tap}")))?;
    let rows = if model.raw_features {
        let normed = model.heads.normalize_tap(tap, grid, train)?;
        flatten_locations(&normed)
    } else {
        model.heads.project_tap(tap, grid, train)?
    };
    let (_bk, tt, _cc, xx, yy) = grid.dim();
    let locs = tt * xx * yy;
    if locs != 1 {
        return Err(VdimError::invalid(format!(
            "downstream feature tap {tap} must be global (1 location), got {locs}"
        )));
    }
    // rows are (B*K, D); concatenate per sample
    let d = rows.ncols();
    let mut feats = Array2::zeros((b, k * d));
    for i in 0..b {
        for vi in 0..k {
            feats
                .slice_mut(s![i, vi * d..(vi + 1) * d])
                .assign(&rows.row(i * k + vi));
        }
    }
    Ok(feats)
}

/// Backward from feature-vector gradients through head and encoder.
pub fn features_backward(model: &mut DownstreamModel, gfeats: &Array2<f64>, grid_dim: (usize, usize, usize, usize, usize)) -> Result<()> {
    let (bk, t, c, x, y) = grid_dim;
    let k = model.views;
    let b = gfeats.nrows();
    debug_assert_eq!(b * k, bk);
    let d = gfeats.ncols() / k;
    let mut grows = Array2::zeros((bk, d));
    for i in 0..b {
        for vi in 0..k {
            grows.row_mut(i * k + vi).assign(&gfeats.slice(s![i, vi * d..(vi + 1) * d]));
        }
    }
    let tap = model.feature_tap;
    let g_rows = if model.raw_features {
        grows
    } else {
        model.heads.project_rows_backward(tap, &grows)?
    };
    let g_grid = crate::infomax::heads::unflatten_locations(&g_rows, (bk, t, c, x, y));
    let g_tap = model.heads.normalize_tap_backward(tap, &g_grid)?;
    let mut tap_grads = BTreeMap::new();
    tap_grads.insert(tap, g_tap);
    model.encoder.backward(tap_grads);
    Ok(())
}

/// Softmax cross-entropy over logits; returns (loss, dlogits, probabilities).
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>, Array2<f64>) {
    let (b, _c) = logits.dim();
    let mut probs = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, &e) in exps.iter().enumerate() {
            probs[[i, j]] = e / z;
        }
        loss -= (probs[[i, labels[i]]]).max(1e-300).ln();
    }
    loss /= b as f64;
    let mut dlogits = probs.clone();
    for i in 0..b {
        dlogits[[i, labels[i]]] -= 1.0;
    }
    dlogits /= b as f64;
    (loss, dlogits, probs)
}

/// Builds a downstream model from a pretraining state (or random-init state).
pub fn downstream_model(pretrained: &TrainState, cfg: &FinetuneConfig, class_count: usize, seed: u64) -> Result<DownstreamModel> {
    cfg.validate()?;
    let feature_tap = *pretrained
        .model
        .encoder
        .spec
        .tap_layers
        .iter()
        .max()
        .ok_or_else(|| VdimError::Config("encoder has no taps".into()))?;
    if !pretrained.model.heads.layers().contains(&feature_tap) {
        return Err(VdimError::Config(format!(
            "pretrained heads lack the global tap {feature_tap}"
        )));
    }
    let mut model = DownstreamModel {
        encoder: pretrained.model.encoder.clone(),
        heads: pretrained.model.heads.clone(),
        classifier: Classifier::new(1, 1, 1, cfg.dropout, &mut rng_from(&[seed, tag::INIT, 1])),
        feature_tap,
        views: cfg.views,
        raw_features: cfg.raw_features,
    };
    let input_dim = model.feature_dim();
    model.classifier = Classifier::new(
        input_dim,
        cfg.classifier_hidden,
        class_count,
        cfg.dropout,
        &mut rng_from(&[seed, tag::INIT, 2]),
    );
    Ok(model)
}

pub struct FinetuneRun<'a> {
    pub train_split: &'a DatasetSplit,
    pub cfg: FinetuneConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub quiet: bool,
}

/// End-to-end supervised fine-tuning with the step-decay schedule. Returns
/// the adapted model.
pub fn finetune(pretrained: &TrainState, run: &FinetuneRun<'_>) -> Result<DownstreamModel> {
    let cfg = &run.cfg;
    cfg.validate()?;
    let split = run.train_split;
    if split.is_empty() {
        return Err(VdimError::Dataset("fine-tuning split is empty".into()));
    }
    let mut model = downstream_model(pretrained, cfg, split.class_count, run.seed)?;
    if cfg.freeze_bn_stats || cfg.freeze_encoder {
        model.set_bn_frozen(true);
    }
    let spec_len = model.encoder.spec.input_len;
    let spec_size = model.encoder.spec.input_size;
    let view_cfg = cfg.train_view_config(spec_len, spec_size);
    let window_len = cfg.required_window(spec_len);
    let mut opt = Adam::new(cfg.initial_lr);
    let mut metrics = MetricsWriter::open(&run.out_dir.join("metrics_finetune.jsonl"))?;

    for step in 0..cfg.steps {
        // batch assembly: epoch-shuffled items, seeded windows
        let b = cfg.batch_size;
        let picks: Vec<usize> = (0..b)
            .map(|kk| {
                let global = step * b as u64 + kk as u64;
                let epoch = global / split.len() as u64;
                let pos = (global % split.len() as u64) as usize;
                let mut order: Vec<usize> = (0..split.len()).collect();
                use rand::seq::SliceRandom;
                order.shuffle(&mut rng_from(&[run.seed, tag::BATCH, 77, epoch]));
                order[pos]
            })
            .collect();
        let windows: Vec<Result<(VideoClip, usize)>> = picks
            .par_iter()
            .enumerate()
            .map(|(kk, &idx)| {
                let item = &split.items[idx];
                let clip = item.decode()?;
                let global = step * b as u64 + kk as u64;
                let mut wrng = rng_from(&[run.seed, tag::WINDOW, 77, global]);
                let win = sample_window(&clip, window_len, &mut wrng)?;
                Ok((win, item.label))
            })
            .collect();
        let mut wins = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(b);
        for w in windows {
            let (w, l) = w?;
            wins.push(w);
            labels.push(l);
        }

        let encoder_train = !cfg.freeze_encoder;
        model.zero_grads();
        let feats = extract_downstream_features(&mut model, &wins, &view_cfg, &[run.seed, step], encoder_train)?;
        let grid_dim = (
            b * cfg.views,
            model.encoder.spec.tap_grid(model.feature_tap).0,
            model.encoder.spec.tap_channels(model.feature_tap),
            model.encoder.spec.tap_grid(model.feature_tap).1,
            model.encoder.spec.tap_grid(model.feature_tap).2,
        );
        let mut drng = rng_from(&[run.seed, tag::DROPOUT, step]);
        let logits = model.classifier.forward(&feats, true, &mut drng);
        let (loss, dlogits, probs) = cross_entropy(&logits, &labels);
        if !loss.is_finite() {
            return Err(VdimError::NonFinite(format!("fine-tune loss at step {step}")));
        }
        let gfeats = model.classifier.backward(&dlogits);
        if encoder_train {
            features_backward(&mut model, &gfeats, grid_dim)?;
        }

        opt.lr = cfg.lr_at(step);
        if cfg.freeze_encoder {
            opt.step(&mut model.classifier);
        } else {
            opt.step(&mut model);
        }
        model.zero_grads();

        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            let correct = (0..b)
                .filter(|&i| argmax_row(&probs.row(i).to_owned()) == labels[i])
                .count();
            metrics.log(
                step + 1,
                &[
                    ("loss".into(), loss),
                    ("lr".into(), opt.lr),
                    ("train_acc_batch".into(), correct as f64 / b as f64),
                ],
            )?;
            if !run.quiet {
                eprintln!(
                    "finetune step {} loss {:.4} lr {:.2e} batch acc {:.2}",
                    step + 1,
                    loss,
                    opt.lr,
                    correct as f64 / b as f64
                );
            }
        }
    }
    if cfg.freeze_bn_stats || cfg.freeze_encoder {
        model.set_bn_frozen(false);
    }
    Ok(model)
}

fn argmax_row(row: &ndarray::Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-video evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipResult {
    pub source_id: String,
    pub label: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
}

/// Evaluation output, serializable as a JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    pub video_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub clips: Vec<ClipResult>,
    pub decode_errors: usize,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub samples_per_video: usize,
}

/// Evenly spaced window starts covering the valid range.
fn eval_window_starts(clip_len: usize, window: usize, n: usize) -> Vec<usize> {
    if clip_len <= window || n <= 1 {
        return vec![0];
    }
    let span = clip_len - window;
    let mut starts: Vec<usize> = (0..n)
        .map(|i| (i as f64 * span as f64 / (n - 1) as f64).round() as usize)
        .collect();
    starts.dedup();
    starts
}

/// Deterministic evaluation: windows evenly spaced, identity augmentation
/// (center crop; Lab conversion without dropout when configured), class
/// probabilities averaged per video, ties broken toward the lowest class.
pub fn evaluate(
    model: &mut DownstreamModel,
    split: &DatasetSplit,
    cfg: &FinetuneConfig,
    config_hash: &str,
    checkpoint_id: &str,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(VdimError::Dataset("evaluation split is empty".into()));
    }
    let spec_len = model.encoder.spec.input_len;
    let view_cfg = cfg.eval_view_config(spec_len, model.encoder.spec.input_size);
    let window_len = cfg.required_window(spec_len);

    let mut clips = Vec::new();
    let mut decode_errors = 0usize;
    let mut norng = rng_from(&[0]);
    for item in &split.items {
        let clip = match item.decode() {
            Ok(c) => c,
            Err(e) => {
                eprintln!("warning: skipping undecodable video {}: {e}", item.source_id);
                decode_errors += 1;
                continue;
            }
        };
        let starts = eval_window_starts(clip.len(), window_len, cfg.samples_per_video);
        let windows: Vec<VideoClip> = starts
            .iter()
            .map(|&s0| {
                if clip.len() <= window_len {
                    sample_window(&clip, window_len, &mut norng)
                } else {
                    Ok(VideoClip {
                        frames: clip.frames.slice(s![s0..s0 + window_len, .., .., ..]).to_owned(),
                        fps: clip.fps,
                        label: clip.label,
                        source_id: clip.source_id.clone(),
                    })
                }
            })
            .collect::<Result<_>>()?;
        let feats = extract_downstream_features(model, &windows, &view_cfg, &[0, 0], false)?;
        let mut drng = rng_from(&[0]);
        let logits = model.classifier.forward(&feats, false, &mut drng);
        // mean of per-window probabilities
        let mut mean = vec![0.0; split.class_count];
        for i in 0..logits.nrows() {
            let row = logits.row(i);
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, &e) in exps.iter().enumerate() {
                mean[j] += e / z / logits.nrows() as f64;
            }
        }
        let mut predicted = 0;
        for (j, &p) in mean.iter().enumerate() {
            if p > mean[predicted] {
                predicted = j;
            }
        }
        clips.push(ClipResult {
            source_id: item.source_id.clone(),
            label: item.label,
            predicted,
            probabilities: mean,
        });
    }

    let mut per_class_total = vec![0usize; split.class_count];
    let mut per_class_hit = vec![0usize; split.class_count];
    let mut hits = 0usize;
    for c in &clips {
        per_class_total[c.label] += 1;
        if c.predicted == c.label {
            per_class_hit[c.label] += 1;
            hits += 1;
        }
    }
    let denom = clips.len().max(1);
    Ok(EvalReport {
        split_name: split.split_name.clone(),
        video_accuracy: hits as f64 / denom as f64,
        per_class_accuracy: per_class_total
            .iter()
            .zip(&per_class_hit)
            .map(|(&t, &h)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        clips,
        decode_errors,
        config_hash: config_hash.into(),
        checkpoint_id: checkpoint_id.into(),
        samples_per_video: cfg.samples_per_video,
    })
}

/// Saves a fine-tuned model checkpoint.
pub fn save_downstream(path: &Path, model: &mut DownstreamModel, cfg: &FinetuneConfig, step: u64, config_hash: &str, class_count: usize, seed: u64) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "finetune".into(),
        step,
        config_hash: config_hash.into(),
        encoder_spec: model.encoder.spec.clone(),
        head_layers: model.heads.layers(),
        head_dim: model.heads.out_dim,
        adam_step: step,
        class_count,
        classifier_hidden: cfg.classifier_hidden,
        feature_views: cfg.views,
        seed,
    };
    save_checkpoint(path, &meta, model)
}

/// Restores a fine-tuned model from a checkpoint.
pub fn load_downstream(path: &Path, cfg: &FinetuneConfig) -> Result<(DownstreamModel, CheckpointMeta)> {
    let ck = load_checkpoint(path)?;
    if ck.meta.kind != "finetune" {
        return Err(VdimError::Checkpoint(format!(
            "{} is a {} checkpoint, expected finetune",
            path.display(),
            ck.meta.kind
        )));
    }
    let mut rng = rng_from(&[ck.meta.seed, tag::INIT]);
    let encoder = Encoder::build(ck.meta.encoder_spec.clone(), &mut rng)?;
    let layer_set: std::collections::BTreeSet<usize> = ck.meta.head_layers.iter().copied().collect();
    let heads = ContrastiveHeads::build(&ck.meta.encoder_spec, &layer_set, ck.meta.head_dim, &mut rng)?;
    let feature_tap = *ck.meta.encoder_spec.tap_layers.iter().max().unwrap();
    let mut model = DownstreamModel {
        encoder,
        heads,
        classifier: Classifier::new(1, 1, 1, cfg.dropout, &mut rng),
        feature_tap,
        views: ck.meta.feature_views,
        raw_features: cfg.raw_features,
    };
    let input_dim = model.feature_dim();
    model.classifier = Classifier::new(input_dim, ck.meta.classifier_hidden, ck.meta.class_count, cfg.dropout, &mut rng);
    ck.restore_into(&mut model)?;
    Ok((model, ck.meta))
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub settings: Vec<(String, String)>,
    pub test_acc: Option<f64>,
    pub train_acc: Option<f64>,
    pub steps: u64,
    pub error: Option<String>,
}

/// Applies one `key=value` override to a fine-tune config.
pub fn apply_finetune_override(cfg: &mut FinetuneConfig, key: &str, value: &str) -> Result<()> {
    let bad = |e: String| VdimError::Config(format!("axis {key}={value}: {e}"));
    match key {
        "initial_lr" => cfg.initial_lr = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "decay_factor" => cfg.decay_factor = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "decay_every" => cfg.decay_every = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "downsample" => cfg.downsample = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "views" => cfg.views = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "steps" => cfg.steps = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
        "dropout" => cfg.dropout = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        "color_mode" => {
            cfg.color_mode = match value {
                "jitter_gray" => ColorMode::JitterGray,
                "lab_dropout" => ColorMode::LabDropout,
                other => return Err(VdimError::Config(format!("unknown color_mode `{other}`"))),
            }
        }
        "freeze_encoder" => cfg.freeze_encoder = value.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
        "augment" => cfg.augment = value.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
        other => return Err(VdimError::Config(format!("unknown ablation axis `{other}`"))),
    }
    cfg.validate()
}

/// Cartesian-product ablation over fine-tune settings, sharing one
/// pretrained checkpoint and the evaluation protocol. Individual cell
/// failures are recorded and the grid continues.
#[allow(clippy::too_many_arguments)]
pub fn ablation_grid(
    pretrained: &TrainState,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    base: &FinetuneConfig,
    axes: &[(String, Vec<String>)],
    seed: u64,
    out_dir: &Path,
    config_hash: &str,
    quiet: bool,
) -> Result<Vec<AblationCell>> {
    if axes.is_empty() {
        return Err(VdimError::Config("ablation needs at least one axis".into()));
    }
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for (key, values) in axes {
        let mut next = Vec::new();
        for combo in &combos {
            for v in values {
                let mut c = combo.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }

    let mut cells = Vec::new();
    for (ci, combo) in combos.iter().enumerate() {
        let mut cfg = base.clone();
        let mut setup_err = None;
        for (k, v) in combo {
            if let Err(e) = apply_finetune_override(&mut cfg, k, v) {
                setup_err = Some(e.to_string());
                break;
            }
        }
        if let Some(e) = setup_err {
            cells.push(AblationCell {
                settings: combo.clone(),
                test_acc: None,
                train_acc: None,
                steps: 0,
                error: Some(e),
            });
            continue;
        }
        let cell_dir = out_dir.join(format!("cell_{ci:03}"));
        std::fs::create_dir_all(&cell_dir)?;
        let run = FinetuneRun {
            train_split,
            cfg: cfg.clone(),
            seed,
            out_dir: cell_dir,
            config_hash: config_hash.into(),
            quiet,
        };
        let outcome = (|| -> Result<(f64, f64)> {
            let mut model = finetune(pretrained, &run)?;
            let test = evaluate(&mut model, test_split, &cfg, config_hash, "ablation")?;
            let train = evaluate(&mut model, train_split, &cfg, config_hash, "ablation")?;
            Ok((test.video_accuracy, train.video_accuracy))
        })();
        match outcome {
            Ok((test_acc, train_acc)) => cells.push(AblationCell {
                settings: combo.clone(),
                test_acc: Some(test_acc),
                train_acc: Some(train_acc),
                steps: cfg.steps,
                error: None,
            }),
            Err(e) => cells.push(AblationCell {
                settings: combo.clone(),
                test_acc: None,
                train_acc: None,
                steps: cfg.steps,
                error: Some(e.to_string()),
            }),
        }
        if !quiet {
            let last = cells.last().unwrap();
            eprintln!("ablation cell {ci}: {:?} -> {:?}", last.settings, last.test_acc);
        }
    }
    Ok(cells)
}

/// Writes the ablation table as CSV (axis columns, then accuracies).
pub fn write_ablation_csv(path: &Path, axes: &[(String, Vec<String>)], cells: &[AblationCell]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    let axis_names: Vec<&str> = axes.iter().map(|(k, _)| k.as_str()).collect();
    writeln!(f, "{},test_acc,train_acc,steps,error", axis_names.join(","))?;
    for cell in cells {
        let vals: Vec<&str> = cell.settings.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(
            f,
            "{},{},{},{},{}",
            vals.join(","),
            cell.test_acc.map_or(String::new(), |v| format!("{v:.4}")),
            cell.train_acc.map_or(String::new(), |v| format!("{v:.4}")),
            cell.steps,
            cell.error.clone().unwrap_or_default()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_closed_form() {
        let cfg = FinetuneConfig {
            initial_lr: 1e-3,
            decay_factor: 0.5,
            decay_every: 3000,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(2999), 1e-3);
        assert_eq!(cfg.lr_at(3000), 5e-4);
        assert!((cfg.lr_at(9000) - 1.25e-4).abs() < 1e-18);
        let constant = FinetuneConfig {
            decay_factor: 1.0,
            ..Default::default()
        };
        assert_eq!(constant.lr_at(0), constant.lr_at(100_000));
    }

    #[test]
    fn required_window_arithmetic() {
        let cfg = FinetuneConfig {
            views: 4,
            downsample: 1,
            ..Default::default()
        };
        assert_eq!(cfg.required_window(32), 3 * 32 + 32);
        let cfg = FinetuneConfig {
            views: 1,
            downsample: 3,
            ..Default::default()
        };
        assert_eq!(cfg.required_window(16), 48);
    }

    #[test]
    fn eval_starts_are_even_and_unique() {
        assert_eq!(eval_window_starts(10, 20, 4), vec![0]);
        let starts = eval_window_starts(100, 20, 5);
        assert_eq!(starts, vec![0, 20, 40, 60, 80]);
        let starts = eval_window_starts(21, 20, 8);
        assert!(starts.iter().all(|&s| s + 20 <= 21));
    }

    #[test]
    fn probability_averaging_picks_mean_argmax() {
        // {(0.6,0.4), (0.2,0.8)} -> mean (0.4,0.6) -> class 1
        let a = [0.6, 0.4];
        let b = [0.2, 0.8];
        let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        let mut arg = 0;
        for (j, &p) in mean.iter().enumerate() {
            if p > mean[arg] {
                arg = j;
            }
        }
        assert_eq!(arg, 1);
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let mut cfg = FinetuneConfig::default();
        assert!(apply_finetune_override(&mut cfg, "initial_lr", "0.01").is_ok());
        assert_eq!(cfg.initial_lr, 0.01);
        assert!(apply_finetune_override(&mut cfg, "nonsense", "1").is_err());
    }
}
