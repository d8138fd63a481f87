//! Self-supervised pretraining: sample windows, generate view pairs, encode
//! both views in one concatenated batch, score all location pairs, and
//! minimize the negated infoNCE bound with Adam.
//!
//! Determinism: every random draw derives from `(seed, purpose, step,
//! sample)`, parallel workers write disjoint regions, and reductions run in
//! fixed order — so a run is reproducible bit for bit, and resuming from a
//! checkpoint continues the identical trajectory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array5, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{Result, VdimError};
use crate::infomax::heads::{flatten_locations, unflatten_locations};
use crate::infomax::{
    infonce, pair_scores, score_grads, temporal_difference, temporal_difference_backward,
    ContrastiveHeads, InfoNce, LayerPairSpec, NegativeMode, PairScores,
};
use crate::metrics::MetricsWriter;
use crate::nn::{Adam, Param, ParamWalk};
use crate::seeding::{rng_from, tag};
use crate::video_io::{sample_window, DatasetSplit};
use crate::view::{generate_views, ViewConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub layer_pairs: LayerPairSpec,
    pub negative_mode: NegativeMode,
    pub temporal_difference: bool,
    /// Output dimension of the contrastive score space.
    pub head_dim: usize,
    /// Soft score clamp (tanh-style) guarding against overflow; off by
    /// default to match the raw dot-product scores.
    pub score_clamp: Option<f64>,
    pub grad_clip: Option<f64>,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    /// Windows drawn per video per epoch.
    pub windows_per_video: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 200,
            batch_size: 32,
            learning_rate: 2e-4,
            layer_pairs: LayerPairSpec::default(),
            negative_mode: NegativeMode::default(),
            temporal_difference: false,
            head_dim: 512,
            score_clamp: None,
            grad_clip: None,
            checkpoint_interval: 1000,
            log_interval: 10,
            windows_per_video: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(VdimError::Config(
                "batch_size must be >= 2: in-batch negatives need partners".into(),
            ));
        }
        if self.steps < 1 {
            return Err(VdimError::Config("steps must be >= 1".into()));
        }
        if self.head_dim == 0 {
            return Err(VdimError::Config("head_dim must be positive".into()));
        }
        if self.windows_per_video == 0 {
            return Err(VdimError::Config("windows_per_video must be >= 1".into()));
        }
        self.layer_pairs.validate()
    }
}

/// Encoder plus contrastive heads; the unit that optimizers and checkpoints
/// operate on during pretraining.
#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub encoder: Encoder,
    pub heads: ContrastiveHeads,
}

impl ParamWalk for PretrainModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_params(f);
        self.heads.visit_params(f);
    }
}

/// Everything serialized across save/resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: PretrainModel,
    pub optimizer: Adam,
    pub step: u64,
    pub seed: u64,
    pub ema_loss: f64,
}

impl TrainState {
    /// Fresh state with seeded initialization.
    pub fn init(spec: EncoderSpec, cfg: &PretrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from(&[seed, tag::INIT]);
        let encoder = Encoder::build(spec.clone(), &mut rng)?;
        let heads = ContrastiveHeads::build(&spec, &cfg.layer_pairs.all_layers(), cfg.head_dim, &mut rng)?;
        Ok(TrainState {
            model: PretrainModel { encoder, heads },
            optimizer: Adam::new(cfg.learning_rate),
            step: 0,
            seed,
            ema_loss: f64::NAN,
        })
    }

    pub fn meta(&self, config_hash: &str) -> CheckpointMeta {
        CheckpointMeta {
            kind: "pretrain".into(),
            step: self.step,
            config_hash: config_hash.into(),
            encoder_spec: self.model.encoder.spec.clone(),
            head_layers: self.model.heads.layers(),
            head_dim: self.model.heads.out_dim,
            adam_step: self.optimizer.step_count,
            class_count: 0,
            classifier_hidden: 0,
            feature_views: 0,
            seed: self.seed,
        }
    }

    pub fn save(&mut self, path: &Path, config_hash: &str) -> Result<()> {
        let meta = self.meta(config_hash);
        save_checkpoint(path, &meta, &mut self.model)
    }

    /// Rebuilds a state from a pretrain checkpoint, verifying the encoder
    /// spec before restoring tensors.
    pub fn resume(path: &Path, cfg: &PretrainConfig) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.meta.kind != "pretrain" {
            return Err(VdimError::Checkpoint(format!(
                "{} is a {} checkpoint, expected pretrain",
                path.display(),
                ck.meta.kind
            )));
        }
        ck.meta.encoder_spec.validate()?;
        let mut state = TrainState::init(ck.meta.encoder_spec.clone(), cfg, ck.meta.seed)?;
        if state.model.heads.layers() != ck.meta.head_layers || cfg.head_dim != ck.meta.head_dim {
            return Err(VdimError::Checkpoint(format!(
                "head geometry mismatch: checkpoint has layers {:?} dim {}, config wants {:?} dim {}",
                ck.meta.head_layers,
                ck.meta.head_dim,
                state.model.heads.layers(),
                cfg.head_dim
            )));
        }
        ck.restore_into(&mut state.model)?;
        state.step = ck.meta.step;
        state.optimizer.step_count = ck.meta.adam_step;
        Ok(state)
    }
}

/// Converts a `(T, H, W, C)` view into encoder layout `(T, C, H, W)` rows of
/// a batch tensor.
fn copy_view_into(batch: &mut Array5<f64>, row: usize, view: &ndarray::Array4<f64>) {
    let (t, h, w, _c) = view.dim();
    let mut dst = batch.index_axis_mut(Axis(0), row);
    for ti in 0..t {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    dst[[ti, c, y, x]] = view[[ti, y, x, c]];
                }
            }
        }
    }
}

/// Renders one training example: decode, window, views. Pure per
/// `(dataset, seed, global_index)`.
fn make_example(
    dataset: &DatasetSplit,
    view_cfg: &ViewConfig,
    seed: u64,
    global_idx: u64,
    item_idx: usize,
) -> Result<(ndarray::Array4<f64>, ndarray::Array4<f64>)> {
    let clip = dataset.items[item_idx].decode()?;
    let window_len = view_cfg.required_window();
    let mut wrng = rng_from(&[seed, tag::WINDOW, global_idx]);
    let window = sample_window(&clip, window_len, &mut wrng)?;
    let mut vrng = rng_from(&[seed, tag::VIEW, global_idx]);
    let set = generate_views(&window, view_cfg, &mut vrng)?;
    let mut views = set.views.into_iter();
    Ok((views.next().unwrap(), views.next().unwrap()))
}

/// Shuffled item index for a global sample counter, reshuffling every epoch.
fn item_for(dataset_len: usize, windows_per_video: usize, seed: u64, global_idx: u64) -> usize {
    let effective = (dataset_len * windows_per_video) as u64;
    let epoch = global_idx / effective;
    let pos = (global_idx % effective) as usize;
    let mut order: Vec<usize> = (0..effective as usize).collect();
    let mut rng = rng_from(&[seed, tag::BATCH, epoch]);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    order[pos] % dataset_len
}

/// Assembles the concatenated two-view batch `(2B, T, C, H', W')`: rows
/// `0..B` are first views, rows `B..2B` second views, sample-aligned.
pub fn assemble_batch(
    dataset: &DatasetSplit,
    view_cfg: &ViewConfig,
    cfg: &PretrainConfig,
    seed: u64,
    step: u64,
) -> Result<Array5<f64>> {
    if dataset.is_empty() {
        return Err(VdimError::Dataset("pretraining dataset is empty".into()));
    }
    let b = cfg.batch_size;
    let out = view_cfg.output_size;
    let t = view_cfg.final_length;
    let mut batch = Array5::zeros((2 * b, t, 3, out, out));

    let examples: Vec<Result<(ndarray::Array4<f64>, ndarray::Array4<f64>)>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let global_idx = step * b as u64 + k as u64;
            let item_idx = item_for(dataset.len(), cfg.windows_per_video, seed, global_idx);
            make_example(dataset, view_cfg, seed, global_idx, item_idx)
        })
        .collect();

    for (k, ex) in examples.into_iter().enumerate() {
        let (v1, v2) = ex?;
        copy_view_into(&mut batch, k, &v1);
        copy_view_into(&mut batch, b + k, &v2);
    }
    Ok(batch)
}

/// Per-layer projection bookkeeping for one step.
struct LayerWork {
    j: usize,
    antecedent: bool,
    consequent: bool,
    bn_dim: (usize, usize, usize, usize, usize),
    cons_dim: (usize, usize, usize, usize, usize),
    diffed: bool,
    proj_a: Option<Array2<f64>>,
    proj_c: Option<Array2<f64>>,
}

/// Forward (and optionally backward) pass of the contrastive objective on a
/// concatenated two-view batch. With `backward`, parameter gradients are
/// accumulated through heads and encoder.
pub fn contrastive_step(
    model: &mut PretrainModel,
    batch: &Array5<f64>,
    cfg: &PretrainConfig,
    backward: bool,
) -> Result<InfoNce> {
    let (rows2b, _t, _c, _h, _w) = batch.dim();
    if rows2b % 2 != 0 {
        return Err(VdimError::invalid("two-view batch must have even row count"));
    }
    let b = rows2b / 2;
    let ante_layers = cfg.layer_pairs.antecedent_layers();
    let cons_layers = cfg.layer_pairs.consequent_layers();

    let pyramid = model.encoder.encode(batch, true)?;

    let mut works: Vec<LayerWork> = Vec::new();
    for j in model.heads.layers() {
        let tap = pyramid
            .taps
            .get(&j)
            .ok_or_else(|| VdimError::invalid(format!("encoder produced no tap {j}")))?;
        let antecedent = ante_layers.contains(&j);
        let consequent = cons_layers.contains(&j);
        let normed = model.heads.normalize_tap(j, tap, true)?;
        let bn_dim = normed.dim();

        let a_rows = antecedent.then(|| flatten_locations(&normed.slice(s![..b, .., .., .., ..]).to_owned()));
        let mut cons_dim = bn_dim;
        let mut diffed = false;
        let c_rows = if consequent {
            let mut grid = normed.slice(s![b.., .., .., .., ..]).to_owned();
            if cfg.temporal_difference {
                grid = temporal_difference(&grid)?;
                diffed = true;
            }
            cons_dim = grid.dim();
            Some(flatten_locations(&grid))
        } else {
            None
        };

        // one projection pass per layer covering both roles
        let na = a_rows.as_ref().map_or(0, |r| r.nrows());
        let cat = match (&a_rows, &c_rows) {
            (Some(a), Some(c)) => {
                let mut cat = Array2::zeros((a.nrows() + c.nrows(), a.ncols()));
                cat.slice_mut(s![..a.nrows(), ..]).assign(a);
                cat.slice_mut(s![a.nrows().., ..]).assign(c);
                cat
            }
            (Some(a), None) => a.clone(),
            (None, Some(c)) => c.clone(),
            (None, None) => continue,
        };
        let proj = model.heads.project_rows(j, &cat, true)?;
        let proj_a = antecedent.then(|| proj.slice(s![..na, ..]).to_owned());
        let proj_c = consequent.then(|| proj.slice(s![na.., ..]).to_owned());

        works.push(LayerWork {
            j,
            antecedent,
            consequent,
            bn_dim,
            cons_dim,
            diffed,
            proj_a,
            proj_c,
        });
    }

    let by_layer: BTreeMap<usize, usize> = works.iter().enumerate().map(|(i, w)| (w.j, i)).collect();
    let pair_list = cfg.layer_pairs.pairs();
    let mut scores: Vec<PairScores> = Vec::with_capacity(pair_list.len());
    for &(j, jp) in &pair_list {
        let a = works[by_layer[&j]].proj_a.as_ref().expect("antecedent projection");
        let c = works[by_layer[&jp]].proj_c.as_ref().expect("consequent projection");
        scores.push(pair_scores(j, jp, a, c, b)?);
    }

    let out = infonce(&scores, cfg.negative_mode, cfg.score_clamp).map_err(|e| match e {
        VdimError::NonFinite(_) => diagnostic_nonfinite(&scores),
        other => other,
    })?;

    if backward {
        let mut grad_a: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
        let mut grad_c: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
        for (idx, &(j, jp)) in pair_list.iter().enumerate() {
            let a = works[by_layer[&j]].proj_a.as_ref().unwrap();
            let c = works[by_layer[&jp]].proj_c.as_ref().unwrap();
            let (da, dc) = score_grads(&out.grads[idx], a, c);
            match grad_a.entry(j) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(da);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => *e.get_mut() += &da,
            }
            match grad_c.entry(jp) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(dc);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => *e.get_mut() += &dc,
            }
        }

        let mut tap_grads: BTreeMap<usize, Array5<f64>> = BTreeMap::new();
        for work in works.iter().rev() {
            let da = grad_a.get(&work.j);
            let dc = grad_c.get(&work.j);
            let na = da.map_or(0, |g| g.nrows());
            let nc = dc.map_or(0, |g| g.nrows());
            if na + nc == 0 {
                continue;
            }
            let dim_out = model.heads.out_dim;
            let mut cat = Array2::zeros((na + nc, dim_out));
            if let Some(g) = da {
                cat.slice_mut(s![..na, ..]).assign(g);
            }
            if let Some(g) = dc {
                cat.slice_mut(s![na.., ..]).assign(g);
            }
            let g_rows = model.heads.project_rows_backward(work.j, &cat)?;

            let (b2, t, c, x, y) = work.bn_dim;
            let mut g_tap = Array5::zeros((b2, t, c, x, y));
            if work.antecedent {
                let a_grid = unflatten_locations(&g_rows.slice(s![..na, ..]).to_owned(), (b, t, c, x, y));
                g_tap.slice_mut(s![..b, .., .., .., ..]).assign(&a_grid);
            }
            if work.consequent {
                let (bc, tc, cc, xc, yc) = work.cons_dim;
                debug_assert_eq!(bc, b);
                let c_grid = unflatten_locations(&g_rows.slice(s![na.., ..]).to_owned(), (b, tc, cc, xc, yc));
                let c_grid = if work.diffed {
                    temporal_difference_backward(&c_grid, t)
                } else {
                    c_grid
                };
                g_tap.slice_mut(s![b.., .., .., .., ..]).assign(&c_grid);
            }
            let g_enc = model.heads.normalize_tap_backward(work.j, &g_tap)?;
            tap_grads.insert(work.j, g_enc);
        }
        model.encoder.backward(tap_grads);
    }

    Ok(out)
}

fn diagnostic_nonfinite(scores: &[PairScores]) -> VdimError {
    let mut parts = Vec::new();
    for p in scores {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut bad = 0usize;
        for &v in p.scores.iter() {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
                sum += v;
            } else {
                bad += 1;
            }
        }
        parts.push(format!(
            "pair ({},{}): min {min:.3} max {max:.3} mean {:.3} nonfinite {bad}",
            p.j,
            p.jp,
            sum / p.scores.len() as f64
        ));
    }
    VdimError::NonFinite(format!("contrastive scores diverged; {}", parts.join("; ")))
}

fn global_grad_norm(model: &mut PretrainModel) -> f64 {
    let mut sq = 0.0;
    model.visit_params(&mut |p| {
        if p.trainable {
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
    });
    sq.sqrt()
}

fn clip_grads(model: &mut PretrainModel, limit: f64) {
    let norm = global_grad_norm(model);
    if norm > limit {
        let scale = limit / norm;
        model.visit_params(&mut |p| {
            if p.trainable {
                p.grad.mapv_inplace(|g| g * scale);
            }
        });
    }
}

/// Run context for [`pretrain`].
pub struct PretrainRun<'a> {
    pub dataset: &'a DatasetSplit,
    pub view: ViewConfig,
    pub cfg: PretrainConfig,
    pub encoder_spec: EncoderSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub quiet: bool,
}

/// The pretraining loop: one optimizer update per batch. Writes metrics to
/// `metrics_pretrain.jsonl` and checkpoints `ckpt_{step}` under `out_dir`.
pub fn pretrain(run: &PretrainRun<'_>, resume: Option<TrainState>) -> Result<TrainState> {
    run.cfg.validate()?;
    run.view.validate()?;
    if run.view.final_length != run.encoder_spec.input_len || run.view.output_size != run.encoder_spec.input_size {
        return Err(VdimError::Config(format!(
            "view output {}x{} frames/{} px does not match encoder input {} frames/{} px",
            run.view.final_length,
            run.view.output_size,
            run.view.output_size,
            run.encoder_spec.input_len,
            run.encoder_spec.input_size
        )));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::init(run.encoder_spec.clone(), &run.cfg, run.seed)?,
    };
    let mut metrics = MetricsWriter::open(&run.out_dir.join("metrics_pretrain.jsonl"))?;

    while state.step < run.cfg.steps {
        let step = state.step;
        let batch = assemble_batch(run.dataset, &run.view, &run.cfg, state.seed, step)?;
        state.model.zero_grads();
        let out = contrastive_step(&mut state.model, &batch, &run.cfg, true)?;
        if !out.loss.is_finite() {
            return Err(VdimError::NonFinite(format!("loss at step {step}")));
        }
        if let Some(limit) = run.cfg.grad_clip {
            clip_grads(&mut state.model, limit);
        }
        state.optimizer.lr = run.cfg.learning_rate;
        state.optimizer.step(&mut state.model);
        state.model.zero_grads();
        state.step += 1;

        state.ema_loss = if state.ema_loss.is_nan() {
            out.loss
        } else {
            0.98 * state.ema_loss + 0.02 * out.loss
        };

        if state.step % run.cfg.log_interval == 0 || state.step == run.cfg.steps {
            let mut fields = vec![("loss".to_string(), out.loss), ("ema_loss".to_string(), state.ema_loss)];
            for (&(j, jp), &mi) in &out.per_pair {
                fields.push((format!("mi/j{j}_jp{jp}"), mi));
            }
            metrics.log(state.step, &fields)?;
            if !run.quiet {
                eprintln!("pretrain step {} loss {:.4} ema {:.4}", state.step, out.loss, state.ema_loss);
            }
        }
        if run.cfg.checkpoint_interval > 0
            && (state.step % run.cfg.checkpoint_interval == 0 || state.step == run.cfg.steps)
        {
            let path = run.out_dir.join(format!("ckpt_{}", state.step));
            state.save(&path, &run.config_hash)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_io::synth::{generate_synthetic_dataset, SyntheticMotionSpec};

    fn tiny_setup(batch: usize) -> (DatasetSplit, ViewConfig, PretrainConfig) {
        let spec = SyntheticMotionSpec {
            clips_per_class: 3,
            clip_length: 40,
            resolution: (64, 64),
            seed: 2,
            ..Default::default()
        };
        let (train, _) = generate_synthetic_dataset(&spec).unwrap();
        let view = ViewConfig {
            final_length: 16,
            output_size: 64,
            downsample_factors: (1, 2),
            crop_scale: (0.6, 1.0),
            ..ViewConfig::default()
        };
        let cfg = PretrainConfig {
            steps: 2,
            batch_size: batch,
            head_dim: 64,
            log_interval: 1,
            checkpoint_interval: 0,
            ..Default::default()
        };
        (train, view, cfg)
    }

    #[test]
    fn one_optimizer_step_per_batch_and_lr0_freezes() {
        let (train, view, mut cfg) = tiny_setup(2);
        cfg.learning_rate = 0.0;
        cfg.steps = 2;
        let mut state = TrainState::init(EncoderSpec::tiny(), &cfg, 3).unwrap();
        // only trainable params: batch-norm running stats update in forward
        let before: Vec<f64> = {
            let mut v = Vec::new();
            state.model.visit_params(&mut |p| {
                if p.trainable {
                    v.extend(p.value.iter().copied())
                }
            });
            v
        };
        let run = PretrainRun {
            dataset: &train,
            view,
            cfg: cfg.clone(),
            encoder_spec: EncoderSpec::tiny(),
            seed: 3,
            out_dir: tempfile::tempdir().unwrap().path().to_path_buf(),
            config_hash: "t".into(),
            quiet: true,
        };
        let state = pretrain(&run, Some(state)).unwrap();
        assert_eq!(state.step, 2);
        assert_eq!(state.optimizer.step_count, 2);
        let mut after = Vec::new();
        let mut model = state.model;
        model.visit_params(&mut |p| {
            if p.trainable {
                after.extend(p.value.iter().copied())
            }
        });
        assert_eq!(before, after, "lr=0 must leave parameters unchanged");
    }

    #[test]
    fn duplicated_batch_with_shared_views_hits_log_m() {
        // identical samples + identical views -> all denominator terms equal
        let (train, view, mut cfg) = tiny_setup(4);
        cfg.layer_pairs = LayerPairSpec {
            antecedent: [5, 6, 8].into(),
            consequent: [8].into(),
            symmetric: false,
        };
        cfg.head_dim = 64;
        let mut state = TrainState::init(EncoderSpec::tiny(), &cfg, 5).unwrap();
        // one example copied into every batch row
        let (v1, v2) = make_example(&train, &view, 5, 0, 0).unwrap();
        let b = cfg.batch_size;
        let mut batch = Array5::zeros((2 * b, 16, 3, 64, 64));
        for k in 0..b {
            copy_view_into(&mut batch, k, &v1);
            copy_view_into(&mut batch, b + k, &v2);
        }
        let out = contrastive_step(&mut state.model, &batch, &cfg, false).unwrap();
        let expect = (b as f64).ln();
        assert!(
            (out.loss - expect).abs() < 1e-9,
            "loss {} expected ln({b}) = {expect}",
            out.loss
        );
    }

    #[test]
    fn loss_finite_and_nonnegative_at_init() {
        let (train, view, cfg) = tiny_setup(3);
        let mut state = TrainState::init(EncoderSpec::tiny(), &cfg, 7).unwrap();
        let batch = assemble_batch(&train, &view, &cfg, 7, 0).unwrap();
        let out = contrastive_step(&mut state.model, &batch, &cfg, false).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn checkpoint_resume_continues_identically() {
        let (train, view, mut cfg) = tiny_setup(2);
        cfg.steps = 3;
        cfg.checkpoint_interval = 0;
        cfg.log_interval = 100;
        let dir = tempfile::tempdir().unwrap();
        let run = PretrainRun {
            dataset: &train,
            view: view.clone(),
            cfg: cfg.clone(),
            encoder_spec: EncoderSpec::tiny(),
            seed: 11,
            out_dir: dir.path().to_path_buf(),
            config_hash: "h".into(),
            quiet: true,
        };
        // uninterrupted run to 3 steps
        let full = pretrain(&run, None).unwrap();

        // interrupted: stop at 1, checkpoint, resume to 3
        let mut cfg1 = cfg.clone();
        cfg1.steps = 1;
        let run1 = PretrainRun {
            dataset: &train,
            view,
            cfg: cfg1,
            encoder_spec: EncoderSpec::tiny(),
            seed: 11,
            out_dir: dir.path().to_path_buf(),
            config_hash: "h".into(),
            quiet: true,
        };
        let mut mid = pretrain(&run1, None).unwrap();
        let ckpt = dir.path().join("ckpt_1");
        mid.save(&ckpt, "h").unwrap();
        let resumed_state = TrainState::resume(&ckpt, &cfg).unwrap();
        assert_eq!(resumed_state.step, 1);
        let resumed = pretrain(&run, Some(resumed_state)).unwrap();

        let mut a = Vec::new();
        let mut fm = full.model;
        fm.visit_params(&mut |p| a.extend(p.value.iter().copied()));
        let mut b = Vec::new();
        let mut rm = resumed.model;
        rm.visit_params(&mut |p| b.extend(p.value.iter().copied()));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-10, "resume diverged: {x} vs {y}");
        }
    }
}
