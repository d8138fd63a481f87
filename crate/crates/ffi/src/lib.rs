//! C ABI for embedding the pipeline in other languages.
//!
//! Conventions: opaque handles behind pointers, integer status codes, and a
//! thread-local error message retrievable with [`vdim_last_error`]. Every
//! handle returned by a `_new`/`_load` function must be released with the
//! matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use vdim::config::RunConfig;
use vdim::downstream::{evaluate, finetune, load_downstream, save_downstream, FinetuneRun};
use vdim::error::VdimError;
use vdim::pretrain::{pretrain, PretrainRun, TrainState};
use vdim::video_io::{export_frame_directory, generate_synthetic_dataset, sample_window, VideoClip};
use vdim::view::{apply_views, plan_views, ViewConfig};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VdimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    RuntimeError = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn fail(e: &VdimError) -> VdimStatus {
    set_error(&e.to_string());
    match e {
        VdimError::InvalidInput(_) | VdimError::Config(_) | VdimError::Shape { .. } => VdimStatus::InvalidArgument,
        _ => VdimStatus::RuntimeError,
    }
}

/// Message for the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vdim_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Semantic version of the library, static storage.
#[no_mangle]
pub extern "C" fn vdim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Opaque run configuration handle.
pub struct VdimConfig {
    inner: RunConfig,
}

/// A fresh configuration with library defaults.
#[no_mangle]
pub extern "C" fn vdim_config_default() -> *mut VdimConfig {
    Box::into_raw(Box::new(VdimConfig {
        inner: RunConfig::default(),
    }))
}

/// Loads a TOML configuration file; null on failure (see `vdim_last_error`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vdim_config_load(path: *const c_char) -> *mut VdimConfig {
    let Some(path) = cstr_arg(path) else {
        set_error("path is null or not UTF-8");
        return ptr::null_mut();
    };
    match RunConfig::load(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(VdimConfig { inner })),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Applies a dot-path override, e.g. key "pretrain.steps", value "200".
///
/// # Safety
/// `cfg` must come from a `vdim_config_*` constructor; `key`/`value` must be
/// valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn vdim_config_set(cfg: *mut VdimConfig, key: *const c_char, value: *const c_char) -> VdimStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    let (Some(key), Some(value)) = (cstr_arg(key), cstr_arg(value)) else {
        set_error("key/value is null or not UTF-8");
        return VdimStatus::NullArgument;
    };
    match cfg.inner.apply_override(key, value) {
        Ok(()) => VdimStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Writes the canonical config hash (hex) into `buf` (NUL-terminated).
///
/// # Safety
/// `buf` must point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn vdim_config_hash(cfg: *const VdimConfig, buf: *mut c_char, len: usize) -> VdimStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    if buf.is_null() {
        set_error("buffer is null");
        return VdimStatus::NullArgument;
    }
    let hash = cfg.inner.content_hash();
    if len < hash.len() + 1 {
        set_error("buffer too small for hash");
        return VdimStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(hash.as_ptr(), buf as *mut u8, hash.len());
    *buf.add(hash.len()) = 0;
    VdimStatus::Ok
}

/// # Safety
/// `cfg` must come from a `vdim_config_*` constructor (or be null).
#[no_mangle]
pub unsafe extern "C" fn vdim_config_free(cfg: *mut VdimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the fast invariant suite; prints one line per check to stdout.
#[no_mangle]
pub extern "C" fn vdim_run_selfcheck() -> VdimStatus {
    if vdim::selfcheck::run_selfcheck() {
        VdimStatus::Ok
    } else {
        set_error("selfcheck failed");
        VdimStatus::RuntimeError
    }
}

fn splits_for(cfg: &RunConfig) -> vdim::error::Result<(vdim::video_io::DatasetSplit, vdim::video_io::DatasetSplit)> {
    match cfg.dataset.source {
        vdim::config::DatasetSource::Synthetic => generate_synthetic_dataset(&cfg.dataset.synthetic),
        vdim::config::DatasetSource::FrameDir => {
            let fd = &cfg.dataset.frame_dir;
            Ok((
                vdim::video_io::load_frame_directory_dataset(&fd.root, &fd.manifest, &fd.train_split, fd.resize, fd.fps)?,
                vdim::video_io::load_frame_directory_dataset(&fd.root, &fd.manifest, &fd.test_split, fd.resize, fd.fps)?,
            ))
        }
    }
}

/// Pretrains per the configuration, writing checkpoints and metrics under
/// `out_dir`.
///
/// # Safety
/// `cfg` must be a live config handle; `out_dir` a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vdim_run_pretrain(cfg: *const VdimConfig, out_dir: *const c_char) -> VdimStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    let Some(out_dir) = cstr_arg(out_dir) else {
        set_error("out_dir is null or not UTF-8");
        return VdimStatus::NullArgument;
    };
    let result = (|| -> vdim::error::Result<()> {
        cfg.inner.validate()?;
        let (train, _) = splits_for(&cfg.inner)?;
        let run = PretrainRun {
            dataset: &train,
            view: cfg.inner.view.clone(),
            cfg: cfg.inner.pretrain.clone(),
            encoder_spec: cfg.inner.encoder.build_spec()?,
            seed: cfg.inner.seed,
            out_dir: PathBuf::from(out_dir),
            config_hash: cfg.inner.content_hash(),
            quiet: true,
        };
        let mut state = pretrain(&run, None)?;
        let path = PathBuf::from(out_dir).join(format!("ckpt_{}", state.step));
        state.save(&path, &cfg.inner.content_hash())
    })();
    match result {
        Ok(()) => VdimStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Fine-tunes from `checkpoint` (null = random init), evaluates on the test
/// split, writes `eval_report.json` under `out_dir`, and returns the test
/// accuracy through `accuracy_out` when non-null.
///
/// # Safety
/// Pointer arguments must be valid as documented above.
#[no_mangle]
pub unsafe extern "C" fn vdim_run_finetune(
    cfg: *const VdimConfig,
    checkpoint: *const c_char,
    out_dir: *const c_char,
    accuracy_out: *mut c_double,
) -> VdimStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    let Some(out_dir) = cstr_arg(out_dir) else {
        set_error("out_dir is null or not UTF-8");
        return VdimStatus::NullArgument;
    };
    let ckpt: Option<&str> = if checkpoint.is_null() { None } else { cstr_arg(checkpoint) };
    let result = (|| -> vdim::error::Result<f64> {
        cfg.inner.validate()?;
        let (train, test) = splits_for(&cfg.inner)?;
        let pretrained = match ckpt {
            Some(path) => TrainState::resume(Path::new(path), &cfg.inner.pretrain)?,
            None => TrainState::init(cfg.inner.encoder.build_spec()?, &cfg.inner.pretrain, cfg.inner.seed)?,
        };
        let run = FinetuneRun {
            train_split: &train,
            cfg: cfg.inner.finetune.clone(),
            seed: cfg.inner.seed,
            out_dir: PathBuf::from(out_dir),
            config_hash: cfg.inner.content_hash(),
            quiet: true,
        };
        let mut model = finetune(&pretrained, &run)?;
        let ckpt_path = PathBuf::from(out_dir).join(format!("finetuned_{}", cfg.inner.finetune.steps));
        save_downstream(
            &ckpt_path,
            &mut model,
            &cfg.inner.finetune,
            cfg.inner.finetune.steps,
            &cfg.inner.content_hash(),
            train.class_count,
            cfg.inner.seed,
        )?;
        let report = evaluate(
            &mut model,
            &test,
            &cfg.inner.finetune,
            &cfg.inner.content_hash(),
            &ckpt_path.display().to_string(),
        )?;
        std::fs::write(
            PathBuf::from(out_dir).join("eval_report.json"),
            serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?,
        )?;
        Ok(report.video_accuracy)
    })();
    match result {
        Ok(acc) => {
            if !accuracy_out.is_null() {
                *accuracy_out = acc;
            }
            VdimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Evaluates a fine-tuned checkpoint on a named split; accuracy through
/// `accuracy_out` when non-null.
///
/// # Safety
/// Pointer arguments must be valid as documented above.
#[no_mangle]
pub unsafe extern "C" fn vdim_run_evaluate(
    cfg: *const VdimConfig,
    checkpoint: *const c_char,
    split: *const c_char,
    accuracy_out: *mut c_double,
) -> VdimStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    let (Some(checkpoint), Some(split)) = (cstr_arg(checkpoint), cstr_arg(split)) else {
        set_error("checkpoint/split is null or not UTF-8");
        return VdimStatus::NullArgument;
    };
    let result = (|| -> vdim::error::Result<f64> {
        let (train, test) = splits_for(&cfg.inner)?;
        let chosen = match split {
            "train" => &train,
            "test" => &test,
            other => return Err(VdimError::Config(format!("unknown split `{other}`"))),
        };
        let (mut model, _meta) = load_downstream(Path::new(checkpoint), &cfg.inner.finetune)?;
        let report = evaluate(&mut model, chosen, &cfg.inner.finetune, &cfg.inner.content_hash(), checkpoint)?;
        Ok(report.video_accuracy)
    })();
    match result {
        Ok(acc) => {
            if !accuracy_out.is_null() {
                *accuracy_out = acc;
            }
            VdimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Materializes the synthetic dataset in the frame-directory layout.
///
/// # Safety
/// Pointer arguments must be valid as documented above.
#[no_mangle]
pub unsafe extern "C" fn vdim_run_synthesize(cfg: *const VdimConfig, dest: *const c_char) -> VdimStatus {
    let Some(cfg) = cfg.as_ref() else {
        set_error("config handle is null");
        return VdimStatus::NullArgument;
    };
    let Some(dest) = cstr_arg(dest) else {
        set_error("dest is null or not UTF-8");
        return VdimStatus::NullArgument;
    };
    let result = (|| -> vdim::error::Result<()> {
        let (train, test) = generate_synthetic_dataset(&cfg.inner.dataset.synthetic)?;
        export_frame_directory(Path::new(dest), &[&train, &test])?;
        Ok(())
    })();
    match result {
        Ok(()) => VdimStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Opaque encoder handle for feature extraction.
pub struct VdimModel {
    state: TrainState,
    view: ViewConfig,
}

/// Loads a pretrain checkpoint for feature extraction; null on failure.
///
/// # Safety
/// `checkpoint` must be a valid NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn vdim_model_load(checkpoint: *const c_char) -> *mut VdimModel {
    let Some(path) = cstr_arg(checkpoint) else {
        set_error("checkpoint path is null or not UTF-8");
        return ptr::null_mut();
    };
    let result = (|| -> vdim::error::Result<VdimModel> {
        let meta = vdim::checkpoint::load_checkpoint(Path::new(path))?.meta;
        let mut cfg = vdim::pretrain::PretrainConfig::default();
        cfg.head_dim = meta.head_dim;
        cfg.layer_pairs = vdim::infomax::LayerPairSpec {
            antecedent: meta.head_layers.iter().copied().collect(),
            consequent: meta.head_layers.iter().copied().collect(),
            symmetric: false,
        };
        let state = TrainState::resume(Path::new(path), &cfg)?;
        let view = ViewConfig::identity(state.model.encoder.spec.input_len, state.model.encoder.spec.input_size);
        Ok(VdimModel { state, view })
    })();
    match result {
        Ok(model) => Box::into_raw(Box::new(model)),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Dimension of the vectors produced by [`vdim_model_embed`].
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn vdim_model_feature_dim(model: *const VdimModel) -> usize {
    match model.as_ref() {
        Some(m) => m.state.model.heads.out_dim,
        None => 0,
    }
}

/// Embeds a clip: `frames` is `t*h*w*3` doubles in `[0,1]`, frame-major,
/// row-major, RGB interleaved. The clip is padded or truncated to the
/// encoder's input length, center-cropped, encoded, and projected through
/// the global head into `out` (`vdim_model_feature_dim` doubles).
///
/// # Safety
/// `frames` must hold `t*h*w*3` readable doubles, `out` at least
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vdim_model_embed(
    model: *mut VdimModel,
    frames: *const c_double,
    t: usize,
    h: usize,
    w: usize,
    out: *mut c_double,
    out_len: usize,
) -> VdimStatus {
    let Some(m) = model.as_mut() else {
        set_error("model handle is null");
        return VdimStatus::NullArgument;
    };
    if frames.is_null() || out.is_null() {
        set_error("frames/out is null");
        return VdimStatus::NullArgument;
    }
    let dim = m.state.model.heads.out_dim;
    if out_len < dim {
        set_error("output buffer too small");
        return VdimStatus::InvalidArgument;
    }
    let result = (|| -> vdim::error::Result<Vec<f64>> {
        let data = std::slice::from_raw_parts(frames, t * h * w * 3);
        let array = ndarray::Array4::from_shape_vec((t, h, w, 3), data.to_vec())
            .map_err(|e| VdimError::invalid(e.to_string()))?;
        let clip = VideoClip::new(array, 25.0, None, "ffi")?;
        let spec_len = m.state.model.encoder.spec.input_len;
        let mut norng = vdim::seeding::rng_from(&[0]);
        let window = if clip.len() >= spec_len {
            VideoClip {
                frames: clip.frames.slice(ndarray::s![..spec_len, .., .., ..]).to_owned(),
                fps: clip.fps,
                label: None,
                source_id: clip.source_id.clone(),
            }
        } else {
            sample_window(&clip, spec_len, &mut norng)?
        };
        let plan = plan_views(window.len(), &m.view, &mut norng)?;
        let set = apply_views(&window, &plan, &m.view)?;
        let view = &set.views[0];
        let (tt, hh, ww, _) = view.dim();
        let mut batch = ndarray::Array5::zeros((1, tt, 3, hh, ww));
        for ti in 0..tt {
            for c in 0..3 {
                for y in 0..hh {
                    for x in 0..ww {
                        batch[[0, ti, c, y, x]] = view[[ti, y, x, c]];
                    }
                }
            }
        }
        let tap = *m.state.model.encoder.spec.tap_layers.iter().max().unwrap();
        let pyramid = m.state.model.encoder.encode(&batch, false)?;
        let grid = pyramid.taps.get(&tap).unwrap();
        let rows = m.state.model.heads.project_tap(tap, grid, false)?;
        Ok(rows.row(0).to_vec())
    })();
    match result {
        Ok(vec) => {
            ptr::copy_nonoverlapping(vec.as_ptr(), out, dim);
            VdimStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `model` must come from `vdim_model_load` (or be null).
#[no_mangle]
pub unsafe extern "C" fn vdim_model_free(model: *mut VdimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
