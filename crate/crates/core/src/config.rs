//! Run configuration: one TOML document covering dataset, views, encoder,
//! pretraining and fine-tuning. Parsing is fail-closed (unknown keys are
//! rejected), overrides address fields by dot-path, and the resolved config
//! is hashed canonically and written next to every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::downstream::FinetuneConfig;
use crate::encoder::EncoderSpec;
use crate::error::{Result, VdimError};
use crate::pretrain::PretrainConfig;
use crate::video_io::synth::SyntheticMotionSpec;
use crate::view::ViewConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    FrameDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameDirConfig {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub train_split: String,
    pub test_split: String,
    /// Decode-time resize `(H, W)`.
    pub resize: Option<(usize, usize)>,
    pub fps: f64,
}

impl Default for FrameDirConfig {
    fn default() -> Self {
        FrameDirConfig {
            root: PathBuf::from("."),
            manifest: PathBuf::from("manifest.tsv"),
            train_split: "train".into(),
            test_split: "test".into(),
            resize: None,
            fps: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub synthetic: SyntheticMotionSpec,
    pub frame_dir: FrameDirConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Synthetic,
            synthetic: SyntheticMotionSpec::default(),
            frame_dir: FrameDirConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// "tiny" or "full".
    pub preset: String,
    pub block_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            preset: "tiny".into(),
            block_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn build_spec(&self) -> Result<EncoderSpec> {
        let mut spec = EncoderSpec::by_name(&self.preset)?;
        spec.block_norm = self.block_norm;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub view: ViewConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        // defaults are desk-scale: tiny encoder with matching view geometry
        let mut view = ViewConfig::default();
        view.final_length = 16;
        view.output_size = 64;
        let mut pretrain = PretrainConfig::default();
        pretrain.head_dim = 64;
        pretrain.batch_size = 16;
        RunConfig {
            dataset: DatasetConfig::default(),
            view,
            encoder: EncoderConfig::default(),
            pretrain,
            finetune: FinetuneConfig::default(),
            output_dir: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VdimError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| VdimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.view.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.encoder.build_spec()?.validate()?;
        if self.dataset.source == DatasetSource::Synthetic {
            self.dataset.synthetic.validate()?;
        }
        Ok(())
    }

    /// Applies a `dotted.path=value` override by editing the TOML tree and
    /// re-parsing fail-closed, so unknown paths and type errors are caught.
    pub fn apply_override(&mut self, dotted: &str, raw_value: &str) -> Result<()> {
        let mut tree: toml::Value =
            toml::Value::try_from(&*self).map_err(|e| VdimError::Config(e.to_string()))?;
        let segments: Vec<&str> = dotted.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(VdimError::Config(format!("bad override path `{dotted}`")));
        }
        let value = parse_toml_value(raw_value);
        let mut node = &mut tree;
        for seg in &segments[..segments.len() - 1] {
            node = node
                .get_mut(seg)
                .ok_or_else(|| VdimError::Config(format!("unknown config path `{dotted}`")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| VdimError::Config(format!("`{dotted}` does not address a field")))?;
        let leaf = segments.last().unwrap().to_string();
        // new Option-typed leaves (e.g. output_dir) may be absent from the
        // serialized tree; inserting is fine because re-parsing stays
        // fail-closed
        table.insert(leaf, value);
        *self = tree
            .try_into()
            .map_err(|e| VdimError::Config(format!("override {dotted}={raw_value}: {e}")))?;
        Ok(())
    }

    /// Canonical content hash (sorted-key JSON, sha256, first 16 hex chars).
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut canon = String::new();
        write_canonical(&json, &mut canon);
        let digest = Sha256::digest(canon.as_bytes());
        hex_prefix(&digest, 16)
    }

    /// Output directory: config value, else `VDIM_OUTPUT_DIR`, else
    /// `./vdim_out`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        if let Ok(env_dir) = std::env::var("VDIM_OUTPUT_DIR") {
            if !env_dir.is_empty() {
                return PathBuf::from(env_dir);
            }
        }
        PathBuf::from("vdim_out")
    }

    /// Writes the resolved config next to the run outputs.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("config_resolved.toml");
        let text = toml::to_string_pretty(self).map_err(|e| VdimError::Config(e.to_string()))?;
        std::fs::write(&path, format!("# config hash: {}\n{text}", self.content_hash()))?;
        Ok(path)
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    // parse as the right-hand side of a TOML assignment; fall back to string
    let attempt = format!("v = {raw}");
    if let Ok(doc) = attempt.parse::<toml::Table>() {
        if let Some(v) = doc.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            out.push('{');
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{k:?}:"));
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "nonsense = 1\n";
        let err = toml::from_str::<RunConfig>(text).unwrap_err().to_string();
        assert!(err.contains("nonsense"), "{err}");
        let text = "[pretrain]\nsteps = 5\nbogus_field = 2\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn overrides_by_dot_path() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("pretrain.steps", "200").unwrap();
        assert_eq!(cfg.pretrain.steps, 200);
        cfg.apply_override("finetune.initial_lr", "1e-4").unwrap();
        assert_eq!(cfg.finetune.initial_lr, 1e-4);
        cfg.apply_override("encoder.preset", "full").unwrap();
        assert_eq!(cfg.encoder.preset, "full");
        cfg.apply_override("dataset.synthetic.seed", "9").unwrap();
        assert_eq!(cfg.dataset.synthetic.seed, 9);
        assert!(cfg.apply_override("pretrain.not_a_field", "1").is_err());
        assert!(cfg.apply_override("pretrain.steps", "notanumber").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.content_hash(), b.content_hash());
        b.apply_override("seed", "123").unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn resolved_config_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_override("pretrain.steps", "7").unwrap();
        let path = cfg.write_resolved(tmp.path()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded, cfg);
        assert_eq!(loaded.content_hash(), cfg.content_hash());
    }
}
