//! Versioned binary checkpoint container: JSON metadata followed by named
//! f64 tensors (parameter values plus Adam moments), bit-exact round trip.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderSpec;
use crate::error::{Result, VdimError};
use crate::nn::ParamWalk;

const MAGIC: &[u8; 8] = b"VDIMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// "pretrain" or "finetune".
    pub kind: String,
    pub step: u64,
    pub config_hash: String,
    pub encoder_spec: EncoderSpec,
    pub head_layers: Vec<usize>,
    pub head_dim: usize,
    pub adam_step: u64,
    /// Classifier geometry for finetune checkpoints (zeros otherwise).
    pub class_count: usize,
    pub classifier_hidden: usize,
    pub feature_views: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct TensorEntry {
    value: ArrayD<f64>,
    m: ArrayD<f64>,
    v: ArrayD<f64>,
    trainable: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: BTreeMap<String, TensorEntry>,
}

fn write_array(w: &mut impl Write, a: &ArrayD<f64>) -> Result<()> {
    w.write_u8(a.ndim() as u8)?;
    for &d in a.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &x in a.as_slice().expect("standard layout") {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read) -> Result<ArrayD<f64>> {
    let ndim = r.read_u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = vec![0.0f64; len];
    for x in &mut data {
        *x = r.read_f64::<LittleEndian>()?;
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| VdimError::Checkpoint(e.to_string()))
}

/// Saves `meta` plus every parameter reachable from `model`.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, model: &mut dyn ParamWalk) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let meta_json = serde_json::to_vec(meta).map_err(|e| VdimError::Checkpoint(e.to_string()))?;
    w.write_u32::<LittleEndian>(meta_json.len() as u32)?;
    w.write_all(&meta_json)?;

    let mut count = 0u32;
    model.visit_params(&mut |_| count += 1);
    w.write_u32::<LittleEndian>(count)?;
    let mut result = Ok(());
    model.visit_params(&mut |p| {
        if result.is_err() {
            return;
        }
        let inner = (|| -> Result<()> {
            w.write_u32::<LittleEndian>(p.name.len() as u32)?;
            w.write_all(p.name.as_bytes())?;
            w.write_u8(u8::from(p.trainable))?;
            write_array(&mut w, &p.value)?;
            if p.trainable {
                write_array(&mut w, &p.m)?;
                write_array(&mut w, &p.v)?;
            }
            Ok(())
        })();
        if inner.is_err() {
            result = inner;
        }
    });
    result?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint fully into memory.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        fs::File::open(path)
            .map_err(|e| VdimError::Checkpoint(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| VdimError::Checkpoint(format!("{}: {e}", path.display())))?;
    if &magic != MAGIC {
        return Err(VdimError::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(VdimError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)
        .map_err(|e| VdimError::Checkpoint(format!("{}: corrupt metadata: {e}", path.display())))?;

    let count = r.read_u32::<LittleEndian>()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        if name_len > 4096 {
            return Err(VdimError::Checkpoint(format!("{}: corrupt tensor name", path.display())));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|e| VdimError::Checkpoint(e.to_string()))?;
        let trainable = r.read_u8()? != 0;
        let value = read_array(&mut r)?;
        let (m, v) = if trainable {
            (read_array(&mut r)?, read_array(&mut r)?)
        } else {
            (ArrayD::zeros(value.raw_dim()), ArrayD::zeros(value.raw_dim()))
        };
        tensors.insert(name, TensorEntry { value, m, v, trainable });
    }
    Ok(Checkpoint { meta, tensors })
}

impl Checkpoint {
    /// Restores every parameter of `model` from the stored tensors; errors
    /// on missing names or shape mismatches.
    pub fn restore_into(&self, model: &mut dyn ParamWalk) -> Result<()> {
        let mut missing = Vec::new();
        let mut shape_err = None;
        model.visit_params(&mut |p| {
            match self.tensors.get(&p.name) {
                None => missing.push(p.name.clone()),
                Some(entry) => {
                    debug_assert_eq!(entry.trainable, p.trainable, "trainability flip for {}", p.name);
                    if entry.value.shape() != p.value.shape() {
                        shape_err.get_or_insert_with(|| {
                            VdimError::shape(format!("checkpoint tensor {}", p.name), p.value.shape(), entry.value.shape())
                        });
                        return;
                    }
                    p.value.assign(&entry.value);
                    p.m.assign(&entry.m);
                    p.v.assign(&entry.v);
                }
            };
        });
        if let Some(e) = shape_err {
            return Err(e);
        }
        if !missing.is_empty() {
            return Err(VdimError::Checkpoint(format!(
                "checkpoint missing tensors: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::seeding::rng_from;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            kind: "pretrain".into(),
            step: 17,
            config_hash: "abc".into(),
            encoder_spec: EncoderSpec::tiny(),
            head_layers: vec![5, 6, 8],
            head_dim: 64,
            adam_step: 17,
            class_count: 0,
            classifier_hidden: 0,
            feature_views: 0,
            seed: 0,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt_17");
        let mut lin = Linear::new("lin", 7, 5, &mut rng_from(&[1]));
        lin.w.m.fill(0.123456789123456789);
        save_checkpoint(&path, &meta(), &mut lin).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta.step, 17);
        let mut lin2 = Linear::new("lin", 7, 5, &mut rng_from(&[2]));
        ck.restore_into(&mut lin2).unwrap();
        assert_eq!(lin.w.value, lin2.w.value);
        assert_eq!(lin.w.m, lin2.w.m);
        assert_eq!(lin.b.value, lin2.b.value);
        // bit equality
        for (a, b) in lin.w.value.iter().zip(lin2.w.value.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_file_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("not a checkpoint"), "{err}");
    }

    #[test]
    fn wrong_geometry_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt");
        let mut lin = Linear::new("lin", 7, 5, &mut rng_from(&[1]));
        save_checkpoint(&path, &meta(), &mut lin).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        let mut other = Linear::new("lin", 6, 5, &mut rng_from(&[1]));
        assert!(ck.restore_into(&mut other).is_err());
        let mut renamed = Linear::new("other", 7, 5, &mut rng_from(&[1]));
        assert!(ck.restore_into(&mut renamed).is_err());
    }
}
