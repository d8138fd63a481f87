//! Append-only JSON-lines metrics stream.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{Map, Value};

use crate::error::Result;

pub struct MetricsWriter {
    out: BufWriter<fs::File>,
    pub path: PathBuf,
    started: Instant,
}

impl MetricsWriter {
    /// Opens (appending) a JSONL metrics file.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            started: Instant::now(),
        })
    }

    /// Writes one record, adding a `wallclock` seconds field.
    pub fn log(&mut self, step: u64, fields: &[(String, f64)]) -> Result<()> {
        let mut map = Map::new();
        map.insert("step".into(), Value::from(step));
        for (k, v) in fields {
            map.insert(k.clone(), Value::from(*v));
        }
        map.insert("wallclock".into(), Value::from(self.started.elapsed().as_secs_f64()));
        serde_json::to_writer(&mut self.out, &Value::Object(map)).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads back a metrics file as (step, field map) records.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, Map<String, Value>)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(std::io::Error::from)?;
        let obj = v.as_object().cloned().unwrap_or_default();
        let step = obj.get("step").and_then(Value::as_u64).unwrap_or(0);
        out.push((step, obj));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_and_reads_records() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("metrics.jsonl");
        {
            let mut w = MetricsWriter::open(&path).unwrap();
            w.log(1, &[("loss".into(), 2.5)]).unwrap();
            w.log(2, &[("loss".into(), 2.0), ("mi/j5_jp8".into(), -0.7)]).unwrap();
        }
        let records = read_metrics(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].0, 2);
        assert_eq!(records[1].1.get("mi/j5_jp8").unwrap().as_f64().unwrap(), -0.7);
        assert!(records[0].1.contains_key("wallclock"));
    }
}
