//! Frame-directory dataset format.
//!
//! Layout: one directory per video containing numerically ordered frame
//! images, plus a manifest of TAB-separated lines
//! `relative_path<TAB>label<TAB>split`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use ndarray::Array4;

use crate::error::{Result, VdimError};

use super::{DatasetItem, DatasetSplit, VideoClip, VideoSource};

struct ManifestRow {
    rel_path: String,
    label: usize,
    split: String,
    line_no: usize,
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path)
        .map_err(|e| VdimError::Dataset(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(VdimError::Dataset(format!(
                "manifest line {line_no}: expected `path<TAB>label<TAB>split`, got {} fields",
                parts.len()
            )));
        }
        let label: usize = parts[1].parse().map_err(|_| {
            VdimError::Dataset(format!("manifest line {line_no} ({}): bad label `{}`", parts[0], parts[1]))
        })?;
        rows.push(ManifestRow {
            rel_path: parts[0].to_string(),
            label,
            split: parts[2].to_string(),
            line_no,
        });
    }
    if rows.is_empty() {
        return Err(VdimError::Dataset(format!("manifest {} is empty", path.display())));
    }
    Ok(rows)
}

/// Loads one split of a frame-directory dataset. `class_count` covers every
/// label in the manifest so train and test agree on it.
pub fn load_frame_directory_dataset(
    root: &Path,
    manifest: &Path,
    split_name: &str,
    resize: Option<(usize, usize)>,
    fps: f64,
) -> Result<DatasetSplit> {
    let rows = parse_manifest(manifest)?;
    let class_count = rows.iter().map(|r| r.label).max().unwrap() + 1;
    let mut items = Vec::new();
    for row in rows.iter().filter(|r| r.split == split_name) {
        let dir = root.join(&row.rel_path);
        if !dir.is_dir() {
            return Err(VdimError::Dataset(format!(
                "manifest line {} ({}): directory {} missing",
                row.line_no,
                row.rel_path,
                dir.display()
            )));
        }
        items.push(DatasetItem {
            source: VideoSource::FrameDir { dir, resize, fps },
            label: row.label,
            source_id: row.rel_path.clone(),
        });
    }
    DatasetSplit::new(items, split_name, class_count)
}

/// Numeric frame ordering: sort by the last digit run in the file stem, then
/// by name.
fn frame_sort_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let mut num = None;
    let mut current = 0u64;
    let mut in_digits = false;
    for ch in stem.chars() {
        if let Some(d) = ch.to_digit(10) {
            current = current.wrapping_mul(10).wrapping_add(d as u64);
            in_digits = true;
        } else {
            if in_digits {
                num = Some(current);
            }
            current = 0;
            in_digits = false;
        }
    }
    if in_digits {
        num = Some(current);
    }
    (num.unwrap_or(u64::MAX), stem.to_string())
}

pub(super) fn decode_frame_dir(
    dir: &Path,
    resize: Option<(usize, usize)>,
    fps: f64,
    label: Option<usize>,
    source_id: &str,
) -> Result<VideoClip> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| VdimError::Dataset(format!("{source_id}: cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    if frames.is_empty() {
        return Err(VdimError::Dataset(format!("{source_id}: no frame images in {}", dir.display())));
    }
    frames.sort_by_key(|p| frame_sort_key(p));

    let mut out: Option<Array4<f64>> = None;
    for (t, path) in frames.iter().enumerate() {
        let img = image::open(path)
            .map_err(|e| VdimError::Dataset(format!("{source_id}: unreadable frame {}: {e}", path.display())))?;
        let img = match resize {
            Some((h, w)) => img.resize_exact(w as u32, h as u32, FilterType::Triangle),
            None => img,
        };
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let arr = out.get_or_insert_with(|| Array4::zeros((frames.len(), h as usize, w as usize, 3)));
        if arr.dim().1 != h as usize || arr.dim().2 != w as usize {
            return Err(VdimError::Dataset(format!(
                "{source_id}: frame {} has size {}x{}, expected {}x{}",
                path.display(),
                w,
                h,
                arr.dim().2,
                arr.dim().1
            )));
        }
        for (y, x, px) in rgb.enumerate_pixels().map(|(x, y, px)| (y as usize, x as usize, px)) {
            for c in 0..3 {
                arr[[t, y, x, c]] = px.0[c] as f64 / 255.0;
            }
        }
    }
    VideoClip::new(out.unwrap(), fps, label, source_id)
}

/// Writes splits out in the frame-directory layout (PNG frames plus
/// `manifest.tsv`), mainly for inspecting the synthetic dataset.
pub fn export_frame_directory(root: &Path, splits: &[&DatasetSplit]) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let manifest_path = root.join("manifest.tsv");
    let mut manifest = fs::File::create(&manifest_path)?;
    for split in splits {
        for item in &split.items {
            let rel: String = item
                .source_id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let dir = root.join(&rel);
            fs::create_dir_all(&dir)?;
            let clip = item.decode()?;
            let (t, h, w, _) = clip.frames.dim();
            for ti in 0..t {
                let mut img = RgbImage::new(w as u32, h as u32);
                for y in 0..h {
                    for x in 0..w {
                        let px = [
                            (clip.frames[[ti, y, x, 0]] * 255.0).round() as u8,
                            (clip.frames[[ti, y, x, 1]] * 255.0).round() as u8,
                            (clip.frames[[ti, y, x, 2]] * 255.0).round() as u8,
                        ];
                        img.put_pixel(x as u32, y as u32, image::Rgb(px));
                    }
                }
                DynamicImage::ImageRgb8(img).save(dir.join(format!("frame_{ti:05}.png")))?;
            }
            writeln!(manifest, "{rel}\t{}\t{}", item.label, split.split_name)?;
        }
    }
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_io::synth::{generate_synthetic_dataset, SyntheticMotionSpec};

    fn tiny_synth() -> SyntheticMotionSpec {
        SyntheticMotionSpec {
            clips_per_class: 2,
            clip_length: 3,
            resolution: (16, 16),
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn export_then_load_round_trips_geometry() {
        let tmp = tempfile::tempdir().unwrap();
        let (train, test) = generate_synthetic_dataset(&tiny_synth()).unwrap();
        let manifest = export_frame_directory(tmp.path(), &[&train, &test]).unwrap();
        let loaded = load_frame_directory_dataset(tmp.path(), &manifest, "train", None, 25.0).unwrap();
        assert_eq!(loaded.len(), train.len());
        assert_eq!(loaded.class_count, 4);
        let clip = loaded.items[0].decode().unwrap();
        assert_eq!(clip.frames.dim(), (3, 16, 16, 3));
        // 8-bit quantization bound
        let orig = train.items[0].decode().unwrap();
        let max_err = (&clip.frames - &orig.frames).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(max_err <= 0.5 / 255.0 + 1e-9, "max_err {max_err}");
    }

    #[test]
    fn decode_resizes_on_request() {
        let tmp = tempfile::tempdir().unwrap();
        let (train, _) = generate_synthetic_dataset(&tiny_synth()).unwrap();
        let manifest = export_frame_directory(tmp.path(), &[&train]).unwrap();
        let loaded = load_frame_directory_dataset(tmp.path(), &manifest, "train", Some((32, 32)), 25.0).unwrap();
        let clip = loaded.items[0].decode().unwrap();
        assert_eq!(clip.frames.dim(), (3, 32, 32, 3));
    }

    #[test]
    fn manifest_errors_identify_line() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = tmp.path().join("manifest.tsv");
        std::fs::write(&manifest, "videodir\tnotanumber\ttrain\n").unwrap();
        let err = load_frame_directory_dataset(tmp.path(), &manifest, "train", None, 25.0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
        std::fs::write(&manifest, "missingdir\t0\ttrain\n").unwrap();
        let err = load_frame_directory_dataset(tmp.path(), &manifest, "train", None, 25.0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("missingdir"), "{err}");
    }

    #[test]
    fn frame_order_is_numeric() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("v");
        std::fs::create_dir_all(&dir).unwrap();
        // frame_2 must come before frame_10 despite lexicographic order
        for (i, val) in [(2u32, 10u8), (10, 20)] {
            let mut img = RgbImage::new(4, 4);
            for px in img.pixels_mut() {
                *px = image::Rgb([val, val, val]);
            }
            DynamicImage::ImageRgb8(img).save(dir.join(format!("frame_{i}.png"))).unwrap();
        }
        let clip = decode_frame_dir(&dir, None, 25.0, None, "v").unwrap();
        assert!(clip.frames[[0, 0, 0, 0]] < clip.frames[[1, 0, 0, 0]]);
    }
}
