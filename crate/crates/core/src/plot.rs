//! Static plot rendering: a grid heatmap PNG for ablation tables.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;

const CELL: u32 = 48;
const GAP: u32 = 2;
const MARGIN: u32 = 10;

/// Piecewise-linear dark-blue -> teal -> yellow ramp.
fn colormap(t: f64) -> Rgb<u8> {
    let anchors: [(f64, [f64; 3]); 4] = [
        (0.0, [28.0, 16.0, 68.0]),
        (0.35, [59.0, 82.0, 139.0]),
        (0.7, [33.0, 145.0, 140.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    for w in anchors.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            return Rgb([
                (c0[0] + (c1[0] - c0[0]) * f) as u8,
                (c0[1] + (c1[1] - c0[1]) * f) as u8,
                (c0[2] + (c1[2] - c0[2]) * f) as u8,
            ]);
        }
    }
    Rgb([253, 231, 37])
}

/// Renders a `rows x cols` heatmap; `None` cells are gray. Values are
/// normalized to the observed range (a constant grid renders mid-scale).
pub fn save_heatmap(path: &Path, values: &[Vec<Option<f64>>]) -> Result<()> {
    let rows = values.len() as u32;
    let cols = values.first().map_or(0, |r| r.len()) as u32;
    let width = MARGIN * 2 + cols * (CELL + GAP);
    let height = MARGIN * 2 + rows * (CELL + GAP);
    let mut img = RgbImage::from_pixel(width.max(1), height.max(1), Rgb([255, 255, 255]));

    let present: Vec<f64> = values.iter().flatten().filter_map(|v| *v).collect();
    let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    for (ri, row) in values.iter().enumerate() {
        for (ci, cell) in row.iter().enumerate() {
            let color = match cell {
                None => Rgb([200, 200, 200]),
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    colormap(t)
                }
            };
            let x0 = MARGIN + ci as u32 * (CELL + GAP);
            let y0 = MARGIN + ri as u32 * (CELL + GAP);
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_grid_png() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("heat.png");
        let values = vec![
            vec![Some(0.2), Some(0.5), None],
            vec![Some(0.9), Some(0.1), Some(0.7)],
        ];
        save_heatmap(&path, &values).unwrap();
        let img = image::open(&path).unwrap();
        assert!(img.width() > 100 && img.height() > 80);
    }
}
