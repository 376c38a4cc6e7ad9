use anyhow::{bail, Result};
use dda_core::image::ImageTensor;

/// Row order of the comparison grid.
pub const GRID_ROWS: [&str; 4] = ["input", "one-pass", "iterative", "target"];
/// White separator between tiles, in pixels.
pub const GRID_GAP: usize = 2;

/// Tiles `rows` into one image, row by row. Missing tiles (a model without a
/// one-pass network, say) are left mid-grey.
pub fn grid(rows: &[Vec<Option<ImageTensor>>]) -> Result<ImageTensor> {
    let Some(tile) = rows.iter().flatten().flatten().next() else { bail!("grid has no images") };
    let (c, h, w) = tile.shape();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let height = rows.len() * h + (rows.len() - 1) * GRID_GAP;
    let width = cols * w + cols.saturating_sub(1) * GRID_GAP;
    let mut out = ImageTensor::filled(c, height, width, 1.0);
    for (r, row) in rows.iter().enumerate() {
        for (k, cell) in row.iter().enumerate() {
            let (y0, x0) = (r * (h + GRID_GAP), k * (w + GRID_GAP));
            match cell {
                Some(img) if img.shape() != (c, h, w) => bail!("tile {r},{k} has shape {:?}, expected {:?}", img.shape(), (c, h, w)),
                _ => {}
            }
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = cell.as_ref().map_or(0.0, |img| img.get(ch, y, x));
                        out.set(ch, y0 + y, x0 + x, v);
                    }
                }
            }
        }
    }
    Ok(out)
}
