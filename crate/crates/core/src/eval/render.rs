use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::error::{GaeError, Result};

pub const SEPARATOR_PX: usize = 2;
const SEPARATOR_VALUE: u8 = 255;

/// `(height, width)` in pixels of a `rows × cols` grid of `h × w` cells.
pub fn grid_dimensions(rows: usize, cols: usize, h: usize, w: usize) -> (usize, usize) {
    (
        rows * h + rows.saturating_sub(1) * SEPARATOR_PX,
        cols * w + cols.saturating_sub(1) * SEPARATOR_PX,
    )
}

/// Min-max scales one cell to `0..=255`. A constant cell becomes black.
pub fn to_gray8(cell: &Array2<f64>) -> Array2<u8> {
    let lo = cell.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    cell.mapv(|v| {
        if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    })
}

/// Writes the grid (row-major, `images[r][c]`) as one 8-bit grayscale PNG.
/// Shapes are checked before the file is created.
pub fn render_grid(images: &[Vec<Array2<f64>>], path: impl AsRef<Path>) -> Result<()> {
    let rows = images.len();
    let cols = images.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(GaeError::Empty("image grid has no cells".into()));
    }
    let (h, w) = images[0][0].dim();
    if h == 0 || w == 0 {
        return Err(GaeError::Empty("image grid cells are empty".into()));
    }
    for (r, row) in images.iter().enumerate() {
        if row.len() != cols {
            return Err(GaeError::Config(format!(
                "ragged grid: row {r} has {} cells, row 0 has {cols}",
                row.len()
            )));
        }
        if let Some((c, cell)) = row.iter().enumerate().find(|(_, cell)| cell.dim() != (h, w)) {
            return Err(GaeError::Config(format!(
                "cell ({r}, {c}) is {:?}, expected {:?}",
                cell.dim(),
                (h, w)
            )));
        }
    }
    let (height, width) = grid_dimensions(rows, cols, h, w);
    let mut canvas = Array2::from_elem((height, width), SEPARATOR_VALUE);
    for (r, row) in images.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let top = r * (h + SEPARATOR_PX);
            let left = c * (w + SEPARATOR_PX);
            canvas
                .slice_mut(ndarray::s![top..top + h, left..left + w])
                .assign(&to_gray8(cell));
        }
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| GaeError::Format(format!("png header: {e}")))?;
    let data: Vec<u8> = canvas.iter().copied().collect();
    writer
        .write_image_data(&data)
        .map_err(|e| GaeError::Format(format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| GaeError::Format(format!("png finish: {e}")))?;
    Ok(())
}
