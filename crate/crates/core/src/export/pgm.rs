use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square sub-block `[row, row + size) × [col, col + size)` written as a
/// second image next to the full map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Zoom {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Zoom {
    /// Upper-left `size × size` corner.
    pub fn corner(size: usize) -> Self {
        Self { row: 0, col: 0, size }
    }
}

/// Binary PGM (`P5`, maxval 255) with pixel `round(255 · v / scale)`.
fn encode_scaled(m: &DMatrix<f64>, scale: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.ncols(), m.nrows()).into_bytes();
    out.reserve(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = if scale > 0.0 { (255.0 * m[(r, c)] / scale).round() } else { 0.0 };
            out.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Full map normalized by its own maximum.
pub fn encode_pgm(m: &DMatrix<f64>) -> Vec<u8> {
    encode_scaled(m, m.max())
}

fn zoom_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    path.with_file_name(format!("{stem}_zoom.pgm"))
}

/// Writes `path` and, with `zoom`, a `<stem>_zoom.pgm` crop normalized by
/// the same maximum as the full image. Returns the files written.
pub fn render_attention_pgm(m: &DMatrix<f64>, path: impl AsRef<Path>, zoom: Option<Zoom>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let scale = m.max();
    fs::write(path, encode_scaled(m, scale)).map_err(|e| Error::io(path, e))?;
    let mut written = vec![path.to_path_buf()];
    if let Some(z) = zoom {
        let rows = z.size.min(m.nrows().saturating_sub(z.row));
        let cols = z.size.min(m.ncols().saturating_sub(z.col));
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("zoom {z:?} lies outside a {}x{} map", m.nrows(), m.ncols())));
        }
        let block = m.view((z.row, z.col), (rows, cols)).into_owned();
        let zpath = zoom_path(path);
        fs::write(&zpath, encode_scaled(&block, scale)).map_err(|e| Error::io(&zpath, e))?;
        written.push(zpath);
    }
    Ok(written)
}
