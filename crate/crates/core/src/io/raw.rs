//! Headerless little-endian dumps of render buffers and posteriors, plus
//! color PNG export.

use std::fs;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::LabelDistribution;
use crate::renderer::RenderedView;
use crate::scalar::Real;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}

/// Depth as `f32` LE, row-major; empty pixels are `+inf`.
pub fn write_depth<T: Real>(path: impl AsRef<Path>, view: &RenderedView<T>) -> Result<()> {
    let bytes: Vec<u8> = view
        .depth
        .as_slice()
        .iter()
        .flat_map(|d| d.to_f32().unwrap_or(f32::INFINITY).to_le_bytes())
        .collect();
    write_bytes(path.as_ref(), &bytes)
}

/// Point index as `i32` LE, row-major; empty pixels are -1.
pub fn write_index<T: Real>(path: impl AsRef<Path>, view: &RenderedView<T>) -> Result<()> {
    let bytes: Vec<u8> = view.index.as_slice().iter().flat_map(|i| i.to_le_bytes()).collect();
    write_bytes(path.as_ref(), &bytes)
}

pub fn write_color_png<T: Real>(path: impl AsRef<Path>, view: &RenderedView<T>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = view.size();
    let raw: Vec<u8> = view.color.as_slice().iter().flatten().copied().collect();
    let img = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches view size");
    img.save(path).map_err(|e| Error::from(e).at_path(path))
}

/// Writes `view_<id>.png`, `view_<id>_depth.bin` and `view_<id>_index.bin`
/// into `dir`.
pub fn write_rendered<T: Real>(dir: impl AsRef<Path>, view: &RenderedView<T>) -> Result<()> {
    let dir = dir.as_ref();
    let id = view.view.view_id;
    write_color_png(dir.join(format!("view_{id}.png")), view)?;
    write_depth(dir.join(format!("view_{id}_depth.bin")), view)?;
    write_index(dir.join(format!("view_{id}_index.bin")), view)
}

/// Posteriors as an `n × C` row-major array of `f64` LE.
pub fn write_posteriors(path: impl AsRef<Path>, posteriors: &[LabelDistribution]) -> Result<()> {
    let bytes: Vec<u8> = posteriors
        .iter()
        .flat_map(|d| d.probs().iter().flat_map(|p| p.to_le_bytes()))
        .collect();
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_posteriors(path: impl AsRef<Path>, n_classes: usize) -> Result<Vec<LabelDistribution>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    let row = n_classes * 8;
    if n_classes == 0 || bytes.len() % row != 0 {
        return Err(Error::SchemaError(format!(
            "{} bytes is not a whole number of {n_classes}-class rows",
            bytes.len()
        ))
        .at_path(path));
    }
    bytes
        .chunks_exact(row)
        .map(|r| {
            let probs = r
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            LabelDistribution::from_probs(probs).map_err(|e| Error::SchemaError(e.to_string()).at_path(path))
        })
        .collect()
}
