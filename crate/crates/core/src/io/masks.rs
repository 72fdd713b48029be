//! Mask files: a 16-bit single-channel PNG of region ids (0 = background)
//! and a JSON sidecar with one record per region.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::ClassCatalog;
use crate::projection::{MaskSet, PixelRect, Region};

use super::json::write_json;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    region_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_id: Option<u32>,
    class_name: String,
    confidence: f64,
    bbox: [u32; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    view_id: u32,
    regions: Vec<RegionRecord>,
}

/// Reads a mask PNG and its sidecar. Class names are resolved against
/// `catalog`; a `class_id` in the sidecar, if present, must agree.
pub fn read_masks(png: impl AsRef<Path>, sidecar: impl AsRef<Path>, catalog: &ClassCatalog) -> Result<MaskSet> {
    let (png, sidecar) = (png.as_ref(), sidecar.as_ref());
    let decoded = ImageReader::open(png)
        .map_err(|e| Error::from(e).at_path(png))?
        .with_guessed_format()
        .map_err(|e| Error::from(e).at_path(png))?
        .decode()
        .map_err(|e| Error::from(e).at_path(png))?;
    let DynamicImage::ImageLuma16(buf) = decoded else {
        return Err(Error::SchemaError("mask PNG must be 16-bit single channel".into()).at_path(png));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let labels = Image::from_vec(w, h, buf.into_raw().into_iter().map(u32::from).collect())
        .expect("decoded buffer matches its dimensions");

    let file = File::open(sidecar).map_err(|e| Error::from(e).at_path(sidecar))?;
    let meta: MaskFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::SchemaError(e.to_string()).at_path(sidecar))?;
    let mut regions = Vec::with_capacity(meta.regions.len());
    for r in meta.regions {
        let class_id = catalog
            .id_by_name(&r.class_name)
            .ok_or_else(|| Error::UnknownClass(r.class_name.clone()).at_path(sidecar))?;
        if r.class_id.is_some_and(|id| id != class_id) {
            return Err(Error::SchemaError(format!(
                "region {}: class_id {:?} does not match class {:?}",
                r.region_id, r.class_id, r.class_name
            ))
            .at_path(sidecar));
        }
        let [x, y, w, h] = r.bbox;
        regions.push(Region {
            region_id: r.region_id,
            class_id,
            confidence: r.confidence,
            bbox: PixelRect { x, y, w, h },
        });
    }
    MaskSet::new(meta.view_id, labels, regions).map_err(|e| e.at_path(sidecar))
}

pub fn write_masks(
    png: impl AsRef<Path>,
    sidecar: impl AsRef<Path>,
    masks: &MaskSet,
    catalog: &ClassCatalog,
) -> Result<()> {
    let (png, sidecar) = (png.as_ref(), sidecar.as_ref());
    let (w, h) = masks.size();
    let mut raw = Vec::with_capacity(w * h);
    for &id in masks.labels().as_slice() {
        raw.push(u16::try_from(id).map_err(|_| Error::InvalidMask(format!("region id {id} exceeds 16 bits")))?);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches mask size");
    buf.save(png).map_err(|e| Error::from(e).at_path(png))?;

    let regions = masks
        .regions()
        .iter()
        .map(|r| {
            Ok(RegionRecord {
                region_id: r.region_id,
                class_id: Some(r.class_id),
                class_name: catalog
                    .name_of(r.class_id)
                    .ok_or(Error::UnknownClassId(r.class_id))?
                    .to_string(),
                confidence: r.confidence,
                bbox: [r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(
        sidecar,
        &MaskFile {
            view_id: masks.view_id(),
            regions,
        },
    )
}

/// A region proposal that may overlap others.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub region_id: u32,
    pub class_id: u32,
    pub confidence: f64,
    /// Linear pixel indices `y * width + x`.
    pub pixels: Vec<usize>,
}

/// Flattens overlapping candidates into a single-valued mask set. A pixel
/// claimed by several candidates goes to the highest confidence, then the
/// smaller area, then the smaller region id. Candidates left without pixels
/// are dropped.
pub fn compose_label_image(view_id: u32, width: usize, height: usize, candidates: &[MaskCandidate]) -> Result<MaskSet> {
    let mut order: Vec<&MaskCandidate> = candidates.iter().collect();
    // Paint losers first so winners overwrite them.
    order.sort_by(|a, b| {
        a.confidence
            .total_cmp(&b.confidence)
            .then(b.pixels.len().cmp(&a.pixels.len()))
            .then(b.region_id.cmp(&a.region_id))
    });
    let mut labels = Image::filled(width, height, 0u32);
    let mut records = BTreeMap::new();
    for c in order {
        if c.region_id == 0 {
            return Err(Error::InvalidMask("region id 0 is reserved for background".into()));
        }
        if records.insert(c.region_id, (c.class_id, c.confidence)).is_some() {
            return Err(Error::InvalidMask(format!("duplicate region id {}", c.region_id)));
        }
        let data = labels.as_mut_slice();
        for &p in &c.pixels {
            *data
                .get_mut(p)
                .ok_or_else(|| Error::InvalidMask(format!("region {} pixel {p} outside image", c.region_id)))? =
                c.region_id;
        }
    }
    let records: Vec<(u32, u32, f64)> = records.into_iter().map(|(r, (c, q))| (r, c, q)).collect();
    MaskSet::from_labels(view_id, labels, &records)
}
