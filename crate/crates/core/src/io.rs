//! On-disk formats: raw flow/foreground rasters and PNG label maps.
//!
//! Raw rasters start with a 16-byte header (`b"CFLW"`, then little-endian u32
//! width, height and channel count) followed by `channels` row-major planes of
//! little-endian f32. Flow files store the `dy` plane before the `dx` plane.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{FlowField, ForegroundMap, Grid, LabelMap};

pub const RAW_MAGIC: &[u8; 4] = b"CFLW";
const HEADER_LEN: usize = 16;

/// Decoded raw raster.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRaster {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<Vec<f32>>,
}

pub fn encode_raw(width: usize, height: usize, planes: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * width * height * planes.len());
    out.extend_from_slice(RAW_MAGIC);
    for v in [width, height, planes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for plane in planes {
        debug_assert_eq!(plane.len(), width * height);
        for &v in plane.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<RawRaster> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing CFLW header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (width, height, channels) = (word(1), word(2), word(3));
    let plane_len = width * height;
    let expected = HEADER_LEN + 4 * plane_len * channels;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{} bytes, expected {expected} for {width}x{height}x{channels}",
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let planes = floats
        .chunks(plane_len.max(1))
        .take(channels)
        .map(<[f32]>::to_vec)
        .collect();
    Ok(RawRaster {
        width,
        height,
        planes,
    })
}

fn read_raw(path: &Path, channels: usize) -> Result<RawRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_raw(&bytes, path)?;
    if raw.planes.len() != channels {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} channels, expected {channels}", raw.planes.len()),
        });
    }
    Ok(raw)
}

fn plane_grid(raw: &RawRaster, k: usize) -> Grid<f64> {
    Grid::from_vec(
        raw.width,
        raw.height,
        raw.planes[k].iter().map(|&v| v as f64).collect(),
    )
    .expect("plane sized by header")
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let (w, h) = flow.dims();
    let bytes = encode_raw(w, h, &[flow.dy.as_slice(), flow.dx.as_slice()]);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let raw = read_raw(path, 2)?;
    Ok(FlowField {
        dy: plane_grid(&raw, 0),
        dx: plane_grid(&raw, 1),
    })
}

pub fn write_foreground(path: &Path, fg: &ForegroundMap) -> Result<()> {
    let (w, h) = fg.dims();
    let bytes = encode_raw(w, h, &[fg.0.as_slice()]);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_foreground(path: &Path) -> Result<ForegroundMap> {
    let raw = read_raw(path, 1)?;
    Ok(ForegroundMap(plane_grid(&raw, 0)))
}

/// Text form of a resize factor used in external prediction file names.
pub fn factor_tag(r: f64) -> String {
    format!("{r:.4}")
}

/// `flow_<id>_<r>.f32` and `fg_<id>_<r>.f32` inside `dir`.
pub fn external_paths(dir: &Path, image_id: &str, r: f64) -> (PathBuf, PathBuf) {
    let tag = factor_tag(r);
    (
        dir.join(format!("flow_{image_id}_{tag}.f32")),
        dir.join(format!("fg_{image_id}_{tag}.f32")),
    )
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a label map as a 16-bit grayscale PNG.
pub fn write_labels_png(path: &Path, labels: &LabelMap) -> Result<()> {
    if let Some(&max) = labels.as_slice().iter().max() {
        if max > u16::MAX as u32 {
            return Err(Error::InvalidLabelMap(format!(
                "id {max} does not fit in a 16-bit PNG"
            )));
        }
    }
    let (w, h) = labels.dims();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        w as u32,
        h as u32,
        labels.as_slice().iter().map(|&l| l as u16).collect(),
    )
    .expect("sized by construction");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn read_labels_png(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(image_err(path))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelMap::from_vec(w, h, img.into_raw().into_iter().map(u32::from).collect())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(image_err(path))?.into_rgb8())
}

pub fn write_mask_png(path: &Path, mask: &GrayImage) -> Result<()> {
    mask.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn read_mask_png(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(image_err(path))?.into_luma8())
}
