//! Resize schedules, bilinear resampling, overlapping patch tiling and
//! taper-weighted stitching.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_dims, FlowField, ForegroundMap, Grid, LabelMap, Rect};

pub const DEFAULT_PATCH_SIZE: usize = 224;

/// Flow vectors shorter than this after resampling or blending are zeroed.
pub const MIN_FLOW_MAGNITUDE: f64 = 0.1;

/// Ascending resize factors, the last always 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeSchedule {
    pub factors: Vec<f64>,
    pub patch_size: usize,
}

impl ResizeSchedule {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Reduces the schedule to `n` levels, keeping the smallest factor, the
    /// full-resolution factor and the first `n - 2` intermediate factors.
    pub fn with_levels(&self, n: usize) -> Result<ResizeSchedule> {
        let total = self.factors.len();
        if n == 0 || n > total {
            return Err(Error::BadSchedule(format!(
                "cannot take {n} levels from a {total}-level schedule"
            )));
        }
        let factors = match n {
            1 => vec![1.0],
            _ => {
                let mut f = vec![self.factors[0]];
                f.extend_from_slice(&self.factors[1..total - 1][..n - 2]);
                f.push(1.0);
                f
            }
        };
        Ok(ResizeSchedule {
            factors,
            patch_size: self.patch_size,
        })
    }
}

/// Builds the resize schedule for an image.
///
/// Without overrides the schedule is `(s / max(w, h), 0.5, 0.75, 1.0)`, with the
/// first factor replaced by 0.25 when it is not below half of the second.
pub fn build_schedule(
    img_w: usize,
    img_h: usize,
    s: usize,
    overrides: Option<&[f64]>,
) -> Result<ResizeSchedule> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::BadSchedule("image has zero size".into()));
    }
    if s < 32 {
        return Err(Error::BadSchedule(format!("patch size {s} is below 32")));
    }
    let mut factors = match overrides {
        Some(list) => {
            if list.is_empty() {
                return Err(Error::BadSchedule("empty factor list".into()));
            }
            if let Some(bad) = list.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
                return Err(Error::BadSchedule(format!("factor {bad} outside (0, 1]")));
            }
            if !list.contains(&1.0) {
                return Err(Error::BadSchedule("factor list lacks 1.0".into()));
            }
            list.to_vec()
        }
        None => {
            let mut r1 = s as f64 / img_w.max(img_h) as f64;
            if r1 >= 0.5 * 0.5 {
                r1 = 0.25;
            }
            vec![r1, 0.5, 0.75, 1.0]
        }
    };
    factors.sort_by(f64::total_cmp);
    factors.dedup();
    Ok(ResizeSchedule {
        factors,
        patch_size: s,
    })
}

/// Output dimension after scaling by `factor`.
pub fn scaled_dim(dim: usize, factor: f64) -> usize {
    ((dim as f64 * factor).round() as usize).max(1)
}

/// Bilinear resampling of a scalar grid to `w` x `h` with pixel-center
/// alignment.
pub fn resize_grid(src: &Grid<f64>, w: usize, h: usize) -> Grid<f64> {
    if src.dims() == (w, h) {
        return src.clone();
    }
    let sy = src.height() as f64 / h as f64;
    let sx = src.width() as f64 / w as f64;
    let xs: Vec<f64> = (0..w).map(|c| (c as f64 + 0.5) * sx - 0.5).collect();
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        let y = (r as f64 + 0.5) * sy - 0.5;
        data.extend(xs.iter().map(|&x| src.sample_clamped(y, x)));
    }
    Grid::from_vec(w, h, data).expect("sized by construction")
}

pub fn resize_image(img: &RgbImage, factor: f64) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (nw, nh) = (scaled_dim(w, factor), scaled_dim(h, factor));
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    let channels: Vec<Grid<f64>> = (0..3)
        .map(|ch| {
            let src = Grid::from_vec(w, h, img.pixels().map(|p| p.0[ch] as f64).collect())
                .expect("sized by construction");
            resize_grid(&src, nw, nh)
        })
        .collect();
    RgbImage::from_fn(nw as u32, nh as u32, |x, y| {
        let i = y as usize * nw + x as usize;
        image::Rgb(std::array::from_fn(|ch| {
            channels[ch].as_slice()[i].round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Nearest-neighbor resampling for label maps.
pub fn resize_labels(map: &LabelMap, w: usize, h: usize) -> LabelMap {
    if map.dims() == (w, h) {
        return map.clone();
    }
    let sy = map.height() as f64 / h as f64;
    let sx = map.width() as f64 / w as f64;
    let mut out = LabelMap::new(w, h);
    for r in 0..h {
        let src_r = (((r as f64 + 0.5) * sy) as usize).min(map.height() - 1);
        for c in 0..w {
            let src_c = (((c as f64 + 0.5) * sx) as usize).min(map.width() - 1);
            out.set(r, c, map.get(src_r, src_c));
        }
    }
    out
}

/// Normalizes one vector: unit length when longer than
/// [`MIN_FLOW_MAGNITUDE`], zero otherwise. Vectors already of unit length are
/// returned unchanged.
#[inline]
pub fn renormalize(v: (f64, f64)) -> (f64, f64) {
    let m = (v.0 * v.0 + v.1 * v.1).sqrt();
    if m <= MIN_FLOW_MAGNITUDE {
        (0.0, 0.0)
    } else if (m - 1.0).abs() <= 1e-12 {
        v
    } else {
        (v.0 / m, v.1 / m)
    }
}

pub fn renormalize_flow(flow: &mut FlowField) {
    let (dy, dx) = (flow.dy.as_mut_slice(), flow.dx.as_mut_slice());
    for (y, x) in dy.iter_mut().zip(dx.iter_mut()) {
        (*y, *x) = renormalize((*y, *x));
    }
}

pub fn resize_flow_to(
    flow: &FlowField,
    fg: &ForegroundMap,
    w: usize,
    h: usize,
) -> Result<(FlowField, ForegroundMap)> {
    check_dims(flow.dims(), fg.dims())?;
    if flow.dims() == (w, h) {
        return Ok((flow.clone(), fg.clone()));
    }
    let mut out = FlowField {
        dy: resize_grid(&flow.dy, w, h),
        dx: resize_grid(&flow.dx, w, h),
    };
    renormalize_flow(&mut out);
    Ok((out, ForegroundMap(resize_grid(&fg.0, w, h))))
}

pub fn resize_flow(
    flow: &FlowField,
    fg: &ForegroundMap,
    factor: f64,
) -> Result<(FlowField, ForegroundMap)> {
    let (w, h) = flow.dims();
    resize_flow_to(flow, fg, scaled_dim(w, factor), scaled_dim(h, factor))
}

/// Fraction of the patch size by which neighboring patches overlap.
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Patch origins along one axis of length `len`.
fn tile_axis(len: usize, s: usize, stride: usize) -> Vec<usize> {
    if len <= s {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + s < len {
        out.push(pos);
        pos += stride;
    }
    out.push(len - s);
    out.dedup();
    out
}

/// Overlapping `s` x `s` patches (50% overlap) in raster order. Images smaller
/// than `s` along an axis get a single patch spanning that axis.
pub fn tile(img_w: usize, img_h: usize, s: usize) -> Vec<Rect> {
    tile_with_overlap(img_w, img_h, s, DEFAULT_OVERLAP)
}

pub fn tile_with_overlap(img_w: usize, img_h: usize, s: usize, overlap: f64) -> Vec<Rect> {
    let stride = ((s as f64 * (1.0 - overlap)).round() as usize).clamp(1, s);
    let ys = tile_axis(img_h, s, stride);
    let xs = tile_axis(img_w, s, stride);
    ys.iter()
        .flat_map(|&y| {
            xs.iter()
                .map(move |&x| Rect::new(x, y, s.min(img_w), s.min(img_h)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaperParams {
    /// Distance from a patch edge, in pixels, at which the weight is 0.5.
    pub soft_width: f64,
    pub slope: f64,
    pub floor: f64,
}

impl Default for TaperParams {
    fn default() -> Self {
        TaperParams {
            soft_width: 4.0,
            slope: 2.0,
            floor: 0.02,
        }
    }
}

impl TaperParams {
    fn axis_weights(&self, start: usize, len: usize, img_len: usize) -> Vec<f64> {
        let open_lo = start > 0;
        let open_hi = start + len < img_len;
        (0..len)
            .map(|i| {
                let d_lo = if open_lo { i as f64 } else { f64::INFINITY };
                let d_hi = if open_hi {
                    (len - 1 - i) as f64
                } else {
                    f64::INFINITY
                };
                let d = d_lo.min(d_hi);
                if d.is_infinite() {
                    1.0
                } else {
                    let s = 1.0 / (1.0 + (-(d - self.soft_width) / self.slope).exp());
                    s.max(self.floor)
                }
            })
            .collect()
    }

    /// Weight map of a patch placed at `rect` in a `img_w` x `img_h` image.
    pub fn weights(&self, rect: Rect, img_w: usize, img_h: usize) -> Grid<f64> {
        let wy = self.axis_weights(rect.y, rect.h, img_h);
        let wx = self.axis_weights(rect.x, rect.w, img_w);
        let data = wy
            .iter()
            .flat_map(|&a| wx.iter().map(move |&b| a * b))
            .collect();
        Grid::from_vec(rect.w, rect.h, data).expect("sized by construction")
    }
}

/// One patch prediction placed at `rect`.
#[derive(Debug, Clone)]
pub struct PatchOutput {
    pub rect: Rect,
    pub flow: FlowField,
    pub fg: ForegroundMap,
}

pub fn stitch(
    patches: &[PatchOutput],
    img_w: usize,
    img_h: usize,
) -> Result<(FlowField, ForegroundMap)> {
    stitch_with(patches, img_w, img_h, &TaperParams::default())
}

/// Taper-weighted average of overlapping patch predictions. Pixels covered by a
/// single patch take that patch's values verbatim; blended flow vectors are
/// renormalized.
pub fn stitch_with(
    patches: &[PatchOutput],
    img_w: usize,
    img_h: usize,
    taper: &TaperParams,
) -> Result<(FlowField, ForegroundMap)> {
    let n = img_w * img_h;
    let mut sum_w = vec![0.0; n];
    let mut sum_fg = vec![0.0; n];
    let mut sum_dy = vec![0.0; n];
    let mut sum_dx = vec![0.0; n];
    let mut count = vec![0u32; n];
    let mut flow = FlowField::zeros(img_w, img_h);
    let mut fg = ForegroundMap::zeros(img_w, img_h);

    for patch in patches {
        let rect = patch.rect;
        if !rect.fits_in(img_w, img_h) {
            return Err(Error::BadRect {
                rect: (rect.x, rect.y, rect.w, rect.h),
                width: img_w,
                height: img_h,
            });
        }
        check_dims(patch.flow.dims(), (rect.w, rect.h))?;
        check_dims(patch.fg.dims(), (rect.w, rect.h))?;
        let weights = taper.weights(rect, img_w, img_h);
        for r in 0..rect.h {
            for c in 0..rect.w {
                let i = (rect.y + r) * img_w + rect.x + c;
                let wgt = *weights.get(r, c);
                let (vy, vx) = patch.flow.at(r, c);
                let p = patch.fg.at(r, c);
                if count[i] == 0 {
                    flow.set(rect.y + r, rect.x + c, (vy, vx));
                    fg.0.as_mut_slice()[i] = p;
                }
                count[i] += 1;
                sum_w[i] += wgt;
                sum_fg[i] += wgt * p;
                sum_dy[i] += wgt * vy;
                sum_dx[i] += wgt * vx;
            }
        }
    }

    for i in 0..n {
        if count[i] > 1 {
            let v = renormalize((sum_dy[i] / sum_w[i], sum_dx[i] / sum_w[i]));
            flow.dy.as_mut_slice()[i] = v.0;
            flow.dx.as_mut_slice()[i] = v.1;
            fg.0.as_mut_slice()[i] = sum_fg[i] / sum_w[i];
        }
    }
    Ok((flow, fg))
}
