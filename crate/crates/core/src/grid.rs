//! Dense 2-D rasters shared by every stage of the pipeline.
//!
//! All rasters are row-major with `index = row * width + col`. Pixel centers sit
//! on integer coordinates, so a position `(y, x)` in continuous space refers to
//! the pixel `(round(y), round(x))`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel units, `x`/`y` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.y && row < self.bottom() && col >= self.x && col < self.right()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn crop(&self, rect: Rect) -> Grid<T> {
        let mut data = Vec::with_capacity(rect.w * rect.h);
        for row in rect.y..rect.bottom() {
            let start = row * self.width + rect.x;
            data.extend_from_slice(&self.data[start..start + rect.w]);
        }
        Grid {
            width: rect.w,
            height: rect.h,
            data,
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParams(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Grid<f64> {
    /// Samples with bilinear interpolation at a continuous position, clamping
    /// the position to the raster.
    pub fn sample_clamped(&self, y: f64, x: f64) -> f64 {
        let (y0, y1, fy) = clamp_axis(y, self.height);
        let (x0, x1, fx) = clamp_axis(x, self.width);
        let w = self.width;
        let a = self.data[y0 * w + x0];
        let b = self.data[y0 * w + x1];
        let c = self.data[y1 * w + x0];
        let d = self.data[y1 * w + x1];
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }
}

/// Splits a continuous coordinate into its two bracketing pixel indices and the
/// interpolation fraction, clamped to `[0, len - 1]`.
#[inline]
pub(crate) fn clamp_axis(v: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let v = v.clamp(0.0, max);
    let i0 = v.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, v - i0 as f64)
}

/// Per-pixel instance identifiers; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

/// Tight bounding box of one instance, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.max_row - self.min_row + 1
    }

    pub fn width(&self) -> usize {
        self.max_col - self.min_col + 1
    }

    fn include(&mut self, row: usize, col: usize) {
        self.min_row = self.min_row.min(row);
        self.max_row = self.max_row.max(row);
        self.min_col = self.min_col.min(col);
        self.max_col = self.max_col.max(col);
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidLabelMap(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.labels[row * self.width + col] = id;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    /// Sorted distinct nonzero ids.
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_count(&self) -> usize {
        self.ids().len()
    }

    pub fn is_blank(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Pixel indices of every instance, each list in raster order.
    pub fn instances(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }

    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            if l != 0 {
                *out.entry(l).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn bboxes(&self) -> BTreeMap<u32, BBox> {
        let mut out: BTreeMap<u32, BBox> = BTreeMap::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let l = self.get(row, col);
                if l == 0 {
                    continue;
                }
                out.entry(l)
                    .and_modify(|b| b.include(row, col))
                    .or_insert(BBox {
                        min_row: row,
                        min_col: col,
                        max_row: row,
                        max_col: col,
                    });
            }
        }
        out
    }

    pub fn crop(&self, rect: Rect) -> LabelMap {
        let mut labels = Vec::with_capacity(rect.w * rect.h);
        for row in rect.y..rect.bottom() {
            let start = row * self.width + rect.x;
            labels.extend_from_slice(&self.labels[start..start + rect.w]);
        }
        LabelMap {
            width: rect.w,
            height: rect.h,
            labels,
        }
    }

    /// Relabels instances to consecutive ids `1..=M` ordered by each instance's
    /// first pixel in raster order.
    pub fn canonical(&self) -> LabelMap {
        let mut mapping: BTreeMap<u32, u32> = BTreeMap::new();
        let mut next = 1;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    return 0;
                }
                *mapping.entry(l).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
        }
    }

    /// Gives every 4-connected component of every instance its own id, numbered
    /// in raster order of the component's first pixel.
    pub fn split_components(&self) -> LabelMap {
        let mut out = vec![0u32; self.labels.len()];
        let mut next = 1u32;
        let mut stack = Vec::new();
        for start in 0..self.labels.len() {
            let id = self.labels[start];
            if id == 0 || out[start] != 0 {
                continue;
            }
            out[start] = next;
            stack.push(start);
            while let Some(p) = stack.pop() {
                for q in self.neighbors4(p) {
                    if self.labels[q] == id && out[q] == 0 {
                        out[q] = next;
                        stack.push(q);
                    }
                }
            }
            next += 1;
        }
        LabelMap {
            width: self.width,
            height: self.height,
            labels: out,
        }
    }

    /// Keeps only the largest 4-connected component of each instance (ties go to
    /// the component found first in raster order); other fragments become
    /// background. Ids are preserved.
    pub fn keep_largest_components(&self) -> LabelMap {
        let parts = self.split_components();
        let areas = parts.areas();
        let mut best: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
        for (i, &part) in parts.labels.iter().enumerate() {
            if part == 0 {
                continue;
            }
            let id = self.labels[i];
            let area = areas[&part];
            let entry = best.entry(id).or_insert((area, part));
            if area > entry.0 {
                *entry = (area, part);
            }
        }
        let labels = self
            .labels
            .iter()
            .zip(&parts.labels)
            .map(|(&id, &part)| {
                if id != 0 && best[&id].1 == part {
                    id
                } else {
                    0
                }
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
        }
    }

    /// Checks that every instance is a single 4-connected region.
    pub fn validate(&self) -> Result<()> {
        let parts = self.split_components().ids().len();
        let ids = self.ids().len();
        if parts != ids {
            return Err(Error::InvalidLabelMap(format!(
                "{ids} instances split into {parts} 4-connected regions"
            )));
        }
        Ok(())
    }

    pub(crate) fn neighbors4(&self, p: usize) -> impl Iterator<Item = usize> {
        let (w, h) = (self.width, self.height);
        let (row, col) = (p / w, p % w);
        let up = (row > 0).then(|| p - w);
        let down = (row + 1 < h).then(|| p + w);
        let left = (col > 0).then(|| p - 1);
        let right = (col + 1 < w).then(|| p + 1);
        [up, down, left, right].into_iter().flatten()
    }
}

/// Two-channel vector field; `dy` is the row component and `dx` the column
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub dy: Grid<f64>,
    pub dx: Grid<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            dy: Grid::filled(width, height, 0.0),
            dx: Grid::filled(width, height, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.dy.width()
    }

    pub fn height(&self) -> usize {
        self.dy.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dy.dims()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        (*self.dy.get(row, col), *self.dx.get(row, col))
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: (f64, f64)) {
        *self.dy.get_mut(row, col) = v.0;
        *self.dx.get_mut(row, col) = v.1;
    }

    pub fn crop(&self, rect: Rect) -> FlowField {
        FlowField {
            dy: self.dy.crop(rect),
            dx: self.dx.crop(rect),
        }
    }
}

/// Per-pixel foreground probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMap(pub Grid<f64>);

impl ForegroundMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        ForegroundMap(Grid::filled(width, height, 0.0))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        *self.0.get(row, col)
    }

    pub fn crop(&self, rect: Rect) -> ForegroundMap {
        ForegroundMap(self.0.crop(rect))
    }
}

pub(crate) fn check_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::ShapeMismatch { left, right });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(width: usize, rows: &[&[u32]]) -> LabelMap {
        LabelMap::from_vec(width, rows.len(), rows.concat()).unwrap()
    }

    #[test]
    fn canonical_orders_by_first_pixel() {
        let m = map(3, &[&[0, 9, 9], &[4, 0, 9], &[4, 4, 0]]);
        let c = m.canonical();
        assert_eq!(c.as_slice(), &[0, 1, 1, 2, 0, 1, 2, 2, 0]);
    }

    #[test]
    fn split_and_validate() {
        let m = map(3, &[&[1, 0, 1], &[1, 0, 1], &[0, 0, 0]]);
        assert!(m.validate().is_err());
        assert_eq!(m.split_components().instance_count(), 2);
        let kept = m.keep_largest_components();
        assert_eq!(kept.as_slice(), &[1, 0, 0, 1, 0, 0, 0, 0, 0]);
        // Diagonal contact is not 4-connected.
        assert!(map(2, &[&[5, 0], &[0, 5]]).validate().is_err());
    }

    #[test]
    fn bilinear_sample_interpolates_and_clamps() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.sample_clamped(0.5, 0.5), 1.5);
        assert_eq!(g.sample_clamped(-4.0, 9.0), 1.0);
    }
}
