//! Ground-truth flow fields from instance label maps.
//!
//! Each instance is treated as an insulated domain: heat is injected at the
//! instance's median center and spread by repeated 4-neighbor averaging restricted
//! to the instance mask. The flow at a pixel is the normalized gradient of the
//! resulting heat field, so following it leads to the center.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FlowField, ForegroundMap, Grid, LabelMap};

/// Minimum number of diffusion iterations for any instance.
pub const MIN_DIFFUSION_ITERS: usize = 20;

const NORM_EPS: f64 = 1e-12;

/// Median row/column of an instance, snapped to the nearest instance pixel when
/// the median point is not itself an instance pixel.
pub fn median_center(label_map: &LabelMap, id: u32) -> Result<(usize, usize)> {
    if id == 0 {
        return Err(Error::NoSuchInstance(id));
    }
    let w = label_map.width();
    let pixels: Vec<(usize, usize)> = label_map
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == id)
        .map(|(i, _)| (i / w, i % w))
        .collect();
    if pixels.is_empty() {
        return Err(Error::NoSuchInstance(id));
    }
    Ok(median_of_pixels(&pixels))
}

/// `pixels` must be non-empty; raster order is not required.
pub(crate) fn median_of_pixels(pixels: &[(usize, usize)]) -> (usize, usize) {
    let mut rows: Vec<usize> = pixels.iter().map(|p| p.0).collect();
    let mut cols: Vec<usize> = pixels.iter().map(|p| p.1).collect();
    let my = median(&mut rows);
    let mx = median(&mut cols);
    let mut best = pixels[0];
    let mut best_d = f64::INFINITY;
    for &(r, c) in pixels {
        let d = (r as f64 - my).powi(2) + (c as f64 - mx).powi(2);
        if d < best_d || (d == best_d && (r, c) < best) {
            best = (r, c);
            best_d = d;
        }
    }
    best
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Diffusion iteration count for an instance whose bounding box is
/// `box_h` x `box_w` pixels.
pub fn diffusion_iters(box_h: usize, box_w: usize) -> usize {
    let diag = ((box_h * box_h + box_w * box_w) as f64).sqrt();
    ((2.0 * diag).ceil() as usize).max(MIN_DIFFUSION_ITERS)
}

/// Flow field and foreground map of a label map. Background pixels receive a
/// zero vector and zero foreground.
pub fn compute_flow(label_map: &LabelMap) -> (FlowField, ForegroundMap) {
    let (w, h) = label_map.dims();
    let mut flow = FlowField::zeros(w, h);
    let mut fg = ForegroundMap::zeros(w, h);

    let instances: Vec<Vec<usize>> = label_map.instances().into_values().collect();
    let vectors: Vec<Vec<(f64, f64)>> = instances
        .par_iter()
        .map(|pixels| instance_flow(pixels, w))
        .collect();

    for (pixels, vecs) in instances.iter().zip(&vectors) {
        for (&p, &(vy, vx)) in pixels.iter().zip(vecs) {
            flow.dy.as_mut_slice()[p] = vy;
            flow.dx.as_mut_slice()[p] = vx;
            fg.0.as_mut_slice()[p] = 1.0;
        }
    }
    (flow, fg)
}

/// Unit flow vectors for one instance given its pixel indices (raster order) in
/// an image of width `width`.
fn instance_flow(pixels: &[usize], width: usize) -> Vec<(f64, f64)> {
    let coords: Vec<(usize, usize)> = pixels.iter().map(|&p| (p / width, p % width)).collect();
    let min_row = coords.iter().map(|c| c.0).min().unwrap();
    let max_row = coords.iter().map(|c| c.0).max().unwrap();
    let min_col = coords.iter().map(|c| c.1).min().unwrap();
    let max_col = coords.iter().map(|c| c.1).max().unwrap();
    let bh = max_row - min_row + 1;
    let bw = max_col - min_col + 1;

    // Local lookup: box cell -> compact index (u32::MAX when outside the mask).
    let mut slot = Grid::filled(bw, bh, u32::MAX);
    for (k, &(r, c)) in coords.iter().enumerate() {
        *slot.get_mut(r - min_row, c - min_col) = k as u32;
    }
    let at = |r: isize, c: isize| -> Option<usize> {
        if r < 0 || c < 0 || r >= bh as isize || c >= bw as isize {
            return None;
        }
        let k = *slot.get(r as usize, c as usize);
        (k != u32::MAX).then_some(k as usize)
    };

    // [up, down, left, right] neighbors inside the mask.
    let neighbors: Vec<[Option<usize>; 4]> = coords
        .iter()
        .map(|&(r, c)| {
            let (r, c) = ((r - min_row) as isize, (c - min_col) as isize);
            [at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)]
        })
        .collect();

    let center = median_of_pixels(&coords);
    let source = at((center.0 - min_row) as isize, (center.1 - min_col) as isize)
        .expect("median center lies in the mask");

    let heat = diffuse(&neighbors, source, diffusion_iters(bh, bw));

    neighbors
        .iter()
        .enumerate()
        .map(|(k, nb)| {
            let gy = masked_diff(&heat, k, nb[0], nb[1]);
            let gx = masked_diff(&heat, k, nb[2], nb[3]);
            let m = (gy * gy + gx * gx).sqrt();
            // Far from the source both heat and gradient get tiny, so the
            // epsilon is taken relative to the local heat.
            if m > NORM_EPS * heat[k] && m > 0.0 {
                (gy / m, gx / m)
            } else {
                (0.0, 0.0)
            }
        })
        .collect()
}

fn diffuse(neighbors: &[[Option<usize>; 4]], source: usize, iters: usize) -> Vec<f64> {
    let n = neighbors.len();
    // Flattened adjacency for the inner loop.
    let mut offsets = Vec::with_capacity(n + 1);
    let mut adj = Vec::with_capacity(4 * n);
    offsets.push(0u32);
    for nb in neighbors {
        adj.extend(nb.iter().flatten().map(|&q| q as u32));
        offsets.push(adj.len() as u32);
    }
    let inv: Vec<f64> = offsets
        .windows(2)
        .map(|o| 1.0 / (1 + o[1] - o[0]) as f64)
        .collect();

    let mut heat = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    for _ in 0..iters {
        heat[source] += 1.0;
        for k in 0..n {
            let mut sum = heat[k];
            for &q in &adj[offsets[k] as usize..offsets[k + 1] as usize] {
                sum += heat[q as usize];
            }
            next[k] = sum * inv[k];
        }
        std::mem::swap(&mut heat, &mut next);
    }
    heat
}

/// Central difference when both neighbors are in the mask, one-sided otherwise.
#[inline]
fn masked_diff(heat: &[f64], k: usize, lo: Option<usize>, hi: Option<usize>) -> f64 {
    match (lo, hi) {
        (Some(a), Some(b)) => (heat[b] - heat[a]) / 2.0,
        (None, Some(b)) => heat[b] - heat[k],
        (Some(a), None) => heat[k] - heat[a],
        (None, None) => 0.0,
    }
}
