//! Gradient flow tracking: particles seeded on foreground pixels follow the flow
//! field, and pixels whose particles end up together form one instance.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_dims, clamp_axis, FlowField, ForegroundMap, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerParams {
    pub n_steps: usize,
    pub step_size: f64,
    pub cluster_radius: f64,
    pub min_instance_px: usize,
    /// Foreground threshold; pixels with probability strictly above it are
    /// tracked. Pipeline configurations set it from their own `h`.
    #[serde(skip)]
    pub h: f64,
    /// Leave a pixel unlabeled when its particle ends where the foreground is
    /// at or below `h`.
    pub drop_stranded: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            n_steps: 200,
            step_size: 1.0,
            cluster_radius: 2.5,
            min_instance_px: 15,
            h: 0.0,
            drop_stranded: true,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("tracker: {m}")));
        if self.n_steps < 1 {
            return bad("n_steps must be at least 1");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(self.cluster_radius > 0.0) {
            return bad("cluster_radius must be positive");
        }
        if self.min_instance_px < 1 {
            return bad("min_instance_px must be at least 1");
        }
        if !(0.0..1.0).contains(&self.h) {
            return bad("h must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Converts a flow field and foreground map into a canonical label map.
pub fn euler_track(
    flow: &FlowField,
    fg: &ForegroundMap,
    params: &TrackerParams,
) -> Result<LabelMap> {
    check_dims(flow.dims(), fg.dims())?;
    params.validate()?;
    let (w, h) = flow.dims();
    if w == 0 || h == 0 {
        return Ok(LabelMap::new(w, h));
    }

    let seeds: Vec<usize> =
        fg.0.as_slice()
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > params.h)
            .map(|(i, _)| i)
            .collect();
    if seeds.is_empty() {
        return Ok(LabelMap::new(w, h));
    }

    let field: Vec<[f64; 2]> = flow
        .dy
        .as_slice()
        .iter()
        .zip(flow.dx.as_slice())
        .map(|(&y, &x)| [y, x])
        .collect();
    let sampler = FieldSampler {
        field: &field,
        width: w,
        height: h,
    };

    let finals: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&p| sampler.integrate((p / w) as f64, (p % w) as f64, params))
        .collect();

    // A particle that drifted off the foreground belongs to no instance.
    let stranded: Vec<bool> = finals
        .iter()
        .map(|&(y, x)| params.drop_stranded && fg.0.sample_clamped(y, x) <= params.h)
        .collect();
    let clusters = single_linkage(&finals, params.cluster_radius);

    // Group seeds per cluster root; seeds are in raster order so the first
    // member of each group is its anchor.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &root) in clusters.iter().enumerate() {
        if stranded[k] {
            continue;
        }
        groups.entry(root).or_default().push(k);
    }
    let mut kept: Vec<&Vec<usize>> = groups
        .values()
        .filter(|members| members.len() >= params.min_instance_px)
        .collect();
    kept.sort_by_key(|members| seeds[members[0]]);

    let mut out = LabelMap::new(w, h);
    let labels = out.as_mut_slice();
    for (id, members) in kept.iter().enumerate() {
        for &k in members.iter() {
            labels[seeds[k]] = id as u32 + 1;
        }
    }
    Ok(out)
}

struct FieldSampler<'a> {
    field: &'a [[f64; 2]],
    width: usize,
    height: usize,
}

impl FieldSampler<'_> {
    #[inline]
    fn sample(&self, y: f64, x: f64) -> [f64; 2] {
        let (y0, y1, fy) = clamp_axis(y, self.height);
        let (x0, x1, fx) = clamp_axis(x, self.width);
        let w = self.width;
        let a = self.field[y0 * w + x0];
        let b = self.field[y0 * w + x1];
        let c = self.field[y1 * w + x0];
        let d = self.field[y1 * w + x1];
        let mut out = [0.0; 2];
        for ch in 0..2 {
            let top = a[ch] + (b[ch] - a[ch]) * fx;
            let bottom = c[ch] + (d[ch] - c[ch]) * fx;
            out[ch] = top + (bottom - top) * fy;
        }
        out
    }

    fn integrate(&self, mut y: f64, mut x: f64, params: &TrackerParams) -> (f64, f64) {
        let ymax = (self.height - 1) as f64;
        let xmax = (self.width - 1) as f64;
        for _ in 0..params.n_steps {
            let [vy, vx] = self.sample(y, x);
            if vy == 0.0 && vx == 0.0 {
                // A particle on a zero vector never moves again.
                break;
            }
            y = (y + params.step_size * vy).clamp(0.0, ymax);
            x = (x + params.step_size * vx).clamp(0.0, xmax);
        }
        (y, x)
    }
}

/// Single-linkage clustering of points at distance `<= radius`. Returns the
/// union-find root of every point; roots are the smallest member index.
pub(crate) fn single_linkage(points: &[(f64, f64)], radius: f64) -> Vec<usize> {
    let mut uf = UnionFind::new(points.len());
    // Any two points in one cell are within `radius` of each other.
    let cell = radius / std::f64::consts::SQRT_2;
    let reach = (radius / cell).ceil() as i64;
    let r2 = radius * radius;

    let mut cells: BTreeMap<(i64, i64), Cell> = BTreeMap::new();
    for (k, &(y, x)) in points.iter().enumerate() {
        let key = ((y / cell).floor() as i64, (x / cell).floor() as i64);
        cells
            .entry(key)
            .and_modify(|c| c.push(k, y, x))
            .or_insert_with(|| Cell::new(k, y, x));
    }
    for c in cells.values() {
        for &k in &c.members[1..] {
            uf.union(c.members[0], k);
        }
    }

    for (&(cy, cx), a) in &cells {
        for dy in 0..=reach {
            for dx in -reach..=reach {
                // Visit each unordered pair of cells once.
                if dy == 0 && dx <= 0 {
                    continue;
                }
                let Some(b) = cells.get(&(cy + dy, cx + dx)) else {
                    continue;
                };
                if uf.find(a.members[0]) == uf.find(b.members[0]) {
                    continue;
                }
                let (near, far) = a.box_distance2(b);
                if near > r2 {
                    continue;
                }
                if far <= r2 {
                    uf.union(a.members[0], b.members[0]);
                    continue;
                }
                'pairs: for &i in &a.members {
                    let (yi, xi) = points[i];
                    for &j in &b.members {
                        let (yj, xj) = points[j];
                        if (yi - yj).powi(2) + (xi - xj).powi(2) <= r2 {
                            uf.union(i, j);
                            break 'pairs;
                        }
                    }
                }
            }
        }
    }
    (0..points.len()).map(|k| uf.find(k)).collect()
}

struct Cell {
    members: Vec<usize>,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Cell {
    fn new(k: usize, y: f64, x: f64) -> Self {
        Cell {
            members: vec![k],
            lo: (y, x),
            hi: (y, x),
        }
    }

    fn push(&mut self, k: usize, y: f64, x: f64) {
        self.members.push(k);
        self.lo = (self.lo.0.min(y), self.lo.1.min(x));
        self.hi = (self.hi.0.max(y), self.hi.1.max(x));
    }

    /// Squared minimum and maximum distances between the two bounding boxes.
    fn box_distance2(&self, other: &Cell) -> (f64, f64) {
        let gap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (lo2 - hi1).max(lo1 - hi2).max(0.0);
        let span = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (hi2 - lo1).max(hi1 - lo2);
        let gy = gap(self.lo.0, self.hi.0, other.lo.0, other.hi.0);
        let gx = gap(self.lo.1, self.hi.1, other.lo.1, other.hi.1);
        let sy = span(self.lo.0, self.hi.0, other.lo.0, other.hi.0);
        let sx = span(self.lo.1, self.hi.1, other.lo.1, other.hi.1);
        (gy * gy + gx * gx, sy * sy + sx * sx)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut k: usize) -> usize {
        while self.parent[k] != k {
            self.parent[k] = self.parent[self.parent[k]];
            k = self.parent[k];
        }
        k
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smallest index stays root.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
