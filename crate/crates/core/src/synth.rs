//! Synthetic polycrystal grains.
//!
//! A grain is a random convex-ish polygon partitioned into Voronoi cells. Small
//! crystals come from a dense seed cluster, large ones from sparse seeds kept
//! away from everything else. Cells are separated by background boundary lines
//! and rendered with per-cell colors, scratches and pixel noise.

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::metrics::{homogeneity_and_class, GrainClass};
use crate::scalespace::DEFAULT_PATCH_SIZE;

const PLACEMENT_ATTEMPTS: usize = 20_000;
const POLYGON_VERTICES: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub n_seeds_small: usize,
    pub n_seeds_large: usize,
    /// Width of the background line between crystals.
    pub boundary_px: usize,
    pub scratch_count: usize,
    pub noise_sigma: f64,
    /// Minimum background border around the grain.
    pub grain_margin: usize,
    pub seed: u64,
    /// Radius of the disk holding the small seeds; 0 spreads them over the
    /// whole grain.
    pub cluster_radius: f64,
    /// Minimum distance between two small seeds.
    pub small_spacing: f64,
    /// Minimum distance between a large seed and any other seed.
    pub large_spacing: f64,
    /// Additive distance bonus of large seeds; grows their cells beyond half
    /// the distance to their neighbours.
    pub large_weight: f64,
    /// Crystals with fewer pixels are dropped.
    pub min_area: usize,
    /// Patch size used for classification.
    pub patch_size: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 512,
            height: 512,
            n_seeds_small: 30,
            n_seeds_large: 0,
            boundary_px: 5,
            scratch_count: 2,
            noise_sigma: 6.0,
            grain_margin: 16,
            seed: 0,
            cluster_radius: 0.0,
            small_spacing: 45.0,
            large_spacing: 300.0,
            large_weight: 0.0,
            min_area: 16,
            patch_size: DEFAULT_PATCH_SIZE,
        }
    }
}

impl SynthParams {
    /// Parameters tuned so that most seeds produce a grain of `class`.
    pub fn preset(class: GrainClass) -> SynthParams {
        match class {
            GrainClass::Small => SynthParams::default(),
            GrainClass::Heterogeneous => SynthParams {
                width: 1024,
                height: 1024,
                n_seeds_small: 40,
                n_seeds_large: 2,
                cluster_radius: 150.0,
                small_spacing: 28.0,
                large_spacing: 300.0,
                ..Default::default()
            },
            GrainClass::Homogeneous => SynthParams {
                width: 1024,
                height: 1024,
                n_seeds_small: 60,
                n_seeds_large: 2,
                small_spacing: 75.0,
                large_spacing: 200.0,
                large_weight: 350.0,
                min_area: 2000,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("synth: {m}")));
        if self.width < 64 || self.height < 64 {
            return bad("dimensions must be at least 64");
        }
        if self.boundary_px < 1 {
            return bad("boundary_px must be at least 1");
        }
        if self.n_seeds_small + self.n_seeds_large == 0 {
            return bad("need at least one seed");
        }
        if 2 * self.grain_margin + 16 > self.width.min(self.height) {
            return bad("grain_margin leaves no room for the grain");
        }
        if !(self.noise_sigma >= 0.0) || !(self.cluster_radius >= 0.0) {
            return bad("noise_sigma and cluster_radius must be non-negative");
        }
        if !(self.small_spacing >= 0.0) || !(self.large_spacing >= 0.0) {
            return bad("seed spacings must be non-negative");
        }
        if !(self.large_weight >= 0.0) {
            return bad("large_weight must be non-negative");
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RgbImage,
    pub labels: LabelMap,
    pub grain_mask: GrayImage,
    pub class: GrainClass,
    pub homogeneity: f64,
}

type Point = (f64, f64);

/// Combines seed components into one 64-bit seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

struct Polygon {
    // (x, y) vertices, counter-clockwise.
    verts: Vec<Point>,
}

impl Polygon {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, margin: usize) -> Polygon {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (rx, ry) = (cx - margin as f64, cy - margin as f64);
        let step = std::f64::consts::TAU / POLYGON_VERTICES as f64;
        let verts = (0..POLYGON_VERTICES)
            .map(|k| {
                let a = step * (k as f64 + rng.random_range(-0.3..0.3));
                let f = rng.random_range(0.82..1.0);
                (cx + f * rx * a.cos(), cy + f * ry * a.sin())
            })
            .collect();
        Polygon { verts }
    }

    fn contains(&self, (x, y): Point) -> bool {
        let mut inside = false;
        let n = self.verts.len();
        for i in 0..n {
            let (xi, yi) = self.verts[i];
            let (xj, yj) = self.verts[(i + n - 1) % n];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
        inside
    }

    fn edge_distance(&self, p: Point) -> f64 {
        let n = self.verts.len();
        (0..n)
            .map(|i| segment_distance(p, self.verts[i], self.verts[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    fn bounds(&self) -> (Point, Point) {
        let xs = self.verts.iter().map(|v| v.0);
        let ys = self.verts.iter().map(|v| v.1);
        (
            (
                xs.clone().fold(f64::INFINITY, f64::min),
                ys.clone().fold(f64::INFINITY, f64::min),
            ),
            (
                xs.fold(f64::NEG_INFINITY, f64::max),
                ys.fold(f64::NEG_INFINITY, f64::max),
            ),
        )
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    dist(p, (a.0 + t * dx, a.1 + t * dy))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn place_seeds(rng: &mut ChaCha8Rng, poly: &Polygon, p: &SynthParams) -> Result<Vec<Point>> {
    let ((x0, y0), (x1, y1)) = poly.bounds();
    let sample_in = |rng: &mut ChaCha8Rng, center: Option<(Point, f64)>| -> Point {
        loop {
            let q = match center {
                Some((c, r)) => {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let d = r * rng.random::<f64>().sqrt();
                    (c.0 + d * a.cos(), c.1 + d * a.sin())
                }
                None => (rng.random_range(x0..x1), rng.random_range(y0..y1)),
            };
            if poly.contains(q) {
                return q;
            }
        }
    };

    // Keep most of the cluster disk inside the grain.
    let cluster = if p.cluster_radius > 0.0 && p.n_seeds_small > 0 {
        let mut c = sample_in(rng, None);
        for _ in 0..PLACEMENT_ATTEMPTS {
            if poly.edge_distance(c) >= 0.75 * p.cluster_radius {
                break;
            }
            c = sample_in(rng, None);
        }
        Some((c, p.cluster_radius))
    } else {
        None
    };

    let mut large: Vec<Point> = Vec::with_capacity(p.n_seeds_large);
    for _ in 0..p.n_seeds_large {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let q = sample_in(rng, None);
            let clear_of_cluster =
                cluster.is_none_or(|(c, r)| dist(q, c) >= r + 0.5 * p.large_spacing);
            if clear_of_cluster && large.iter().all(|&s| dist(q, s) >= p.large_spacing) {
                large.push(q);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SynthInfeasible(format!(
                "could not place large seed {} of {}",
                large.len() + 1,
                p.n_seeds_large
            )));
        }
    }

    let mut small: Vec<Point> = Vec::with_capacity(p.n_seeds_small);
    for _ in 0..p.n_seeds_small {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let q = sample_in(rng, cluster);
            if large.iter().all(|&s| dist(q, s) >= p.large_spacing)
                && small.iter().all(|&s| dist(q, s) >= p.small_spacing)
            {
                small.push(q);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SynthInfeasible(format!(
                "could not place small seed {} of {}",
                small.len() + 1,
                p.n_seeds_small
            )));
        }
    }
    large.extend(small);
    Ok(large)
}

/// Voronoi labels with boundary lines, and the grain mask. `weights[k]` is
/// subtracted from the distance to seed `k`.
fn tessellate(
    poly: &Polygon,
    seeds: &[Point],
    weights: &[f64],
    p: &SynthParams,
) -> (Vec<u32>, Vec<bool>) {
    let (w, h) = (p.width, p.height);
    let half = p.boundary_px as f64 / 2.0;
    let n = seeds.len();
    let mut pair = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pair[i * n + j] = dist(seeds[i], seeds[j]);
        }
    }
    let mut labels = vec![0u32; w * h];
    let mut mask = vec![false; w * h];
    let mut d = vec![0.0; n];
    for r in 0..h {
        for c in 0..w {
            let q = (c as f64 + 0.5, r as f64 + 0.5);
            if !poly.contains(q) {
                continue;
            }
            mask[r * w + c] = true;
            if poly.edge_distance(q) < half {
                continue;
            }
            let mut best = 0;
            for (k, s) in seeds.iter().enumerate() {
                d[k] = dist(q, *s);
                if d[k] - weights[k] < d[best] - weights[best] {
                    best = k;
                }
            }
            // Distance to the nearest ridge between the owning seed and any
            // other seed. Unweighted pairs have a straight bisector; for
            // weighted ones half the weighted-distance gap is a lower bound.
            let ridge = (0..n)
                .filter(|&k| k != best)
                .map(|k| {
                    if weights[k] == 0.0 && weights[best] == 0.0 {
                        (d[k] * d[k] - d[best] * d[best]) / (2.0 * pair[best * n + k])
                    } else {
                        ((d[k] - weights[k]) - (d[best] - weights[best])) / 2.0
                    }
                })
                .fold(f64::INFINITY, f64::min);
            if ridge >= half {
                labels[r * w + c] = best as u32 + 1;
            }
        }
    }
    (labels, mask)
}

fn render(rng: &mut ChaCha8Rng, labels: &LabelMap, mask: &[bool], p: &SynthParams) -> RgbImage {
    let (w, h) = labels.dims();
    let n = labels.ids().last().copied().unwrap_or(0) as usize;
    // Base color and linear gradient per cell.
    let cells: Vec<([f64; 3], (f64, f64))> = (0..=n)
        .map(|_| {
            let base = rng.random_range(95.0..215.0);
            let tint = [
                base + rng.random_range(-12.0..12.0),
                base * 0.92 + rng.random_range(-12.0..12.0),
                base * 0.8 + rng.random_range(-12.0..12.0),
            ];
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let g = rng.random_range(0.0..0.12);
            (tint, (g * a.cos(), g * a.sin()))
        })
        .collect();
    let centers = labels.bboxes();

    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let id = labels.get(r, c);
            let px = if id != 0 {
                let (tint, (gy, gx)) = cells[id as usize];
                let b = &centers[&id];
                let cy = (b.min_row + b.max_row) as f64 / 2.0;
                let cx = (b.min_col + b.max_col) as f64 / 2.0;
                let shade = gy * (r as f64 - cy) + gx * (c as f64 - cx);
                [tint[0] + shade, tint[1] + shade, tint[2] + shade]
            } else if mask[r * w + c] {
                [45.0, 38.0, 32.0]
            } else {
                [18.0, 18.0, 22.0]
            };
            img.put_pixel(
                c as u32,
                r as u32,
                Rgb(px.map(|v| v.clamp(0.0, 255.0) as u8)),
            );
        }
    }

    for _ in 0..p.scratch_count {
        let a = (
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        );
        let len = rng.random_range(0.2..0.8) * w.max(h) as f64;
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let thick = rng.random_range(1..=2) as isize;
        let steps = len.ceil() as usize;
        for k in 0..=steps {
            let f = k as f64;
            let (x, y) = (a.0 + f * t.cos(), a.1 + f * t.sin());
            for dy in 0..thick {
                for dx in 0..thick {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        img.put_pixel(xx as u32, yy as u32, Rgb([30, 28, 26]));
                    }
                }
            }
        }
    }

    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).expect("finite std-dev");
        for px in img.pixels_mut() {
            for ch in px.0.iter_mut() {
                let v = *ch as f64 + normal.sample(rng);
                *ch = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

pub fn generate(params: &SynthParams) -> Result<SynthSample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let poly = Polygon::random(&mut rng, params.width, params.height, params.grain_margin);
    let seeds = place_seeds(&mut rng, &poly, params)?;
    let weights: Vec<f64> = (0..seeds.len())
        .map(|k| {
            if k < params.n_seeds_large {
                params.large_weight
            } else {
                0.0
            }
        })
        .collect();
    let (raw, mask) = tessellate(&poly, &seeds, &weights, params);

    let mut labels =
        LabelMap::from_vec(params.width, params.height, raw)?.keep_largest_components();
    let areas = labels.areas();
    for l in labels.as_mut_slice() {
        if *l != 0 && areas[l] < params.min_area {
            *l = 0;
        }
    }
    let labels = labels.canonical();
    let (homogeneity, class) = match homogeneity_and_class(&labels, params.patch_size) {
        Ok(v) => v,
        Err(Error::EmptyLabelMap) => {
            return Err(Error::SynthInfeasible("no crystal survived".into()))
        }
        Err(e) => return Err(e),
    };

    let image = render(&mut rng, &labels, &mask, params);
    let grain_mask = GrayImage::from_fn(params.width as u32, params.height as u32, |x, y| {
        Luma([if mask[y as usize * params.width + x as usize] {
            255
        } else {
            0
        }])
    });
    Ok(SynthSample {
        image,
        labels,
        grain_mask,
        class,
        homogeneity,
    })
}

/// Parameters of sample `index` in a dataset generated from `params`.
pub fn sample_params(params: &SynthParams, index: u64) -> SynthParams {
    SynthParams {
        seed: mix_seed(&[params.seed, index]),
        ..params.clone()
    }
}

/// Generates samples from consecutive derived seeds until `count` of them have
/// the wanted class. Seeds whose parameters are infeasible are skipped.
/// Returns the samples with the index each was derived from.
pub fn generate_class(
    params: &SynthParams,
    class: GrainClass,
    count: usize,
    max_attempts: usize,
) -> Result<Vec<(u64, SynthSample)>> {
    generate_matching(params, Some(class), count, max_attempts)
}

/// Like [`generate_class`], with `None` accepting every class.
pub fn generate_matching(
    params: &SynthParams,
    class: Option<GrainClass>,
    count: usize,
    max_attempts: usize,
) -> Result<Vec<(u64, SynthSample)>> {
    use rayon::prelude::*;
    let mut out = Vec::with_capacity(count);
    let mut next = 0u64;
    let batch = rayon::current_num_threads().max(1) as u64;
    while out.len() < count {
        if next as usize >= max_attempts {
            let what = class.map_or("".to_string(), |c| format!("class-{c} "));
            return Err(Error::SynthInfeasible(format!(
                "only {} of {count} {what}samples in {max_attempts} attempts",
                out.len()
            )));
        }
        let end = (next + batch).min(max_attempts as u64);
        let results: Vec<(u64, Result<SynthSample>)> = (next..end)
            .into_par_iter()
            .map(|i| (i, generate(&sample_params(params, i))))
            .collect();
        next = end;
        for (i, r) in results {
            match r {
                Ok(s) if class.is_none_or(|c| s.class == c) && out.len() < count => {
                    out.push((i, s))
                }
                Ok(_) | Err(Error::SynthInfeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Set when some class had too few members and went entirely to train.
    pub warning: bool,
}

/// Splits sample indices per class by `fractions` (train, val, test) with
/// largest-remainder rounding.
pub fn stratified_split(
    classes: &[GrainClass],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&v| !(v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let parts = f.iter().filter(|&&v| v > 0.0).count();
    let mut split = Split::default();
    for class in [
        GrainClass::Small,
        GrainClass::Heterogeneous,
        GrainClass::Homogeneous,
    ] {
        let mut members: Vec<usize> = (0..classes.len())
            .filter(|&i| classes[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < parts {
            split.train.extend(&members);
            split.warning = true;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, class.number() as u64]));
        members.shuffle(&mut rng);

        let n = members.len();
        let quotas: Vec<f64> = f.iter().map(|&v| v * n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        let (a, rest) = members.split_at(counts[0]);
        let (b, c) = rest.split_at(counts[1]);
        split.train.extend(a);
        split.val.extend(b);
        split.test.extend(c);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_large_seed_gives_one_instance() {
        let p = SynthParams {
            n_seeds_small: 0,
            n_seeds_large: 1,
            width: 200,
            height: 200,
            ..Default::default()
        };
        let s = generate(&p).unwrap();
        assert_eq!(s.labels.instance_count(), 1);
        assert_eq!(s.class, GrainClass::Small);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let p = SynthParams {
            seed: 17,
            ..Default::default()
        };
        let (a, b) = (generate(&p).unwrap(), generate(&p).unwrap());
        assert_eq!(a.image.as_raw(), b.image.as_raw());
        assert_eq!(a.labels, b.labels);
        let c = generate(&SynthParams { seed: 18, ..p }).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn infeasible_seed_spacing() {
        let p = SynthParams {
            n_seeds_small: 200,
            small_spacing: 100.0,
            ..Default::default()
        };
        assert!(matches!(generate(&p), Err(Error::SynthInfeasible(_))));
    }

    #[test]
    fn invalid_params() {
        for p in [
            SynthParams {
                width: 32,
                ..Default::default()
            },
            SynthParams {
                boundary_px: 0,
                ..Default::default()
            },
            SynthParams {
                n_seeds_small: 0,
                n_seeds_large: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate(&p), Err(Error::InvalidParams(_))));
        }
    }

    #[test]
    fn clustered_small_seeds_are_heterogeneous() {
        // Infeasible seeds count as misses.
        let base = SynthParams::preset(GrainClass::Heterogeneous);
        let hits = (0..50u64)
            .filter(|&i| {
                matches!(generate(&sample_params(&base, i)),
                    Ok(s) if s.homogeneity < HOMOGENEITY_SPLIT_FOR_TEST)
            })
            .count();
        assert!(hits >= 45, "{hits} of 50 heterogeneous");
    }

    const HOMOGENEITY_SPLIT_FOR_TEST: f64 = 0.1;

    #[test]
    fn boundary_lines_separate_neighbours() {
        let p = SynthParams {
            seed: 5,
            ..Default::default()
        };
        let s = generate(&p).unwrap();
        let (w, h) = s.labels.dims();
        // Two different ids never sit within boundary_px - 2 pixels along a row
        // or column without background in between.
        let gap = p.boundary_px - 1;
        for r in 0..h {
            for c in 0..w {
                let a = s.labels.get(r, c);
                if a == 0 {
                    continue;
                }
                for k in 1..gap {
                    if c + k < w {
                        let b = s.labels.get(r, c + k);
                        assert!(b == 0 || b == a, "row gap at ({r},{c})");
                    }
                    if r + k < h {
                        let b = s.labels.get(r + k, c);
                        assert!(b == 0 || b == a, "column gap at ({r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn split_examples() {
        let classes: Vec<GrainClass> = [
            GrainClass::Small,
            GrainClass::Heterogeneous,
            GrainClass::Homogeneous,
        ]
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, 10))
        .collect();
        let s = stratified_split(&classes, (0.6, 0.2, 0.2), 3).unwrap();
        for class in [
            GrainClass::Small,
            GrainClass::Heterogeneous,
            GrainClass::Homogeneous,
        ] {
            let count = |v: &[usize]| v.iter().filter(|&&i| classes[i] == class).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (6, 2, 2));
        }
        assert!(!s.warning);

        let five = vec![GrainClass::Small; 5];
        let s = stratified_split(&five, (0.6, 0.2, 0.2), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 1, 1));

        let two = vec![GrainClass::Homogeneous; 2];
        let s = stratified_split(&two, (0.6, 0.2, 0.2), 0).unwrap();
        assert_eq!(s.train, vec![0, 1]);
        assert!(s.warning);

        assert!(stratified_split(&five, (0.6, 0.2, 0.3), 0).is_err());
    }

    #[test]
    fn split_of_313_mixed() {
        let classes: Vec<GrainClass> = (0..313)
            .map(|i| match i % 7 {
                0..=2 => GrainClass::Small,
                3 | 4 => GrainClass::Heterogeneous,
                _ => GrainClass::Homogeneous,
            })
            .collect();
        let f = [0.6, 0.2, 0.2];
        let s = stratified_split(&classes, (f[0], f[1], f[2]), 11).unwrap();
        for class in [
            GrainClass::Small,
            GrainClass::Heterogeneous,
            GrainClass::Homogeneous,
        ] {
            let n = classes.iter().filter(|&&c| c == class).count() as f64;
            for (part, frac) in [&s.train, &s.val, &s.test].iter().zip(f) {
                let k = part.iter().filter(|&&i| classes[i] == class).count() as f64;
                assert!(
                    (k - n * frac).abs() <= 1.0,
                    "class {class}: {k} vs {}",
                    n * frac
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn generated_grains_are_well_formed(seed in any::<u64>(), small in 1usize..25, large in 0usize..2) {
            let p = SynthParams {
                width: 256,
                height: 224,
                n_seeds_small: small,
                n_seeds_large: large,
                small_spacing: 30.0,
                large_spacing: 90.0,
                seed,
                ..Default::default()
            };
            let s = match generate(&p) {
                Ok(s) => s,
                Err(Error::SynthInfeasible(_)) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert!(s.labels.validate().is_ok());
            for (_, a) in s.labels.areas() {
                prop_assert!(a >= 16);
            }
            for (i, &l) in s.labels.as_slice().iter().enumerate() {
                if l != 0 {
                    prop_assert_eq!(s.grain_mask.as_raw()[i], 255);
                }
            }
            prop_assert_eq!(s.labels.clone(), s.labels.canonical());
            let (hom, class) = homogeneity_and_class(&s.labels, p.patch_size).unwrap();
            prop_assert_eq!((hom, class), (s.homogeneity, s.class));
        }

        #[test]
        fn split_is_partition(n in 0usize..120, seed in any::<u64>(), cls in proptest::collection::vec(1u8..=3, 120)) {
            let classes: Vec<GrainClass> = cls[..n].iter().map(|&c| GrainClass::try_from(c).unwrap()).collect();
            let s = stratified_split(&classes, (0.6, 0.2, 0.2), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
