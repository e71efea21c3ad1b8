//! Size-level attention maps.
//!
//! Instances are binned by their bounding-box length relative to the image size
//! and each bin gets its own weight map; the final map collects the background.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap};

/// Default size-level thresholds in percent of the larger image dimension.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [100.0, 50.0, 25.0, 12.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrystalLength {
    /// Larger side of the tight bounding box, in pixels.
    pub length: usize,
    /// `length` as a percentage of the larger image dimension.
    pub relative: f64,
}

pub fn crystal_length(label_map: &LabelMap, id: u32) -> Result<CrystalLength> {
    let boxes = label_map.bboxes();
    let b = boxes.get(&id).ok_or(Error::NoSuchInstance(id))?;
    Ok(length_of(b.height().max(b.width()), label_map))
}

/// Lengths of every instance, keyed by id.
pub fn crystal_lengths(label_map: &LabelMap) -> Vec<(u32, CrystalLength)> {
    label_map
        .bboxes()
        .into_iter()
        .map(|(id, b)| (id, length_of(b.height().max(b.width()), label_map)))
        .collect()
}

fn length_of(length: usize, label_map: &LabelMap) -> CrystalLength {
    let denom = label_map.width().max(label_map.height()) as f64;
    CrystalLength {
        length,
        relative: 100.0 * length as f64 / denom,
    }
}

/// `N` size-level maps followed by one background map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub maps: Vec<Grid<f64>>,
    pub thresholds: Vec<f64>,
}

impl AttentionStack {
    /// Number of size levels, excluding the background map.
    pub fn levels(&self) -> usize {
        self.maps.len() - 1
    }

    pub fn background(&self) -> &Grid<f64> {
        &self.maps[self.maps.len() - 1]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }
}

pub fn validate_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::BadThresholds("empty threshold list".into()));
    }
    if t[0] != 100.0 {
        return Err(Error::BadThresholds(format!(
            "first threshold is {}, not 100",
            t[0]
        )));
    }
    if t.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::BadThresholds("thresholds must be positive".into()));
    }
    if t.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::BadThresholds(
            "thresholds must strictly decrease".into(),
        ));
    }
    Ok(())
}

/// Size level (0-based) for a relative length: the first level `i` with
/// `relative >= t[i + 1]`, the last level catching everything below `t[N-1]`.
/// A length exactly on a threshold belongs to the larger-size level.
pub fn size_level(relative: f64, t: &[f64]) -> usize {
    (0..t.len())
        .find(|&i| i + 1 == t.len() || relative >= t[i + 1])
        .unwrap_or(0)
}

/// Binary attention stack derived from instance labels.
pub fn gt_attention(label_map: &LabelMap, t: &[f64]) -> Result<AttentionStack> {
    validate_thresholds(t)?;
    let n = t.len();
    let (w, h) = label_map.dims();
    let mut maps = vec![Grid::filled(w, h, 0.0); n + 1];

    let lengths = crystal_lengths(label_map);
    // Instance ids are sparse; look them up through a sorted list.
    let level_of = |id: u32| -> usize {
        let k = lengths
            .binary_search_by_key(&id, |&(i, _)| i)
            .expect("id present in its own map");
        size_level(lengths[k].1.relative, t)
    };

    let mut cache: Option<(u32, usize)> = None;
    for (i, &id) in label_map.as_slice().iter().enumerate() {
        let level = if id == 0 {
            n
        } else {
            match cache {
                Some((cid, lvl)) if cid == id => lvl,
                _ => {
                    let lvl = level_of(id);
                    cache = Some((id, lvl));
                    lvl
                }
            }
        };
        maps[level].as_mut_slice()[i] = 1.0;
    }
    Ok(AttentionStack {
        maps,
        thresholds: t.to_vec(),
    })
}

/// Makes the size-level maps sum to 1 at every pixel. Where they carry no
/// weight at all, each level gets `1 / N`. The background map is untouched.
pub fn normalize_stack(stack: &AttentionStack) -> AttentionStack {
    let n = stack.levels();
    let len = stack.maps[0].len();
    let mut maps = stack.maps.clone();
    for i in 0..len {
        let sum: f64 = stack.maps[..n].iter().map(|m| m.as_slice()[i]).sum();
        for map in maps[..n].iter_mut() {
            let v = &mut map.as_mut_slice()[i];
            *v = if sum > 1e-6 { *v / sum } else { 1.0 / n as f64 };
        }
    }
    AttentionStack {
        maps,
        thresholds: stack.thresholds.clone(),
    }
}

/// Separable Gaussian blur of every map with mirrored borders.
pub fn blur_stack(stack: &AttentionStack, sigma: f64) -> AttentionStack {
    if sigma <= 0.0 {
        return stack.clone();
    }
    AttentionStack {
        maps: stack.maps.iter().map(|m| gaussian_blur(m, sigma)).collect(),
        thresholds: stack.thresholds.clone(),
    }
}

pub fn gaussian_blur(src: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = src.dims();
    let mirror = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        // Reflect until inside; handles kernels wider than the image.
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= len {
                i = 2 * len - i - 1;
            } else {
                return i as usize;
            }
        }
    };

    let mut tmp = Grid::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let cc = mirror(c as isize + k as isize - radius, w);
                acc += kv * src.get(r, cc);
            }
            *tmp.get_mut(r, c) = acc;
        }
    }
    let mut out = Grid::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let rr = mirror(r as isize + k as isize - radius, h);
                acc += kv * tmp.get(rr, c);
            }
            *out.get_mut(r, c) = acc.clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect_map(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> LabelMap {
        let mut m = LabelMap::new(w, h);
        for (k, &(y, x, rh, rw)) in rects.iter().enumerate() {
            for r in y..y + rh {
                for c in x..x + rw {
                    m.set(r, c, k as u32 + 1);
                }
            }
        }
        m
    }

    #[test]
    fn crystal_length_examples() {
        let m = rect_map(40, 40, &[(2, 3, 10, 4), (30, 30, 1, 1)]);
        assert_eq!(crystal_length(&m, 1).unwrap().length, 10);
        assert_eq!(crystal_length(&m, 2).unwrap().length, 1);
        assert!(matches!(
            crystal_length(&m, 3),
            Err(Error::NoSuchInstance(3))
        ));

        let mut diag = LabelMap::new(100, 100);
        for i in 0..10 {
            diag.set(i, i, 1);
        }
        let cl = crystal_length(&diag, 1).unwrap();
        assert_eq!(cl.length, 10);
        assert_eq!(cl.relative, 10.0);
    }

    #[test]
    fn level_assignment_uses_inclusive_upper_bound() {
        let t = DEFAULT_THRESHOLDS;
        assert_eq!(size_level(60.0, &t), 0);
        assert_eq!(size_level(50.0, &t), 0);
        assert_eq!(size_level(49.9, &t), 1);
        assert_eq!(size_level(12.5, &t), 2);
        assert_eq!(size_level(0.5, &t), 3);
        assert_eq!(size_level(100.0, &t), 0);
    }

    #[test]
    fn gt_attention_single_instance() {
        // Length 60 in a 100-px image: 60%.
        let m = rect_map(100, 100, &[(10, 10, 60, 20)]);
        let stack = gt_attention(&m, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(stack.maps.len(), 5);
        assert_eq!(*stack.maps[0].get(20, 20), 1.0);
        assert_eq!(*stack.maps[4].get(0, 0), 1.0);
        // Exactly 50% goes to the larger-size map.
        let m = rect_map(100, 100, &[(0, 0, 50, 5)]);
        let stack = gt_attention(&m, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(*stack.maps[0].get(0, 0), 1.0);
    }

    #[test]
    fn three_size_groups_match_bruteforce_classifier() {
        // Large, medium and small crystals in a 200-px image, t = (100, 50, 25).
        let m = rect_map(
            200,
            200,
            &[
                (0, 0, 120, 60),
                (130, 0, 60, 70),
                (0, 100, 30, 20),
                (40, 100, 10, 10),
                (40, 130, 55, 40),
            ],
        );
        let t = [100.0, 50.0, 25.0];
        let stack = gt_attention(&m, &t).unwrap();
        for r in 0..200 {
            for c in 0..200 {
                let id = m.get(r, c);
                let expected = if id == 0 {
                    3
                } else {
                    // Brute force: scan the whole map for this id's extent.
                    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
                    for rr in 0..200 {
                        for cc in 0..200 {
                            if m.get(rr, cc) == id {
                                r0 = r0.min(rr);
                                r1 = r1.max(rr);
                                c0 = c0.min(cc);
                                c1 = c1.max(cc);
                            }
                        }
                    }
                    let rel = 100.0 * ((r1 - r0 + 1).max(c1 - c0 + 1)) as f64 / 200.0;
                    if rel >= 50.0 {
                        0
                    } else if rel >= 25.0 {
                        1
                    } else {
                        2
                    }
                };
                for (k, map) in stack.maps.iter().enumerate() {
                    assert_eq!(*map.get(r, c), if k == expected { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn malformed_thresholds() {
        let m = LabelMap::new(10, 10);
        for t in [
            &[][..],
            &[90.0, 50.0][..],
            &[100.0, 50.0, 50.0][..],
            &[100.0, 120.0][..],
            &[100.0, -1.0][..],
        ] {
            assert!(matches!(gt_attention(&m, t), Err(Error::BadThresholds(_))));
        }
    }

    #[test]
    fn normalize_examples() {
        let m = rect_map(20, 20, &[(0, 0, 15, 15), (16, 16, 3, 3)]);
        let stack = gt_attention(&m, &[100.0, 50.0]).unwrap();
        let norm = normalize_stack(&stack);
        // Foreground pixels keep their one-hot weights; background becomes uniform.
        for i in 0..400 {
            if m.as_slice()[i] != 0 {
                assert_eq!(norm.maps[0].as_slice()[i], stack.maps[0].as_slice()[i]);
                assert_eq!(norm.maps[1].as_slice()[i], stack.maps[1].as_slice()[i]);
            } else {
                assert_eq!(norm.maps[0].as_slice()[i], 0.5);
                assert_eq!(norm.maps[1].as_slice()[i], 0.5);
            }
        }
        assert_eq!(norm.maps[2], stack.maps[2]);

        let pair = AttentionStack {
            maps: vec![
                Grid::filled(1, 1, 0.2),
                Grid::filled(1, 1, 0.2),
                Grid::filled(1, 1, 0.9),
            ],
            thresholds: vec![100.0, 50.0],
        };
        let n = normalize_stack(&pair);
        assert_eq!(*n.maps[0].get(0, 0), 0.5);
        assert_eq!(*n.maps[1].get(0, 0), 0.5);
        assert_eq!(*n.maps[2].get(0, 0), 0.9);
    }

    #[test]
    fn blur_preserves_constants() {
        let g = Grid::filled(9, 5, 0.75);
        let b = gaussian_blur(&g, 2.0);
        assert!(b.as_slice().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    fn random_map() -> impl Strategy<Value = LabelMap> {
        (8usize..24, 8usize..24)
            .prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(0u32..6, w * h)))
            .prop_map(|(w, h, v)| LabelMap::from_vec(w, h, v).unwrap().split_components())
    }

    proptest! {
        #[test]
        fn gt_stack_is_a_binary_partition(m in random_map()) {
            let stack = gt_attention(&m, &DEFAULT_THRESHOLDS).unwrap();
            for i in 0..m.as_slice().len() {
                let vals: Vec<f64> = stack.maps.iter().map(|g| g.as_slice()[i]).collect();
                prop_assert!(vals.iter().all(|&v| v == 0.0 || v == 1.0));
                prop_assert_eq!(vals.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(vals[4] == 1.0, m.as_slice()[i] == 0);
            }
        }

        #[test]
        fn normalized_levels_sum_to_one(vals in proptest::collection::vec(0.0f64..=1.0, 3 * 16)) {
            let maps = vals.chunks(16).map(|c| Grid::from_vec(4, 4, c.to_vec()).unwrap()).collect();
            let stack = normalize_stack(&AttentionStack { maps, thresholds: vec![100.0, 50.0] });
            for i in 0..16 {
                let s = stack.maps[0].as_slice()[i] + stack.maps[1].as_slice()[i];
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }

        #[test]
        fn gt_stack_invariant_under_relabeling(m in random_map(), salt in 1u32..500) {
            let relabeled = LabelMap::from_vec(
                m.width(),
                m.height(),
                m.as_slice().iter().map(|&l| if l == 0 { 0 } else { 1000 - l + salt }).collect(),
            ).unwrap();
            prop_assert_eq!(
                gt_attention(&m, &DEFAULT_THRESHOLDS).unwrap(),
                gt_attention(&relabeled, &DEFAULT_THRESHOLDS).unwrap()
            );
        }
    }
}
