//! Instance-matching quality and crystal-size statistics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::attention::crystal_lengths;
use crate::error::{Error, Result};
use crate::grid::{check_dims, LabelMap};

/// Intersection over union of two pixel sets.
pub fn iou(a: &HashSet<usize>, b: &HashSet<usize>) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::EmptyOperands);
    }
    let inter = a.intersection(b).count();
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(pred id, gt id, IoU)` for every matched pair.
    pub tp: Vec<(u32, u32, f64)>,
    pub fp: Vec<u32>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u32>,
}

/// Instance areas and pairwise intersections of two label maps.
struct Overlaps {
    gt_areas: BTreeMap<u32, usize>,
    pred_areas: BTreeMap<u32, usize>,
    inter: BTreeMap<(u32, u32), usize>,
    /// Raster index of each instance's first pixel.
    gt_first: BTreeMap<u32, usize>,
    pred_first: BTreeMap<u32, usize>,
}

impl Overlaps {
    fn new(gt: &LabelMap, pred: &LabelMap) -> Result<Self> {
        check_dims(gt.dims(), pred.dims())?;
        let mut o = Overlaps {
            gt_areas: BTreeMap::new(),
            pred_areas: BTreeMap::new(),
            inter: BTreeMap::new(),
            gt_first: BTreeMap::new(),
            pred_first: BTreeMap::new(),
        };
        for (i, (&g, &p)) in gt.as_slice().iter().zip(pred.as_slice()).enumerate() {
            if g != 0 {
                *o.gt_areas.entry(g).or_insert(0) += 1;
                o.gt_first.entry(g).or_insert(i);
            }
            if p != 0 {
                *o.pred_areas.entry(p).or_insert(0) += 1;
                o.pred_first.entry(p).or_insert(i);
            }
            if g != 0 && p != 0 {
                *o.inter.entry((g, p)).or_insert(0) += 1;
            }
        }
        Ok(o)
    }

    fn iou(&self, g: u32, p: u32, inter: usize) -> f64 {
        let union = self.gt_areas[&g] + self.pred_areas[&p] - inter;
        inter as f64 / union as f64
    }
}

/// Panoptic quality with matching at IoU > 0.5. Two empty maps score 1.
pub fn panoptic_quality(gt: &LabelMap, pred: &LabelMap) -> Result<(f64, MatchResult)> {
    let o = Overlaps::new(gt, pred)?;
    let mut tp = Vec::new();
    let mut matched_gt = HashSet::new();
    let mut matched_pred = HashSet::new();
    for (&(g, p), &inter) in &o.inter {
        let v = o.iou(g, p, inter);
        // At IoU > 0.5 each instance has at most one partner.
        if v > 0.5 {
            tp.push((p, g, v));
            matched_gt.insert(g);
            matched_pred.insert(p);
        }
    }
    tp.sort_by_key(|t| (t.0, t.1));
    let fp: Vec<u32> = o
        .pred_areas
        .keys()
        .copied()
        .filter(|p| !matched_pred.contains(p))
        .collect();
    let fn_: Vec<u32> = o
        .gt_areas
        .keys()
        .copied()
        .filter(|g| !matched_gt.contains(g))
        .collect();

    let denom = tp.len() as f64 + 0.5 * fp.len() as f64 + 0.5 * fn_.len() as f64;
    let pq = if denom == 0.0 {
        1.0
    } else {
        tp.iter().map(|t| t.2).sum::<f64>() / denom
    };
    Ok((pq, MatchResult { tp, fp, fn_ }))
}

/// Aggregated Jaccard index.
///
/// Ground-truth instances are visited in raster order of their first pixel.
/// Each takes the still-unused overlapping prediction with the highest IoU
/// (ties go to the prediction whose first pixel comes first); its intersection
/// joins the numerator and its union the denominator. A ground-truth instance
/// with no unused overlapping prediction adds only its own area to the
/// denominator. Pixels of predictions never chosen are added to the
/// denominator at the end. Two empty maps score 1.
pub fn aggregated_jaccard(gt: &LabelMap, pred: &LabelMap) -> Result<f64> {
    let o = Overlaps::new(gt, pred)?;
    if o.gt_areas.is_empty() && o.pred_areas.is_empty() {
        return Ok(1.0);
    }

    let mut partners: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
    for (&(g, p), &inter) in &o.inter {
        partners.entry(g).or_default().push((p, inter));
    }
    let mut gt_order: Vec<u32> = o.gt_areas.keys().copied().collect();
    gt_order.sort_by_key(|g| o.gt_first[g]);

    let mut used: HashSet<u32> = HashSet::new();
    let (mut num, mut den) = (0usize, 0usize);
    for g in gt_order {
        let best = partners
            .get(&g)
            .into_iter()
            .flatten()
            .filter(|(p, _)| !used.contains(p))
            .map(|&(p, inter)| (p, inter, o.iou(g, p, inter)))
            .min_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then(o.pred_first[&a.0].cmp(&o.pred_first[&b.0]))
            });
        match best {
            Some((p, inter, _)) => {
                used.insert(p);
                num += inter;
                den += o.gt_areas[&g] + o.pred_areas[&p] - inter;
            }
            None => den += o.gt_areas[&g],
        }
    }
    den += o
        .pred_areas
        .iter()
        .filter(|(p, _)| !used.contains(p))
        .map(|(_, &a)| a)
        .sum::<usize>();
    Ok(num as f64 / den as f64)
}

/// Diameter of the circle with the given area.
pub fn crystal_size(area_px: f64) -> Result<f64> {
    if !(area_px > 0.0) {
        return Err(Error::EmptyInstance);
    }
    Ok(2.0 * (area_px / std::f64::consts::PI).sqrt())
}

/// Average crystal size over all instances.
pub fn acs(label_map: &LabelMap) -> Result<f64> {
    let areas = label_map.areas();
    if areas.is_empty() {
        return Err(Error::EmptyLabelMap);
    }
    let total: f64 = areas
        .values()
        .map(|&a| crystal_size(a as f64))
        .sum::<Result<f64>>()?;
    Ok(total / areas.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub acs_gt: f64,
    pub acs_pred: f64,
    pub mae: f64,
    pub mre: f64,
}

pub fn size_errors(gt: &LabelMap, pred: &LabelMap) -> Result<SizeReport> {
    let acs_gt = acs(gt)?;
    let acs_pred = match acs(pred) {
        Ok(v) => v,
        Err(Error::EmptyLabelMap) => 0.0,
        Err(e) => return Err(e),
    };
    let mae = (acs_gt - acs_pred).abs();
    Ok(SizeReport {
        acs_gt,
        acs_pred,
        mae,
        mre: mae / acs_gt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum GrainClass {
    /// Every crystal fits in one patch.
    Small = 1,
    /// Strongly heterogeneous crystal sizes.
    Heterogeneous = 2,
    /// Large crystals of comparable size.
    Homogeneous = 3,
}

impl GrainClass {
    pub fn number(self) -> u8 {
        self as u8
    }
}

impl From<GrainClass> for u8 {
    fn from(c: GrainClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for GrainClass {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(GrainClass::Small),
            2 => Ok(GrainClass::Heterogeneous),
            3 => Ok(GrainClass::Homogeneous),
            _ => Err(format!("grain class must be 1, 2 or 3, got {v}")),
        }
    }
}

impl std::fmt::Display for GrainClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Homogeneity score threshold separating classes 2 and 3.
pub const HOMOGENEITY_SPLIT: f64 = 0.1;

/// Ratio of the smallest to the largest crystal length, and the resulting
/// grain class for patch size `s`.
pub fn homogeneity_and_class(label_map: &LabelMap, s: usize) -> Result<(f64, GrainClass)> {
    let lengths = crystal_lengths(label_map);
    if lengths.is_empty() {
        return Err(Error::EmptyLabelMap);
    }
    let min = lengths.iter().map(|(_, l)| l.length).min().unwrap();
    let max = lengths.iter().map(|(_, l)| l.length).max().unwrap();
    let score = min as f64 / max as f64;
    let class = if max < s {
        GrainClass::Small
    } else if score < HOMOGENEITY_SPLIT {
        GrainClass::Heterogeneous
    } else {
        GrainClass::Homogeneous
    };
    Ok((score, class))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: impl IntoIterator<Item = usize>) -> HashSet<usize> {
        v.into_iter().collect()
    }

    fn rects(w: usize, h: usize, boxes: &[(u32, usize, usize, usize, usize)]) -> LabelMap {
        let mut m = LabelMap::new(w, h);
        for &(id, y, x, rh, rw) in boxes {
            for r in y..y + rh {
                for c in x..x + rw {
                    m.set(r, c, id);
                }
            }
        }
        m
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&set(0..10), &set(0..10)).unwrap(), 1.0);
        assert_eq!(iou(&set(0..10), &set(10..20)).unwrap(), 0.0);
        let v = iou(&set(0..100), &set(40..140)).unwrap();
        assert!((v - 60.0 / 140.0).abs() < 1e-12);
        assert!(matches!(iou(&set([]), &set([])), Err(Error::EmptyOperands)));
    }

    #[test]
    fn pq_examples() {
        let gt = rects(20, 20, &[(1, 0, 0, 5, 5), (2, 10, 10, 4, 6)]);
        let (pq, m) = panoptic_quality(&gt, &gt).unwrap();
        assert_eq!(pq, 1.0);
        assert_eq!(m.tp.len(), 2);

        // 10 gt pixels, 6 predicted pixels fully inside: IoU 0.6.
        let gt = rects(20, 20, &[(1, 0, 0, 1, 10)]);
        let pred = rects(20, 20, &[(5, 0, 0, 1, 6)]);
        let (pq, m) = panoptic_quality(&gt, &pred).unwrap();
        assert!((pq - 0.6).abs() < 1e-12);
        assert_eq!(m.tp, vec![(5, 1, 0.6)]);

        let gt = rects(20, 20, &[(1, 0, 0, 5, 5)]);
        let pred = rects(20, 20, &[(1, 0, 0, 5, 5), (2, 10, 10, 3, 3)]);
        let (pq, m) = panoptic_quality(&gt, &pred).unwrap();
        assert!((pq - 1.0 / 1.5).abs() < 1e-12);
        assert_eq!(m.fp, vec![2]);
        assert!(m.fn_.is_empty());

        let blank = LabelMap::new(8, 8);
        assert_eq!(panoptic_quality(&blank, &blank).unwrap().0, 1.0);
        assert!(matches!(
            panoptic_quality(&blank, &LabelMap::new(8, 9)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn aji_examples() {
        let gt = rects(20, 20, &[(1, 0, 0, 5, 5), (2, 10, 10, 4, 6)]);
        assert_eq!(aggregated_jaccard(&gt, &gt).unwrap(), 1.0);
        assert_eq!(
            aggregated_jaccard(&gt, &LabelMap::new(20, 20)).unwrap(),
            0.0
        );
        assert!(aggregated_jaccard(&gt, &LabelMap::new(21, 20)).is_err());
    }

    #[test]
    fn aji_is_not_symmetric() {
        // One gt instance split into two predictions.
        let gt = rects(10, 10, &[(1, 0, 0, 4, 8)]);
        let pred = rects(10, 10, &[(1, 0, 0, 4, 6), (2, 0, 6, 4, 2)]);
        let forward = aggregated_jaccard(&gt, &pred).unwrap();
        let backward = aggregated_jaccard(&pred, &gt).unwrap();
        // Split and merge errors cost the same in both directions.
        assert!((forward - 24.0 / 40.0).abs() < 1e-12);
        assert!((backward - 24.0 / 40.0).abs() < 1e-12);

        // The first gt instance claims a prediction that fits the second better.
        let gt = rects(20, 1, &[(1, 0, 0, 1, 4), (2, 0, 4, 1, 10)]);
        let pred = rects(20, 1, &[(1, 0, 2, 1, 12)]);
        let forward = aggregated_jaccard(&gt, &pred).unwrap();
        let backward = aggregated_jaccard(&pred, &gt).unwrap();
        assert!((forward - 2.0 / 24.0).abs() < 1e-12);
        assert!((backward - 10.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn crystal_size_examples() {
        assert!((crystal_size(std::f64::consts::PI).unwrap() - 2.0).abs() < 1e-12);
        assert!((crystal_size(100.0).unwrap() - 11.283791670955125).abs() < 1e-12);
        assert!(matches!(crystal_size(0.0), Err(Error::EmptyInstance)));

        let mut area = 0usize;
        for r in -20i64..=20 {
            for c in -20i64..=20 {
                if r * r + c * c <= 400 {
                    area += 1;
                }
            }
        }
        let d = crystal_size(area as f64).unwrap();
        assert!((d - 40.0).abs() / 40.0 < 0.02, "diameter {d}");
    }

    #[test]
    fn acs_examples() {
        let one = rects(30, 30, &[(1, 0, 0, 10, 10)]);
        assert!((acs(&one).unwrap() - 11.283791670955125).abs() < 1e-12);
        let two = rects(30, 30, &[(1, 0, 0, 10, 10), (2, 15, 15, 5, 20)]);
        assert!((acs(&two).unwrap() - acs(&one).unwrap()).abs() < 1e-12);
        let mixed = rects(
            30,
            30,
            &[(1, 0, 0, 2, 2), (2, 5, 5, 3, 3), (3, 10, 10, 5, 5)],
        );
        let expected = [4.0f64, 9.0, 25.0]
            .iter()
            .map(|a| 2.0 * (a / std::f64::consts::PI).sqrt())
            .sum::<f64>()
            / 3.0;
        assert!((acs(&mixed).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            acs(&LabelMap::new(3, 3)),
            Err(Error::EmptyLabelMap)
        ));
    }

    #[test]
    fn size_error_examples() {
        let gt = rects(40, 40, &[(1, 0, 0, 10, 10), (2, 20, 0, 10, 10)]);
        let r = size_errors(&gt, &gt).unwrap();
        assert_eq!((r.mae, r.mre), (0.0, 0.0));

        // Two 10x10 crystals predicted as one 20x10 region (boundary absorbed).
        let merged = rects(40, 40, &[(1, 0, 0, 20, 10)]);
        let r = size_errors(
            &rects(40, 40, &[(1, 0, 0, 10, 10), (2, 10, 0, 10, 10)]),
            &merged,
        )
        .unwrap();
        let d100 = 2.0 * (100.0 / std::f64::consts::PI).sqrt();
        let d200 = 2.0 * (200.0 / std::f64::consts::PI).sqrt();
        assert!(r.acs_pred > r.acs_gt);
        assert!((r.mae - (d200 - d100)).abs() < 1e-12);
        assert!((r.mre - (2f64.sqrt() - 1.0)).abs() < 1e-12);

        let r = size_errors(&gt, &LabelMap::new(40, 40)).unwrap();
        assert_eq!(r.acs_pred, 0.0);
        assert_eq!(r.mre, 1.0);
    }

    #[test]
    fn homogeneity_examples() {
        let uniform = rects(400, 400, &[(1, 0, 0, 50, 50), (2, 100, 100, 50, 50)]);
        assert_eq!(
            homogeneity_and_class(&uniform, 224).unwrap(),
            (1.0, GrainClass::Small)
        );

        let hetero = rects(700, 700, &[(1, 0, 0, 30, 30), (2, 50, 50, 600, 100)]);
        let (s, c) = homogeneity_and_class(&hetero, 224).unwrap();
        assert!((s - 0.05).abs() < 1e-12);
        assert_eq!(c, GrainClass::Heterogeneous);

        let homo = rects(700, 700, &[(1, 0, 0, 150, 30), (2, 50, 50, 600, 100)]);
        let (s, c) = homogeneity_and_class(&homo, 224).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
        assert_eq!(c, GrainClass::Homogeneous);

        assert!(matches!(
            homogeneity_and_class(&LabelMap::new(5, 5), 224),
            Err(Error::EmptyLabelMap)
        ));
    }

    #[test]
    fn grain_class_serializes_as_number() {
        assert_eq!(GrainClass::try_from(2).unwrap(), GrainClass::Heterogeneous);
        assert!(GrainClass::try_from(4).is_err());
        assert_eq!(u8::from(GrainClass::Homogeneous), 3);
    }
}
