//! Evaluation report: per-image metrics and aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crystalseg::metrics::GrainClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub class: GrainClass,
    pub homogeneity: f64,
    pub pq: f64,
    pub aji: f64,
    pub acs_gt: f64,
    pub acs_pred: f64,
    pub mae: f64,
    pub mre: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub id: String,
    pub error: String,
}

/// Mean and population standard deviation. Both are zero for no values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub pq: Stat,
    pub aji: Stat,
    pub acs_gt: Stat,
    pub acs_pred: Stat,
    pub mae: Stat,
    pub mre: Stat,
}

impl Aggregate {
    pub fn of(rows: &[&ImageMetrics]) -> Aggregate {
        let stat =
            |f: fn(&ImageMetrics) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        Aggregate {
            count: rows.len(),
            pq: stat(|r| r.pq),
            aji: stat(|r| r.aji),
            acs_gt: stat(|r| r.acs_gt),
            acs_pred: stat(|r| r.acs_pred),
            mae: stat(|r| r.mae),
            mre: stat(|r| r.mre),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Fusion strategy recorded by the segment run, if known.
    pub strategy: Option<String>,
    pub split: Option<String>,
    pub images: Vec<ImageMetrics>,
    pub errors: Vec<ImageError>,
    pub overall: Aggregate,
    /// Keyed by class number.
    pub per_class: BTreeMap<String, Aggregate>,
}

impl Report {
    pub fn new(
        strategy: Option<String>,
        split: Option<String>,
        mut images: Vec<ImageMetrics>,
        mut errors: Vec<ImageError>,
    ) -> Report {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        errors.sort_by(|a, b| a.id.cmp(&b.id));
        let all: Vec<&ImageMetrics> = images.iter().collect();
        let overall = Aggregate::of(&all);
        let mut per_class = BTreeMap::new();
        for class in [
            GrainClass::Small,
            GrainClass::Heterogeneous,
            GrainClass::Homogeneous,
        ] {
            let rows: Vec<&ImageMetrics> = images.iter().filter(|r| r.class == class).collect();
            if !rows.is_empty() {
                per_class.insert(class.to_string(), Aggregate::of(&rows));
            }
        }
        Report {
            strategy,
            split,
            images,
            errors,
            overall,
            per_class,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.strategy {
            let _ = writeln!(out, "strategy: {s}");
        }
        let _ = writeln!(
            out,
            "{:<14} {:>5} {:>6} {:>6} {:>6} {:>9} {:>9} {:>8} {:>7}",
            "id", "class", "hom", "PQ", "AJI", "ACS gt", "ACS pred", "MAE", "MRE"
        );
        for r in &self.images {
            let _ = writeln!(
                out,
                "{:<14} {:>5} {:>6.3} {:>6.3} {:>6.3} {:>9.2} {:>9.2} {:>8.2} {:>7.4}",
                r.id, r.class, r.homogeneity, r.pq, r.aji, r.acs_gt, r.acs_pred, r.mae, r.mre
            );
        }
        for e in &self.errors {
            let _ = writeln!(out, "{:<14} error: {}", e.id, e.error);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>15} {:>15} {:>17} {:>15}",
            "group", "n", "PQ", "AJI", "MAE", "MRE"
        );
        let mut line = |name: &str, a: &Aggregate| {
            let _ = writeln!(
                out,
                "{:<8} {:>5} {:>7.3} ± {:<5.3} {:>7.3} ± {:<5.3} {:>8.2} ± {:<6.2} {:>7.4} ± {:<5.4}",
                name, a.count, a.pq.mean, a.pq.std, a.aji.mean, a.aji.std, a.mae.mean, a.mae.std,
                a.mre.mean, a.mre.std
            );
        };
        line("all", &self.overall);
        for (class, a) in &self.per_class {
            line(&format!("class {class}"), a);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, class: GrainClass, pq: f64) -> ImageMetrics {
        ImageMetrics {
            id: id.into(),
            class,
            homogeneity: 0.5,
            pq,
            aji: pq,
            acs_gt: 10.0,
            acs_pred: 10.0,
            mae: 0.0,
            mre: 0.0,
            tp: 1,
            fp: 0,
            fn_: 0,
        }
    }

    #[test]
    fn population_std() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
        assert_eq!(Stat::of(&[3.0]).std, 0.0);
        assert_eq!(
            Stat::of(&[]),
            Stat {
                mean: 0.0,
                std: 0.0
            }
        );
    }

    #[test]
    fn aggregates_by_class_in_id_order() {
        let r = Report::new(
            Some("attention".into()),
            Some("test".into()),
            vec![
                row("c", GrainClass::Heterogeneous, 0.5),
                row("a", GrainClass::Small, 1.0),
                row("b", GrainClass::Small, 0.8),
            ],
            vec![],
        );
        assert_eq!(r.images[0].id, "a");
        assert_eq!(r.overall.count, 3);
        assert!((r.per_class["1"].pq.mean - 0.9).abs() < 1e-12);
        assert!((r.per_class["1"].pq.std - 0.1).abs() < 1e-12);
        assert_eq!(r.per_class["2"].count, 1);
        assert!(!r.per_class.contains_key("3"));
        let table = r.to_table();
        assert!(table.contains("class 2"));
        assert_eq!(serde_json::from_str::<Report>(&r.to_json()).unwrap(), r);
    }
}
