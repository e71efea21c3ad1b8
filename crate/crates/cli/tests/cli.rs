use std::path::Path;
use std::process::Command;

use crystalseg::io::{read_labels_png, write_labels_png};
use crystalseg::metrics::homogeneity_and_class;
use crystalseg::pipeline::Fusion;
use crystalseg_cli::dataset::{label_path, Manifest, SplitName};
use crystalseg_cli::{
    cmd_eval, cmd_segment, cmd_synth, EvalArgs, ManifestMismatch, RunRecord, SegmentArgs, SynthArgs,
};

const SMALL: &str = r#"
seed = 11
[synth]
split = [0.5, 0.0, 0.5]
[[synth.groups]]
count = 4
[synth.groups.params]
width = 256
height = 256
n_seeds_small = 8
small_spacing = 40.0
[pipeline]
levels = 2
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let config = write_config(dir, SMALL);
    let out = dir.join("data");
    let o = cmd_synth(&SynthArgs {
        config: Some(config),
        out: out.clone(),
        seed: None,
    })
    .unwrap();
    assert_eq!(o.processed, 4);
    out
}

#[test]
fn synth_writes_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let m = Manifest::load(&data).unwrap();
    assert_eq!(m.seed, 11);
    assert_eq!(m.images.len(), 4);
    assert_eq!(m.select(Some(SplitName::Test)).len(), 2);
    for rec in &m.images {
        let labels = read_labels_png(&label_path(&data, &rec.id)).unwrap();
        assert_eq!(labels.dims(), (256, 256));
        assert_eq!(labels.instance_count(), rec.instances);
        assert!(data.join("images").join(format!("{}.png", rec.id)).exists());
        assert!(data.join("masks").join(format!("{}.png", rec.id)).exists());
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("data");
    cmd_synth(&SynthArgs {
        config: Some(config),
        out: out.clone(),
        seed: Some(5),
    })
    .unwrap();
    assert_eq!(Manifest::load(&out).unwrap().seed, 5);
}

#[test]
fn segment_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let config = dir.path().join("config.toml");
    let preds = dir.path().join("pred");
    for fusion in [Fusion::Attention, Fusion::Single] {
        let o = cmd_segment(&SegmentArgs {
            dataset: data.clone(),
            config: Some(config.clone()),
            out: preds.clone(),
            seed: None,
            fusion: Some(fusion),
            split: Some(SplitName::Test),
            overlay: true,
        })
        .unwrap();
        assert!(o.success());
        assert_eq!(o.processed, 2);
        assert_eq!(
            RunRecord::load(&preds).unwrap().strategy,
            fusion.to_string()
        );

        let out = dir.path().join("report.json");
        let (report, o) = cmd_eval(&EvalArgs {
            dataset: data.clone(),
            predictions: preds.clone(),
            out: out.clone(),
            split: Some(SplitName::Test),
        })
        .unwrap();
        assert!(o.success());
        assert_eq!(
            report.strategy.as_deref(),
            Some(fusion.to_string().as_str())
        );
        assert_eq!(report.images.len(), 2);
        assert!(
            report.overall.pq.mean > 0.85,
            "{fusion}: {}",
            report.overall.pq.mean
        );
        assert!(out.exists() && out.with_extension("txt").exists());
    }
    assert_eq!(
        std::fs::read_dir(preds.join("overlays")).unwrap().count(),
        2
    );
}

#[test]
fn eval_reports_manifest_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = dir.path().join("pred");
    std::fs::create_dir_all(&preds).unwrap();
    let m = Manifest::load(&data).unwrap();
    let test = m.select(Some(SplitName::Test));
    std::fs::copy(
        label_path(&data, &test[0].id),
        preds.join(format!("{}.png", test[0].id)),
    )
    .unwrap();
    std::fs::copy(label_path(&data, &test[0].id), preds.join("stray.png")).unwrap();

    let err = cmd_eval(&EvalArgs {
        dataset: data,
        predictions: preds,
        out: dir.path().join("r.json"),
        split: Some(SplitName::Test),
    })
    .unwrap_err();
    let mm = err
        .downcast_ref::<ManifestMismatch>()
        .expect("ManifestMismatch");
    assert_eq!(mm.missing, vec![test[1].id.clone()]);
    assert_eq!(mm.unexpected, vec!["stray".to_string()]);
}

#[test]
fn ground_truth_as_prediction_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (report, _) = cmd_eval(&EvalArgs {
        dataset: data.clone(),
        predictions: data.join("labels"),
        out: dir.path().join("r.json"),
        split: None,
    })
    .unwrap();
    assert_eq!(report.overall.count, 4);
    assert_eq!(report.overall.pq.mean, 1.0);
    assert_eq!(report.overall.pq.std, 0.0);
    assert_eq!(report.overall.mre.mean, 0.0);
    assert!(report.strategy.is_none());
}

#[test]
fn unreadable_prediction_is_a_per_image_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = dir.path().join("pred");
    std::fs::create_dir_all(&preds).unwrap();
    let m = Manifest::load(&data).unwrap();
    let test = m.select(Some(SplitName::Test));
    std::fs::copy(
        label_path(&data, &test[0].id),
        preds.join(format!("{}.png", test[0].id)),
    )
    .unwrap();
    std::fs::write(preds.join(format!("{}.png", test[1].id)), b"not a png").unwrap();
    let (report, o) = cmd_eval(&EvalArgs {
        dataset: data,
        predictions: preds,
        out: dir.path().join("r.json"),
        split: Some(SplitName::Test),
    })
    .unwrap();
    assert_eq!(o.failed, 1);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].id, test[1].id);
    assert_eq!(report.overall.count, 1);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_crystalseg");
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[pipeline]\nfusoin = \"max\"\n");
    let out = Command::new(exe)
        .args(["synth", "--out"])
        .arg(dir.path().join("d"))
        .arg("--config")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fusoin"));

    let out = Command::new(exe)
        .args([
            "segment",
            "--fusion",
            "median",
            "--dataset",
            "x",
            "--out",
            "y",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn manifest_classes_match_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let m = Manifest::load(&data).unwrap();
    for rec in &m.images {
        let labels = read_labels_png(&label_path(&data, &rec.id)).unwrap();
        let (hom, class) = homogeneity_and_class(&labels, m.groups[rec.group].patch_size).unwrap();
        assert_eq!(class, rec.class, "{}", rec.id);
        assert_eq!(hom, rec.homogeneity, "{}", rec.id);
    }
}

/// Adds a 3x3 blob in a background corner of each test label map.
fn predictions_with_one_fp(data: &Path, preds: &Path) -> Vec<usize> {
    std::fs::create_dir_all(preds).unwrap();
    let m = Manifest::load(data).unwrap();
    let mut counts = Vec::new();
    for rec in m.select(Some(SplitName::Test)) {
        let mut labels = read_labels_png(&label_path(data, &rec.id)).unwrap();
        let n = labels.instance_count();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(labels.get(y, x), 0);
                labels.set(y, x, n as u32 + 1);
            }
        }
        write_labels_png(&preds.join(format!("{}.png", rec.id)), &labels).unwrap();
        counts.push(n);
    }
    counts
}

#[test]
fn one_false_positive_matches_hand_formula() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = dir.path().join("pred");
    let counts = predictions_with_one_fp(&data, &preds);
    let (report, _) = cmd_eval(&EvalArgs {
        dataset: data,
        predictions: preds,
        out: dir.path().join("r.json"),
        split: Some(SplitName::Test),
    })
    .unwrap();
    for (row, n) in report.images.iter().zip(&counts) {
        // n perfect matches, one FP: n / (n + 0.5).
        let n = *n as f64;
        assert!((row.pq - n / (n + 0.5)).abs() < 1e-12, "{} {}", row.pq, n);
        assert_eq!((row.tp, row.fp, row.fn_), (n as usize, 1, 0));
    }
}

#[test]
fn json_aggregates_recompute_from_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = dir.path().join("pred");
    predictions_with_one_fp(&data, &preds);
    let out = dir.path().join("r.json");
    cmd_eval(&EvalArgs {
        dataset: data,
        predictions: preds,
        out: out.clone(),
        split: Some(SplitName::Test),
    })
    .unwrap();

    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let rows = v["images"].as_array().unwrap();
    let groups: Vec<(String, Vec<&serde_json::Value>)> = {
        let mut g = vec![("overall".to_string(), rows.iter().collect::<Vec<_>>())];
        for class in ["1", "2", "3"] {
            let members: Vec<_> = rows
                .iter()
                .filter(|r| r["class"].as_u64() == class.parse().ok())
                .collect();
            if !members.is_empty() {
                g.push((class.to_string(), members));
            }
        }
        g
    };
    for (name, members) in groups {
        let agg = if name == "overall" {
            &v["overall"]
        } else {
            &v["per_class"][&name]
        };
        assert_eq!(agg["count"].as_u64().unwrap() as usize, members.len());
        for key in ["pq", "aji", "acs_gt", "acs_pred", "mae", "mre"] {
            let xs: Vec<f64> = members.iter().map(|r| r[key].as_f64().unwrap()).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            assert!(
                (agg[key]["mean"].as_f64().unwrap() - mean).abs() <= 1e-9,
                "{name} {key}"
            );
            assert!(
                (agg[key]["std"].as_f64().unwrap() - std).abs() <= 1e-9,
                "{name} {key}"
            );
        }
    }
}
