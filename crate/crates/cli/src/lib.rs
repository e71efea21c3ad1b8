//! Command implementations behind the `crystalseg` binary.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crystalseg::io::{
    read_labels_png, read_rgb_png, write_labels_png, write_mask_png, write_rgb_png,
};
use crystalseg::metrics::{aggregated_jaccard, panoptic_quality, size_errors};
use crystalseg::pipeline::{segment, Fusion, ImageInput, PipelineConfig};
use crystalseg::synth::{
    generate_matching, mix_seed, sample_params, stratified_split, SynthSample,
};
use crystalseg::LabelMap;
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{
    image_id, image_path, label_path, mask_path, ImageRecord, Manifest, SplitName,
};
use crate::report::{ImageError, ImageMetrics, Report};

/// Written next to the predicted label maps.
pub const RUN_FILE: &str = "run.json";
const SPLIT_SALT: u64 = 0x5EED_5B11;

/// Prediction files and manifest entries disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestMismatch {
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

impl fmt::Display for ManifestMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "predictions do not match the manifest")?;
        if !self.missing.is_empty() {
            write!(f, "; missing: {}", self.missing.join(", "))?;
        }
        if !self.unexpected.is_empty() {
            write!(f, "; not in manifest: {}", self.unexpected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ManifestMismatch {}

/// Result of a command that processes images one by one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub processed: usize,
    pub failed: usize,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentArgs {
    pub dataset: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub fusion: Option<Fusion>,
    /// `None` segments every image.
    pub split: Option<SplitName>,
    pub overlay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub dataset: PathBuf,
    pub predictions: PathBuf,
    /// JSON report path; the text table goes next to it with a `.txt`
    /// extension.
    pub out: PathBuf,
    pub split: Option<SplitName>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Generates a dataset into `args.out`.
pub fn cmd_synth(args: &SynthArgs) -> Result<Outcome> {
    let config = load_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(config.seed);
    if config.synth.groups.is_empty() {
        bail!("no [[synth.groups]] configured");
    }

    let mut groups = Vec::new();
    let mut samples: Vec<(usize, u64, SynthSample)> = Vec::new();
    for (g, group) in config.synth.groups.iter().enumerate() {
        let mut params = group
            .resolve()
            .with_context(|| format!("synth group {g}"))?;
        params.seed = mix_seed(&[seed, g as u64]);
        let attempts = group.count.saturating_mul(config.synth.attempts_per_sample);
        let generated = generate_matching(&params, group.class, group.count, attempts)
            .with_context(|| format!("synth group {g}"))?;
        samples.extend(
            generated
                .into_iter()
                .map(|(i, s)| (g, sample_params(&params, i).seed, s)),
        );
        groups.push(params);
    }

    let classes: Vec<_> = samples.iter().map(|(_, _, s)| s.class).collect();
    let [a, b, c] = config.synth.split;
    let split = stratified_split(&classes, (a, b, c), mix_seed(&[seed, SPLIT_SALT]))?;
    let mut names = vec![SplitName::Train; samples.len()];
    for &i in &split.val {
        names[i] = SplitName::Val;
    }
    for &i in &split.test {
        names[i] = SplitName::Test;
    }
    if split.warning {
        eprintln!("warning: some class has too few images to split; all of them went to train");
    }

    for sub in ["images", "labels", "masks"] {
        create_dir(&args.out.join(sub))?;
    }
    let records: Vec<ImageRecord> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (g, sample_seed, s))| {
            let id = image_id(i);
            write_rgb_png(&image_path(&args.out, &id), &s.image)?;
            write_labels_png(&label_path(&args.out, &id), &s.labels)?;
            write_mask_png(&mask_path(&args.out, &id), &s.grain_mask)?;
            Ok(ImageRecord {
                id,
                class: s.class,
                homogeneity: s.homogeneity,
                split: names[i],
                group: *g,
                seed: *sample_seed,
                width: s.labels.width(),
                height: s.labels.height(),
                instances: s.labels.instance_count(),
            })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        seed,
        split_fractions: config.synth.split,
        split_warning: split.warning,
        groups,
        images: records,
    };
    manifest.save(&args.out)?;
    Ok(Outcome {
        processed: manifest.images.len(),
        failed: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunImage {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Record of one segment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub split: Option<SplitName>,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub images: Vec<RunImage>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<RunRecord> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn strategy_name(config: &PipelineConfig) -> String {
    if config.baseline {
        "baseline".into()
    } else {
        config.fusion.to_string()
    }
}

/// Segments the images of one split and writes `<out>/<id>.png`.
pub fn cmd_segment(args: &SegmentArgs) -> Result<Outcome> {
    let config = load_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(config.seed);
    let mut pipeline = config.pipeline.clone();
    if let Some(f) = args.fusion {
        pipeline.fusion = f;
    }
    pipeline.validate()?;
    let manifest = Manifest::load(&args.dataset)?;
    let records = manifest.select(args.split);

    create_dir(&args.out)?;
    if args.overlay {
        create_dir(&args.out.join("overlays"))?;
    }
    let results: Vec<RunImage> = records
        .par_iter()
        .map(|rec| {
            let r = segment_one(args, &pipeline, seed, rec);
            match r {
                Ok(labels) => RunImage {
                    id: rec.id.clone(),
                    instances: Some(labels.instance_count()),
                    error: None,
                },
                Err(e) => RunImage {
                    id: rec.id.clone(),
                    instances: None,
                    error: Some(format!("{e:#}")),
                },
            }
        })
        .collect();
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    for r in results.iter().filter(|r| r.error.is_some()) {
        eprintln!("{}: {}", r.id, r.error.as_deref().unwrap_or_default());
    }

    let run = RunRecord {
        strategy: strategy_name(&pipeline),
        split: args.split,
        seed,
        pipeline,
        images: results,
    };
    let path = args.out.join(RUN_FILE);
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(Outcome {
        processed: run.images.len(),
        failed,
    })
}

fn segment_one(
    args: &SegmentArgs,
    config: &PipelineConfig,
    seed: u64,
    rec: &ImageRecord,
) -> Result<LabelMap> {
    let image = read_rgb_png(&image_path(&args.dataset, &rec.id))?;
    let gt = read_labels_png(&label_path(&args.dataset, &rec.id))?;
    let input = ImageInput {
        id: &rec.id,
        image: &image,
        gt: Some(&gt),
        seed: mix_seed(&[seed, rec.seed]),
    };
    let labels = segment(&input, config)?;
    write_labels_png(&args.out.join(format!("{}.png", rec.id)), &labels)?;
    if args.overlay {
        write_rgb_png(
            &args.out.join("overlays").join(format!("{}.png", rec.id)),
            &overlay(&image, &labels),
        )?;
    }
    Ok(labels)
}

/// Paints instance outlines over the image, one color per id.
pub fn overlay(image: &RgbImage, labels: &LabelMap) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = labels.dims();
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(y, x);
            if id == 0 {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || labels.get(y, x - 1) != id
                || labels.get(y, x + 1) != id
                || labels.get(y - 1, x) != id
                || labels.get(y + 1, x) != id;
            if edge {
                out.put_pixel(x as u32, y as u32, id_color(id));
            }
        }
    }
    out
}

fn id_color(id: u32) -> Rgb<u8> {
    let h = mix_seed(&[id as u64]);
    // Keep at least one bright channel so outlines stay visible.
    Rgb([(h as u8) | 0x80, (h >> 8) as u8, (h >> 16) as u8])
}

/// Ids of the label maps in a predictions directory.
fn prediction_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

/// Scores predictions against the ground truth of one split.
pub fn cmd_eval(args: &EvalArgs) -> Result<(Report, Outcome)> {
    let manifest = Manifest::load(&args.dataset)?;
    let records = manifest.select(args.split);
    let expected: BTreeSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let found = prediction_ids(&args.predictions)?;
    if expected != found {
        return Err(ManifestMismatch {
            missing: expected.difference(&found).cloned().collect(),
            unexpected: found.difference(&expected).cloned().collect(),
        }
        .into());
    }
    let strategy = RunRecord::load(&args.predictions).ok().map(|r| r.strategy);

    let results: Vec<Result<ImageMetrics, ImageError>> = records
        .par_iter()
        .map(|rec| {
            score_one(args, rec).map_err(|e| ImageError {
                id: rec.id.clone(),
                error: format!("{e:#}"),
            })
        })
        .collect();
    let (mut rows, mut errors) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(m) => rows.push(m),
            Err(e) => errors.push(e),
        }
    }
    let outcome = Outcome {
        processed: records.len(),
        failed: errors.len(),
    };
    let report = Report::new(strategy, args.split.map(|s| s.to_string()), rows, errors);

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(&args.out, report.to_json())
        .with_context(|| format!("writing {}", args.out.display()))?;
    let table = args.out.with_extension("txt");
    std::fs::write(&table, report.to_table())
        .with_context(|| format!("writing {}", table.display()))?;
    Ok((report, outcome))
}

fn score_one(args: &EvalArgs, rec: &ImageRecord) -> Result<ImageMetrics> {
    let gt = read_labels_png(&label_path(&args.dataset, &rec.id))?;
    let pred = read_labels_png(&args.predictions.join(format!("{}.png", rec.id)))?;
    let (pq, m) = panoptic_quality(&gt, &pred)?;
    let aji = aggregated_jaccard(&gt, &pred)?;
    let size = size_errors(&gt, &pred)?;
    Ok(ImageMetrics {
        id: rec.id.clone(),
        class: rec.class,
        homogeneity: rec.homogeneity,
        pq,
        aji,
        acs_gt: size.acs_gt,
        acs_pred: size.acs_pred,
        mae: size.mae,
        mre: size.mre,
        tp: m.tp.len(),
        fp: m.fp.len(),
        fn_: m.fn_.len(),
    })
}
