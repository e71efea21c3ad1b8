//! Multi-scale segmentation pipeline.
//!
//! For every resize factor a [`Predictor`] produces a flow field and foreground
//! map at the original resolution. The per-scale outputs are blended by a
//! [`Fusion`] strategy and the blend is turned into instances by the tracker.
//!
//! The oracle predictor derives its output from ground-truth labels and
//! reproduces two failure modes of a patch-based network: crystals that shrink
//! below a few pixels at low resolution disappear, and crystals larger than a
//! patch get a separate center in every patch that sees them.

use std::path::PathBuf;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    blur_stack, crystal_lengths, gt_attention, normalize_stack, validate_thresholds,
    AttentionStack, DEFAULT_THRESHOLDS,
};
use crate::error::{Error, Result};
use crate::flowfield::compute_flow;
use crate::grid::{check_dims, FlowField, ForegroundMap, LabelMap};
use crate::io;
use crate::metrics::acs;
use crate::scalespace::{
    build_schedule, renormalize, resize_flow_to, resize_labels, scaled_dim, stitch_with,
    tile_with_overlap, PatchOutput, ResizeSchedule, TaperParams, DEFAULT_OVERLAP,
    DEFAULT_PATCH_SIZE,
};
use crate::synth::mix_seed;
use crate::tracker::{euler_track, TrackerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Oracle,
    NoisyOracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    /// Crystals shorter than this at prediction scale are not detected.
    pub min_detectable_px: f64,
    /// Crystals longer than this multiple of the patch size at prediction
    /// scale get per-patch centers.
    pub large_break_factor: f64,
    /// Standard deviation of the angular flow noise, in degrees.
    pub noise_deg: f64,
    /// Directory of external prediction files.
    pub path: Option<PathBuf>,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            kind: PredictorKind::Oracle,
            min_detectable_px: 4.0,
            large_break_factor: 1.0,
            noise_deg: 0.0,
            path: None,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("predictor: {m}")));
        if !(self.min_detectable_px >= 1.0) {
            return bad("min_detectable_px must be at least 1");
        }
        if !(self.large_break_factor > 0.0) {
            return bad("large_break_factor must be positive");
        }
        if !(self.noise_deg >= 0.0) {
            return bad("noise_deg must be non-negative");
        }
        if self.kind == PredictorKind::External && self.path.is_none() {
            return bad("external predictor needs a path");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Pixel-wise weighted sum with the size-level attention maps.
    Attention,
    /// Unweighted mean over scales.
    Average,
    /// Foreground maximum, flow taken from the winning scale.
    Max,
    /// Full-resolution scale only.
    Single,
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Attention => "attention",
            Fusion::Average => "average",
            Fusion::Max => "max",
            Fusion::Single => "single",
        })
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Fusion::Attention),
            "average" => Ok(Fusion::Average),
            "max" => Ok(Fusion::Max),
            "single" => Ok(Fusion::Single),
            other => Err(Error::InvalidParams(format!(
                "unknown fusion strategy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of scales taken from the default schedule.
    pub levels: usize,
    /// Explicit resize factors; replaces the default schedule and `levels`.
    pub factors: Option<Vec<f64>>,
    pub patch_size: usize,
    pub overlap: f64,
    pub taper: TaperParams,
    /// Size-level thresholds in percent; defaults to the first N of
    /// (100, 50, 25, 12.5).
    pub thresholds: Option<Vec<f64>>,
    /// Foreground probability threshold. Pixels with foreground above `h`
    /// are tracked; 0 keeps every pixel with any foreground evidence.
    pub h: f64,
    pub fusion: Fusion,
    /// Run the single-scale baseline instead of the multi-scale pipeline.
    pub baseline: bool,
    /// Target crystal size of the single-scale baseline, in pixels.
    pub target_size: f64,
    pub attention_blur_sigma: f64,
    pub tracker: TrackerParams,
    pub predictor: PredictorSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            levels: 4,
            factors: None,
            patch_size: DEFAULT_PATCH_SIZE,
            overlap: DEFAULT_OVERLAP,
            taper: TaperParams::default(),
            thresholds: None,
            h: 0.5,
            fusion: Fusion::Attention,
            baseline: false,
            target_size: 50.0,
            attention_blur_sigma: 0.0,
            tracker: TrackerParams::default(),
            predictor: PredictorSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(0.0..1.0).contains(&self.h) {
            return bad(format!("h = {} outside [0, 1)", self.h));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap = {} outside [0, 1)", self.overlap));
        }
        if !(self.target_size > 0.0) {
            return bad("target_size must be positive".into());
        }
        if !(self.attention_blur_sigma >= 0.0) {
            return bad("attention_blur_sigma must be non-negative".into());
        }
        if self.factors.is_none() && !(1..=4).contains(&self.levels) {
            return bad(format!("levels = {} outside 1..=4", self.levels));
        }
        if let Some(t) = &self.thresholds {
            validate_thresholds(t)?;
        }
        self.tracker.validate()?;
        self.predictor.validate()
    }

    pub fn tracker_params(&self) -> TrackerParams {
        TrackerParams {
            h: self.h,
            ..self.tracker
        }
    }

    pub fn schedule(&self, img_w: usize, img_h: usize) -> Result<ResizeSchedule> {
        match &self.factors {
            Some(f) => build_schedule(img_w, img_h, self.patch_size, Some(f)),
            None => build_schedule(img_w, img_h, self.patch_size, None)?.with_levels(self.levels),
        }
    }

    /// Thresholds for an `n`-level schedule.
    pub fn thresholds_for(&self, n: usize) -> Result<Vec<f64>> {
        let t = match &self.thresholds {
            Some(t) => t.clone(),
            None if n <= DEFAULT_THRESHOLDS.len() => DEFAULT_THRESHOLDS[..n].to_vec(),
            None => (0..n).map(|i| 100.0 / 2f64.powi(i as i32)).collect(),
        };
        validate_thresholds(&t)?;
        if t.len() != n {
            return Err(Error::ScaleCountMismatch {
                flows: n,
                maps: t.len(),
            });
        }
        Ok(t)
    }
}

/// One image to segment. `gt` feeds the oracle predictor and the oracle
/// attention maps.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub id: &'a str,
    pub image: &'a RgbImage,
    pub gt: Option<&'a LabelMap>,
    pub seed: u64,
}

impl ImageInput<'_> {
    pub fn dims(&self) -> (usize, usize) {
        (self.image.width() as usize, self.image.height() as usize)
    }

    fn require_gt(&self) -> Result<&LabelMap> {
        let gt = self.gt.ok_or_else(|| {
            Error::InvalidParams(format!(
                "image {}: oracle components need ground truth",
                self.id
            ))
        })?;
        check_dims(self.dims(), gt.dims())?;
        Ok(gt)
    }
}

/// Produces a flow field and foreground map at the input's original resolution
/// for one resize factor.
pub trait Predictor: Sync {
    fn predict(&self, input: &ImageInput<'_>, r: f64) -> Result<(FlowField, ForegroundMap)>;
}

pub fn make_predictor(config: &PipelineConfig) -> Box<dyn Predictor> {
    match config.predictor.kind {
        PredictorKind::Oracle | PredictorKind::NoisyOracle => Box::new(OraclePredictor {
            spec: config.predictor.clone(),
            patch_size: config.patch_size,
            overlap: config.overlap,
            taper: config.taper,
        }),
        PredictorKind::External => Box::new(ExternalPredictor {
            dir: config.predictor.path.clone().unwrap_or_default(),
        }),
    }
}

/// Prediction at one scale with default tiling.
pub fn predict_at_scale(
    input: &ImageInput<'_>,
    r: f64,
    spec: &PredictorSpec,
    s: usize,
) -> Result<(FlowField, ForegroundMap)> {
    let config = PipelineConfig {
        patch_size: s,
        predictor: spec.clone(),
        ..Default::default()
    };
    config.predictor.validate()?;
    make_predictor(&config).predict(input, r)
}

pub struct OraclePredictor {
    pub spec: PredictorSpec,
    pub patch_size: usize,
    pub overlap: f64,
    pub taper: TaperParams,
}

impl OraclePredictor {
    /// Ground truth as seen at scale `r`, with undetectable crystals removed.
    /// Returns the map and the ids of crystals too large for one patch.
    pub fn scaled_labels(&self, gt: &LabelMap, r: f64) -> (LabelMap, Vec<u32>) {
        let (w, h) = gt.dims();
        let mut scaled =
            resize_labels(gt, scaled_dim(w, r), scaled_dim(h, r)).keep_largest_components();
        let lengths = crystal_lengths(&scaled);
        let vanished: Vec<u32> = lengths
            .iter()
            .filter(|(_, l)| (l.length as f64) < self.spec.min_detectable_px)
            .map(|&(id, _)| id)
            .collect();
        let large: Vec<u32> = lengths
            .iter()
            .filter(|(_, l)| {
                l.length as f64 > self.spec.large_break_factor * self.patch_size as f64
            })
            .map(|&(id, _)| id)
            .collect();
        if !vanished.is_empty() {
            for l in scaled.as_mut_slice() {
                if vanished.binary_search(l).is_ok() {
                    *l = 0;
                }
            }
        }
        (scaled, large)
    }

    fn patch_output(
        &self,
        index: usize,
        rect: crate::grid::Rect,
        scaled: &LabelMap,
        large: &[u32],
        global: &(FlowField, ForegroundMap),
        noise: Option<(u64, f64)>,
    ) -> PatchOutput {
        let mut flow = global.0.crop(rect);
        let mut fg = global.1.crop(rect);
        if !large.is_empty() {
            // Each visible piece of an over-large crystal gets its own center.
            let mut local = scaled.crop(rect);
            for l in local.as_mut_slice() {
                if large.binary_search(l).is_err() {
                    *l = 0;
                }
            }
            if !local.is_blank() {
                let (lf, lp) = compute_flow(&local.split_components());
                for (i, &l) in local.as_slice().iter().enumerate() {
                    if l != 0 {
                        flow.dy.as_mut_slice()[i] = lf.dy.as_slice()[i];
                        flow.dx.as_mut_slice()[i] = lf.dx.as_slice()[i];
                        fg.0.as_mut_slice()[i] = lp.0.as_slice()[i];
                    }
                }
            }
        }
        if let Some((seed, r)) = noise {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, r.to_bits(), index as u64]));
            let normal =
                Normal::new(0.0, self.spec.noise_deg.to_radians()).expect("finite std-dev");
            let (dy, dx) = (flow.dy.as_mut_slice(), flow.dx.as_mut_slice());
            for (y, x) in dy.iter_mut().zip(dx.iter_mut()) {
                if *y == 0.0 && *x == 0.0 {
                    continue;
                }
                let a: f64 = normal.sample(&mut rng);
                let (s, c) = a.sin_cos();
                (*y, *x) = (c * *y + s * *x, c * *x - s * *y);
            }
        }
        PatchOutput { rect, flow, fg }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, input: &ImageInput<'_>, r: f64) -> Result<(FlowField, ForegroundMap)> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::BadSchedule(format!("factor {r} outside (0, 1]")));
        }
        let gt = input.require_gt()?;
        let (w, h) = gt.dims();
        let (scaled, large) = self.scaled_labels(gt, r);
        let (sw, sh) = scaled.dims();

        let mut normal = scaled.clone();
        if !large.is_empty() {
            for l in normal.as_mut_slice() {
                if large.binary_search(l).is_ok() {
                    *l = 0;
                }
            }
        }
        let global = compute_flow(&normal);

        let noise = (self.spec.kind == PredictorKind::NoisyOracle && self.spec.noise_deg > 0.0)
            .then_some((input.seed, r));
        let rects = tile_with_overlap(sw, sh, self.patch_size, self.overlap);
        let patches: Vec<PatchOutput> = rects
            .par_iter()
            .enumerate()
            .map(|(k, &rect)| self.patch_output(k, rect, &scaled, &large, &global, noise))
            .collect();
        let (flow, fg) = stitch_with(&patches, sw, sh, &self.taper)?;
        resize_flow_to(&flow, &fg, w, h)
    }
}

/// Loads predictions written by an external model; see [`io::external_paths`].
pub struct ExternalPredictor {
    pub dir: PathBuf,
}

impl Predictor for ExternalPredictor {
    fn predict(&self, input: &ImageInput<'_>, r: f64) -> Result<(FlowField, ForegroundMap)> {
        let (flow_path, fg_path) = io::external_paths(&self.dir, input.id, r);
        for p in [&flow_path, &fg_path] {
            if !p.is_file() {
                return Err(Error::PredictionUnavailable { path: p.clone() });
            }
        }
        let flow = io::read_flow(&flow_path)?;
        let fg = io::read_foreground(&fg_path)?;
        check_dims(flow.dims(), fg.dims())?;
        let (w, h) = input.dims();
        resize_flow_to(&flow, &fg, w, h)
    }
}

/// Per-scale predictions at original resolution, ascending by factor.
#[derive(Debug, Clone)]
pub struct ScalePredictions {
    pub factors: Vec<f64>,
    pub flows: Vec<FlowField>,
    pub fgs: Vec<ForegroundMap>,
}

impl ScalePredictions {
    /// The predictions for the given factors, in the given order.
    pub fn select(&self, factors: &[f64]) -> Result<ScalePredictions> {
        let mut out = ScalePredictions {
            factors: Vec::new(),
            flows: Vec::new(),
            fgs: Vec::new(),
        };
        for &f in factors {
            let k = self
                .factors
                .iter()
                .position(|&g| g == f)
                .ok_or_else(|| Error::BadSchedule(format!("no prediction at factor {f}")))?;
            out.factors.push(f);
            out.flows.push(self.flows[k].clone());
            out.fgs.push(self.fgs[k].clone());
        }
        Ok(out)
    }
}

pub fn predict_scales(
    input: &ImageInput<'_>,
    factors: &[f64],
    predictor: &dyn Predictor,
) -> Result<ScalePredictions> {
    let results: Vec<(FlowField, ForegroundMap)> = factors
        .par_iter()
        .map(|&r| predictor.predict(input, r))
        .collect::<Result<_>>()?;
    let (flows, fgs) = results.into_iter().unzip();
    Ok(ScalePredictions {
        factors: factors.to_vec(),
        flows,
        fgs,
    })
}

/// Blends per-scale predictions. Attention fusion pairs map `i` of `attn` with
/// scale `i` (ascending factor) and expects normalized level maps.
pub fn fuse(
    flows: &[FlowField],
    fgs: &[ForegroundMap],
    attn: Option<&AttentionStack>,
    strategy: Fusion,
) -> Result<(FlowField, ForegroundMap)> {
    let n = flows.len();
    if n == 0 || fgs.len() != n {
        return Err(Error::ScaleCountMismatch {
            flows: n,
            maps: fgs.len(),
        });
    }
    let dims = flows[0].dims();
    for (f, p) in flows.iter().zip(fgs) {
        check_dims(dims, f.dims())?;
        check_dims(dims, p.dims())?;
    }
    if strategy == Fusion::Attention {
        let stack = attn.ok_or(Error::ScaleCountMismatch { flows: n, maps: 0 })?;
        if stack.levels() != n {
            return Err(Error::ScaleCountMismatch {
                flows: n,
                maps: stack.levels(),
            });
        }
        check_dims(dims, stack.dims())?;
    }
    if n == 1 {
        return Ok((flows[0].clone(), fgs[0].clone()));
    }

    let (w, h) = dims;
    let mut flow = FlowField::zeros(w, h);
    let mut fg = ForegroundMap::zeros(w, h);
    match strategy {
        Fusion::Single => return Ok((flows[n - 1].clone(), fgs[n - 1].clone())),
        Fusion::Attention => {
            let stack = attn.expect("checked above");
            for i in 0..w * h {
                let (mut vy, mut vx, mut p) = (0.0, 0.0, 0.0);
                for k in 0..n {
                    let a = stack.maps[k].as_slice()[i];
                    vy += a * flows[k].dy.as_slice()[i];
                    vx += a * flows[k].dx.as_slice()[i];
                    p += a * fgs[k].0.as_slice()[i];
                }
                write(&mut flow, &mut fg, i, (vy, vx), p);
            }
        }
        Fusion::Average => {
            let inv = n as f64;
            for i in 0..w * h {
                let (mut vy, mut vx, mut p) = (0.0, 0.0, 0.0);
                for k in 0..n {
                    vy += flows[k].dy.as_slice()[i];
                    vx += flows[k].dx.as_slice()[i];
                    p += fgs[k].0.as_slice()[i];
                }
                write(&mut flow, &mut fg, i, (vy / inv, vx / inv), p / inv);
            }
        }
        Fusion::Max => {
            for i in 0..w * h {
                let mut best = 0;
                for k in 1..n {
                    if fgs[k].0.as_slice()[i] > fgs[best].0.as_slice()[i] {
                        best = k;
                    }
                }
                let v = (flows[best].dy.as_slice()[i], flows[best].dx.as_slice()[i]);
                write(&mut flow, &mut fg, i, v, fgs[best].0.as_slice()[i]);
            }
        }
    }
    Ok((flow, fg))
}

#[inline]
fn write(flow: &mut FlowField, fg: &mut ForegroundMap, i: usize, v: (f64, f64), p: f64) {
    let v = renormalize(v);
    flow.dy.as_mut_slice()[i] = v.0;
    flow.dx.as_mut_slice()[i] = v.1;
    fg.0.as_mut_slice()[i] = p;
}

/// Oracle attention stack for an image: ground-truth size levels, optionally
/// blurred, normalized.
pub fn oracle_attention(gt: &LabelMap, t: &[f64], blur_sigma: f64) -> Result<AttentionStack> {
    let stack = gt_attention(gt, t)?;
    Ok(normalize_stack(&blur_stack(&stack, blur_sigma)))
}

/// Runs fusion and tracking on predictions already computed for the
/// configured schedule.
pub fn segment_from(
    input: &ImageInput<'_>,
    config: &PipelineConfig,
    preds: &ScalePredictions,
) -> Result<LabelMap> {
    let n = preds.factors.len();
    let attn = match config.fusion {
        Fusion::Attention => {
            let t = config.thresholds_for(n)?;
            Some(oracle_attention(
                input.require_gt()?,
                &t,
                config.attention_blur_sigma,
            )?)
        }
        _ => None,
    };
    let (flow, fg) = fuse(&preds.flows, &preds.fgs, attn.as_ref(), config.fusion)?;
    euler_track(&flow, &fg, &config.tracker_params())
}

/// Factors actually predicted for a configuration: all schedule factors, or
/// only the full-resolution one for single-scale fusion.
pub fn factors_for(config: &PipelineConfig, img_w: usize, img_h: usize) -> Result<Vec<f64>> {
    let schedule = config.schedule(img_w, img_h)?;
    Ok(match config.fusion {
        Fusion::Single => vec![1.0],
        _ => schedule.factors,
    })
}

/// Full multi-scale segmentation of one image.
pub fn segment(input: &ImageInput<'_>, config: &PipelineConfig) -> Result<LabelMap> {
    config.validate()?;
    if config.baseline {
        return segment_single_scale_baseline(input, config);
    }
    let (w, h) = input.dims();
    let factors = factors_for(config, w, h)?;
    let predictor = make_predictor(config);
    let preds = predict_scales(input, &factors, predictor.as_ref())?;
    segment_from(input, config, &preds)
}

/// Resize factor of the single-scale baseline: the target size over the
/// ground-truth average crystal size, capped at 1.
pub fn baseline_factor(gt: &LabelMap, target_size: f64) -> Result<f64> {
    if gt.is_blank() {
        return Ok(1.0);
    }
    Ok((target_size / acs(gt)?).min(1.0))
}

/// Single-scale segmentation at the resolution that brings the average crystal
/// to `config.target_size`.
pub fn segment_single_scale_baseline(
    input: &ImageInput<'_>,
    config: &PipelineConfig,
) -> Result<LabelMap> {
    config.validate()?;
    let r = baseline_factor(input.require_gt()?, config.target_size)?;
    let (flow, fg) = make_predictor(config).predict(input, r)?;
    euler_track(&flow, &fg, &config.tracker_params())
}
