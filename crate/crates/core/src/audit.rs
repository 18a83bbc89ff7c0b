//! Measurement harness: how often a one-pixel change of the input changes
//! the top-1 prediction, plus the feature-level diagnostics behind it.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::nn::{readout_features, train_readout, LayerSpec, Model, ModelError, TrainConfig};
use crate::rng::{derive_seed, fnv1a, SplitMix64};
use crate::sampling::{shiftability_error, BasisKernel, DenseResponse, KernelKind, SamplingError};
use crate::tensor::{argmax, roll, Tensor};
use crate::transforms::{
    bilinear_resize, crop_pair_with_noise, embed, fit_long_side, piecewise_shift, place, scale_pair, CropSetup,
    EmbeddingProtocol, PiecewiseTransform, ShiftSpec, TransformError,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// z-score of the two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// Which pair of inputs is compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuditMode {
    /// Embed, then embed again displaced by the shift.
    Translate(ShiftSpec),
    /// Embed with content width `w` and `w + 1`, where `w` is the width
    /// implied by the protocol's embedding size.
    Scale,
    /// Two noisy crops one pixel apart. The crop size is the model's input
    /// size; the protocol's canvas, embedding size and fill are ignored.
    CropNoise { long_side: usize, noise_scale: f64 },
}

impl AuditMode {
    pub fn name(&self) -> &'static str {
        match self {
            AuditMode::Translate(_) => "translate",
            AuditMode::Scale => "scale",
            AuditMode::CropNoise { .. } => "crop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Use the protocol's `(row, col)`.
    Fixed,
    /// Draw a valid top-left corner per image from the image's seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub proto: EmbeddingProtocol,
    pub mode: AuditMode,
    pub placement: Placement,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub image_id: String,
    pub protocol: String,
    pub mode: String,
    pub param_before: String,
    pub param_after: String,
    pub top1_before: usize,
    pub top1_after: usize,
    pub changed: bool,
    /// Correct-class score.
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFailure {
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// Sorted by image id.
    pub records: Vec<AuditRecord>,
    pub failures: Vec<AuditFailure>,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AuditReport {
    pub fn from_records(mut records: Vec<AuditRecord>, mut failures: Vec<AuditFailure>) -> Self {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        failures.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let n = records.len();
        let changed = records.iter().filter(|r| r.changed).count();
        let p_hat = if n == 0 { 0.0 } else { changed as f64 / n as f64 };
        let (ci_low, ci_high) = wilson_interval(changed, n, Z95);
        Self {
            records,
            failures,
            p_hat,
            ci_low,
            ci_high,
        }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn changed(&self) -> usize {
        self.records.iter().filter(|r| r.changed).count()
    }
}

fn position_label(row: isize, col: isize) -> String {
    format!("r{row}c{col}")
}

/// Top-left corner for content of size `(h, w)` such that the content also
/// fits after moving by `extra`.
fn choose_position(
    cfg: &AuditConfig,
    rng: &mut SplitMix64,
    (h, w): (usize, usize),
    extra: ShiftSpec,
) -> Result<(isize, isize), TransformError> {
    let p = &cfg.proto;
    if cfg.placement == Placement::Fixed {
        return Ok((p.row, p.col));
    }
    let lo_r = (-extra.dy).max(0);
    let hi_r = p.canvas_h as isize - h as isize - extra.dy.max(0);
    let lo_c = (-extra.dx).max(0);
    let hi_c = p.canvas_w as isize - w as isize - extra.dx.max(0);
    if hi_r < lo_r || hi_c < lo_c {
        return Err(TransformError::Placement {
            eh: h,
            ew: w,
            row: lo_r,
            col: lo_c,
            ch: p.canvas_h,
            cw: p.canvas_w,
        });
    }
    let row = rng.range_inclusive(lo_r as i64, hi_r as i64) as isize;
    let col = rng.range_inclusive(lo_c as i64, hi_c as i64) as isize;
    Ok((row, col))
}

/// A compared input pair plus labels for the varied parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolPair {
    pub before: Tensor,
    pub after: Tensor,
    pub param_before: String,
    pub param_after: String,
}

/// Per-image seed: independent of the order in which images are visited.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    derive_seed(seed, fnv1a(image_id.as_bytes()))
}

/// Builds the pair of inputs that one audit record compares.
pub fn protocol_pair(image: &Tensor, image_id: &str, cfg: &AuditConfig, input_size: usize) -> Result<ProtocolPair, TransformError> {
    let seed = image_seed(cfg.seed, image_id);
    let mut rng = SplitMix64::new(seed);
    let p = cfg.proto;
    let [_, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(TransformError::NotImage(s.to_vec())),
    };
    match cfg.mode {
        AuditMode::Translate(delta) => {
            let size = fit_long_side(h, w, p.embed);
            let (row, col) = choose_position(cfg, &mut rng, size, delta)?;
            let base = EmbeddingProtocol { row, col, ..p };
            let before = embed(image, &base)?;
            let moved = EmbeddingProtocol {
                row: row + delta.dy,
                col: col + delta.dx,
                ..p
            };
            let after = embed(image, &moved)?;
            Ok(ProtocolPair {
                before: before.canvas,
                after: after.canvas,
                param_before: position_label(row, col),
                param_after: position_label(moved.row, moved.col),
            })
        }
        AuditMode::Scale => {
            let (_, width) = fit_long_side(h, w, p.embed);
            let larger = bilinear_resize(image, width + 1)?;
            let size = (larger.shape()[1], larger.shape()[2]);
            let (row, col) = choose_position(cfg, &mut rng, size, ShiftSpec::default())?;
            let (a, b) = scale_pair(image, &EmbeddingProtocol { row, col, ..p }, width)?;
            Ok(ProtocolPair {
                before: a.canvas,
                after: b.canvas,
                param_before: width.to_string(),
                param_after: (width + 1).to_string(),
            })
        }
        AuditMode::CropNoise { long_side, noise_scale } => {
            let setup = CropSetup {
                long_side,
                crop_size: input_size,
                noise_scale,
                seed,
            };
            let (a, b) = crop_pair_with_noise(&image.map(|v| v * 255.0), &setup)?;
            Ok(ProtocolPair {
                before: a.map(|v| v / 255.0),
                after: b.map(|v| v / 255.0),
                param_before: "0".into(),
                param_after: "1".into(),
            })
        }
    }
}

fn protocol_name(cfg: &AuditConfig) -> String {
    match cfg.mode {
        AuditMode::CropNoise { noise_scale, .. } => format!("noise{noise_scale}"),
        _ => cfg.proto.fill.as_str().to_string(),
    }
}

fn audit_one(model: &Model, image: &Tensor, label: usize, id: &str, cfg: &AuditConfig) -> Result<AuditRecord, AuditError> {
    let input = model.spec().input();
    let pair = protocol_pair(image, id, cfg, input.height)?;
    let before = model.scores(&pair.before)?;
    let after = model.scores(&pair.after)?;
    let (top1_before, top1_after) = (argmax(&before), argmax(&after));
    Ok(AuditRecord {
        image_id: id.to_string(),
        protocol: protocol_name(cfg),
        mode: cfg.mode.name().to_string(),
        param_before: pair.param_before,
        param_after: pair.param_after,
        top1_before,
        top1_after,
        changed: top1_before != top1_after,
        score_before: before.get(label).copied().unwrap_or(f64::NAN),
        score_after: after.get(label).copied().unwrap_or(f64::NAN),
    })
}

/// Fraction of images whose top-1 prediction differs between the two inputs
/// of the protocol pair. Per-image failures are recorded, not fatal.
pub fn top1_change_probability(model: &Model, images: &LabeledDataset, cfg: &AuditConfig) -> Result<AuditReport, AuditError> {
    if images.is_empty() {
        return Err(AuditError::Config("no images to audit".into()));
    }
    let results: Vec<Result<AuditRecord, AuditFailure>> = (0..images.len())
        .into_par_iter()
        .map(|i| {
            let id = &images.ids()[i];
            audit_one(model, &images.images()[i], images.labels()[i], id, cfg).map_err(|e| AuditFailure {
                image_id: id.clone(),
                message: e.to_string(),
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    Ok(AuditReport::from_records(records, failures))
}

/// Parameter values swept by `jaggedness_curve`.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Rows(Vec<isize>),
    Cols(Vec<isize>),
    /// Content widths, embedded at the protocol's position.
    Widths(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub param: f64,
    /// `None` when the sweep point is not a valid placement.
    pub value: Option<f64>,
}

/// Correct-class score as one protocol parameter varies.
pub fn jaggedness_curve(model: &Model, image: &Tensor, label: usize, proto: &EmbeddingProtocol, sweep: &Sweep) -> Vec<CurvePoint> {
    let score = |canvas: Result<Tensor, AuditError>| -> Option<f64> {
        let canvas = canvas.ok()?;
        model.scores(&canvas).ok()?.get(label).copied()
    };
    match sweep {
        Sweep::Rows(rows) => rows
            .iter()
            .map(|&row| CurvePoint {
                param: row as f64,
                value: score(embed(image, &EmbeddingProtocol { row, ..*proto }).map(|e| e.canvas).map_err(Into::into)),
            })
            .collect(),
        Sweep::Cols(cols) => cols
            .iter()
            .map(|&col| CurvePoint {
                param: col as f64,
                value: score(embed(image, &EmbeddingProtocol { col, ..*proto }).map(|e| e.canvas).map_err(Into::into)),
            })
            .collect(),
        Sweep::Widths(widths) => widths
            .iter()
            .map(|&w| {
                let canvas = bilinear_resize(image, w)
                    .and_then(|c| place(&c, proto.canvas_h, proto.canvas_w, proto.row, proto.col, proto.fill))
                    .map(|e| e.canvas)
                    .map_err(Into::into);
                CurvePoint {
                    param: w as f64,
                    value: score(canvas),
                }
            })
            .collect(),
    }
}

/// Runs the audit once per embedding size.
pub fn embedding_size_sweep(
    model: &Model,
    images: &LabeledDataset,
    cfg: &AuditConfig,
    sizes: &[usize],
) -> Result<Vec<(usize, AuditReport)>, AuditError> {
    sizes
        .iter()
        .map(|&e| {
            let c = AuditConfig {
                proto: EmbeddingProtocol { embed: e, ..cfg.proto },
                ..*cfg
            };
            Ok((e, top1_change_probability(model, images, &c)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPoint {
    pub layer_index: usize,
    /// `(layer_index + 1) / number of spatial layers`.
    pub normalized_depth: f64,
    pub readout_accuracy: f64,
    pub report: AuditReport,
}

/// Trains a readout on each probed layer (on `train_set`), then measures
/// its accuracy and top-1 change probability on `eval_set`.
pub fn depth_invariance_profile(
    model: &Model,
    train_set: &LabeledDataset,
    eval_set: &LabeledDataset,
    layer_indices: &[usize],
    train_cfg: &TrainConfig,
    audit_cfg: &AuditConfig,
) -> Result<Vec<DepthPoint>, AuditError> {
    let spatial = model.spec().layers().iter().take_while(|l| l.is_spatial()).count().max(1);
    layer_indices
        .iter()
        .map(|&layer_index| {
            let head = train_readout(model, layer_index, train_set, train_cfg)?.model;
            let readout_accuracy = crate::nn::accuracy(&head, eval_set)?;
            let report = top1_change_probability(&head, eval_set, audit_cfg)?;
            Ok(DepthPoint {
                layer_index,
                normalized_depth: (layer_index + 1) as f64 / spatial as f64,
                readout_accuracy,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub shift: ShiftSpec,
    /// Per-channel spatial sums; `None` when the shifted placement is invalid.
    pub sums: Option<Vec<f64>>,
}

/// Per-channel spatial sums of one layer's activations as the embedded
/// image moves through `shifts`.
pub fn feature_shift_trace(
    model: &Model,
    layer_index: usize,
    image: &Tensor,
    proto: &EmbeddingProtocol,
    shifts: &[ShiftSpec],
) -> Result<Vec<TracePoint>, AuditError> {
    let layers = model.spec().layers().len();
    if layer_index >= layers {
        return Err(ModelError::LayerIndex {
            index: layer_index,
            layers,
        }
        .into());
    }
    Ok(shifts
        .iter()
        .map(|&shift| {
            let moved = EmbeddingProtocol {
                row: proto.row + shift.dy,
                col: proto.col + shift.dx,
                ..*proto
            };
            let sums = embed(image, &moved)
                .ok()
                .and_then(|e| model.layer_activations(&e.canvas, layer_index).ok())
                .map(|a| crate::tensor::spatial_sum(&a).expect("rank-4 activations"));
            TracePoint { shift, sums }
        })
        .collect())
}

/// Shift sensitivity of a trace: the variance of each channel's sum across
/// shifts, summed over channels, divided by the summed squared channel
/// means. Scale-free, and not dominated by channels that are nearly zero.
pub fn trace_variation(points: &[TracePoint]) -> f64 {
    let rows: Vec<&Vec<f64>> = points.iter().filter_map(|p| p.sums.as_ref()).collect();
    if rows.len() < 2 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let (mut var, mut energy) = (0.0, 0.0);
    for c in 0..rows[0].len() {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        var += rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        energy += mean * mean;
    }
    if energy == 0.0 {
        0.0
    } else {
        var / energy
    }
}

/// Shiftability error of a layer's feature maps. The dense response at
/// sub-stride offset `t` is read from the grid of the input rolled by `-t`,
/// so it is exactly what the strided network computes; the error is the
/// worst over channels, rows, columns and both axes.
pub fn feature_shiftability_error(model: &Model, layer_index: usize, image: &Tensor, kind: KernelKind) -> Result<f64, AuditError> {
    let layers = model.spec().layers().len();
    if layer_index >= layers {
        return Err(ModelError::LayerIndex {
            index: layer_index,
            layers,
        }
        .into());
    }
    let info = model.spec().info()[layer_index];
    if !info.output.spatial {
        return Err(AuditError::Config(format!("layer {layer_index} is not spatial")));
    }
    let s = info.cumulative_factor;
    if s == 1 {
        return Ok(0.0);
    }
    let kernel = BasisKernel { kind, factor: s };
    let (c, oh, ow) = (info.output.channels, info.output.height, info.output.width);
    let mut worst = 0.0f64;
    for vertical in [true, false] {
        let acts = (0..s)
            .map(|t| {
                let shifted = if vertical {
                    roll(image, -(t as isize), 0)
                } else {
                    roll(image, 0, -(t as isize))
                }
                .map_err(|e| AuditError::Config(e.to_string()))?;
                Ok(model.layer_activations(&shifted, layer_index)?.into_data())
            })
            .collect::<Result<Vec<_>, AuditError>>()?;
        let (lines, along) = if vertical { (ow, oh) } else { (oh, ow) };
        for ch in 0..c {
            for line in 0..lines {
                let mut dense = vec![0.0; along * s];
                for i in 0..along {
                    let (y, x) = if vertical { (i, line) } else { (line, i) };
                    for (t, a) in acts.iter().enumerate() {
                        dense[i * s + t] = a[(ch * oh + y) * ow + x];
                    }
                }
                let err = shiftability_error(&DenseResponse::new(dense)?, s, &kernel)?;
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

/// Largest change of the globally pooled features when `t` is applied to
/// the image. The model must contain a `gap` layer.
pub fn piecewise_invariance_check(model: &Model, image: &Tensor, t: &PiecewiseTransform) -> Result<f64, AuditError> {
    let gap = model
        .spec()
        .layers()
        .iter()
        .position(|l| matches!(l, LayerSpec::Gap))
        .ok_or_else(|| AuditError::Config("model has no gap layer".into()))?;
    let moved = piecewise_shift(image, t)?;
    let a = readout_features(model, image, gap)?;
    let b = readout_features(model, &moved, gap)?;
    Ok(a.max_abs_diff(&b))
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub const AUDIT_HEADER: &str = "image_id,protocol,mode,param_before,param_after,top1_before,top1_after,changed,score_before,score_after";

/// Per-image rows followed by a `#summary` line.
pub fn write_audit_csv(report: &AuditReport, out: impl Write) -> Result<(), AuditError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AUDIT_HEADER.split(','))?;
    for r in &report.records {
        w.write_record([
            r.image_id.as_str(),
            &r.protocol,
            &r.mode,
            &r.param_before,
            &r.param_after,
            &r.top1_before.to_string(),
            &r.top1_after.to_string(),
            if r.changed { "true" } else { "false" },
            &fmt_f64(r.score_before),
            &fmt_f64(r.score_after),
        ])?;
    }
    let mut out = w.into_inner().map_err(|e| AuditError::Io(e.into_error()))?;
    writeln!(
        out,
        "#summary,p_hat={},ci_low={},ci_high={},n={}",
        report.p_hat,
        report.ci_low,
        report.ci_high,
        report.n()
    )?;
    Ok(())
}

/// `param,value` rows; missing values are left empty.
pub fn write_curve_csv(points: &[(String, Option<f64>)], out: impl Write) -> Result<(), AuditError> {
    let mut out = out;
    writeln!(out, "param,value")?;
    for (p, v) in points {
        writeln!(out, "{p},{}", v.map(fmt_f64).unwrap_or_default())?;
    }
    Ok(())
}

impl From<csv::Error> for AuditError {
    fn from(e: csv::Error) -> Self {
        AuditError::Io(std::io::Error::other(e))
    }
}
