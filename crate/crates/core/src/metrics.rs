//! Per-frame forecast verification (MSE, MAE, RMSE, R²) and per-step box
//! summaries.
//!
//! Scores are computed on normalised RGB values over every pixel, land and
//! background included.

use std::path::Path;

use rayon::prelude::*;

use crate::clips::ClipSource;
use crate::encode::{decode_zeta, Colormap, Planes, ValueRange};
use crate::error::{Error, Result};
use crate::forecast::forecast_clip;
use crate::nn::Model;
use crate::train::write_text;

/// Below this truth variance R² is undefined.
pub const R2_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub clip_id: String,
    pub region_id: String,
    /// Forecast step, 1-based.
    pub step: usize,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the truth frame is constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

pub fn frame_scores(pred: &[f32], truth: &[f32]) -> Result<Scores> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "prediction has {} values, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sse, mut sae, mut sst) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as f64, t as f64);
        sse += (p - t) * (p - t);
        sae += (p - t).abs();
        sst += (t - mean) * (t - mean);
    }
    let mse = sse / n;
    Ok(Scores {
        mse,
        mae: sae / n,
        rmse: mse.sqrt(),
        r2: (sst >= R2_EPS).then(|| 1.0 - sse / sst),
    })
}

/// Scores one predicted RGB frame against the truth.
pub fn frame_metrics(pred: &Planes, truth: &Planes) -> Result<Scores> {
    if (pred.channels, pred.height, pred.width) != (truth.channels, truth.height, truth.width) {
        return Err(Error::Shape(format!(
            "prediction {}x{}x{} vs truth {}x{}x{}",
            pred.channels, pred.height, pred.width, truth.channels, truth.height, truth.width
        )));
    }
    frame_scores(&pred.data, &truth.data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub n: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Quartiles by inclusive linear interpolation, whiskers at 1.5 IQR.
pub fn box_summary(values: &[f64]) -> Result<BoxSummary> {
    if values.is_empty() {
        return Err(Error::invalid("box summary of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("box summary input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_lo = *s.iter().find(|&&v| v >= lo_fence).unwrap();
    let whisker_hi = *s.iter().rev().find(|&&v| v <= hi_fence).unwrap();
    Ok(BoxSummary {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        n: s.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    Rmse,
    Mae,
    R2,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Rmse, Metric::Mae, Metric::R2];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::R2 => "r2",
        }
    }

    fn of(self, m: &FrameMetrics) -> Option<f64> {
        match self {
            Metric::Mse => Some(m.mse),
            Metric::Rmse => Some(m.rmse),
            Metric::Mae => Some(m.mae),
            Metric::R2 => m.r2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub metric: Metric,
    pub summary: BoxSummary,
}

/// Per-step summaries of each metric; undefined R² rows are skipped.
pub fn summarize(rows: &[FrameMetrics]) -> Result<Vec<StepSummary>> {
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(0);
    let mut out = Vec::new();
    for step in 1..=max_step {
        for metric in Metric::ALL {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.step == step)
                .filter_map(|r| metric.of(r))
                .collect();
            if vals.is_empty() {
                continue;
            }
            out.push(StepSummary {
                step,
                metric,
                summary: box_summary(&vals)?,
            });
        }
    }
    Ok(out)
}

/// Zeta error in metres, recovered through the colormap inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct MetreScores {
    pub clip_id: String,
    pub step: usize,
    pub rmse_m: f64,
    pub mae_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<FrameMetrics>,
    pub summaries: Vec<StepSummary>,
    pub metres: Vec<MetreScores>,
}

/// Scores a set of predicted sequences against their clips' targets.
pub fn score_predictions(
    clip_id: &str,
    region_id: &str,
    preds: &[Planes],
    truth: &[Planes],
) -> Result<Vec<FrameMetrics>> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "forecast steps",
            expected: truth.len(),
            found: preds.len(),
        });
    }
    preds
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(t, (p, y))| {
            let s = frame_metrics(p, y)?;
            Ok(FrameMetrics {
                clip_id: clip_id.to_string(),
                region_id: region_id.to_string(),
                step: t + 1,
                mse: s.mse,
                mae: s.mae,
                rmse: s.rmse,
                r2: s.r2,
            })
        })
        .collect()
}

fn metre_scores(clip_id: &str, preds: &[Planes], truth: &[Planes], range: ValueRange, cmap: &Colormap) -> Vec<MetreScores> {
    preds
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(t, (p, y))| {
            let a = decode_zeta(p, range, cmap);
            let b = decode_zeta(y, range, cmap);
            let n = a.len() as f64;
            let sse: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            let sae: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            MetreScores {
                clip_id: clip_id.to_string(),
                step: t + 1,
                rmse_m: (sse / n).sqrt(),
                mae_m: sae / n,
            }
        })
        .collect()
}

/// Pure-rollout evaluation of `model` on the clips at `indices`.
pub fn evaluate_run(
    model: &Model<f32>,
    zeta_range: ValueRange,
    cmap: &Colormap,
    source: &dyn ClipSource,
    indices: &[usize],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::invalid("no clips to evaluate"));
    }
    let first = source.load(indices[0])?;
    let dims = (first.height(), first.width());
    drop(first);
    let per_clip: Vec<Result<(Vec<FrameMetrics>, Vec<MetreScores>)>> = indices
        .par_iter()
        .map(|&i| {
            let clip = source.load(i)?;
            if (clip.height(), clip.width()) != dims {
                return Err(Error::Shape(format!(
                    "clip {} is {}x{}, expected {}x{}",
                    clip.clip_id(),
                    clip.height(),
                    clip.width(),
                    dims.0,
                    dims.1
                )));
            }
            let preds = forecast_clip(model, &clip)?;
            let id = clip.clip_id();
            let rows = score_predictions(&id, &clip.region_id, &preds, &clip.target)?;
            let metres = metre_scores(&id, &preds, &clip.target, zeta_range, cmap);
            Ok((rows, metres))
        })
        .collect();
    let mut rows = Vec::new();
    let mut metres = Vec::new();
    for r in per_clip {
        let (a, b) = r?;
        rows.extend(a);
        metres.extend(b);
    }
    let summaries = summarize(&rows)?;
    Ok(Evaluation {
        rows,
        summaries,
        metres,
    })
}

pub fn metrics_csv(rows: &[FrameMetrics]) -> String {
    let mut s = String::from("clip_id,region_id,step,mse,rmse,mae,r2\n");
    for r in rows {
        let r2 = r.r2.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.clip_id, r.region_id, r.step, r.mse, r.rmse, r.mae, r2
        ));
    }
    s
}

pub fn summary_csv(summaries: &[StepSummary]) -> String {
    let mut s = String::from("step,metric,median,q1,q3,whisker_lo,whisker_hi,n\n");
    for x in summaries {
        let b = &x.summary;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            x.step,
            x.metric.name(),
            b.median,
            b.q1,
            b.q3,
            b.whisker_lo,
            b.whisker_hi,
            b.n
        ));
    }
    s
}

/// Derived report: zeta errors in metres after inverting the colormap.
pub fn metres_csv(rows: &[MetreScores]) -> String {
    let mut s = String::from("clip_id,step,zeta_rmse_m,zeta_mae_m\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.clip_id, r.step, r.rmse_m, r.mae_m));
    }
    s
}

/// Writes `metrics.csv`, `summary.csv` and `zeta_metres.csv` into `dir`.
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    write_text(&dir.join("metrics.csv"), &metrics_csv(&eval.rows))?;
    write_text(&dir.join("summary.csv"), &summary_csv(&eval.summaries))?;
    write_text(&dir.join("zeta_metres.csv"), &metres_csv(&eval.metres))
}
