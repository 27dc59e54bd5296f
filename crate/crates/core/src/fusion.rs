//! Fusing predictions from several folds/checkpoints before NMS, and the
//! size-reduction postprocessing applied to fused boxes.
//!
//! Pipeline per image: pool all sources, cluster by IoU against a
//! representative, fuse each cluster into one detection, then run NMS on the
//! fused detections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::io::PredictionRow;
use crate::metric::{confidence_order, Detection};
use crate::nms::{nms_unchecked, validate_threshold};

pub const DEFAULT_CLUSTER_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkMode {
    /// Low percentile of member sizes, reduced by the scaled interpercentile spread.
    #[default]
    Percentile,
    /// Mean member size times a fixed factor.
    FixedRescale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShrinkConfig {
    pub low_percentile: f64,
    pub high_percentile: f64,
    /// Divisor applied to `P_high - P_low` before subtracting it from `P_low`.
    pub scale: f64,
    pub mode: ShrinkMode,
    pub rescale_factor: f64,
    /// Lower bound on fused width/height in pixels.
    pub min_size: f64,
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        ShrinkConfig {
            low_percentile: 20.0,
            high_percentile: 80.0,
            scale: 1.6,
            mode: ShrinkMode::Percentile,
            rescale_factor: 0.875,
            min_size: 1.0,
        }
    }
}

impl ShrinkConfig {
    pub fn fixed_rescale(factor: f64) -> Self {
        ShrinkConfig { mode: ShrinkMode::FixedRescale, rescale_factor: factor, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.low_percentile, self.high_percentile);
        if !(lo > 0.0 && lo < hi && hi < 100.0) {
            return Err(Error::config(format!("percentiles must satisfy 0 < low < high < 100, got {lo} and {hi}")));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!("shrink scale must be positive, got {}", self.scale)));
        }
        if !(self.rescale_factor > 0.0 && self.rescale_factor <= 1.0) {
            return Err(Error::config(format!("rescale factor must be in (0, 1], got {}", self.rescale_factor)));
        }
        if !(self.min_size > 0.0 && self.min_size.is_finite()) {
            return Err(Error::config(format!("minimum size must be positive, got {}", self.min_size)));
        }
        Ok(())
    }
}

/// Detections grouped around a representative (always `members[0]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<Detection>,
    pub representative: Detection,
}

/// Linear interpolation between order statistics of `sorted` (ascending,
/// non-empty) at percentile `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn validate_cluster_iou(cluster_iou: f64) -> Result<()> {
    if cluster_iou > 0.0 && cluster_iou < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("cluster IoU {cluster_iou} is outside (0, 1)")))
    }
}

/// Greedy confidence-ordered clustering across sources.
///
/// Detections from all sources are pooled (source by source) and visited by
/// descending confidence, earlier pooled entries first on ties. Each joins the
/// first cluster whose representative it overlaps with IoU above
/// `cluster_iou` and that holds nothing yet from the same source; otherwise it
/// founds a new cluster. Members get their `source_id` set to the index of
/// their source.
pub fn cluster(dets_by_source: &[Vec<Detection>], cluster_iou: f64) -> Result<Vec<Cluster>> {
    validate_cluster_iou(cluster_iou)?;
    Ok(cluster_unchecked(dets_by_source, cluster_iou))
}

fn cluster_unchecked(dets_by_source: &[Vec<Detection>], cluster_iou: f64) -> Vec<Cluster> {
    let pooled: Vec<Detection> = dets_by_source
        .iter()
        .enumerate()
        .flat_map(|(s, dets)| dets.iter().map(move |d| d.with_source(s as u32)))
        .collect();

    let mut clusters: Vec<Cluster> = Vec::new();
    for i in confidence_order(&pooled) {
        let d = pooled[i];
        let home = clusters.iter_mut().find(|c| {
            iou(&c.representative.bbox, &d.bbox) > cluster_iou && c.members.iter().all(|m| m.source_id != d.source_id)
        });
        match home {
            Some(c) => c.members.push(d),
            None => clusters.push(Cluster { members: vec![d], representative: d }),
        }
    }
    clusters
}

/// Fuses a cluster into a single detection.
///
/// The center is the confidence-weighted mean of member centers and the
/// confidence the plain mean. Width and height are shrunk per `cfg.mode`.
/// All means are taken as offsets from the representative, so a cluster of
/// identical members reproduces that member bit for bit.
pub fn fuse_cluster(c: &Cluster, cfg: &ShrinkConfig) -> Detection {
    let base = c.representative;
    let members = &c.members;
    let n = members.len() as f64;

    let total_conf: f64 = members.iter().map(|m| m.confidence).sum();
    let weight = |m: &Detection| if total_conf > 0.0 { m.confidence / total_conf } else { 1.0 / n };
    let mut dcx = 0.0;
    let mut dcy = 0.0;
    let mut dconf = 0.0;
    for m in members {
        let w = weight(m);
        dcx += w * ((m.bbox.x - base.bbox.x) + 0.5 * (m.bbox.w - base.bbox.w));
        dcy += w * ((m.bbox.y - base.bbox.y) + 0.5 * (m.bbox.h - base.bbox.h));
        dconf += (m.confidence - base.confidence) / n;
    }

    let fused_size = |sizes: Vec<f64>, base_size: f64| -> f64 {
        match cfg.mode {
            ShrinkMode::Percentile => {
                let mut sorted = sizes;
                sorted.sort_by(f64::total_cmp);
                let low = percentile(&sorted, cfg.low_percentile);
                let high = percentile(&sorted, cfg.high_percentile);
                let shrunk = low - (high - low) / cfg.scale;
                shrunk.max(cfg.min_size.min(low))
            }
            ShrinkMode::FixedRescale => {
                let mean = base_size + sizes.iter().map(|s| (s - base_size) / n).sum::<f64>();
                cfg.rescale_factor * mean
            }
        }
    };
    let w = fused_size(members.iter().map(|m| m.bbox.w).collect(), base.bbox.w);
    let h = fused_size(members.iter().map(|m| m.bbox.h).collect(), base.bbox.h);

    let bbox =
        BBox { x: base.bbox.x + 0.5 * (base.bbox.w - w) + dcx, y: base.bbox.y + 0.5 * (base.bbox.h - h) + dcy, w, h };
    Detection { bbox, confidence: (base.confidence + dconf).clamp(0.0, 1.0), source_id: base.source_id }
}

/// cluster → fuse → NMS for one image.
pub fn ensemble(
    predictions_by_source: &[Vec<Detection>],
    cluster_iou: f64,
    cfg: &ShrinkConfig,
    nms_threshold: f64,
) -> Result<Vec<Detection>> {
    if predictions_by_source.is_empty() {
        return Err(Error::config("ensemble needs at least one source"));
    }
    validate_cluster_iou(cluster_iou)?;
    cfg.validate()?;
    validate_threshold(nms_threshold)?;
    Ok(ensemble_unchecked(predictions_by_source, cluster_iou, cfg, nms_threshold))
}

fn ensemble_unchecked(
    predictions_by_source: &[Vec<Detection>],
    cluster_iou: f64,
    cfg: &ShrinkConfig,
    nms_threshold: f64,
) -> Vec<Detection> {
    let fused: Vec<Detection> =
        cluster_unchecked(predictions_by_source, cluster_iou).iter().map(|c| fuse_cluster(c, cfg)).collect();
    nms_unchecked(&fused, nms_threshold)
}

/// Outcome of fusing whole prediction files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEnsemble {
    /// One row per patient seen in any source, in first-appearance order.
    pub rows: Vec<PredictionRow>,
    /// Some source lacks a patient that another source has.
    pub inconsistent_patients: bool,
}

/// Runs [`ensemble`] for every patient over the union of the sources.
pub fn ensemble_dataset(
    sources: &[Vec<PredictionRow>],
    cluster_iou: f64,
    cfg: &ShrinkConfig,
    nms_threshold: f64,
) -> Result<DatasetEnsemble> {
    if sources.is_empty() {
        return Err(Error::config("ensemble needs at least one source"));
    }
    validate_cluster_iou(cluster_iou)?;
    cfg.validate()?;
    validate_threshold(nms_threshold)?;

    let lookups: Vec<indexmap::IndexMap<&str, &[Detection]>> = sources
        .iter()
        .map(|rows| rows.iter().map(|r| (r.patient_id.as_str(), r.detections.as_slice())).collect())
        .collect();
    let mut patients: indexmap::IndexSet<&str> = indexmap::IndexSet::new();
    for l in &lookups {
        patients.extend(l.keys().copied());
    }
    let inconsistent_patients = lookups.iter().any(|l| l.len() != patients.len());

    let patients: Vec<&str> = patients.into_iter().collect();
    let rows = patients
        .par_iter()
        .map(|&pid| {
            let per_source: Vec<Vec<Detection>> =
                lookups.iter().map(|l| l.get(pid).map(|d| d.to_vec()).unwrap_or_default()).collect();
            PredictionRow {
                patient_id: pid.to_string(),
                detections: ensemble_unchecked(&per_source, cluster_iou, cfg, nms_threshold),
            }
        })
        .collect();
    Ok(DatasetEnsemble { rows, inconsistent_patients })
}
