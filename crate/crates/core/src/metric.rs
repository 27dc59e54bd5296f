//! Per-image average precision over an IoU threshold ladder, and its mean
//! over a dataset.
//!
//! For one image and one threshold `t`, predictions are matched greedily to
//! ground-truth boxes, giving `TP(t)`, `FP(t)` and `FN(t)`. The image score is
//! the mean over the ladder of `TP / (TP + FP + FN)`; the dataset score is the
//! mean of image scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// The default IoU ladder: 0.40 to 0.75 in steps of 0.05.
pub const DEFAULT_THRESHOLDS: [f64; 8] = [0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75];

/// A scored box. `source_id` tags the fold/checkpoint it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default)]
    pub source_id: u32,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Self {
        Detection { bbox, confidence, source_id: 0 }
    }

    pub fn with_source(mut self, source_id: u32) -> Self {
        self.source_id = source_id;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bbox;
        if !b.is_valid() {
            return Err(Error::InvalidBox { x: b.x, y: b.y, w: b.w, h: b.h });
        }
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(Error::InvalidConfidence(self.confidence));
        }
        Ok(())
    }
}

/// Ground truth and predictions for one image (patient).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub truth: Vec<BBox>,
    pub predictions: Vec<Detection>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, truth: Vec<BBox>, predictions: Vec<Detection>) -> Self {
        ImageRecord { image_id: image_id.into(), truth, predictions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::EmptyImageId);
        }
        for b in &self.truth {
            if !b.is_valid() {
                return Err(Error::InvalidBox { x: b.x, y: b.y, w: b.w, h: b.h });
            }
        }
        self.predictions.iter().try_for_each(Detection::validate)
    }
}

/// How an IoU is compared against a ladder threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    #[default]
    StrictlyGreater,
    GreaterOrEqual,
}

impl Comparator {
    #[inline]
    pub fn passes(self, iou: f64, threshold: f64) -> bool {
        match self {
            Comparator::StrictlyGreater => iou > threshold,
            Comparator::GreaterOrEqual => iou >= threshold,
        }
    }
}

/// What an image with neither truth nor predictions contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyImagePolicy {
    /// The image is left out of the mean.
    #[default]
    ExcludeWhenBothEmpty,
    /// The image scores 1.
    CountAsOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    pub thresholds: Vec<f64>,
    pub comparator: Comparator,
    pub empty_image_policy: EmptyImagePolicy,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            comparator: Comparator::default(),
            empty_image_policy: EmptyImagePolicy::default(),
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::config("threshold ladder is empty"));
        }
        for &t in &self.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config(format!("threshold {t} is outside (0, 1)")));
            }
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("thresholds must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    /// `TP / (TP + FP + FN)`, zero when all counts are zero.
    pub fn precision(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

/// Prediction indices by descending confidence; equal confidences keep input order.
pub(crate) fn confidence_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence));
    order
}

/// Pairwise IoU, row per prediction (in `order`), column per truth box.
struct IouTable {
    n_truth: usize,
    values: Vec<f64>,
}

impl IouTable {
    fn build(truth: &[BBox], preds: &[Detection], order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(order.len() * truth.len());
        for &p in order {
            values.extend(truth.iter().map(|t| iou(&preds[p].bbox, t)));
        }
        IouTable { n_truth: truth.len(), values }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_truth..(i + 1) * self.n_truth]
    }

    fn count(&self, n_preds: usize, threshold: f64, comparator: Comparator, used: &mut [bool]) -> MatchCounts {
        used.iter_mut().for_each(|u| *u = false);
        let mut tp = 0;
        for i in 0..n_preds {
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in self.row(i).iter().enumerate() {
                if used[j] || !comparator.passes(v, threshold) {
                    continue;
                }
                // strict `>` keeps the lowest truth index on IoU ties
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
                tp += 1;
            }
        }
        MatchCounts { tp, fp: n_preds - tp, fn_: self.n_truth - tp }
    }
}

/// Greedy one-to-one matching at a single threshold.
///
/// Predictions are visited by descending confidence (input order on ties);
/// each takes the unmatched truth box with the highest IoU that passes the
/// comparator (lowest index on ties).
pub fn match_at_threshold(truth: &[BBox], preds: &[Detection], threshold: f64, comparator: Comparator) -> MatchCounts {
    let order = confidence_order(preds);
    let table = IouTable::build(truth, preds, &order);
    let mut used = vec![false; truth.len()];
    table.count(preds.len(), threshold, comparator, &mut used)
}

/// Average precision of one image over `cfg.thresholds`. `None` means the
/// image is excluded from the dataset mean.
pub fn average_precision(rec: &ImageRecord, cfg: &ApConfig) -> Option<f64> {
    ap_parts(&rec.truth, &rec.predictions, cfg)
}

fn ap_parts(truth: &[BBox], preds: &[Detection], cfg: &ApConfig) -> Option<f64> {
    if truth.is_empty() && preds.is_empty() {
        return match cfg.empty_image_policy {
            EmptyImagePolicy::ExcludeWhenBothEmpty => None,
            EmptyImagePolicy::CountAsOne => Some(1.0),
        };
    }
    if truth.is_empty() || preds.is_empty() {
        return Some(0.0);
    }
    let order = confidence_order(preds);
    let table = IouTable::build(truth, preds, &order);
    let mut used = vec![false; truth.len()];
    let sum: f64 =
        cfg.thresholds.iter().map(|&t| table.count(preds.len(), t, cfg.comparator, &mut used).precision()).sum();
    Some(sum / cfg.thresholds.len() as f64)
}

/// Per-image AP for every record, in input order.
pub fn per_image_ap(records: &[ImageRecord], cfg: &ApConfig) -> Vec<Option<f64>> {
    records.iter().map(|r| average_precision(r, cfg)).collect()
}

fn mean_of(aps: impl Iterator<Item = Option<f64>>) -> Result<f64> {
    let (sum, n) = aps.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(Error::NoContributingImages)
    } else {
        Ok(sum / n as f64)
    }
}

/// Mean of the contributing per-image APs, single-threaded.
pub fn mean_average_precision(records: &[ImageRecord], cfg: &ApConfig) -> Result<f64> {
    cfg.validate()?;
    mean_of(records.iter().map(|r| average_precision(r, cfg)))
}

/// Same value as [`mean_average_precision`], with images scored in parallel.
/// The sum is still taken in record order, so results are bit-identical.
pub fn mean_average_precision_par(records: &[ImageRecord], cfg: &ApConfig) -> Result<f64> {
    cfg.validate()?;
    let aps: Vec<Option<f64>> = records.par_iter().map(|r| average_precision(r, cfg)).collect();
    mean_of(aps.into_iter())
}
