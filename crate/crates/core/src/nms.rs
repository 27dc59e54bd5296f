//! Greedy non-maximum suppression and the NMS-threshold sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::metric::{confidence_order, mean_average_precision, ApConfig, Detection, ImageRecord};

pub fn validate_threshold(iou_threshold: f64) -> Result<()> {
    if iou_threshold > 0.0 && iou_threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("NMS threshold {iou_threshold} is outside (0, 1]")))
    }
}

/// Class-agnostic greedy NMS.
///
/// Keeps the most confident remaining detection and drops every remaining one
/// whose IoU with it is strictly greater than `iou_threshold`. Ties in
/// confidence go to the earlier input. Output is in descending confidence.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    validate_threshold(iou_threshold)?;
    Ok(nms_unchecked(dets, iou_threshold))
}

pub(crate) fn nms_unchecked(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let order = confidence_order(dets);
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let kept = &dets[order[i]];
        keep.push(*kept);
        for j in (i + 1)..order.len() {
            if !suppressed[j] && iou(&kept.bbox, &dets[order[j]].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Applies NMS to the predictions of every record.
pub fn nms_records(records: &[ImageRecord], iou_threshold: f64) -> Result<Vec<ImageRecord>> {
    validate_threshold(iou_threshold)?;
    Ok(records
        .iter()
        .map(|r| ImageRecord {
            image_id: r.image_id.clone(),
            truth: r.truth.clone(),
            predictions: nms_unchecked(&r.predictions, iou_threshold),
        })
        .collect())
}

/// Evenly spaced thresholds from `min` to `max` inclusive.
pub fn threshold_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || !min.is_finite() || !max.is_finite() || max < min {
        return Err(Error::config(format!("bad threshold range {min}..={max} step {step}")));
    }
    // the 1e-9 slack keeps `max` when (max - min) / step lands a hair under an integer
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    let values: Vec<f64> = (0..n).map(|i| min + i as f64 * step).map(|v| (v * 1e9).round() / 1e9).collect();
    values.iter().try_for_each(|&t| validate_threshold(t))?;
    Ok(values)
}

/// One labelled set of raw (pre-NMS) predictions, e.g. one epoch's output.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub label: String,
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub run_label: String,
    pub nms_threshold: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Row-major: run order, then threshold order.
    pub cells: Vec<SweepCell>,
    /// Index of the best cell; the first one wins ties.
    pub best: usize,
}

impl SweepResult {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }
}

/// mAP after NMS for every (run, threshold) pair.
pub fn sweep(runs: &[SweepRun], thresholds: &[f64], cfg: &ApConfig) -> Result<SweepResult> {
    if runs.is_empty() || thresholds.is_empty() {
        return Err(Error::config("sweep needs at least one run and one threshold"));
    }
    thresholds.iter().try_for_each(|&t| validate_threshold(t))?;
    cfg.validate()?;

    let jobs: Vec<(usize, f64)> = (0..runs.len()).flat_map(|r| thresholds.iter().map(move |&t| (r, t))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(r, t)| {
            let filtered = nms_records(&runs[r].records, t)?;
            let map = mean_average_precision(&filtered, cfg)?;
            Ok(SweepCell { run_label: runs[r].label.clone(), nms_threshold: t, map })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.map > cells[best].map {
            best = i;
        }
    }
    Ok(SweepResult { cells, best })
}
