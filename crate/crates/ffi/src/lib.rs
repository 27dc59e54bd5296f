//! C ABI over `lungdet`: the mAP metric, NMS and ensemble fusion.
//!
//! Every function returns an [`LdStatus`]. On failure the message is kept per
//! thread and can be read with [`ld_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::{ptr, slice};

use lungdet::fusion::{ensemble, ShrinkConfig, ShrinkMode};
use lungdet::metric::{
    mean_average_precision, ApConfig, Comparator, Detection, EmptyImagePolicy, ImageRecord, DEFAULT_THRESHOLDS,
};
use lungdet::{nms, BBox, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoContributingImages = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdComparator {
    StrictlyGreater = 0,
    GreaterOrEqual = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdEmptyPolicy {
    /// Images with neither truth nor predictions do not count.
    Exclude = 0,
    /// Such images score 1.
    CountAsOne = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdShrinkMode {
    Percentile = 0,
    FixedRescale = 1,
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdDetection {
    pub confidence: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdShrinkParams {
    pub mode: LdShrinkMode,
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub scale: f64,
    pub rescale_factor: f64,
    pub min_size: f64,
}

/// Scoring input built up image by image.
pub struct LdDataset {
    records: Vec<ImageRecord>,
}

/// Per-source detections for one image, fused on demand.
pub struct LdEnsemble {
    sources: Vec<Vec<Detection>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: LdStatus, msg: impl Into<String>) -> LdStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> LdStatus {
    let status = match e {
        Error::NoContributingImages => LdStatus::NoContributingImages,
        _ => LdStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> LdStatus) -> LdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(LdStatus::Panic, "internal panic"))
}

/// # Safety
/// `p` must be null only when `n` is 0, otherwise valid for `n` reads.
unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], LdStatus> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(fail(LdStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(slice::from_raw_parts(p, n))
    }
}

fn to_detection(d: &LdDetection) -> Detection {
    Detection::new(BBox { x: d.x, y: d.y, w: d.w, h: d.h }, d.confidence)
}

fn from_detection(d: &Detection) -> LdDetection {
    LdDetection { confidence: d.confidence, x: d.bbox.x, y: d.bbox.y, w: d.bbox.w, h: d.bbox.h }
}

fn checked_detections(dets: &[LdDetection], context: &str) -> Result<Vec<Detection>, LdStatus> {
    dets.iter()
        .map(|d| {
            let d = to_detection(d);
            d.validate().map_err(|e| fail(LdStatus::InvalidArgument, format!("{context}: {e}")))?;
            Ok(d)
        })
        .collect()
}

/// # Safety
/// `out` must be valid for `cap` writes; `out_len` must be non-null.
unsafe fn write_out(dets: &[Detection], out: *mut LdDetection, cap: usize, out_len: *mut usize) -> LdStatus {
    *out_len = dets.len();
    if dets.len() > cap {
        return fail(LdStatus::BufferTooSmall, format!("{} detections do not fit in {cap}", dets.len()));
    }
    if !dets.is_empty() && out.is_null() {
        return fail(LdStatus::NullPointer, "output buffer is null");
    }
    for (i, d) in dets.iter().enumerate() {
        out.add(i).write(from_detection(d));
    }
    LdStatus::Ok
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length plus one, or 0 when
/// the last call succeeded.
///
/// # Safety
/// `buf` must be valid for `cap` writes or null with `cap` 0.
#[no_mangle]
pub unsafe extern "C" fn ld_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ld_dataset_new() -> *mut LdDataset {
    Box::into_raw(Box::new(LdDataset { records: Vec::new() }))
}

/// # Safety
/// `ds` must come from [`ld_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_free(ds: *mut LdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Appends one image. `truth` and `predictions` may be null when their count is 0.
///
/// # Safety
/// `ds` must be a live dataset, `image_id` a NUL-terminated UTF-8 string, and
/// the arrays valid for their counts.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_add_image(
    ds: *mut LdDataset,
    image_id: *const c_char,
    truth: *const LdBox,
    n_truth: usize,
    predictions: *const LdDetection,
    n_predictions: usize,
) -> LdStatus {
    guard(|| {
        if ds.is_null() || image_id.is_null() {
            return fail(LdStatus::NullPointer, "dataset or image id is null");
        }
        let Ok(id) = CStr::from_ptr(image_id).to_str() else {
            return fail(LdStatus::InvalidArgument, "image id is not UTF-8");
        };
        let add = || -> Result<(), LdStatus> {
            let truth = input(truth, n_truth, "truth")?
                .iter()
                .map(|b| {
                    BBox::new(b.x, b.y, b.w, b.h)
                        .map_err(|e| fail(LdStatus::InvalidArgument, format!("image {id}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let preds = checked_detections(input(predictions, n_predictions, "predictions")?, &format!("image {id}"))?;
            (*ds).records.push(ImageRecord::new(id, truth, preds));
            Ok(())
        };
        add().err().unwrap_or(LdStatus::Ok)
    })
}

/// Number of images added so far, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live dataset or null.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_len(ds: *const LdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.records.len())
}

/// Mean average precision over the dataset. Pass `n_thresholds` 0 for the
/// default ladder 0.40, 0.45, …, 0.75.
///
/// # Safety
/// `ds` must be a live dataset, `thresholds` valid for `n_thresholds` reads,
/// `out_map` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ld_dataset_evaluate(
    ds: *const LdDataset,
    thresholds: *const f64,
    n_thresholds: usize,
    comparator: LdComparator,
    empty_policy: LdEmptyPolicy,
    out_map: *mut f64,
) -> LdStatus {
    guard(|| {
        if ds.is_null() || out_map.is_null() {
            return fail(LdStatus::NullPointer, "dataset or output is null");
        }
        let thresholds = match input(thresholds, n_thresholds, "thresholds") {
            Ok([]) => DEFAULT_THRESHOLDS.to_vec(),
            Ok(t) => t.to_vec(),
            Err(s) => return s,
        };
        let cfg = ApConfig {
            thresholds,
            comparator: match comparator {
                LdComparator::StrictlyGreater => Comparator::StrictlyGreater,
                LdComparator::GreaterOrEqual => Comparator::GreaterOrEqual,
            },
            empty_image_policy: match empty_policy {
                LdEmptyPolicy::Exclude => EmptyImagePolicy::ExcludeWhenBothEmpty,
                LdEmptyPolicy::CountAsOne => EmptyImagePolicy::CountAsOne,
            },
        };
        match mean_average_precision(&(*ds).records, &cfg) {
            Ok(m) => {
                *out_map = m;
                LdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Greedy NMS. `out` needs room for up to `n` detections; the kept count is
/// written to `out_len` even when it returns `BufferTooSmall`.
///
/// # Safety
/// `dets` valid for `n` reads, `out` for `out_cap` writes, `out_len` for one write.
#[no_mangle]
pub unsafe extern "C" fn ld_nms(
    dets: *const LdDetection,
    n: usize,
    iou_threshold: f64,
    out: *mut LdDetection,
    out_cap: usize,
    out_len: *mut usize,
) -> LdStatus {
    guard(|| {
        if out_len.is_null() {
            return fail(LdStatus::NullPointer, "out_len is null");
        }
        let run = || -> Result<LdStatus, LdStatus> {
            let dets = checked_detections(input(dets, n, "detections")?, "nms input")?;
            let kept = nms(&dets, iou_threshold).map_err(from_error)?;
            Ok(write_out(&kept, out, out_cap, out_len))
        };
        run().unwrap_or_else(|s| s)
    })
}

/// Defaults: percentile mode, 20th/80th percentiles, scale 1.6, rescale 0.875,
/// minimum size 1.
#[no_mangle]
pub extern "C" fn ld_shrink_params_default() -> LdShrinkParams {
    let d = ShrinkConfig::default();
    LdShrinkParams {
        mode: LdShrinkMode::Percentile,
        low_percentile: d.low_percentile,
        high_percentile: d.high_percentile,
        scale: d.scale,
        rescale_factor: d.rescale_factor,
        min_size: d.min_size,
    }
}

#[no_mangle]
pub extern "C" fn ld_ensemble_new() -> *mut LdEnsemble {
    Box::into_raw(Box::new(LdEnsemble { sources: Vec::new() }))
}

/// # Safety
/// `en` must come from [`ld_ensemble_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_free(en: *mut LdEnsemble) {
    if !en.is_null() {
        drop(Box::from_raw(en));
    }
}

/// Adds one source's detections (one fold or checkpoint) for the image.
///
/// # Safety
/// `en` must be a live ensemble and `dets` valid for `n` reads.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_add_source(en: *mut LdEnsemble, dets: *const LdDetection, n: usize) -> LdStatus {
    guard(|| {
        if en.is_null() {
            return fail(LdStatus::NullPointer, "ensemble is null");
        }
        let add = || -> Result<(), LdStatus> {
            let context = format!("source {}", (*en).sources.len());
            let dets = checked_detections(input(dets, n, "detections")?, &context)?;
            (*en).sources.push(dets);
            Ok(())
        };
        add().err().unwrap_or(LdStatus::Ok)
    })
}

/// Clusters the sources, fuses each cluster, then applies NMS. `params` may be
/// null for the defaults. Output capacity equal to the total number of input
/// detections always suffices.
///
/// # Safety
/// `en` must be a live ensemble, `params` null or valid, `out` valid for
/// `out_cap` writes and `out_len` for one write.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_run(
    en: *const LdEnsemble,
    cluster_iou: f64,
    params: *const LdShrinkParams,
    nms_threshold: f64,
    out: *mut LdDetection,
    out_cap: usize,
    out_len: *mut usize,
) -> LdStatus {
    guard(|| {
        if en.is_null() || out_len.is_null() {
            return fail(LdStatus::NullPointer, "ensemble or out_len is null");
        }
        let p = params.as_ref().copied().unwrap_or_else(|| ld_shrink_params_default());
        let cfg = ShrinkConfig {
            low_percentile: p.low_percentile,
            high_percentile: p.high_percentile,
            scale: p.scale,
            mode: match p.mode {
                LdShrinkMode::Percentile => ShrinkMode::Percentile,
                LdShrinkMode::FixedRescale => ShrinkMode::FixedRescale,
            },
            rescale_factor: p.rescale_factor,
            min_size: p.min_size,
        };
        match ensemble(&(*en).sources, cluster_iou, &cfg, nms_threshold) {
            Ok(fused) => write_out(&fused, out, out_cap, out_len),
            Err(e) => from_error(e),
        }
    })
}
