//! Synthetic timing harness for the metric, NMS and fusion stages.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{ensemble, ShrinkConfig, DEFAULT_CLUSTER_IOU};
use crate::geometry::BBox;
use crate::metric::{mean_average_precision, ApConfig, Detection, ImageRecord};
use crate::nms::nms;

const CANVAS: f64 = 512.0;

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(20.0..160.0);
    let h = rng.random_range(20.0..200.0);
    BBox { x: rng.random_range(0.0..CANVAS - w), y: rng.random_range(0.0..CANVAS - h), w, h }
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox, amount: f64) -> BBox {
    let mut j = |v: f64| v * (1.0 + rng.random_range(-amount..=amount));
    let (w, h) = (j(b.w), j(b.h));
    BBox { x: b.x + b.w * rng.random_range(-amount..=amount), y: b.y + b.h * rng.random_range(-amount..=amount), w, h }
}

/// `images` records with 1–3 truth boxes and `boxes_per_image` predictions,
/// most of them jittered copies of a truth box.
pub fn synthetic_records(images: usize, boxes_per_image: usize, seed: u64) -> Vec<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images)
        .map(|i| {
            let n_truth = rng.random_range(1..=3);
            let truth: Vec<BBox> = (0..n_truth).map(|_| random_box(&mut rng)).collect();
            let preds = (0..boxes_per_image)
                .map(|_| {
                    let b = if rng.random_bool(0.8) {
                        let t = truth[rng.random_range(0..truth.len())];
                        jitter(&mut rng, &t, 0.15)
                    } else {
                        random_box(&mut rng)
                    };
                    Detection::new(b, rng.random_range(0.05..1.0))
                })
                .collect();
            ImageRecord::new(format!("img{i:06}"), truth, preds)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub stage: &'static str,
    pub images: usize,
    pub boxes_per_image: usize,
    pub elapsed: Duration,
}

/// Times mAP evaluation, per-image NMS and a four-source ensemble on the same
/// synthetic data. Single-threaded.
pub fn run(images: usize, boxes_per_image: usize, seed: u64) -> Result<Vec<Timing>> {
    let records = synthetic_records(images, boxes_per_image, seed);
    let cfg = ApConfig::default();
    let shrink = ShrinkConfig::default();
    let mut out = Vec::new();
    let mut timing = |stage, elapsed| out.push(Timing { stage, images, boxes_per_image, elapsed });

    let start = Instant::now();
    std::hint::black_box(mean_average_precision(&records, &cfg)?);
    timing("metric", start.elapsed());

    let start = Instant::now();
    for r in &records {
        std::hint::black_box(nms(&r.predictions, 0.5)?);
    }
    timing("nms", start.elapsed());

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sources: Vec<Vec<Vec<Detection>>> = records
        .iter()
        .map(|r| {
            (0..4)
                .map(|_| {
                    r.predictions
                        .iter()
                        .map(|d| Detection::new(jitter(&mut rng, &d.bbox, 0.03), d.confidence))
                        .collect()
                })
                .collect()
        })
        .collect();
    let start = Instant::now();
    for per_source in &sources {
        std::hint::black_box(ensemble(per_source, DEFAULT_CLUSTER_IOU, &shrink, 0.5)?);
    }
    timing("fusion", start.elapsed());
    Ok(out)
}

pub fn write_csv<W: Write>(timings: &[Timing], mut out: W) -> Result<()> {
    writeln!(out, "stage,images,boxes_per_image,seconds")?;
    for t in timings {
        writeln!(out, "{},{},{},{:.9}", t.stage, t.images, t.boxes_per_image, t.elapsed.as_secs_f64())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_data_is_seeded_and_valid() {
        let a = synthetic_records(20, 5, 1);
        assert_eq!(a, synthetic_records(20, 5, 1));
        for r in &a {
            r.validate().unwrap();
            assert_eq!(r.predictions.len(), 5);
        }
    }

    #[test]
    fn tiny_run_reports_every_stage() {
        let t = run(1, 1, 0).unwrap();
        let stages: Vec<_> = t.iter().map(|t| t.stage).collect();
        assert_eq!(stages, ["metric", "nms", "fusion"]);
        assert!(t.iter().all(|t| t.elapsed > Duration::ZERO));
        let mut buf = Vec::new();
        write_csv(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
