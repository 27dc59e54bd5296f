//! Post-network pipeline for chest X-ray opacity detection: box geometry and
//! augmentation, the multi-threshold average-precision metric, non-maximum
//! suppression with threshold sweeps, and fold/checkpoint ensemble fusion.

pub mod augment;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metric;
pub mod nms;

pub use error::{Error, Result};
pub use fusion::{ensemble, fuse_cluster, ShrinkConfig, ShrinkMode};
pub use geometry::{iou, Affine, BBox, Point};
pub use metric::{
    average_precision, mean_average_precision, ApConfig, Comparator, Detection, EmptyImagePolicy, ImageRecord,
};
pub use nms::nms;
