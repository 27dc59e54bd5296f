//! `lungdet` command-line front end.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::augment::{augment, resize, GrayImage, PresetName};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fusion::{ensemble_dataset, ShrinkMode, DEFAULT_CLUSTER_IOU};
use crate::io::{
    join_predictions, parse_boxes, parse_ground_truth, parse_predictions, read_pgm, serialize_boxes,
    serialize_predictions, write_pgm, write_sweep_csv, PredictionRow,
};
use crate::metric::{mean_average_precision_par, per_image_ap, Comparator, EmptyImagePolicy};
use crate::nms::{nms, sweep, threshold_range, SweepRun};

/// Thread count for parallel stages. Unset means one thread per core.
pub const THREADS_ENV: &str = "LUNGDET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lungdet", version, about = "Detection scoring, NMS, ensembling and augmentation")]
pub struct Cli {
    /// JSON config file (AP ladder, shrink settings, augmentation overrides).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ComparatorArg {
    StrictlyGreater,
    GreaterOrEqual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmptyPolicyArg {
    Exclude,
    CountAsOne,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Percentile,
    Rescale,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a submission against ground truth and print the mAP.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Comma-separated IoU ladder, e.g. 0.4,0.45,0.5
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        comparator: Option<ComparatorArg>,
        #[arg(long, value_enum)]
        empty_policy: Option<EmptyPolicyArg>,
        /// Also write `patientId,ap` rows here (empty ap for excluded images).
        #[arg(long)]
        per_image: Option<PathBuf>,
    },
    /// Apply NMS to every patient of a submission.
    Nms {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// mAP for every (prediction file, NMS threshold) pair, as CSV.
    Sweep {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        nms_min: f64,
        #[arg(long, default_value_t = 1.0)]
        nms_max: f64,
        #[arg(long, default_value_t = 0.05)]
        nms_step: f64,
        /// Write the grid here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Combine several submissions (folds/checkpoints), shrink, then NMS.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CLUSTER_IOU)]
        cluster_iou: f64,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        low_percentile: Option<f64>,
        #[arg(long)]
        high_percentile: Option<f64>,
        #[arg(long)]
        rescale_factor: Option<f64>,
        #[arg(long = "nms")]
        nms_threshold: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Augment one PGM image and its boxes.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        /// none | light | heavy | heavy_no_rotation | heavy_custom_rotation
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resize to N×N before augmenting.
        #[arg(long)]
        resize: Option<usize>,
        /// Output directory; receives `image.pgm` and `boxes.csv`.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Time metric, NMS and fusion on synthetic data; CSV on standard output.
    Bench {
        #[arg(long, default_value_t = 1000)]
        images: usize,
        #[arg(long, default_value_t = 10)]
        boxes_per_image: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    with_path(path, parse_predictions(open(path)?))
}

fn run_label(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let stdout = io::stdout();

    match cli.command {
        Command::Evaluate { truth, pred, thresholds, comparator, empty_policy, per_image } => {
            if let Some(t) = thresholds {
                config.ap.thresholds = t;
            }
            if let Some(c) = comparator {
                config.ap.comparator = match c {
                    ComparatorArg::StrictlyGreater => Comparator::StrictlyGreater,
                    ComparatorArg::GreaterOrEqual => Comparator::GreaterOrEqual,
                };
            }
            if let Some(p) = empty_policy {
                config.ap.empty_image_policy = match p {
                    EmptyPolicyArg::Exclude => EmptyImagePolicy::ExcludeWhenBothEmpty,
                    EmptyPolicyArg::CountAsOne => EmptyImagePolicy::CountAsOne,
                };
            }
            let gt = with_path(&truth, parse_ground_truth(open(&truth)?))?;
            let preds = read_predictions(&pred)?;
            let (records, unknown) = join_predictions(gt, &preds);
            if !unknown.is_empty() {
                eprintln!(
                    "warning: {} patient(s) in {} are not in the ground truth and were ignored",
                    unknown.len(),
                    pred.display()
                );
            }
            let map = mean_average_precision_par(&records, &config.ap)?;
            if let Some(path) = per_image {
                let mut w = create(&path)?;
                writeln!(w, "patientId,ap")?;
                for (r, ap) in records.iter().zip(per_image_ap(&records, &config.ap)) {
                    match ap {
                        Some(v) => writeln!(w, "{},{v:.6}", r.image_id)?,
                        None => writeln!(w, "{},", r.image_id)?,
                    }
                }
                w.flush()?;
            }
            writeln!(stdout.lock(), "{map:.6}")?;
        }

        Command::Nms { pred, threshold, output } => {
            let rows = read_predictions(&pred)?;
            let filtered = rows
                .iter()
                .map(|r| {
                    Ok(PredictionRow { patient_id: r.patient_id.clone(), detections: nms(&r.detections, threshold)? })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut w = create(&output)?;
            serialize_predictions(&filtered, &mut w)?;
            w.flush()?;
        }

        Command::Sweep { pred, truth, nms_min, nms_max, nms_step, output } => {
            let thresholds = threshold_range(nms_min, nms_max, nms_step)?;
            let gt = with_path(&truth, parse_ground_truth(open(&truth)?))?;
            let runs = pred
                .iter()
                .map(|p| {
                    let (records, _) = join_predictions(gt.clone(), &read_predictions(p)?);
                    Ok(SweepRun { label: run_label(p), records })
                })
                .collect::<Result<Vec<_>>>()?;
            let res = sweep(&runs, &thresholds, &config.ap)?;
            match output {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_sweep_csv(&res, &mut w)?;
                    w.flush()?;
                }
                None => write_sweep_csv(&res, stdout.lock())?,
            }
        }

        Command::Fuse {
            pred,
            cluster_iou,
            mode,
            scale,
            low_percentile,
            high_percentile,
            rescale_factor,
            nms_threshold,
            output,
        } => {
            let shrink = &mut config.shrink;
            if let Some(m) = mode {
                shrink.mode = match m {
                    ModeArg::Percentile => ShrinkMode::Percentile,
                    ModeArg::Rescale => ShrinkMode::FixedRescale,
                };
            }
            shrink.scale = scale.unwrap_or(shrink.scale);
            shrink.low_percentile = low_percentile.unwrap_or(shrink.low_percentile);
            shrink.high_percentile = high_percentile.unwrap_or(shrink.high_percentile);
            shrink.rescale_factor = rescale_factor.unwrap_or(shrink.rescale_factor);
            let sources = pred.iter().map(|p| read_predictions(p)).collect::<Result<Vec<_>>>()?;
            let fused = ensemble_dataset(&sources, cluster_iou, &config.shrink, nms_threshold)?;
            if fused.inconsistent_patients {
                eprintln!("warning: input files cover different patients; fusing over their union");
            }
            let mut w = create(&output)?;
            serialize_predictions(&fused.rows, &mut w)?;
            w.flush()?;
        }

        Command::Augment { image, boxes, preset, seed, resize: target, output } => {
            let name: PresetName = preset.parse()?;
            let preset = config.preset(name)?;
            let (w, h, data) = read_pgm(open(&image)?)?;
            let mut img = GrayImage::from_u8(w, h, &data)?;
            let mut bxs = with_path(&boxes, parse_boxes(open(&boxes)?))?;
            if let Some(t) = target {
                (img, bxs) = resize(&img, &bxs, t)?;
            }
            let out = augment(&img, &bxs, &preset, seed)?;
            std::fs::create_dir_all(&output)?;
            let mut iw = create(&output.join("image.pgm"))?;
            write_pgm(out.image.width(), out.image.height(), &out.image.to_u8(), &mut iw)?;
            iw.flush()?;
            let mut bw = create(&output.join("boxes.csv"))?;
            serialize_boxes(&out.boxes, &mut bw)?;
            bw.flush()?;
        }

        Command::Bench { images, boxes_per_image, seed } => {
            if images == 0 || boxes_per_image == 0 {
                return Err(Error::config("--images and --boxes-per-image must be positive"));
            }
            let timings = crate::bench::run(images, boxes_per_image, seed)?;
            crate::bench::write_csv(&timings, stdout.lock())?;
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
