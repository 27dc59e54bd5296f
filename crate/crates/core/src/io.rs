//! Challenge file formats.
//!
//! Ground truth (`patientId,x,y,width,height,Target`): one row per box for
//! positive patients, one row with empty coordinates and `Target` 0 for
//! negatives.
//!
//! Submissions (`patientId,PredictionString`): the prediction string is a
//! whitespace-separated sequence of `confidence x y width height` groups,
//! possibly empty.
//!
//! Numbers are written with [`DECIMALS`] decimal places and a `.` separator.

use std::io::{BufRead, Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metric::{Detection, ImageRecord};
use crate::nms::SweepResult;

pub const DECIMALS: usize = 4;
pub const GROUND_TRUTH_HEADER: [&str; 6] = ["patientId", "x", "y", "width", "height", "Target"];
pub const PREDICTION_HEADER: [&str; 2] = ["patientId", "PredictionString"];
pub const BOXES_HEADER: [&str; 4] = ["x", "y", "width", "height"];

/// All predictions for one patient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionRow {
    pub patient_id: String,
    pub detections: Vec<Detection>,
}

fn fmt_num(v: f64) -> String {
    format!("{v:.prec$}", prec = DECIMALS)
}

fn parse_num(field: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| format!("{what}: cannot parse {field:?} as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what}: {field:?} is not finite"))
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got = rdr.headers()?;
    if got.iter().eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Parse { line: 1, message: format!("expected header {:?}, found {:?}", want.join(","), got) })
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parses a ground-truth file into records (predictions left empty), grouped
/// by patient in order of first appearance.
pub fn parse_ground_truth<R: Read>(input: R) -> Result<Vec<ImageRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &GROUND_TRUTH_HEADER)?;
    let mut grouped: IndexMap<String, Vec<BBox>> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let err = |message: String| Error::Parse { line, message };
        if rec.len() != GROUND_TRUTH_HEADER.len() {
            return Err(err(format!("expected {} fields, found {}", GROUND_TRUTH_HEADER.len(), rec.len())));
        }
        let pid = &rec[0];
        if pid.is_empty() {
            return Err(err("empty patientId".into()));
        }
        let coords = &rec.iter().skip(1).take(4).collect::<Vec<_>>();
        let boxes = grouped.entry(pid.to_string()).or_default();
        match &rec[5] {
            "1" => {
                if coords.iter().any(|c| c.is_empty()) {
                    return Err(err(format!("patient {pid}: Target 1 row is missing box coordinates")));
                }
                let v = coords
                    .iter()
                    .zip(["x", "y", "width", "height"])
                    .map(|(c, name)| parse_num(c, name))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(err)?;
                let b = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()))?;
                boxes.push(b);
            }
            "0" => {
                if coords.iter().any(|c| !c.is_empty()) {
                    return Err(err(format!("patient {pid}: Target 0 row must not carry coordinates")));
                }
            }
            other => return Err(err(format!("Target must be 0 or 1, found {other:?}"))),
        }
    }
    Ok(grouped.into_iter().map(|(id, truth)| ImageRecord::new(id, truth, Vec::new())).collect())
}

/// Writes the `truth` of each record in ground-truth format.
pub fn serialize_ground_truth<W: Write>(records: &[ImageRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GROUND_TRUTH_HEADER)?;
    for r in records {
        if r.truth.is_empty() {
            w.write_record([r.image_id.as_str(), "", "", "", "", "0"])?;
        }
        for b in &r.truth {
            w.write_record([r.image_id.clone(), fmt_num(b.x), fmt_num(b.y), fmt_num(b.w), fmt_num(b.h), "1".into()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses one prediction string.
pub fn parse_prediction_string(patient_id: &str, s: &str) -> Result<Vec<Detection>> {
    let err = |message: String| Error::PredictionString { patient_id: patient_id.to_string(), message };
    let tokens: Vec<&str> = s.split_whitespace().collect();
    if !tokens.len().is_multiple_of(5) {
        return Err(err(format!("{} values is not a multiple of 5 (confidence x y width height)", tokens.len())));
    }
    tokens
        .chunks_exact(5)
        .map(|g| {
            let v = g
                .iter()
                .zip(["confidence", "x", "y", "width", "height"])
                .map(|(t, name)| parse_num(t, name))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(err)?;
            let d = Detection::new(BBox { x: v[1], y: v[2], w: v[3], h: v[4] }, v[0]);
            d.validate().map_err(|e| err(e.to_string()))?;
            Ok(d)
        })
        .collect()
}

pub fn format_prediction_string(dets: &[Detection]) -> String {
    let mut s = String::new();
    for (i, d) in dets.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let b = &d.bbox;
        s.push_str(&[d.confidence, b.x, b.y, b.w, b.h].map(fmt_num).join(" "));
    }
    s
}

/// Parses a submission file. Rows repeating a patient are merged into the
/// first row for that patient.
pub fn parse_predictions<R: Read>(input: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &PREDICTION_HEADER)?;
    let mut grouped: IndexMap<String, Vec<Detection>> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        let pid = &rec[0];
        if pid.is_empty() {
            return Err(Error::Parse { line, message: "empty patientId".into() });
        }
        let dets = parse_prediction_string(pid, &rec[1])?;
        grouped.entry(pid.to_string()).or_default().extend(dets);
    }
    Ok(grouped.into_iter().map(|(patient_id, detections)| PredictionRow { patient_id, detections }).collect())
}

pub fn serialize_predictions<W: Write>(rows: &[PredictionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_HEADER)?;
    for r in rows {
        w.write_record([r.patient_id.as_str(), &format_prediction_string(&r.detections)])?;
    }
    w.flush()?;
    Ok(())
}

/// Attaches predictions to ground-truth records. Patients only present in
/// the predictions are not scored; their ids are returned.
pub fn join_predictions(truth: Vec<ImageRecord>, preds: &[PredictionRow]) -> (Vec<ImageRecord>, Vec<String>) {
    let by_id: IndexMap<&str, &[Detection]> =
        preds.iter().map(|r| (r.patient_id.as_str(), r.detections.as_slice())).collect();
    let known: std::collections::HashSet<&str> = truth.iter().map(|r| r.image_id.as_str()).collect();
    let unknown = by_id.keys().filter(|id| !known.contains(*id)).map(|s| s.to_string()).collect();
    let records = truth
        .into_iter()
        .map(|mut r| {
            r.predictions = by_id.get(r.image_id.as_str()).map(|d| d.to_vec()).unwrap_or_default();
            r
        })
        .collect();
    (records, unknown)
}

/// Writes the sweep grid as `run_label,nms_threshold,map` rows followed by a
/// `# best:` comment naming the argmax cell.
pub fn write_sweep_csv<W: Write>(res: &SweepResult, mut out: W) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["run_label", "nms_threshold", "map"])?;
        for c in &res.cells {
            w.write_record([c.run_label.clone(), format!("{:.4}", c.nms_threshold), format!("{:.6}", c.map)])?;
        }
        w.flush()?;
    }
    let b = res.best_cell();
    writeln!(out, "# best: {},{:.4},{:.6}", b.run_label, b.nms_threshold, b.map)?;
    Ok(())
}

pub fn parse_boxes<R: Read>(input: R) -> Result<Vec<BBox>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &BOXES_HEADER)?;
    let mut boxes = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let err = |message: String| Error::Parse { line, message };
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", rec.len())));
        }
        let v = rec
            .iter()
            .zip(BOXES_HEADER)
            .map(|(c, name)| parse_num(c, name))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        boxes.push(BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()))?);
    }
    Ok(boxes)
}

pub fn serialize_boxes<W: Write>(boxes: &[BBox], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOXES_HEADER)?;
    for b in boxes {
        w.write_record([b.x, b.y, b.w, b.h].map(fmt_num))?;
    }
    w.flush()?;
    Ok(())
}

/// 8-bit binary PGM (`P5`). Samples are returned raw; `maxval` must be <= 255.
pub fn read_pgm<R: BufRead>(mut input: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Pgm("only binary P5 files are supported".into()));
    }
    let mut dim =
        |what: &str| -> Result<usize> { token()?.parse::<usize>().map_err(|_| Error::Pgm(format!("bad {what}"))) };
    let width = dim("width")?;
    let height = dim("height")?;
    let maxval = dim("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm("zero-sized image".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} unsupported (8-bit only)")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(Error::Pgm(format!("raster holds {} of {n} samples", bytes.len().saturating_sub(start))));
    }
    let mut data = bytes[start..start + n].to_vec();
    if maxval != 255 {
        data.iter_mut().for_each(|v| *v = ((*v as usize * 255 + maxval / 2) / maxval) as u8);
    }
    Ok((width, height, data))
}

pub fn write_pgm<W: Write>(width: usize, height: usize, data: &[u8], mut out: W) -> Result<()> {
    assert_eq!(data.len(), width * height, "raster size mismatch");
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(data)?;
    Ok(())
}
