use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lungdet::io::{parse_boxes, parse_predictions, read_pgm};

fn lungdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungdet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TRUTH: &str = "patientId,x,y,width,height,Target\np1,0,0,100,100,1\np2,,,,,0\np3,200,200,50,60,1\n";

#[test]
fn evaluate_perfect_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write(dir.path(), "truth.csv", TRUTH);
    let perfect =
        write(dir.path(), "perfect.csv", "patientId,PredictionString\np1,1.0 0 0 100 100\np2,\np3,1.0 200 200 50 60\n");
    assert_eq!(stdout(&lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&perfect)])), "1.000000\n");

    let empty = write(dir.path(), "empty.csv", "patientId,PredictionString\np1,\np3,\n");
    assert_eq!(stdout(&lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&empty)])), "0.000000\n");
}

#[test]
fn evaluate_partial_overlap_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write(dir.path(), "truth.csv", "patientId,x,y,width,height,Target\np1,0,0,100,100,1\n");
    let pred = write(dir.path(), "pred.csv", "patientId,PredictionString\np1,0.9 10 0 100 80\n");
    let per_image = dir.path().join("per_image.csv");
    let out = lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&pred), "--per-image", s(&per_image)]);
    assert_eq!(stdout(&out), "0.750000\n");
    assert_eq!(fs::read_to_string(per_image).unwrap(), "patientId,ap\np1,0.750000\n");

    // a ladder stopping at 0.65 makes the same prediction a full hit
    let out = lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&pred), "--thresholds", "0.4,0.5,0.65"]);
    assert_eq!(stdout(&out), "1.000000\n");

    let cfg = write(dir.path(), "cfg.json", r#"{"ap": {"thresholds": [0.7]}}"#);
    let out = lungdet(&["evaluate", "--config", s(&cfg), "--truth", s(&truth), "--pred", s(&pred)]);
    assert_eq!(stdout(&out), "0.000000\n");
}

#[test]
fn evaluate_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write(dir.path(), "truth.csv", "patientId,x,y,width,height,Target\np1,0,0,,100,1\n");
    let pred = write(dir.path(), "pred.csv", "patientId,PredictionString\np1,0.9 10 0 100 80\n");
    let out = lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&pred)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let truth = write(dir.path(), "truth2.csv", TRUTH);
    let bad = write(dir.path(), "bad.csv", "patientId,PredictionString\np1,0.9 10 0 100\n");
    let out = lungdet(&["evaluate", "--truth", s(&truth), "--pred", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p1"));

    let out = lungdet(&["evaluate", "--truth", "/nonexistent/t.csv", "--pred", s(&bad)]);
    assert!(!out.status.success());
}

#[test]
fn nms_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let pred =
        write(dir.path(), "pred.csv", "patientId,PredictionString\np1,0.8 0 0 10 10 0.9 0 0 10 10 0.5 50 50 5 5\n");
    let out_path = dir.path().join("out.csv");
    stdout(&lungdet(&["nms", "--pred", s(&pred), "--threshold", "0.5", "-o", s(&out_path)]));
    assert_eq!(
        fs::read_to_string(out_path).unwrap(),
        "patientId,PredictionString\np1,0.9000 0.0000 0.0000 10.0000 10.0000 0.5000 50.0000 50.0000 5.0000 5.0000\n"
    );
}

#[test]
fn sweep_grid_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write(dir.path(), "truth.csv", TRUTH);
    let preds = "patientId,PredictionString\np1,0.9 0 0 100 100 0.8 5 5 100 100\np3,0.7 200 200 50 60\n";
    let a = write(dir.path(), "a.csv", preds);
    let b = write(dir.path(), "b.csv", preds);

    let one =
        stdout(&lungdet(&["sweep", "--pred", s(&a), "--truth", s(&truth), "--nms-min", "0.5", "--nms-max", "0.5"]));
    let lines: Vec<&str> = one.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "run_label,nms_threshold,map");
    assert!(lines[1].starts_with("a.csv,0.5000,"));
    assert!(lines[2].starts_with("# best: a.csv,0.5000,"));

    let two = stdout(&lungdet(&[
        "sweep",
        "--pred",
        s(&a),
        s(&b),
        "--truth",
        s(&truth),
        "--nms-min",
        "0.3",
        "--nms-max",
        "0.9",
        "--nms-step",
        "0.3",
    ]));
    let rows: Vec<Vec<&str>> =
        two.lines().skip(1).filter(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for k in 0..3 {
        assert_eq!(rows[k][0], "a.csv");
        assert_eq!(rows[k + 3][0], "b.csv");
        assert_eq!(rows[k][1], rows[k + 3][1]);
        assert_eq!(rows[k][2], rows[k + 3][2]);
    }
    assert_eq!(
        two,
        stdout(&lungdet(&[
            "sweep",
            "--pred",
            s(&a),
            s(&b),
            "--truth",
            s(&truth),
            "--nms-min",
            "0.3",
            "--nms-max",
            "0.9",
            "--nms-step",
            "0.3",
        ]))
    );

    let empty = lungdet(&["sweep", "--pred", s(&a), "--truth", s(&truth), "--nms-min", "0.9", "--nms-max", "0.3"]);
    assert!(!empty.status.success());
}

#[test]
fn fuse_passthrough_idempotence_and_rescale() {
    let dir = tempfile::tempdir().unwrap();
    let input = "patientId,PredictionString\np1,0.9000 10.0000 10.0000 30.0000 40.0000 0.4000 100.0000 100.0000 20.0000 20.0000\np2,\n";
    let one = write(dir.path(), "one.csv", input);
    let out1 = dir.path().join("out1.csv");
    stdout(&lungdet(&[
        "fuse",
        "--pred",
        s(&one),
        "--mode",
        "rescale",
        "--rescale-factor",
        "1.0",
        "--nms",
        "1.0",
        "-o",
        s(&out1),
    ]));
    assert_eq!(fs::read_to_string(&out1).unwrap(), input);

    let out4 = dir.path().join("out4.csv");
    let p = s(&one);
    stdout(&lungdet(&[
        "fuse",
        "--pred",
        p,
        p,
        p,
        p,
        "--mode",
        "rescale",
        "--rescale-factor",
        "1.0",
        "--nms",
        "1.0",
        "-o",
        s(&out4),
    ]));
    assert_eq!(fs::read_to_string(&out4).unwrap(), input);

    // percentile mode too
    let (pa, pb) = (dir.path().join("pa.csv"), dir.path().join("pb.csv"));
    stdout(&lungdet(&["fuse", "--pred", p, "--nms", "0.5", "-o", s(&pa)]));
    stdout(&lungdet(&["fuse", "--pred", p, p, p, p, "--nms", "0.5", "-o", s(&pb)]));
    assert_eq!(fs::read_to_string(pa).unwrap(), fs::read_to_string(pb).unwrap());

    let single = write(dir.path(), "single.csv", "patientId,PredictionString\np1,0.9 0 0 80 80\n");
    let shrunk = dir.path().join("shrunk.csv");
    stdout(&lungdet(&[
        "fuse",
        "--pred",
        s(&single),
        "--mode",
        "rescale",
        "--rescale-factor",
        "0.875",
        "--nms",
        "0.5",
        "-o",
        s(&shrunk),
    ]));
    let rows = parse_predictions(fs::File::open(shrunk).unwrap()).unwrap();
    let b = rows[0].detections[0].bbox;
    assert_eq!((b.x, b.y, b.w, b.h), (5.0, 5.0, 70.0, 70.0));
}

#[test]
fn fuse_warns_on_patient_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "patientId,PredictionString\np1,0.9 0 0 80 80\n");
    let b = write(dir.path(), "b.csv", "patientId,PredictionString\np2,0.9 0 0 80 80\n");
    let out = dir.path().join("o.csv");
    let o = lungdet(&["fuse", "--pred", s(&a), s(&b), "--nms", "0.5", "-o", s(&out)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert_eq!(parse_predictions(fs::File::open(out).unwrap()).unwrap().len(), 2);
}

fn gradient_pgm(dir: &Path) -> PathBuf {
    let (w, h) = (96usize, 80usize);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h).map(|i| ((i % w) * 2 + (i / w)) as u8));
    let p = dir.join("img.pgm");
    fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn augment_none_is_byte_identity() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_pgm(dir.path());
    let boxes = write(
        dir.path(),
        "boxes.csv",
        "x,y,width,height\n10.0000,12.0000,30.0000,20.0000\n50.5000,40.0000,20.0000,25.0000\n",
    );
    let out = dir.path().join("out");
    stdout(&lungdet(&[
        "augment",
        "--image",
        s(&img),
        "--boxes",
        s(&boxes),
        "--preset",
        "none",
        "--seed",
        "5",
        "-o",
        s(&out),
    ]));
    assert_eq!(fs::read(out.join("image.pgm")).unwrap(), fs::read(&img).unwrap());
    assert_eq!(fs::read_to_string(out.join("boxes.csv")).unwrap(), fs::read_to_string(&boxes).unwrap());
}

#[test]
fn augment_seeded_and_custom_rotation_tighter() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_pgm(dir.path());
    let boxes = write(dir.path(), "boxes.csv", "x,y,width,height\n20,15,30,25\n50,30,25,30\n");
    let run = |preset: &str, name: &str| {
        let out = dir.path().join(name);
        stdout(&lungdet(&[
            "augment",
            "--image",
            s(&img),
            "--boxes",
            s(&boxes),
            "--preset",
            preset,
            "--seed",
            "42",
            "-o",
            s(&out),
        ]));
        (fs::read(out.join("image.pgm")).unwrap(), fs::read(out.join("boxes.csv")).unwrap())
    };
    let first = run("heavy", "h1");
    assert_eq!(first, run("heavy", "h2"));
    let (w, h, _) = read_pgm(&first.0[..]).unwrap();
    assert_eq!((w, h), (96, 80));

    let custom = run("heavy_custom_rotation", "c1");
    let corners = parse_boxes(&first.1[..]).unwrap();
    let custom = parse_boxes(&custom.1[..]).unwrap();
    assert_eq!(corners.len(), custom.len());
    for (c, k) in corners.iter().zip(&custom) {
        // both serialized to 4 decimals
        assert!(k.x >= c.x - 1e-4 && k.y >= c.y - 1e-4);
        assert!(k.x + k.w <= c.x + c.w + 2e-4 && k.y + k.h <= c.y + c.h + 2e-4);
    }

    let out = dir.path().join("resized");
    stdout(&lungdet(&[
        "augment",
        "--image",
        s(&img),
        "--boxes",
        s(&boxes),
        "--preset",
        "light",
        "--resize",
        "64",
        "-o",
        s(&out),
    ]));
    let (w, h, _) = read_pgm(&fs::read(out.join("image.pgm")).unwrap()[..]).unwrap();
    assert_eq!((w, h), (64, 64));
}

#[test]
fn augment_unknown_preset_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let img = gradient_pgm(dir.path());
    let boxes = write(dir.path(), "boxes.csv", "x,y,width,height\n");
    let o = lungdet(&[
        "augment",
        "--image",
        s(&img),
        "--boxes",
        s(&boxes),
        "--preset",
        "medium",
        "-o",
        s(&dir.path().join("o")),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["none", "light", "heavy", "heavy_no_rotation", "heavy_custom_rotation"] {
        assert!(err.contains(name), "{err}");
    }
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bench_reports_csv() {
    let out = stdout(&lungdet(&["bench", "--images", "1", "--boxes-per-image", "1"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "stage,images,boxes_per_image,seconds");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        let secs: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(secs > 0.0);
    }
    let big = stdout(&lungdet(&["bench", "--images", "1000", "--boxes-per-image", "10"]));
    assert!(big.lines().nth(1).unwrap().starts_with("metric,1000,10,"));

    assert!(!lungdet(&["bench", "--images", "0"]).status.success());
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!lungdet(&[]).status.success());
    assert!(!lungdet(&["evaluate", "--truth", "x"]).status.success());
}
