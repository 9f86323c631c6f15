//! Command-line behaviors: exit codes, file determinism, format errors,
//! meter CSV shape, formulas output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smn_cli::stream::read_label_file;

fn smn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smn"))
        .args(args)
        .output()
        .expect("failed to launch smn")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    _dir: tempfile::TempDir,
    stream: PathBuf,
    weights: PathBuf,
    root: PathBuf,
}

fn setup(levels: usize, width: usize, frames: u64) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("in.smns");
    let weights = dir.path().join("w.smnw");
    let out = smn(&[
        "gen",
        "--out",
        s(&stream),
        "--mode",
        "line",
        "--width",
        &width.to_string(),
        "--frames",
        &frames.to_string(),
        "--objects",
        "3,0.5,0.9,1",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = smn(&[
        "init-weights",
        "--out",
        s(&weights),
        "--mode",
        "line",
        "--levels",
        &levels.to_string(),
        "--width",
        &width.to_string(),
        "--classes",
        "3",
        "--seed",
        "7",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let root = dir.path().to_path_buf();
    Setup {
        _dir: dir,
        stream,
        weights,
        root,
    }
}

#[test]
fn gen_is_byte_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.smns");
    let b = dir.path().join("b.smns");
    for p in [&a, &b] {
        let out = smn(&[
            "gen",
            "--out",
            s(p),
            "--mode",
            "video",
            "--width",
            "16",
            "--height",
            "8",
            "--frames",
            "12",
            "--objects",
            "2,1.25,0.8,0;3,-0.75,0.3,1",
            "--seed",
            "9",
        ]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = smn(&["gen", "--does-not-exist"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_height_in_video_mode_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.smns");
    let out = smn(&[
        "gen",
        "--out",
        s(&p),
        "--mode",
        "video",
        "--width",
        "16",
        "--frames",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_spec_from_args_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.smnw");
    // 12 not divisible by 2^3
    let out = smn(&[
        "init-weights",
        "--out",
        s(&p),
        "--mode",
        "line",
        "--levels",
        "3",
        "--width",
        "12",
        "--classes",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_stream_magic_is_format_error() {
    let env = setup(2, 16, 20);
    let bogus = env.root.join("bogus.smns");
    fs::write(&bogus, b"XXXX_not_a_stream").unwrap();
    let out_path = env.root.join("l.smnl");
    let out = smn(&[
        "run",
        "--engine",
        "smn",
        "--weights",
        s(&env.weights),
        "--input",
        s(&bogus),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncated_stream_names_failing_frame() {
    let env = setup(2, 16, 20);
    let mut bytes = fs::read(&env.stream).unwrap();
    bytes.truncate(bytes.len() - 5); // cut into frame 19
    let cut = env.root.join("cut.smns");
    fs::write(&cut, &bytes).unwrap();
    let out_path = env.root.join("l.smnl");
    let out = smn(&[
        "run",
        "--engine",
        "shift",
        "--weights",
        s(&env.weights),
        "--input",
        s(&cut),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("frame 19"), "missing frame index: {msg}");
}

#[test]
fn stream_weight_geometry_mismatch_is_format_error() {
    let env = setup(2, 16, 20);
    let wide = env.root.join("wide.smnw");
    let out = smn(&[
        "init-weights",
        "--out",
        s(&wide),
        "--mode",
        "line",
        "--levels",
        "2",
        "--width",
        "32",
        "--classes",
        "3",
    ]);
    assert!(out.status.success());
    let out_path = env.root.join("l.smnl");
    let out = smn(&[
        "run",
        "--engine",
        "smn",
        "--weights",
        s(&wide),
        "--input",
        s(&env.stream),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn meter_csv_has_frames_times_levels_rows() {
    let env = setup(3, 16, 40);
    let labels = env.root.join("l.smnl");
    let meter = env.root.join("m.csv");
    let out = smn(&[
        "run",
        "--engine",
        "smn",
        "--weights",
        s(&env.weights),
        "--input",
        s(&env.stream),
        "--out",
        s(&labels),
        "--meter",
        s(&meter),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&meter).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 40 * 4); // frames * (levels + 1)
    assert!(rows[0].starts_with("0,0,"));
    for row in &rows {
        assert_eq!(row.split(',').count(), 4);
    }
}

#[test]
fn patch_engine_labels_at_stride_times() {
    let env = setup(2, 16, 30); // T=4, R=7, outputs at 6, 10, 14, ...
    let labels = env.root.join("p.smnl");
    let out = smn(&[
        "run",
        "--engine",
        "patch",
        "--weights",
        s(&env.weights),
        "--input",
        s(&env.stream),
        "--out",
        s(&labels),
    ]);
    assert!(out.status.success());
    let bytes = fs::read(&labels).unwrap();
    let (_, _, _, records) = read_label_file(&mut std::io::Cursor::new(&bytes)).unwrap();
    let indices: Vec<u64> = records.iter().map(|(i, _)| *i).collect();
    let expect: Vec<u64> = (0..).map(|k| 6 + 4 * k).take_while(|&i| i < 30).collect();
    assert_eq!(indices, expect);
}

#[test]
fn verify_frames_below_receptive_field_is_usage_error() {
    let env = setup(3, 16, 20);
    let out = smn(&[
        "verify",
        "--weights",
        s(&env.weights),
        "--input",
        s(&env.stream),
        "--frames",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_prints_measured_and_expected_cells() {
    let env = setup(2, 16, 30);
    let out = smn(&[
        "bench",
        "--weights",
        s(&env.weights),
        "--input",
        s(&env.stream),
        "--frames",
        "30",
        "--repeat",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("smn"));
    assert!(text.contains("shift"));
    assert!(text.contains("patch"));
    // L=2, W=16: front = 16+8+4=28, window pyramid = 4*16+2*8+1*4=84
    assert!(text.contains("28"), "missing smn cells: {text}");
    assert!(text.contains("84"), "missing shift cells: {text}");
}

#[test]
fn formulas_match_pinned_figures() {
    let line = smn(&[
        "formulas", "--mode", "line", "--levels", "5", "--width", "32",
    ]);
    assert!(line.status.success());
    let text = String::from_utf8_lossy(&line.stdout);
    for needle in ["63", "1365", "1364", "160", "444", "2016"] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }

    let video = smn(&[
        "formulas", "--mode", "video", "--levels", "5", "--width", "32", "--height", "32",
    ]);
    assert!(video.status.success());
    let text = String::from_utf8_lossy(&video.stdout);
    for needle in ["1365", "37449", "37448", "1364", "1024"] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }
}

#[test]
fn labels_omit_warming_frames() {
    let env = setup(3, 16, 40); // R_3 - 1 = 14
    let labels = env.root.join("l.smnl");
    let out = smn(&[
        "run",
        "--engine",
        "smn",
        "--weights",
        s(&env.weights),
        "--input",
        s(&env.stream),
        "--out",
        s(&labels),
    ]);
    assert!(out.status.success());
    let bytes = fs::read(&labels).unwrap();
    let (_, width, height, records) = read_label_file(&mut std::io::Cursor::new(&bytes)).unwrap();
    assert_eq!((width, height), (16, 1));
    let indices: Vec<u64> = records.iter().map(|(i, _)| *i).collect();
    assert_eq!(indices, (14..40).collect::<Vec<u64>>());
}
