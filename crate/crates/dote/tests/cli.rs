//! End-to-end runs of the `dote` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dote::grid::{for_each_index, Tensor};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dote")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_pgm8(path: &Path, t: &Tensor) {
    let mut bytes = format!("P5\n{} {}\n255\n", t.dims()[1], t.dims()[0]).into_bytes();
    for &v in t.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, bytes).unwrap();
}

fn smooth_image(dims: &[usize], phase: f64) -> Tensor {
    let mut t = Tensor::zeros(dims).unwrap();
    for_each_index(dims, |idx| {
        let v = 0.5
            + 0.3 * (std::f64::consts::TAU * idx[0] as f64 / dims[0] as f64 + phase).cos()
            + 0.15 * (2.0 * std::f64::consts::TAU * idx[1] as f64 / dims[1] as f64).sin();
        t.set(idx, v.clamp(0.0, 1.0));
    });
    t
}

struct Workspace {
    dir: tempfile::TempDir,
    manifest: PathBuf,
    images: Vec<PathBuf>,
}

/// Identity-task workspace: three 16x16 images paired with themselves.
fn identity_workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    let mut images = Vec::new();
    for i in 0..3 {
        let img = smooth_image(&[16, 16], i as f64 * 0.7);
        let path = dir.path().join(format!("img{i}.pgm"));
        write_pgm8(&path, &img);
        lines.push_str(&format!("img{i}\timg{i}.pgm\timg{i}.pgm\n"));
        images.push(path);
    }
    let manifest = dir.path().join("pairs.tsv");
    std::fs::write(&manifest, lines).unwrap();
    Workspace {
        dir,
        manifest,
        images,
    }
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("train.cfg");
    std::fs::write(
        &path,
        format!(
            "k=4\nd=3\nlambda=0.002\ngamma=0.01\nmax_outer=8\nmax_inner=25\ntol=1e-2\nseed=1\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_identity_smoke() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "");
    let model = ws.dir.path().join("model.dote");
    let report = ws.dir.path().join("report.csv");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(model.exists());
    assert!(ws.dir.path().join("model.dote.manifest").exists());
    let csv = std::fs::read_to_string(&report).unwrap();
    let rows = csv.lines().count();
    assert!(rows >= 3, "expected header + >= 2 sweeps, got:\n{csv}");
}

#[test]
fn train_empty_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.tsv");
    std::fs::write(&manifest, "# no pairs\n").unwrap();
    let model = dir.path().join("model.dote");
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!model.exists());
}

#[test]
fn train_single_sweep_gives_one_report_row() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "max_outer=1\n");
    let model = ws.dir.path().join("model.dote");
    let report = ws.dir.path().join("report.csv");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    // One sweep cannot observe an objective change, so the run reports
    // non-convergence but still writes the model.
    assert_eq!(
        code(&out),
        3,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(model.exists());
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 2, "header + exactly one row:\n{csv}");
}

#[test]
fn train_rejects_unknown_config_key() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "mystery_knob=1\n");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ws.dir.path().join("m.dote").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn synth_batch_preserves_order_and_dims() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "");
    let model = ws.dir.path().join("model.dote");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let out_dir = ws.dir.path().join("synth");
    let mut args = vec![
        "synth".to_string(),
        "--model".into(),
        model.to_str().unwrap().into(),
        "--out".into(),
        out_dir.to_str().unwrap().into(),
    ];
    for img in &ws.images {
        args.push(img.to_str().unwrap().into());
    }
    let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = run(&argrefs);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for i in 0..3 {
        let produced = out_dir.join(format!("img{i}.synth.pgm"));
        assert!(produced.exists(), "missing {produced:?}");
        let rec = dote::dataio::load_image(&produced, dote::dataio::ImageFormat::Pgm).unwrap();
        assert_eq!(rec.tensor.dims(), &[16, 16]);
    }
    // The run manifest lists outputs in input order.
    let manifest = std::fs::read_to_string(out_dir.join("run.manifest")).unwrap();
    let outputs_line = manifest
        .lines()
        .find(|l| l.starts_with("outputs="))
        .unwrap();
    let positions: Vec<usize> = (0..3)
        .map(|i| outputs_line.find(&format!("img{i}.synth.pgm")).unwrap())
        .collect();
    assert!(positions[0] < positions[1] && positions[1] < positions[2]);
}

#[test]
fn synth_undersized_input_exits_2() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "d=5\nmax_outer=2\n");
    let model = ws.dir.path().join("model.dote");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(code(&out) == 0 || code(&out) == 3);

    let tiny = ws.dir.path().join("tiny.pgm");
    write_pgm8(&tiny, &smooth_image(&[4, 4], 0.0));
    let out_dir = ws.dir.path().join("synth");
    let out = run(&[
        "synth",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        tiny.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn degrade_halves_extents() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("hr.pgm");
    write_pgm8(&img, &smooth_image(&[16, 16], 0.3));
    let out_dir = dir.path().join("lr");
    let out = run(&[
        "degrade",
        "--factor",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
        "--upsampled",
        img.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lr = dote::dataio::load_image(&out_dir.join("hr.lr.pgm"), dote::dataio::ImageFormat::Pgm)
        .unwrap();
    assert_eq!(lr.tensor.dims(), &[8, 8]);
    let up = dote::dataio::load_image(&out_dir.join("hr.up.pgm"), dote::dataio::ImageFormat::Pgm)
        .unwrap();
    assert_eq!(up.tensor.dims(), &[16, 16]);
}

#[test]
fn degrade_indivisible_extent_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("odd.pgm");
    write_pgm8(&img, &smooth_image(&[15, 16], 0.0));
    let out = run(&[
        "degrade",
        "--factor",
        "2",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        img.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_self_comparison_and_mean_row() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    write_pgm8(&a, &smooth_image(&[16, 16], 0.0));
    write_pgm8(&b, &smooth_image(&[16, 16], 1.1));
    let csv_path = dir.path().join("scores.csv");

    // Self comparison: infinite PSNR sentinel and SSIM exactly 1.
    let out = run(&[
        "eval",
        "--ref",
        a.to_str().unwrap(),
        "--test",
        a.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert_eq!(row, "a,inf,1");

    // Two pairs: the avg row is the arithmetic mean of the pair rows.
    let out = run(&[
        "eval",
        "--ref",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--test",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let s1: f64 = rows[0][2].parse().unwrap();
    let s2: f64 = rows[1][2].parse().unwrap();
    let avg: f64 = rows[2][2].parse().unwrap();
    assert!((avg - (s1 + s2) / 2.0).abs() < 1e-12);
    // PSNR mean with an infinite row stays infinite.
    assert_eq!(rows[2][1], "inf");
}

#[test]
fn eval_dim_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    write_pgm8(&a, &smooth_image(&[16, 16], 0.0));
    write_pgm8(&b, &smooth_image(&[12, 16], 0.0));
    let out = run(&[
        "eval",
        "--ref",
        a.to_str().unwrap(),
        "--test",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn training_replay_is_bitwise_identical() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "seed=42\n");
    let m1 = ws.dir.path().join("m1.dote");
    let m2 = ws.dir.path().join("m2.dote");
    for m in [&m1, &m2] {
        let out = run(&[
            "train",
            "--manifest",
            ws.manifest.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            m.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    let b1 = std::fs::read(&m1).unwrap();
    let b2 = std::fs::read(&m2).unwrap();
    assert_eq!(b1, b2, "model files differ between identical runs");
}

#[test]
fn seed_flag_overrides_config() {
    let ws = identity_workspace();
    let cfg = write_config(ws.dir.path(), "seed=42\n");
    let m1 = ws.dir.path().join("m1.dote");
    let m2 = ws.dir.path().join("m2.dote");
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        m1.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = run(&[
        "train",
        "--manifest",
        ws.manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        m2.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    // Converged or capped, the model is written either way.
    assert!(code(&out) == 0 || code(&out) == 3);
    let model1 = dote::dataio::load_model(&m1).unwrap();
    let model2 = dote::dataio::load_model(&m2).unwrap();
    assert_eq!(model1.config.seed, 42);
    assert_eq!(model2.config.seed, 7);
}
