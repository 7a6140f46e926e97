//! Command-line front end: train, synth, degrade, eval.
//!
//! Every run writes one plain-text run manifest next to its primary
//! output, recording the command, resolved inputs and outputs, the
//! config snapshot and the seed, so a run can be replayed verbatim.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::dataio::{
    load_dataset, load_image, load_model, save_model, write_image_like, ImageFormat,
};
use crate::error::{DoteError, Result};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::synthesis::{clamp01, sr_degrade, sr_upsample, synthesize};
use crate::train::train;
use crate::SolverConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NONCONVERGED: i32 = 3;

/// Dual convolutional filter learning for paired image domains.
#[derive(Debug, Parser)]
#[command(name = "dote", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a manifest of registered image pairs.
    Train(TrainArgs),
    /// Synthesize target-domain images from source-domain inputs.
    Synth(SynthArgs),
    /// Bicubically downsample images (optionally also write the
    /// re-upsampled, grid-registered copies).
    Degrade(DegradeArgs),
    /// Report PSNR and SSIM for reference/test image pairs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest of `id<TAB>source<TAB>target` lines.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report CSV (default: `<out>.report.csv`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Source images (.pgm or native tensors).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    /// Integer downsampling factor.
    #[arg(long)]
    pub factor: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the re-upsampled image on the original grid.
    #[arg(long)]
    pub upsampled: bool,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference images, one per test image.
    #[arg(long = "ref", num_args = 1.., required = true)]
    pub reference: Vec<PathBuf>,
    /// Test images.
    #[arg(long, num_args = 1.., required = true)]
    pub test: Vec<PathBuf>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_run_manifest(path: &Path, lines: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        let _ = writeln!(text, "{k}={v}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_path_for(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".manifest");
    primary_output.with_file_name(name)
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => SolverConfig::parse_key_values(&std::fs::read_to_string(path)?)?,
        None => SolverConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dataset = load_dataset(&args.manifest)?;
    let (model, report) = train(&dataset, &cfg)?;
    save_model(&args.out, &model)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| manifest_path_for(&args.out).with_extension("report.csv"));
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    std::fs::write(&report_path, csv)?;

    write_run_manifest(
        &manifest_path_for(&args.out),
        &[
            ("command", "train".into()),
            ("library_version", env!("CARGO_PKG_VERSION").into()),
            ("input_manifest", args.manifest.display().to_string()),
            ("out_model", args.out.display().to_string()),
            ("report_csv", report_path.display().to_string()),
            ("seed", cfg.seed.to_string()),
            ("converged", report.converged.to_string()),
            ("wall_time_s", started.elapsed().as_secs_f64().to_string()),
            ("config", String::new()),
        ],
    )?;
    // Config snapshot appended in the same key=value dialect.
    let mut full = std::fs::read_to_string(manifest_path_for(&args.out))?;
    full.push_str(&cfg.to_key_values());
    std::fs::write(manifest_path_for(&args.out), full)?;

    if report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: objective still changing after {} sweeps; best model written",
            cfg.max_outer
        );
        Ok(EXIT_NONCONVERGED)
    }
}

fn output_name(input: &Path, tag: &str) -> String {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("dote");
    format!("{stem}.{tag}.{ext}")
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let started = Instant::now();
    let model = load_model(&args.model)?;
    std::fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for input in &args.inputs {
        let record = load_image(input, ImageFormat::from_path(input))?;
        let result = synthesize(&model, &record.tensor, &model.config)?;
        let out_path = args.out.join(output_name(input, "synth"));
        write_image_like(&out_path, &result, &record)?;
        outputs.push(out_path);
    }
    write_run_manifest(
        &args.out.join("run.manifest"),
        &[
            ("command", "synth".into()),
            ("library_version", env!("CARGO_PKG_VERSION").into()),
            ("model", args.model.display().to_string()),
            (
                "inputs",
                args.inputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "outputs",
                outputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("seed", model.config.seed.to_string()),
            ("wall_time_s", started.elapsed().as_secs_f64().to_string()),
        ],
    )?;
    Ok(EXIT_OK)
}

fn cmd_degrade(args: &DegradeArgs) -> Result<i32> {
    let started = Instant::now();
    std::fs::create_dir_all(&args.out)?;
    let mut outputs = Vec::new();
    for input in &args.inputs {
        let record = load_image(input, ImageFormat::from_path(input))?;
        let lr = sr_degrade(&record.tensor, args.factor)?;
        let lr_path = args.out.join(output_name(input, "lr"));
        write_image_like(&lr_path, &clamp01(&lr), &record)?;
        outputs.push(lr_path);
        if args.upsampled {
            let up = sr_upsample(&lr, args.factor)?;
            let up_path = args.out.join(output_name(input, "up"));
            write_image_like(&up_path, &clamp01(&up), &record)?;
            outputs.push(up_path);
        }
    }
    write_run_manifest(
        &args.out.join("run.manifest"),
        &[
            ("command", "degrade".into()),
            ("library_version", env!("CARGO_PKG_VERSION").into()),
            ("factor", args.factor.to_string()),
            (
                "inputs",
                args.inputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "outputs",
                outputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("wall_time_s", started.elapsed().as_secs_f64().to_string()),
        ],
    )?;
    Ok(EXIT_OK)
}

/// Builds the eval CSV: one `id,psnr_db,ssim` row per pair plus the
/// arithmetic-mean `avg` row.
pub fn eval_csv(pairs: &[(String, f64, f64)]) -> String {
    let mut out = String::from("id,psnr_db,ssim\n");
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (id, p, s) in pairs {
        let _ = writeln!(out, "{id},{p},{s}");
        psnr_sum += p;
        ssim_sum += s;
    }
    let n = pairs.len() as f64;
    let _ = writeln!(out, "avg,{},{}", psnr_sum / n, ssim_sum / n);
    out
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    if args.reference.len() != args.test.len() {
        return Err(DoteError::invalid(format!(
            "{} reference images but {} test images",
            args.reference.len(),
            args.test.len()
        )));
    }
    let params = SsimParams::default();
    let mut rows = Vec::new();
    for (r, t) in args.reference.iter().zip(&args.test) {
        let reference = load_image(r, ImageFormat::from_path(r))?;
        let test = load_image(t, ImageFormat::from_path(t))?;
        let p = psnr(&reference.tensor, &test.tensor, params.peak)?;
        let s = ssim(&reference.tensor, &test.tensor, &params)?;
        let id = t
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("pair")
            .to_string();
        rows.push((id, p, s));
    }
    let csv = eval_csv(&rows);
    eprintln!("psnr peak = {} (normalized intensities)", params.peak);
    let manifest_target = match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            manifest_path_for(path)
        }
        None => {
            print!("{csv}");
            PathBuf::from("eval.manifest")
        }
    };
    write_run_manifest(
        &manifest_target,
        &[
            ("command", "eval".into()),
            ("library_version", env!("CARGO_PKG_VERSION").into()),
            (
                "reference",
                args.reference
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "test",
                args.test
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("psnr_peak", params.peak.to_string()),
        ],
    )?;
    Ok(EXIT_OK)
}

/// Runs a parsed command and maps errors onto exit codes.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Degrade(args) => cmd_degrade(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_VALIDATION
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_csv_mean_row_is_arithmetic_mean() {
        let rows = vec![
            ("a".to_string(), 30.0, 0.9),
            ("b".to_string(), 40.0, 0.8),
            ("c".to_string(), 20.0, 1.0),
        ];
        let csv = eval_csv(&rows);
        let avg_line = csv.lines().last().unwrap();
        let fields: Vec<&str> = avg_line.split(',').collect();
        assert_eq!(fields[0], "avg");
        assert!((fields[1].parse::<f64>().unwrap() - 30.0).abs() < 1e-12);
        assert!((fields[2].parse::<f64>().unwrap() - 0.9).abs() < 1e-12);
        assert!(csv.starts_with("id,psnr_db,ssim\n"));
    }

    #[test]
    fn eval_csv_propagates_infinite_psnr() {
        let rows = vec![("same".to_string(), f64::INFINITY, 1.0)];
        let csv = eval_csv(&rows);
        assert!(csv.contains("same,inf,1"));
        assert!(csv.lines().last().unwrap().starts_with("avg,inf"));
    }

    #[test]
    fn run_manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path_for(Path::new("/tmp/model.dote")),
            Path::new("/tmp/model.dote.manifest")
        );
    }
}
