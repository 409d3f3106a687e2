//! The `plaincnn` command-line tool.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 configuration error,
//! 3 data error, 4 numeric failure. Every failure prints exactly one line,
//! prefixed `error:`, on stderr.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use plaincnn::augment::{write_pnm, AugmentDraw};
use plaincnn::data::{load_cifar, load_idx, load_raw, load_stl10, split_train_val, Dataset};
use plaincnn::nn::{LayerDesc, Preset};
use plaincnn::train::{evaluate, load_checkpoint, metrics_csv, save_checkpoint, train_from};
use plaincnn::{streams, Error, Rng};
use serde_json::json;

use config::{CommandLine, DataSource, RunPlan};

/// Total parameter count reported for the CIFAR model, for comparison.
pub const CIFAR_REFERENCE_PARAMS: usize = 4_252_298;

#[derive(Debug)]
pub enum CliError {
    Gradcheck(String),
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gradcheck(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Gradcheck(m) | CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

/// Classifies a library error by where it can be fixed.
fn data_err(e: Error) -> CliError {
    match e {
        Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Consistency { .. }
        | Error::Truncated { .. }
        | Error::ShapeMismatch { .. }
        | Error::InvalidShape { .. } => CliError::Data(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "plaincnn", version, about = "Train and inspect plain convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `section.key=value`; may be repeated.
    #[arg(long = "override", value_name = "K=V", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed; takes precedence over `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, best.ckpt and summary.json.
    Train,
    /// Evaluate a checkpoint and print loss and accuracy as one JSON line.
    Eval {
        /// Defaults to best.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Write augmented training samples as PGM/PPM plus an index of the
    /// drawn parameters.
    PreviewAugment {
        #[arg(short = 'n', long, default_value_t = 16)]
        count: usize,
    },
    /// Print the layer table and parameter count of a preset.
    Params {
        /// mnist, cifar10, cifar100, svhn or stl10.
        preset: Option<String>,
    },
    /// Compare analytic gradients with finite differences in f64.
    Gradcheck {
        /// A layer name or `all`.
        #[arg(default_value = "all")]
        scope: String,
        /// Scale one scope's analytic gradients to exercise the failure path.
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return 2;
        }
    };
    let mut cmd = CommandLine {
        config: cli.common.config,
        overrides: cli.common.overrides,
        out: cli.common.out,
        seed: cli.common.seed,
        preset: None,
    };
    let result = match cli.command {
        Command::Train => cmd_train(&cmd),
        Command::Eval { checkpoint, split } => cmd_eval(&cmd, checkpoint.as_deref(), &split),
        Command::PreviewAugment { count } => cmd_preview_augment(&cmd, count),
        Command::Params { preset } => {
            cmd.preset = preset;
            cmd_params(&cmd)
        }
        Command::Gradcheck { scope, perturb } => cmd_gradcheck(&scope, perturb.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn limit(ds: Dataset, n: Option<usize>) -> Result<Dataset, CliError> {
    match n {
        Some(0) => Err(CliError::Config("dataset limits must be at least 1".into())),
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()).map_err(data_err),
        _ => Ok(ds),
    }
}

/// Loads the training and (optional) test sets, applying limits and the
/// configured intensity factor (the loaders already divide by 255).
fn load_data(plan: &RunPlan) -> Result<(Dataset, Option<Dataset>), CliError> {
    let source = plan
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("`dataset.name` is required".into()))?;
    let (train, test) = match source {
        DataSource::Idx {
            train_images,
            train_labels,
            test,
        } => {
            let train = load_idx(train_images, train_labels).map_err(data_err)?;
            let test = match test {
                Some((i, l)) if i.exists() || l.exists() => Some(load_idx(i, l).map_err(data_err)?),
                _ => None,
            };
            (train, test)
        }
        DataSource::Cifar { dir, variant } => {
            let (a, b) = load_cifar(dir, *variant).map_err(data_err)?;
            (a, Some(b))
        }
        DataSource::Stl10 { dir } => {
            let (a, b) = load_stl10(dir).map_err(data_err)?;
            (a, Some(b))
        }
        DataSource::Raw { train, test } => {
            let a = load_raw(train).map_err(data_err)?;
            let b = test.as_ref().map(load_raw).transpose().map_err(data_err)?;
            (a, b)
        }
    };
    let factor = plan.augment.load_factor() * 255.0;
    let adjust = |ds: Dataset| -> Result<Dataset, CliError> {
        if factor == 1.0 {
            Ok(ds)
        } else {
            ds.rescaled(factor).map_err(data_err)
        }
    };
    let train = adjust(limit(train, plan.train_limit)?)?;
    let test = test.map(|t| limit(t, plan.test_limit)).transpose()?.map(adjust).transpose()?;
    for ds in std::iter::once(&train).chain(test.as_ref()) {
        if ds.image_shape() != plan.spec.input_shape() || ds.classes() != plan.spec.classes() {
            return Err(CliError::Data(format!(
                "dataset `{}` has images {:?} and {} classes; preset {} expects {:?} and {}",
                ds.name(),
                ds.image_shape(),
                ds.classes(),
                plan.preset,
                plan.spec.input_shape(),
                plan.spec.classes()
            )));
        }
    }
    Ok((train, test))
}

fn cmd_train(cmd: &CommandLine) -> Result<(), CliError> {
    let plan = config::resolve(cmd, true)?;
    let (full, test) = load_data(&plan)?;
    let (train_ds, val_ds) = split_train_val(&full, plan.train.val_fraction, plan.train.seed).map_err(data_err)?;
    create_dir(&plan.out_dir)?;

    println!(
        "training {} ({} parameters) on {} samples, validating on {}",
        plan.preset,
        plan.spec.count_parameters(),
        train_ds.len(),
        val_ds.len()
    );
    let init = plaincnn::train::initial_parameters(&plan.spec, plan.train.seed);
    let outcome = train_from(&plan.train, &plan.spec, init, &train_ds, &val_ds, &plan.augment, |r| {
        println!(
            "epoch {} train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4} ({:.1}s)",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
        );
    })
    .map_err(data_err)?;
    let mut history = outcome.history;

    let test_eval = match (&test, plan.evaluate_test && history.aborted.is_none()) {
        (Some(t), true) => Some(evaluate(&plan.spec, &outcome.params, t, plan.train.batch_size).map_err(data_err)?),
        _ => None,
    };
    history.test_acc = test_eval.map(|(_, acc)| acc);

    let mut csv_history = history.clone();
    if !plan.record_time {
        for r in &mut csv_history.records {
            r.seconds = 0.0;
        }
    }
    write(&plan.out_dir.join("metrics.csv"), metrics_csv(&csv_history))?;
    save_checkpoint(&plan.spec, &outcome.params, plan.out_dir.join("best.ckpt")).map_err(data_err)?;
    let last = history.records.last();
    let summary = json!({
        "preset": plan.preset.name(),
        "paradigm": plan.paradigm.kind(),
        "parameters": plan.spec.count_parameters(),
        "seed": plan.train.seed,
        "epochs_run": history.records.len(),
        "stopped_epoch": history.stopped_epoch,
        "early_stopped": history.early_stopped,
        "best_epoch": history.best_epoch,
        "best_val_acc": history.best_val_acc,
        "final_train_acc": last.map(|r| r.train_acc),
        "final_val_acc": last.map(|r| r.val_acc),
        "test_loss": test_eval.map(|(loss, _)| loss),
        "test_acc": history.test_acc,
        "aborted": history.aborted.as_ref().map(|a| json!({"epoch": a.epoch, "batch": a.batch, "reason": a.reason})),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write(&plan.out_dir.join("summary.json"), text + "\n")?;

    if let Some(a) = &history.aborted {
        return Err(CliError::Numeric(format!(
            "non-finite value at epoch {} batch {}: {}",
            a.epoch, a.batch, a.reason
        )));
    }
    if let Some(acc) = history.test_acc {
        println!("test_acc {acc:.4}");
    }
    println!("wrote {}", plan.out_dir.display());
    Ok(())
}

fn cmd_eval(cmd: &CommandLine, checkpoint: Option<&Path>, split: &str) -> Result<(), CliError> {
    let plan = config::resolve(cmd, true)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| plan.out_dir.join("best.ckpt"));
    let (spec, params) = load_checkpoint(&path).map_err(|e| CliError::Data(e.to_string()))?;
    let (full, test) = load_data(&plan)?;
    let ds = match split {
        "test" => test.ok_or_else(|| CliError::Data("no test split configured".into()))?,
        _ => {
            let (train, val) = split_train_val(&full, plan.train.val_fraction, plan.train.seed).map_err(data_err)?;
            if split == "val" {
                val
            } else {
                train
            }
        }
    };
    if ds.image_shape() != spec.input_shape() || ds.classes() != spec.classes() {
        return Err(CliError::Data(format!(
            "checkpoint {} expects images {:?} with {} classes, dataset has {:?} with {}",
            path.display(),
            spec.input_shape(),
            spec.classes(),
            ds.image_shape(),
            ds.classes()
        )));
    }
    let (loss, acc) = evaluate(&spec, &params, &ds, plan.train.batch_size).map_err(data_err)?;
    let line = json!({"split": split, "samples": ds.len(), "loss": loss, "accuracy": acc});
    println!("{line}");
    Ok(())
}

fn cmd_preview_augment(cmd: &CommandLine, count: usize) -> Result<(), CliError> {
    let plan = config::resolve(cmd, true)?;
    let out = match &cmd.out {
        Some(o) => o.clone(),
        None => plan.out_dir.join("preview"),
    };
    create_dir(&out)?;
    let (train, _) = load_data(&plan)?;
    if count > train.len() {
        return Err(CliError::Config(format!(
            "asked for {count} previews from {} training images",
            train.len()
        )));
    }
    let [c, h, w] = train.image_shape();
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let mut index = String::new();
    for i in 0..count {
        let mut rng = Rng::derive(plan.train.seed, &[streams::PREVIEW, i as u64]);
        let draw = AugmentDraw::sample(&plan.augment, &mut rng);
        let map = draw.to_map(w, h).map_err(data_err)?;
        let img = train.images().slice_outer(i, 1).and_then(|t| t.reshape(&[c, h, w])).map_err(data_err)?;
        let warped = plaincnn::augment::warp_image(&img, &map, 0.0).map_err(data_err)?;
        let file = format!("sample_{i:04}.{ext}");
        write_pnm(&warped, &out.join(&file)).map_err(data_err)?;
        writeln!(
            index,
            "{i} {file} label={} rotation_deg={} shear={} shift_x={} shift_y={} zoom_x={} zoom_y={}",
            train.labels()[i],
            draw.rotation_deg,
            draw.shear,
            draw.shift_x,
            draw.shift_y,
            draw.zoom_x,
            draw.zoom_y
        )
        .expect("writing to a String");
    }
    write(&out.join("index.txt"), index)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn cmd_params(cmd: &CommandLine) -> Result<(), CliError> {
    let plan = config::resolve(cmd, false)?;
    let spec = &plan.spec;
    let mut out = format!("{:<6} {:<24} {:<16} {:>12}\n", "layer", "kind", "output", "params");
    let shapes = spec.shapes();
    let mut total = 0;
    for (i, (layer, shape)) in spec.layers().iter().zip(&shapes).enumerate() {
        let count = spec.layer_parameter_count(i);
        total += count;
        let dims: Vec<String> = shape.output.iter().map(usize::to_string).collect();
        let kind = match layer {
            LayerDesc::SoftmaxClassifier { classes } => format!("softmax {classes}"),
            other => other.to_string(),
        };
        writeln!(out, "{i:<6} {kind:<24} {:<16} {count:>12}", dims.join("x")).expect("writing to a String");
    }
    writeln!(out, "total {total}").expect("writing to a String");
    if matches!(plan.preset, Preset::Cifar10 | Preset::Cifar100) {
        let delta = total as i64 - CIFAR_REFERENCE_PARAMS as i64;
        writeln!(out, "reference {CIFAR_REFERENCE_PARAMS} delta {delta:+}").expect("writing to a String");
    }
    print!("{out}");
    Ok(())
}

fn cmd_gradcheck(scope: &str, perturb: Option<&str>) -> Result<(), CliError> {
    let results = plaincnn::verify::gradcheck(scope, perturb).map_err(|e| CliError::Config(e.to_string()))?;
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<30} max_rel_error {:.3e} tolerance {:.0e}",
            r.name, r.max_rel_error, r.tolerance
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(format!("gradient check failed: {}", failed.join(", "))))
    }
}
