//! Run configuration: a JSON document with `dataset`, `model`, `augment`,
//! `train` and `output` sections. Every field is optional and defaults from
//! the preset; unknown keys are rejected. `--override a.b=v` edits the
//! document before it is checked, with `v` parsed as JSON when possible and
//! taken as a string otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use plaincnn::augment::AugmentConfig;
use plaincnn::data::CifarVariant;
use plaincnn::nn::{build_preset_with, ArchitectureSpec, DropoutParadigm, HeadDropout, Placement, Preset, PresetOverrides};
use plaincnn::train::TrainConfig;
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// `mnist`, `cifar10`, `cifar100`, `stl10`, `svhn` or `raw`.
    pub name: Option<String>,
    pub dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub val_fraction: Option<f64>,
    /// Keep only the first N training images (before the split).
    pub train_limit: Option<usize>,
    /// Keep only the first N test images.
    pub test_limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub paradigm: Option<String>,
    pub fc_rate: Option<f64>,
    #[serde(alias = "spatial_rate")]
    pub pool_rate: Option<f64>,
    pub placement: Option<String>,
    pub fc_width: Option<usize>,
    pub conv_widths: Option<Vec<usize>>,
    /// `each` or `last`.
    pub head_dropout: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    /// `false` switches every geometric technique off.
    pub enabled: Option<bool>,
    pub rotation_deg: Option<f64>,
    pub shear: Option<f64>,
    pub shift_frac: Option<f64>,
    pub zoom_delta: Option<f64>,
    pub rescale: Option<f64>,
    pub rotation_enabled: Option<bool>,
    pub shear_enabled: Option<bool>,
    pub shift_enabled: Option<bool>,
    pub zoom_enabled: Option<bool>,
    pub rescale_enabled: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub baseline_acc: Option<f64>,
    pub patience: Option<usize>,
    pub min_epochs: Option<usize>,
    /// Evaluate the best parameters on the test split after training.
    pub evaluate_test: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Write wall-clock seconds into `metrics.csv`. Off by default so that
    /// repeated runs produce identical files.
    pub record_time: Option<bool>,
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Cifar { dir: PathBuf, variant: CifarVariant },
    Stl10 { dir: PathBuf },
    Raw { train: PathBuf, test: Option<PathBuf> },
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub preset: Preset,
    pub paradigm: DropoutParadigm,
    pub spec: ArchitectureSpec,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub data: Option<DataSource>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub out_dir: PathBuf,
    pub record_time: bool,
    pub evaluate_test: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct CommandLine {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Sets `path` (dot separated) in `doc` to `raw`, creating objects as needed.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override key `{path}` has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("override `{path}`: `{key}` is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| config_err(format!("override `{path}`: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the config file (if any), applies overrides and parses it.
/// Returns the parsed file and the directory relative paths resolve against.
pub fn load_file(cmd: &CommandLine) -> Result<(RunConfigFile, PathBuf), CliError> {
    let (mut doc, base) = match &cmd.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (doc, base)
        }
        None => (Value::Object(Default::default()), PathBuf::new()),
    };
    if !doc.is_object() {
        return Err(config_err("the config document must be a JSON object"));
    }
    for o in &cmd.overrides {
        apply_override(&mut doc, o)?;
    }
    let file: RunConfigFile = serde_json::from_value(doc).map_err(|e| config_err(format!("config: {e}")))?;
    Ok((file, base))
}

fn parse<T: std::str::FromStr<Err = plaincnn::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: plaincnn::Error| config_err(e.to_string()))
}

fn resolve_paradigm(preset: Preset, m: &ModelSection) -> Result<DropoutParadigm, CliError> {
    let default = preset.default_paradigm();
    let (def_pool, def_fc) = match default {
        DropoutParadigm::RegularEverywhere { pool_rate, fc_rate } => (pool_rate, fc_rate),
        DropoutParadigm::RegularAfterFc { fc_rate } => (0.125, fc_rate),
        DropoutParadigm::SpatialAtPools { pool_rate, .. } => (pool_rate, 0.4),
        DropoutParadigm::Combined { pool_rate, fc_rate, .. } => (pool_rate, fc_rate),
    };
    let kind = m.paradigm.as_deref().unwrap_or(default.kind());
    let placement = match &m.placement {
        Some(p) => parse::<Placement>(p)?,
        None => Placement::BeforePool,
    };
    DropoutParadigm::from_parts(
        kind,
        m.pool_rate.unwrap_or(def_pool),
        m.fc_rate.unwrap_or(def_fc),
        placement,
    )
    .map_err(|e| config_err(e.to_string()))
}

fn resolve_augment(preset: Preset, a: &AugmentSection) -> Result<AugmentConfig, CliError> {
    let mut c = AugmentConfig::for_preset(preset);
    c.rotation_deg = a.rotation_deg.unwrap_or(c.rotation_deg);
    c.shear = a.shear.unwrap_or(c.shear);
    c.shift_frac = a.shift_frac.unwrap_or(c.shift_frac);
    c.zoom_delta = a.zoom_delta.unwrap_or(c.zoom_delta);
    c.rescale = a.rescale.unwrap_or(c.rescale);
    c.rotation_enabled = a.rotation_enabled.unwrap_or(c.rotation_enabled);
    c.shear_enabled = a.shear_enabled.unwrap_or(c.shear_enabled);
    c.shift_enabled = a.shift_enabled.unwrap_or(c.shift_enabled);
    c.zoom_enabled = a.zoom_enabled.unwrap_or(c.zoom_enabled);
    c.rescale_enabled = a.rescale_enabled.unwrap_or(c.rescale_enabled);
    if a.enabled == Some(false) {
        c.rotation_enabled = false;
        c.shear_enabled = false;
        c.shift_enabled = false;
        c.zoom_enabled = false;
    }
    c.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(c)
}

fn resolve_train(preset: Preset, t: &TrainSection, val_fraction: Option<f64>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut c = TrainConfig::for_preset(preset);
    c.learning_rate = t.lr.unwrap_or(c.learning_rate);
    c.momentum = t.momentum.unwrap_or(c.momentum);
    c.batch_size = t.batch_size.unwrap_or(c.batch_size);
    c.max_epochs = t.max_epochs.unwrap_or(c.max_epochs);
    c.seed = seed.or(t.seed).unwrap_or(c.seed);
    c.val_fraction = val_fraction.unwrap_or(c.val_fraction);
    c.early_stop.baseline_acc = t.baseline_acc.unwrap_or(c.early_stop.baseline_acc);
    c.early_stop.patience = t.patience.unwrap_or(c.early_stop.patience);
    c.early_stop.min_epochs = t.min_epochs.unwrap_or(c.early_stop.min_epochs);
    c.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(c)
}

fn resolve_data(name: &str, d: &DatasetSection, base: &Path) -> Result<DataSource, CliError> {
    let at = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
    let dir = d.dir.as_ref().map(at);
    let need_dir = || dir.clone().ok_or_else(|| config_err(format!("dataset `{name}` needs `dataset.dir`")));
    Ok(match name {
        "mnist" => {
            let pick = |explicit: &Option<PathBuf>, default: &str| -> Result<PathBuf, CliError> {
                match (explicit, &dir) {
                    (Some(p), _) => Ok(at(p)),
                    (None, Some(dir)) => Ok(dir.join(default)),
                    (None, None) => Err(config_err(
                        "dataset `mnist` needs `dataset.dir` or explicit image and label paths",
                    )),
                }
            };
            let train_images = pick(&d.train_images, "train-images-idx3-ubyte")?;
            let train_labels = pick(&d.train_labels, "train-labels-idx1-ubyte")?;
            let test = match (pick(&d.test_images, "t10k-images-idx3-ubyte"), pick(&d.test_labels, "t10k-labels-idx1-ubyte")) {
                (Ok(i), Ok(l)) => Some((i, l)),
                _ => None,
            };
            DataSource::Idx {
                train_images,
                train_labels,
                test,
            }
        }
        "cifar10" => DataSource::Cifar {
            dir: need_dir()?,
            variant: CifarVariant::Cifar10,
        },
        "cifar100" => DataSource::Cifar {
            dir: need_dir()?,
            variant: CifarVariant::Cifar100,
        },
        "stl10" => DataSource::Stl10 { dir: need_dir()? },
        "svhn" | "raw" => DataSource::Raw {
            train: d
                .train_manifest
                .as_ref()
                .map(at)
                .ok_or_else(|| config_err(format!("dataset `{name}` needs `dataset.train_manifest`")))?,
            test: d.test_manifest.as_ref().map(at),
        },
        other => {
            return Err(config_err(format!(
                "unknown dataset `{other}` (expected mnist, cifar10, cifar100, stl10, svhn or raw)"
            )))
        }
    })
}

/// Resolves a run from the command line. A dataset is required only when
/// `need_data` is set.
pub fn resolve(cmd: &CommandLine, need_data: bool) -> Result<RunPlan, CliError> {
    let (file, base) = load_file(cmd)?;
    let preset_name = cmd
        .preset
        .clone()
        .or_else(|| file.model.preset.clone())
        .or_else(|| file.dataset.name.clone().filter(|n| n != "raw"));
    let preset: Preset = match preset_name {
        Some(p) => parse(&p)?,
        None => return Err(config_err("no preset: set `model.preset` or `dataset.name`")),
    };
    let paradigm = resolve_paradigm(preset, &file.model)?;
    let head_dropout = match &file.model.head_dropout {
        Some(h) => parse::<HeadDropout>(h)?,
        None => HeadDropout::default(),
    };
    let overrides = PresetOverrides {
        conv_widths: file.model.conv_widths.clone(),
        fc_width: file.model.fc_width,
        head_dropout,
    };
    let spec = build_preset_with(preset, paradigm, &overrides).map_err(|e| config_err(e.to_string()))?;
    let augment = resolve_augment(preset, &file.augment)?;
    let train = resolve_train(preset, &file.train, file.dataset.val_fraction, cmd.seed)?;
    let data = match &file.dataset.name {
        Some(name) => Some(resolve_data(name, &file.dataset, &base)?),
        None if need_data => return Err(config_err("`dataset.name` is required")),
        None => None,
    };
    let out_dir = match (&cmd.out, &file.output.dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) if d.is_absolute() => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("runs").join(preset.name()),
    };
    Ok(RunPlan {
        preset,
        paradigm,
        spec,
        augment,
        train,
        data,
        train_limit: file.dataset.train_limit,
        test_limit: file.dataset.test_limit,
        out_dir,
        record_time: file.output.record_time.unwrap_or(false),
        evaluate_test: file.train.evaluate_test.unwrap_or(true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(overrides: &[&str]) -> CommandLine {
        CommandLine {
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn override_creates_nested_values() {
        let mut doc = serde_json::json!({});
        apply_override(&mut doc, "train.max_epochs=3").unwrap();
        apply_override(&mut doc, "model.paradigm=spatial_at_pools").unwrap();
        apply_override(&mut doc, "model.conv_widths=[8,16]").unwrap();
        assert_eq!(
            doc,
            serde_json::json!({"train": {"max_epochs": 3}, "model": {"paradigm": "spatial_at_pools", "conv_widths": [8, 16]}})
        );
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "train..x=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(resolve(&cmd(&["model.preset=mnist", "model.colour=red"]), false), Err(CliError::Config(_))));
        assert!(matches!(resolve(&cmd(&["bogus.x=1"]), false), Err(CliError::Config(_))));
    }

    #[test]
    fn minimal_config_defaults_from_preset() {
        let plan = resolve(&cmd(&["dataset.name=mnist", "dataset.dir=/data"]), true).unwrap();
        assert_eq!(plan.preset, Preset::Mnist);
        assert_eq!(plan.paradigm, DropoutParadigm::RegularAfterFc { fc_rate: 0.8 });
        assert_eq!(plan.train.batch_size, 256);
        assert_eq!(plan.train.learning_rate, 0.01);
        assert!(plan.augment.rotation_enabled);
        match plan.data.unwrap() {
            DataSource::Idx { train_images, test, .. } => {
                assert_eq!(train_images, PathBuf::from("/data/train-images-idx3-ubyte"));
                assert!(test.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spatial_paradigm_from_overrides() {
        let plan = resolve(
            &cmd(&["model.preset=mnist", "model.paradigm=spatial_at_pools", "model.spatial_rate=0.125"]),
            false,
        )
        .unwrap();
        assert_eq!(
            plan.paradigm,
            DropoutParadigm::SpatialAtPools {
                pool_rate: 0.125,
                placement: Placement::BeforePool
            }
        );
    }

    #[test]
    fn bad_values_are_config_errors() {
        for o in ["model.paradigm=sideways", "train.lr=-1", "augment.shift_frac=2", "model.preset=imagenet"] {
            assert!(matches!(resolve(&cmd(&["model.preset=mnist", o]), false), Err(CliError::Config(_))), "{o}");
        }
    }
}
