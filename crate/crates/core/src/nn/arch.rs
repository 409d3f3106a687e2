//! Layer descriptors, the five architecture presets, shape propagation and
//! the plain-text architecture format stored in checkpoints.
//!
//! The text form has one directive per line:
//!
//! ```text
//! name mnist
//! input 1 28 28
//! conv 32
//! relu
//! pool
//! dropout spatial 0.125
//! flatten
//! dense 2048
//! dropout regular 0.8
//! softmax 10
//! ```

use std::fmt;
use std::str::FromStr;

use super::dropout::{check_rate, DropoutMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerDesc {
    Conv3x3 { out_channels: usize },
    MaxPool2x2,
    Relu,
    Dropout { rate: f64, mode: DropoutMode },
    Flatten,
    Dense { units: usize },
    /// Affine map to `classes` logits followed by softmax.
    SoftmaxClassifier { classes: usize },
}

impl LayerDesc {
    pub fn has_parameters(&self) -> bool {
        matches!(
            self,
            LayerDesc::Conv3x3 { .. } | LayerDesc::Dense { .. } | LayerDesc::SoftmaxClassifier { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerDesc::Conv3x3 { out_channels: 0 } => {
                Err(Error::InvalidArchitecture("conv needs at least one output channel".into()))
            }
            LayerDesc::Dense { units: 0 } => {
                Err(Error::InvalidArchitecture("dense needs at least one unit".into()))
            }
            LayerDesc::SoftmaxClassifier { classes } if classes < 2 => {
                Err(Error::InvalidArchitecture("a classifier needs at least two classes".into()))
            }
            LayerDesc::Dropout { rate, .. } => check_rate(rate),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Conv3x3 { out_channels } => write!(f, "conv {out_channels}"),
            LayerDesc::MaxPool2x2 => write!(f, "pool"),
            LayerDesc::Relu => write!(f, "relu"),
            LayerDesc::Dropout { rate, mode } => write!(f, "dropout {mode} {rate}"),
            LayerDesc::Flatten => write!(f, "flatten"),
            LayerDesc::Dense { units } => write!(f, "dense {units}"),
            LayerDesc::SoftmaxClassifier { classes } => write!(f, "softmax {classes}"),
        }
    }
}

/// Where pool-stage dropout sits relative to each max-pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    BeforePool,
    AfterPool,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before_pool" => Ok(Placement::BeforePool),
            "after_pool" => Ok(Placement::AfterPool),
            other => Err(Error::param(format!("unknown dropout placement `{other}`"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::BeforePool => "before_pool",
            Placement::AfterPool => "after_pool",
        })
    }
}

/// Where dropout goes in a preset and at what rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutParadigm {
    /// Regular dropout after each fully connected layer only.
    RegularAfterFc { fc_rate: f64 },
    /// Spatial dropout at every pooling stage only.
    SpatialAtPools { pool_rate: f64, placement: Placement },
    /// Spatial dropout at the pooling stages plus regular dropout after the
    /// fully connected layers.
    Combined {
        pool_rate: f64,
        fc_rate: f64,
        placement: Placement,
    },
    /// Regular dropout after every pooling layer and after the fully
    /// connected layers.
    RegularEverywhere { pool_rate: f64, fc_rate: f64 },
}

impl DropoutParadigm {
    fn pool_dropout(&self) -> Option<(f64, DropoutMode, Placement)> {
        match *self {
            DropoutParadigm::RegularAfterFc { .. } => None,
            DropoutParadigm::SpatialAtPools { pool_rate, placement }
            | DropoutParadigm::Combined {
                pool_rate, placement, ..
            } => Some((pool_rate, DropoutMode::Spatial, placement)),
            DropoutParadigm::RegularEverywhere { pool_rate, .. } => {
                Some((pool_rate, DropoutMode::Regular, Placement::AfterPool))
            }
        }
    }

    fn fc_rate(&self) -> Option<f64> {
        match *self {
            DropoutParadigm::SpatialAtPools { .. } => None,
            DropoutParadigm::RegularAfterFc { fc_rate }
            | DropoutParadigm::Combined { fc_rate, .. }
            | DropoutParadigm::RegularEverywhere { fc_rate, .. } => Some(fc_rate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((rate, ..)) = self.pool_dropout() {
            check_rate(rate)?;
        }
        if let Some(rate) = self.fc_rate() {
            check_rate(rate)?;
        }
        Ok(())
    }

    /// Identifier used in configs: `regular_after_fc`, `spatial_at_pools`,
    /// `combined` or `regular_everywhere`.
    pub fn kind(&self) -> &'static str {
        match self {
            DropoutParadigm::RegularAfterFc { .. } => "regular_after_fc",
            DropoutParadigm::SpatialAtPools { .. } => "spatial_at_pools",
            DropoutParadigm::Combined { .. } => "combined",
            DropoutParadigm::RegularEverywhere { .. } => "regular_everywhere",
        }
    }

    /// Builds a paradigm from its identifier and rates.
    pub fn from_parts(kind: &str, pool_rate: f64, fc_rate: f64, placement: Placement) -> Result<Self> {
        let p = match kind {
            "regular_after_fc" => DropoutParadigm::RegularAfterFc { fc_rate },
            "spatial_at_pools" => DropoutParadigm::SpatialAtPools { pool_rate, placement },
            "combined" => DropoutParadigm::Combined {
                pool_rate,
                fc_rate,
                placement,
            },
            "regular_everywhere" => DropoutParadigm::RegularEverywhere { pool_rate, fc_rate },
            other => return Err(Error::param(format!("unknown dropout paradigm `{other}`"))),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Mnist,
    Cifar10,
    Cifar100,
    Svhn,
    Stl10,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Mnist,
        Preset::Cifar10,
        Preset::Cifar100,
        Preset::Svhn,
        Preset::Stl10,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Cifar10 => "cifar10",
            Preset::Cifar100 => "cifar100",
            Preset::Svhn => "svhn",
            Preset::Stl10 => "stl10",
        }
    }

    /// `[channels, height, width]` of the dataset's images.
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            Preset::Mnist => [1, 28, 28],
            Preset::Cifar10 | Preset::Cifar100 | Preset::Svhn => [3, 32, 32],
            Preset::Stl10 => [3, 96, 96],
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Preset::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn conv_widths(&self) -> Vec<usize> {
        match self {
            Preset::Mnist => vec![32, 32, 64, 64],
            Preset::Cifar10 | Preset::Cifar100 | Preset::Svhn => {
                vec![32, 32, 64, 64, 128, 128, 256, 256, 256, 256, 256]
            }
            Preset::Stl10 => vec![32, 32, 64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512],
        }
    }

    pub fn fc_width(&self) -> usize {
        match self {
            Preset::Mnist => 2048,
            _ => 1024,
        }
    }

    pub fn default_paradigm(&self) -> DropoutParadigm {
        match self {
            Preset::Mnist => DropoutParadigm::RegularAfterFc { fc_rate: 0.8 },
            _ => DropoutParadigm::RegularEverywhere {
                pool_rate: 0.25,
                fc_rate: 0.4,
            },
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            Preset::Mnist => 256,
            Preset::Cifar10 | Preset::Cifar100 | Preset::Svhn => 128,
            Preset::Stl10 => 8,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which dense layers of the classifier head are followed by dropout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HeadDropout {
    /// Dropout after each of the two dense layers.
    Each,
    /// A single dropout after the second dense layer: "two fully connected
    /// layers followed by dropout layer".
    #[default]
    Last,
}

impl FromStr for HeadDropout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "each" => Ok(HeadDropout::Each),
            "last" => Ok(HeadDropout::Last),
            other => Err(Error::param(format!("unknown head dropout `{other}` (expected each or last)"))),
        }
    }
}

impl fmt::Display for HeadDropout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadDropout::Each => "each",
            HeadDropout::Last => "last",
        })
    }
}

/// Optional replacements for a preset's conv widths, FC width and head
/// dropout placement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresetOverrides {
    pub conv_widths: Option<Vec<usize>>,
    pub fc_width: Option<usize>,
    pub head_dropout: HeadDropout,
}

/// A validated, ordered layer stack for one input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<LayerDesc>,
}

/// Per-sample shape before and after one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl ArchitectureSpec {
    /// Validates the stack: every layer is well formed, shapes propagate,
    /// every pool sees even extents, and there is exactly one classifier and
    /// it is last.
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], layers: Vec<LayerDesc>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArchitecture(format!("bad architecture name `{name}`")));
        }
        if input_shape.contains(&0) {
            return Err(Error::InvalidArchitecture("input extents must be at least 1".into()));
        }
        let classifiers = layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::SoftmaxClassifier { .. }))
            .count();
        if classifiers != 1 || !matches!(layers.last(), Some(LayerDesc::SoftmaxClassifier { .. })) {
            return Err(Error::InvalidArchitecture(
                "exactly one softmax classifier is required and it must be the last layer".into(),
            ));
        }
        for layer in &layers {
            layer.validate()?;
        }
        let spec = ArchitectureSpec {
            name,
            input_shape,
            layers,
        };
        spec.propagate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerDesc::SoftmaxClassifier { classes }) => *classes,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::Conv3x3 { .. }))
            .count()
    }

    /// Per-sample input and output shape of every layer.
    pub fn shapes(&self) -> Vec<LayerShape> {
        self.propagate().expect("validated at construction")
    }

    fn propagate(&self) -> Result<Vec<LayerShape>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |reason: String| Error::InvalidArchitecture(format!("layer {i} ({layer}): {reason}"));
            let next = match (*layer, &shape[..]) {
                (LayerDesc::Conv3x3 { out_channels }, &[_, h, w]) => vec![out_channels, h, w],
                (LayerDesc::MaxPool2x2, &[c, h, w]) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(format!("spatial extent {h}x{w} is not even")));
                    }
                    vec![c, h / 2, w / 2]
                }
                (LayerDesc::Dropout { mode: DropoutMode::Spatial, .. }, s) if s.len() != 3 => {
                    return Err(bad("spatial dropout needs a feature-map input".into()))
                }
                (LayerDesc::Relu | LayerDesc::Dropout { .. }, s) => s.to_vec(),
                (LayerDesc::Flatten, s) => vec![s.iter().product()],
                (LayerDesc::Dense { units }, &[_]) => vec![units],
                (LayerDesc::SoftmaxClassifier { classes }, &[_]) => vec![classes],
                (_, s) => return Err(bad(format!("cannot accept input of shape {s:?}"))),
            };
            out.push(LayerShape {
                input: std::mem::replace(&mut shape, next.clone()),
                output: next,
            });
        }
        Ok(out)
    }

    /// Weight and bias shapes of each parameterised layer, by layer index.
    pub fn parameter_shapes(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.shapes()
            .iter()
            .zip(&self.layers)
            .enumerate()
            .filter_map(|(i, (s, layer))| match *layer {
                LayerDesc::Conv3x3 { out_channels } => {
                    Some((i, vec![out_channels, s.input[0], 3, 3], vec![out_channels]))
                }
                LayerDesc::Dense { units } => Some((i, vec![s.input[0], units], vec![units])),
                LayerDesc::SoftmaxClassifier { classes } => {
                    Some((i, vec![s.input[0], classes], vec![classes]))
                }
                _ => None,
            })
            .collect()
    }

    /// Number of scalar weights and biases in layer `index` (0 for
    /// parameterless layers).
    pub fn layer_parameter_count(&self, index: usize) -> usize {
        self.parameter_shapes()
            .into_iter()
            .find(|(i, ..)| *i == index)
            .map_or(0, |(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
    }

    pub fn count_parameters(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        let [c, h, w] = self.input_shape;
        writeln!(f, "input {c} {h} {w}")?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut layers = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::InvalidArchitecture(format!("line {}: cannot parse `{line}`", lineno + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
            match words[..] {
                ["name", n] => name = Some(n.to_string()),
                ["input", c, h, w] => input = Some([int(c)?, int(h)?, int(w)?]),
                ["conv", c] => layers.push(LayerDesc::Conv3x3 { out_channels: int(c)? }),
                ["pool"] => layers.push(LayerDesc::MaxPool2x2),
                ["relu"] => layers.push(LayerDesc::Relu),
                ["dropout", mode, rate] => layers.push(LayerDesc::Dropout {
                    mode: mode.parse().map_err(|_| bad())?,
                    rate: rate.parse().map_err(|_| bad())?,
                }),
                ["flatten"] => layers.push(LayerDesc::Flatten),
                ["dense", u] => layers.push(LayerDesc::Dense { units: int(u)? }),
                ["softmax", k] => layers.push(LayerDesc::SoftmaxClassifier { classes: int(k)? }),
                _ => return Err(bad()),
            }
        }
        let name = name.ok_or_else(|| Error::InvalidArchitecture("missing `name` line".into()))?;
        let input = input.ok_or_else(|| Error::InvalidArchitecture("missing `input` line".into()))?;
        ArchitectureSpec::new(name, input, layers)
    }
}

pub fn build_preset(preset: Preset, paradigm: DropoutParadigm) -> Result<ArchitectureSpec> {
    build_preset_with(preset, paradigm, &PresetOverrides::default())
}

/// Assembles a preset: each conv is followed by ReLU; a 2x2 pool follows
/// every second conv while the halved extent stays even-divisible and at
/// least 2; pool-stage dropout is placed per the paradigm; the head is
/// flatten, two `dense + relu` blocks with dropout per `head_dropout`, and
/// the classifier.
pub fn build_preset_with(
    preset: Preset,
    paradigm: DropoutParadigm,
    overrides: &PresetOverrides,
) -> Result<ArchitectureSpec> {
    paradigm.validate()?;
    let widths = overrides.conv_widths.clone().unwrap_or_else(|| preset.conv_widths());
    let fc = overrides.fc_width.unwrap_or_else(|| preset.fc_width());
    let [_, mut h, mut w] = preset.input_shape();
    let pool_dropout = paradigm.pool_dropout();

    let mut layers = Vec::new();
    for (i, &width) in widths.iter().enumerate() {
        layers.push(LayerDesc::Conv3x3 { out_channels: width });
        layers.push(LayerDesc::Relu);
        let pools = i % 2 == 1 && h % 2 == 0 && w % 2 == 0 && h / 2 >= 2 && w / 2 >= 2;
        if !pools {
            continue;
        }
        let drop = pool_dropout.map(|(rate, mode, placement)| (LayerDesc::Dropout { rate, mode }, placement));
        if let Some((d, Placement::BeforePool)) = drop {
            layers.push(d);
        }
        layers.push(LayerDesc::MaxPool2x2);
        if let Some((d, Placement::AfterPool)) = drop {
            layers.push(d);
        }
        h /= 2;
        w /= 2;
    }
    layers.push(LayerDesc::Flatten);
    for k in 0..2 {
        layers.push(LayerDesc::Dense { units: fc });
        layers.push(LayerDesc::Relu);
        let here = k == 1 || overrides.head_dropout == HeadDropout::Each;
        if let (true, Some(rate)) = (here, paradigm.fc_rate()) {
            layers.push(LayerDesc::Dropout {
                rate,
                mode: DropoutMode::Regular,
            });
        }
    }
    layers.push(LayerDesc::SoftmaxClassifier {
        classes: preset.classes(),
    });
    ArchitectureSpec::new(preset.name(), preset.input_shape(), layers)
}
