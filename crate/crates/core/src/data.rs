//! Dataset loaders, train/validation splitting and shuffled batching.
//!
//! Supported on-disk formats (all pixels are unsigned bytes and are divided
//! by 255 on load):
//!
//! * **IDX** (MNIST): big-endian `u32` magic `0x00000803` for an image file
//!   or `0x00000801` for a label file, then one big-endian `u32` per
//!   dimension (`n, h, w` or `n`), then the payload.
//! * **CIFAR binary**: fixed-size records. CIFAR-10 records are one label
//!   byte then 3072 pixel bytes (R, G and B planes of 32x32, row-major);
//!   CIFAR-100 records carry a coarse and a fine label byte before the
//!   pixels, and the fine label is used.
//! * **STL-10 binary**: `*_X.bin` holds 3x96x96 bytes per image with each
//!   channel plane stored column-major; `*_y.bin` holds one label byte per
//!   image, numbered from 1.
//! * **Raw manifest**: a text file of `key value` lines (`n`, `channels`,
//!   `height`, `width`, `classes`, `images`, `labels`, optional `name`).
//!   `images` names a blob of `n*c*h*w` row-major bytes and `labels` a blob
//!   of `n` bytes; relative paths resolve against the manifest's directory.
//!   Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::streams;
use crate::tensor::{Rng, Tensor};

/// A labelled image collection held fully in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    name: String,
}

/// One minibatch. `indices` are the dataset positions of its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Dataset {
    /// Checks that there is one label per image and every label is below
    /// `classes`.
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let [n, ..] = images.dims4()?;
        if labels.len() != n {
            return Err(Error::mismatch("dataset labels", &[n], &[labels.len()]));
        }
        if classes < 2 {
            return Err(Error::param(format!("a dataset needs at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::param(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// The samples at `indices`, in that order, as a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Ok(Batch {
            images: self.images.gather_outer(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        })
    }

    /// A new dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let b = self.batch(indices)?;
        Ok(Dataset {
            images: b.images,
            labels: b.labels,
            classes: self.classes,
            name: self.name.clone(),
        })
    }

    /// Every pixel multiplied by `factor`.
    pub fn rescaled(self, factor: f64) -> Result<Dataset> {
        let images = crate::augment::rescale(&self.images, factor)?;
        Ok(Dataset { images, ..self })
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn pixels(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes.iter().map(|&b| f32::from(b) / 255.0)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn consistency_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Consistency {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("missing {what} at byte {offset}"),
        }),
    }
}

/// Validates an IDX header and returns the dimensions and payload.
fn idx_payload<'a>(bytes: &'a [u8], path: &Path, magic: u32, ndim: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path, "magic number")?;
    if found != magic {
        return Err(format_err(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let v = be_u32(bytes, 4 + 4 * d, path, "dimension size")? as usize;
        if v == 0 {
            return Err(format_err(path, format!("dimension {d} is zero")));
        }
        dims.push(v);
    }
    let start = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("payload needs {expected} bytes after the header, found {}", payload.len()),
        });
    }
    if payload.len() > expected {
        return Err(format_err(
            path,
            format!("{} trailing bytes after the declared payload", payload.len() - expected),
        ));
    }
    Ok((dims, payload))
}

/// Loads an MNIST-style IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    const CLASSES: usize = 10;
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(ip)?;
    let label_bytes = read(lp)?;
    let (idims, ipay) = idx_payload(&image_bytes, ip, 0x0000_0803, 3)?;
    let (ldims, lpay) = idx_payload(&label_bytes, lp, 0x0000_0801, 1)?;
    if idims[0] != ldims[0] {
        return Err(consistency_err(
            lp,
            format!("{} labels for {} images in {}", ldims[0], idims[0], ip.display()),
        ));
    }
    if let Some(pos) = lpay.iter().position(|&l| usize::from(l) >= CLASSES) {
        return Err(format_err(lp, format!("label {} at index {pos} is not a digit", lpay[pos])));
    }
    let shape = [idims[0], 1, idims[1], idims[2]];
    let images = Tensor::from_vec(&shape, pixels(ipay).collect())?;
    let labels = lpay.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(images, labels, CLASSES, "mnist")
}

/// Which CIFAR binary release a directory holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn train_files(self) -> Vec<String> {
        match self {
            CifarVariant::Cifar10 => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            CifarVariant::Cifar100 => vec!["train.bin".into()],
        }
    }

    pub fn test_files(self) -> Vec<String> {
        match self {
            CifarVariant::Cifar10 => vec!["test_batch.bin".into()],
            CifarVariant::Cifar100 => vec!["test.bin".into()],
        }
    }

    fn name(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        }
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

fn load_cifar_files(dir: &Path, files: &[String], variant: CifarVariant) -> Result<Dataset> {
    let skip = variant.label_bytes();
    let record = skip + CIFAR_PIXELS;
    let mut pixels_out = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let path = dir.join(file);
        let bytes = read(&path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(format_err(
                &path,
                format!("size {} is not a positive multiple of the {record}-byte record", bytes.len()),
            ));
        }
        for (i, rec) in bytes.chunks_exact(record).enumerate() {
            let label = usize::from(rec[skip - 1]);
            if label >= variant.classes() {
                return Err(format_err(&path, format!("record {i} has label {label}")));
            }
            labels.push(label);
            pixels_out.extend(pixels(&rec[skip..]));
        }
    }
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels_out)?;
    Dataset::new(images, labels, variant.classes(), variant.name())
}

/// Loads the train and test splits of a CIFAR binary release from `dir`
/// (`data_batch_1.bin`..`data_batch_5.bin` and `test_batch.bin` for
/// CIFAR-10, `train.bin` and `test.bin` for CIFAR-100).
pub fn load_cifar(dir: impl AsRef<Path>, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((
        load_cifar_files(dir, &variant.train_files(), variant)?,
        load_cifar_files(dir, &variant.test_files(), variant)?,
    ))
}

const STL_SIDE: usize = 96;
const STL_PIXELS: usize = 3 * STL_SIDE * STL_SIDE;

fn load_stl_split(dir: &Path, split: &str) -> Result<Dataset> {
    let xp = dir.join(format!("{split}_X.bin"));
    let yp = dir.join(format!("{split}_y.bin"));
    let xb = read(&xp)?;
    let yb = read(&yp)?;
    if xb.is_empty() || xb.len() % STL_PIXELS != 0 {
        return Err(format_err(
            &xp,
            format!("size {} is not a positive multiple of the {STL_PIXELS}-byte image", xb.len()),
        ));
    }
    let n = xb.len() / STL_PIXELS;
    if yb.len() != n {
        return Err(consistency_err(&yp, format!("{} labels for {n} images", yb.len())));
    }
    if let Some(pos) = yb.iter().position(|&l| !(1..=10).contains(&l)) {
        return Err(format_err(&yp, format!("label {} at index {pos} outside 1..=10", yb[pos])));
    }
    // Each plane is column-major: byte `x * 96 + y` is pixel (y, x).
    let mut out = vec![0.0f32; xb.len()];
    let plane = STL_SIDE * STL_SIDE;
    for (src, dst) in xb.chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
        for x in 0..STL_SIDE {
            for y in 0..STL_SIDE {
                dst[y * STL_SIDE + x] = f32::from(src[x * STL_SIDE + y]) / 255.0;
            }
        }
    }
    let images = Tensor::from_vec(&[n, 3, STL_SIDE, STL_SIDE], out)?;
    let labels = yb.iter().map(|&l| usize::from(l) - 1).collect();
    Dataset::new(images, labels, 10, "stl10")
}

/// Loads the labelled train and test splits of STL-10 from `dir`
/// (`train_X.bin`, `train_y.bin`, `test_X.bin`, `test_y.bin`). The
/// unlabelled split is never read.
pub fn load_stl10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((load_stl_split(dir, "train")?, load_stl_split(dir, "test")?))
}

/// Loads a dataset described by a raw manifest (see the module docs).
pub fn load_raw(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let mp = manifest_path.as_ref();
    let text = fs::read_to_string(mp).map_err(|e| Error::io(mp, e))?;
    let mut fields = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format_err(mp, format!("line {}: expected `key value`", lineno + 1)))?;
        if fields.insert(key, value.trim()).is_some() {
            return Err(format_err(mp, format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| format_err(mp, format!("missing key `{key}`")))
    };
    let number = |key: &str| -> Result<usize> {
        let v = get(key)?;
        match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format_err(mp, format!("`{key}` must be a positive integer, got `{v}`"))),
        }
    };
    let (n, c, h, w) = (number("n")?, number("channels")?, number("height")?, number("width")?);
    let classes = number("classes")?;
    for key in fields.keys() {
        if !["n", "channels", "height", "width", "classes", "images", "labels", "name"].contains(key) {
            return Err(format_err(mp, format!("unknown key `{key}`")));
        }
    }
    let base = mp.parent().unwrap_or(Path::new("."));
    let resolve = |key: &str| -> Result<PathBuf> { Ok(base.join(get(key)?)) };
    let (ip, lp) = (resolve("images")?, resolve("labels")?);
    let ib = read(&ip)?;
    let lb = read(&lp)?;
    if ib.len() != n * c * h * w {
        return Err(consistency_err(
            &ip,
            format!("{} bytes, manifest declares {n}x{c}x{h}x{w} = {}", ib.len(), n * c * h * w),
        ));
    }
    if lb.len() != n {
        return Err(consistency_err(&lp, format!("{} bytes, manifest declares {n} labels", lb.len())));
    }
    if let Some(pos) = lb.iter().position(|&l| usize::from(l) >= classes) {
        return Err(format_err(&lp, format!("label {} at index {pos} out of range for {classes} classes", lb[pos])));
    }
    let name = match fields.get("name") {
        Some(v) => v.to_string(),
        None => mp.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let images = Tensor::from_vec(&[n, c, h, w], pixels(&ib).collect())?;
    Dataset::new(images, lb.iter().map(|&l| usize::from(l)).collect(), classes, name)
}

/// Seeded split: the last `ceil(n * val_fraction)` items of a permutation
/// become validation, the rest training.
pub fn split_train_val(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::param(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let n = ds.len();
    // The small slack keeps products like 10 * 0.7 from rounding up a whole item.
    let n_val = ((n as f64 * val_fraction) - 1e-9).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::param(format!(
            "validation fraction {val_fraction} leaves an empty split of {n} samples"
        )));
    }
    let perm = Rng::derive(seed, &[streams::SPLIT]).permutation(n);
    let (train, val) = perm.split_at(n - n_val);
    Ok((ds.subset(train)?, ds.subset(val)?))
}

/// Iterator over the batches of one shuffled epoch.
#[derive(Debug)]
pub struct ShuffledBatches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl ShuffledBatches<'_> {
    /// The permutation this epoch visits samples in.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for ShuffledBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        // Indices come from a permutation of the dataset, so this cannot fail.
        Some(self.ds.batch(idx).expect("permutation indices are in range"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for ShuffledBatches<'_> {}

/// Batches of a fresh permutation for `(seed, epoch)`. Every sample appears
/// exactly once; the final batch may be short.
pub fn shuffled_batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<ShuffledBatches<'_>> {
    if batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    Ok(ShuffledBatches {
        ds,
        order: Rng::derive(seed, &[streams::SHUFFLE, epoch]).permutation(ds.len()),
        batch_size,
        next: 0,
    })
}
