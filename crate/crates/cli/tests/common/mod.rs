//! Synthetic dataset files in the on-disk formats the loaders read.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plaincnn"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small deterministic byte generator (xorshift) so fixtures need no RNG crate.
pub struct Bytes(u64);

impl Bytes {
    pub fn new(seed: u64) -> Self {
        Bytes(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next(&mut self) -> u8 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 32) as u8
    }
}

/// A `side x side` image of class `label`: a bright block whose position
/// encodes the class, over low noise.
pub fn digit_like(label: u8, side: usize, noise: &mut Bytes) -> Vec<u8> {
    let mut img: Vec<u8> = (0..side * side).map(|_| noise.next() % 40).collect();
    let cells = 4;
    let cell = side / cells;
    let (r, c) = (label as usize / cells, label as usize % cells);
    for y in r * cell..(r + 1) * cell {
        for x in c * cell..(c + 1) * cell {
            img[y * side + x] = 200 + noise.next() % 56;
        }
    }
    img
}

pub fn write_idx_pair(images: &Path, labels: &Path, n: usize, seed: u64) {
    let mut noise = Bytes::new(seed);
    let mut ib = Vec::new();
    ib.extend_from_slice(&0x0803u32.to_be_bytes());
    for d in [n as u32, 28, 28] {
        ib.extend_from_slice(&d.to_be_bytes());
    }
    let mut lb = Vec::new();
    lb.extend_from_slice(&0x0801u32.to_be_bytes());
    lb.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let label = (i % 10) as u8;
        ib.extend(digit_like(label, 28, &mut noise));
        lb.push(label);
    }
    fs::write(images, ib).unwrap();
    fs::write(labels, lb).unwrap();
}

/// MNIST-layout directory with `train` and `test` samples.
pub fn mnist_dir(root: &Path, train: usize, test: usize) -> PathBuf {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    write_idx_pair(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"), train, 1);
    write_idx_pair(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), test, 2);
    dir
}

/// CIFAR-10 binary files with `per_file` records each.
pub fn cifar10_dir(root: &Path, per_file: usize) -> PathBuf {
    let dir = root.join("cifar10");
    fs::create_dir_all(&dir).unwrap();
    let mut noise = Bytes::new(3);
    let names: Vec<String> = (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(["test_batch.bin".to_string()])
        .collect();
    for name in names {
        let mut bytes = Vec::new();
        for i in 0..per_file {
            let label = (i % 10) as u8;
            bytes.push(label);
            for _ in 0..3 {
                bytes.extend(digit_like(label, 32, &mut noise));
            }
        }
        fs::write(dir.join(name), bytes).unwrap();
    }
    dir
}

pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

/// A small MNIST-shaped run: narrow layers so a few epochs take seconds.
pub fn small_mnist_config(root: &Path, out: &Path) -> PathBuf {
    let data = mnist_dir(root, 200, 50);
    write_config(
        root,
        &format!(
            r#"{{
  "dataset": {{"name": "mnist", "dir": "{}"}},
  "model": {{"conv_widths": [4, 4, 8, 8], "fc_width": 32}},
  "train": {{"batch_size": 20, "max_epochs": 2, "seed": 11}},
  "output": {{"dir": "{}"}}
}}"#,
            data.display(),
            out.display()
        ),
    )
}
