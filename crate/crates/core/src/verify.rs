//! Finite-difference gradient checks and the direct-loop convolution
//! oracle, run in `f64` on small seeded instances.
//!
//! Each layer check contracts the layer output with a fixed random tensor
//! `r`, so the scalar loss is `sum(y * r)` and the analytic input gradient
//! is the layer's backward applied to `r`. Relative error is
//! `|a - n| / max(|a|, |n|, 1e-4)`; the floor stops elements whose true
//! gradient is zero from amplifying round-off.

use crate::error::{Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_mask,
    maxpool2x2_backward, maxpool2x2_forward, model_backward, model_forward, model_forward_with_masks,
    relu_backward, relu_forward, softmax_cross_entropy, softmax_cross_entropy_backward, ArchitectureSpec,
    DropoutMode, LayerDesc,
};
use crate::nn::init_parameters;
use crate::tensor::{Rng, Tensor};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Threshold for single-layer checks.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Threshold for the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Threshold for im2col convolution against the direct loop.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

const FLOOR: f64 = 1e-4;
const SEED: u64 = 0x6772_6164;

/// Names accepted by [`gradcheck`], besides `all`.
pub const SCOPES: [&str; 7] = ["conv", "pool", "relu", "dropout", "dense", "softmax", "model"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.symmetric(1.0)).collect()).expect("finite draws")
}

/// Entries in `[lo, hi]` or `[-hi, -lo]`, kept off ReLU's kink.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + 0.9 * v.abs());
    }
    t
}

/// A shuffled grid with spacing 0.01, so no pooling window has a near tie.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = rng.permutation(n).into_iter().map(|i| i as f64 * 0.01 - 1.0).collect();
    Tensor::from_vec(shape, data).expect("finite grid")
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `at`.
fn compare(
    analytic: &Tensor<f64>,
    at: &Tensor<f64>,
    mut loss: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = loss(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let down = loss(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

fn contract(y: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    y.dot(r)
}

/// Scales a gradient to simulate a faulty backward pass.
fn perturbed(g: Tensor<f64>, on: bool) -> Tensor<f64> {
    if !on {
        return g;
    }
    let mut g = g;
    for v in g.data_mut() {
        *v *= 1.001;
    }
    g
}

fn result(name: &str, err: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        max_rel_error: err,
        tolerance,
    }
}

fn check_conv(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let x = random(&[2, 3, 5, 4], rng);
    let w = random(&[4, 3, 3, 3], rng);
    let b = random(&[4], rng);
    let r = random(&[2, 4, 5, 4], rng);
    let g = conv2d_backward(&x, &w, &r)?;
    let ex = compare(&perturbed(g.dx, bad), &x, |x| contract(&conv2d_forward(x, &w, &b)?, &r))?;
    let ew = compare(&perturbed(g.dw, bad), &w, |w| contract(&conv2d_forward(&x, w, &b)?, &r))?;
    let eb = compare(&perturbed(g.db, bad), &b, |b| contract(&conv2d_forward(&x, &w, b)?, &r))?;

    let mut oracle = 0.0f64;
    for _ in 0..50 {
        let dim = |rng: &mut Rng, hi: usize| 1 + (rng.next_u64() % hi as u64) as usize;
        let (n, c, o, h, wd) = (dim(rng, 2), dim(rng, 4), dim(rng, 4), dim(rng, 8), dim(rng, 8));
        let x = random(&[n, c, h, wd], rng);
        let w = random(&[o, c, 3, 3], rng);
        let b = random(&[o], rng);
        let fast = conv2d_forward(&x, &w, &b)?;
        let slow = direct_conv(&x, &w, &b)?;
        let diff = fast
            .data()
            .iter()
            .zip(slow.data())
            .fold(0.0f64, |m, (a, s)| m.max((a - s).abs()));
        oracle = oracle.max(diff / slow.max_abs().max(f64::MIN_POSITIVE));
    }
    Ok(vec![
        result("conv dx", ex, LAYER_TOLERANCE),
        result("conv dw", ew, LAYER_TOLERANCE),
        result("conv db", eb, LAYER_TOLERANCE),
        result("conv oracle", oracle, ORACLE_TOLERANCE),
    ])
}

/// Six nested loops straight from the definition of a padded 3x3
/// convolution.
pub fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [n, c, h, wd] = x.dims4()?;
    let [o, wc, _, _] = w.dims4()?;
    if wc != c {
        return Err(Error::mismatch("direct_conv", &[o, c, 3, 3], w.shape()));
    }
    let mut y = vec![0.0; n * o * h * wd];
    for s in 0..n {
        for oc in 0..o {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for u in 0..3 {
                            for v in 0..3 {
                                let (yi, xj) = (i as isize + u as isize - 1, j as isize + v as isize - 1);
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((oc * c + ic) * 3 + u) * 3 + v]
                                    * x.data()[((s * c + ic) * h + yi as usize) * wd + xj as usize];
                            }
                        }
                    }
                    y[((s * o + oc) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, h, wd], y)
}

fn check_pool(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let x = distinct(&[2, 3, 4, 6], rng);
    let r = random(&[2, 3, 2, 3], rng);
    let (_, idx) = maxpool2x2_forward(&x)?;
    let dx = maxpool2x2_backward(&r, &idx, x.shape())?;
    let e = compare(&perturbed(dx, bad), &x, |x| contract(&maxpool2x2_forward(x)?.0, &r))?;
    Ok(vec![result("pool dx", e, LAYER_TOLERANCE)])
}

fn check_relu(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let x = away_from_zero(&[3, 2, 4, 4], rng);
    let r = random(x.shape(), rng);
    let dx = relu_backward(&r, &relu_forward(&x))?;
    let e = compare(&perturbed(dx, bad), &x, |x| contract(&relu_forward(x), &r))?;
    Ok(vec![result("relu dx", e, LAYER_TOLERANCE)])
}

fn check_dropout(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (mode, name) in [(DropoutMode::Regular, "dropout regular dx"), (DropoutMode::Spatial, "dropout spatial dx")] {
        let x = random(&[2, 4, 3, 3], rng);
        let r = random(x.shape(), rng);
        let mask = dropout_mask::<f64>(x.shape(), 0.4, mode, rng)?;
        let dx = dropout_backward(&r, &mask)?;
        let apply = |x: &Tensor<f64>| -> Result<f64> {
            let y: Vec<f64> = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
            contract(&Tensor::from_vec(x.shape(), y)?, &r)
        };
        let e = compare(&perturbed(dx, bad), &x, apply)?;
        out.push(result(name, e, LAYER_TOLERANCE));
    }
    Ok(out)
}

fn check_dense(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let x = random(&[3, 7], rng);
    let w = random(&[7, 5], rng);
    let b = random(&[5], rng);
    let r = random(&[3, 5], rng);
    let g = dense_backward(&x, &w, &r)?;
    let ex = compare(&perturbed(g.dx, bad), &x, |x| contract(&dense_forward(x, &w, &b)?, &r))?;
    let ew = compare(&perturbed(g.dw, bad), &w, |w| contract(&dense_forward(&x, w, &b)?, &r))?;
    let eb = compare(&perturbed(g.db, bad), &b, |b| contract(&dense_forward(&x, &w, b)?, &r))?;
    Ok(vec![
        result("dense dx", ex, LAYER_TOLERANCE),
        result("dense dw", ew, LAYER_TOLERANCE),
        result("dense db", eb, LAYER_TOLERANCE),
    ])
}

fn check_softmax(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let logits = random(&[4, 6], rng);
    let labels = [0, 5, 2, 2];
    let (_, probs) = softmax_cross_entropy(&logits, &labels)?;
    let d = softmax_cross_entropy_backward(&probs, &labels)?;
    let e = compare(&perturbed(d, bad), &logits, |z| Ok(softmax_cross_entropy(z, &labels)?.0))?;
    Ok(vec![result("softmax cross-entropy dlogits", e, LAYER_TOLERANCE)])
}

/// The two-conv toy model used by the end-to-end check.
pub fn toy_model() -> ArchitectureSpec {
    ArchitectureSpec::new(
        "toy",
        [2, 4, 4],
        vec![
            LayerDesc::Conv3x3 { out_channels: 3 },
            LayerDesc::Relu,
            LayerDesc::Conv3x3 { out_channels: 4 },
            LayerDesc::Relu,
            LayerDesc::MaxPool2x2,
            LayerDesc::Dropout {
                rate: 0.25,
                mode: DropoutMode::Spatial,
            },
            LayerDesc::Flatten,
            LayerDesc::Dense { units: 6 },
            LayerDesc::Relu,
            LayerDesc::Dropout {
                rate: 0.3,
                mode: DropoutMode::Regular,
            },
            LayerDesc::SoftmaxClassifier { classes: 3 },
        ],
    )
    .expect("valid toy model")
}

fn check_model(rng: &mut Rng, bad: bool) -> Result<Vec<CheckResult>> {
    let spec = toy_model();
    let params = init_parameters::<f64>(&spec, rng);
    let x = random(&[3, 2, 4, 4], rng);
    let labels = [0, 2, 1];
    let out = model_forward(&spec, &params, &x, true, rng)?;
    let cache = out.cache.expect("training pass keeps a cache");
    let masks = cache.masks();
    let (_, probs) = softmax_cross_entropy(&out.logits, &labels)?;
    let grads = model_backward(&spec, &params, &cache, &softmax_cross_entropy_backward(&probs, &labels)?)?;

    let mut worst = 0.0f64;
    for (t, (g, _)) in grads.tensors().zip(params.tensors()).enumerate() {
        let loss = |v: &Tensor<f64>| -> Result<f64> {
            let mut p = params.clone();
            *p.tensors_mut().nth(t).expect("tensor index") = v.clone();
            let logits = model_forward_with_masks(&spec, &p, &x, &masks)?.logits;
            Ok(softmax_cross_entropy(&logits, &labels)?.0)
        };
        let at = params.tensors().nth(t).expect("tensor index").clone();
        worst = worst.max(compare(&perturbed(g.clone(), bad), &at, loss)?);
    }
    Ok(vec![result("model end-to-end", worst, MODEL_TOLERANCE)])
}

/// Runs the checks for `scope` (a layer name from [`SCOPES`] or `all`).
/// `perturb` names a scope whose analytic gradients are scaled by 1.001
/// before comparison; it exists to exercise the failure path.
pub fn gradcheck(scope: &str, perturb: Option<&str>) -> Result<Vec<CheckResult>> {
    if scope != "all" && !SCOPES.contains(&scope) {
        return Err(Error::param(format!(
            "unknown gradcheck scope `{scope}` (expected all or one of {})",
            SCOPES.join(", ")
        )));
    }
    let mut out = Vec::new();
    for (i, name) in SCOPES.iter().enumerate() {
        if scope != "all" && scope != *name {
            continue;
        }
        let mut rng = Rng::derive(SEED, &[i as u64]);
        let bad = perturb == Some(*name);
        out.extend(match *name {
            "conv" => check_conv(&mut rng, bad)?,
            "pool" => check_pool(&mut rng, bad)?,
            "relu" => check_relu(&mut rng, bad)?,
            "dropout" => check_dropout(&mut rng, bad)?,
            "dense" => check_dense(&mut rng, bad)?,
            "softmax" => check_softmax(&mut rng, bad)?,
            _ => check_model(&mut rng, bad)?,
        });
    }
    Ok(out)
}
