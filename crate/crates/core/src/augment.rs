//! On-the-fly training augmentation: random rotation, shear, shift and
//! zoom, composed into one affine map and resampled bilinearly, plus the
//! one-time intensity rescale applied at load.
//!
//! There is deliberately no flip and no cutout: neither exists in
//! [`AugmentConfig`], so no preset can produce them.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Preset;
use crate::tensor::{Rng, Scalar, Tensor};

/// Augmentation ranges. Every random parameter is drawn uniformly from a
/// range symmetric about its identity value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute rotation, degrees.
    pub rotation_deg: f64,
    /// Maximum absolute shear coefficient.
    pub shear: f64,
    /// Maximum absolute shift as a fraction of width (x) and height (y).
    pub shift_frac: f64,
    /// Maximum absolute deviation of each axis' scale from 1.
    pub zoom_delta: f64,
    /// Intensity factor applied once when a dataset is loaded.
    pub rescale: f64,
    pub rotation_enabled: bool,
    pub shear_enabled: bool,
    pub shift_enabled: bool,
    pub zoom_enabled: bool,
    pub rescale_enabled: bool,
}

impl AugmentConfig {
    /// Every technique off; `random_augment` is then the identity.
    pub fn disabled() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            shear: 0.0,
            shift_frac: 0.0,
            zoom_delta: 0.0,
            rescale: 1.0,
            rotation_enabled: false,
            shear_enabled: false,
            shift_enabled: false,
            zoom_enabled: false,
            rescale_enabled: false,
        }
    }

    /// Default ranges for a preset: rotation +-10 degrees on MNIST only,
    /// shear +-0.15, shift +-10%, zoom in [0.9, 1.1] per axis, rescale 1/255.
    pub fn for_preset(preset: Preset) -> Self {
        let rotate = preset == Preset::Mnist;
        AugmentConfig {
            rotation_deg: if rotate { 10.0 } else { 0.0 },
            shear: 0.15,
            shift_frac: 0.1,
            zoom_delta: 0.1,
            rescale: 1.0 / 255.0,
            rotation_enabled: rotate,
            shear_enabled: true,
            shift_enabled: true,
            zoom_enabled: true,
            rescale_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.rotation_deg, self.shear, self.shift_frac, self.zoom_delta, self.rescale]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("augmentation ranges must be finite"));
        }
        if self.rotation_deg < 0.0 || self.shear < 0.0 {
            return Err(Error::param("rotation and shear ranges must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.shift_frac) {
            return Err(Error::param(format!("shift fraction {} outside [0, 1)", self.shift_frac)));
        }
        if !(0.0..1.0).contains(&self.zoom_delta) {
            return Err(Error::param(format!("zoom delta {} outside [0, 1)", self.zoom_delta)));
        }
        if self.rescale <= 0.0 {
            return Err(Error::param(format!("rescale factor {} must be positive", self.rescale)));
        }
        Ok(())
    }

    /// The load-time intensity factor (1 when rescaling is disabled).
    pub fn load_factor(&self) -> f64 {
        if self.rescale_enabled {
            self.rescale
        } else {
            1.0
        }
    }

    /// Whether any geometric technique is active.
    pub fn is_identity(&self) -> bool {
        !(self.rotation_enabled && self.rotation_deg > 0.0
            || self.shear_enabled && self.shear > 0.0
            || self.shift_enabled && self.shift_frac > 0.0
            || self.zoom_enabled && self.zoom_delta > 0.0)
    }
}

/// 2x3 matrix taking output pixel coordinates `(x, y, 1)` to the input
/// coordinates they sample from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub m: [[f64; 3]; 2],
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b] = self.m;
        (a[0] * x + a[1] * y + a[2], b[0] * x + b[1] * y + b[2])
    }

    /// `self` after `first`: maps through `first`, then `self`.
    pub fn compose(&self, first: &AffineMap) -> AffineMap {
        let (a, b) = (self.m, first.m);
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            m[r][0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            m[r][1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            m[r][2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        AffineMap { m }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Builds the inverse-mapping matrix of the forward transform
/// `translate . rotate . shear . scale`, all taken about the image centre.
///
/// Positive shifts move content right and down; positive rotation turns
/// content clockwise on screen (y points down). Shear is `x' = x + s*y`.
#[allow(clippy::too_many_arguments)]
pub fn affine_matrix(
    rotation_deg: f64,
    shear: f64,
    shift_x_frac: f64,
    shift_y_frac: f64,
    zoom_x: f64,
    zoom_y: f64,
    width: usize,
    height: usize,
) -> Result<AffineMap> {
    if !(zoom_x > 0.0 && zoom_y > 0.0) {
        return Err(Error::param(format!("zoom factors must be positive, got ({zoom_x}, {zoom_y})")));
    }
    let all = [rotation_deg, shear, shift_x_frac, shift_y_frac, zoom_x, zoom_y];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("affine parameters must be finite"));
    }
    let (sin, cos) = if rotation_deg == 0.0 {
        (0.0, 1.0)
    } else {
        rotation_deg.to_radians().sin_cos()
    };
    // Forward linear part: R * S * Z.
    let (r00, r01, r10, r11) = (cos, -sin, sin, cos);
    let rs = [[r00, r00 * shear + r01], [r10, r10 * shear + r11]];
    let f = [[rs[0][0] * zoom_x, rs[0][1] * zoom_y], [rs[1][0] * zoom_x, rs[1][1] * zoom_y]];
    // Inverse of the linear part.
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if det == 0.0 || !det.is_finite() {
        return Err(Error::param("affine transform is singular"));
    }
    let inv = [[f[1][1] / det, -f[0][1] / det], [-f[1][0] / det, f[0][0] / det]];

    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let tx = shift_x_frac * width as f64;
    let ty = shift_y_frac * height as f64;
    // out = F (in - c) + c + t  =>  in = F^-1 (out - c - t) + c
    let (ox, oy) = (cx + tx, cy + ty);
    let m = [
        [inv[0][0], inv[0][1], cx - (inv[0][0] * ox + inv[0][1] * oy)],
        [inv[1][0], inv[1][1], cy - (inv[1][0] * ox + inv[1][1] * oy)],
    ];
    Ok(AffineMap { m })
}

/// Resamples every channel of `img [c,h,w]`: output pixel `(i, j)` takes the
/// bilinear interpolation of the input at `map(j, i)`. Neighbours outside
/// the image contribute `fill`.
pub fn warp_image<T: Scalar>(img: &Tensor<T>, map: &AffineMap, fill: T) -> Result<Tensor<T>> {
    let [c, h, w] = match *img.shape() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "expected a [channels, height, width] image".into(),
            })
        }
    };
    let mut out = vec![T::zero(); img.len()];
    warp_into(img.data(), c, h, w, map, fill, &mut out);
    Tensor::from_vec(img.shape(), out)
}

pub(crate) fn warp_into<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    map: &AffineMap,
    fill: T,
    dst: &mut [T],
) {
    if map.is_identity() {
        dst.copy_from_slice(src);
        return;
    }
    let pixel = |plane: &[T], yi: i64, xi: i64| -> T {
        if yi < 0 || xi < 0 || yi >= h as i64 || xi >= w as i64 {
            fill
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = map.apply(j as f64, i as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (T::from_f64(sx - x0), T::from_f64(sy - y0));
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let v00 = pixel(plane, y0, x0);
                let v01 = pixel(plane, y0, x0 + 1);
                let v10 = pixel(plane, y0 + 1, x0);
                let v11 = pixel(plane, y0 + 1, x0 + 1);
                let top = v00 + fx * (v01 - v00);
                let bottom = v10 + fx * (v11 - v10);
                let v = top + fy * (bottom - top);
                let lo = v00.min(v01).min(v10).min(v11);
                let hi = v00.max(v01).max(v10).max(v11);
                dst[ch * h * w + i * w + j] = v.max(lo).min(hi);
            }
        }
    }
}

/// One draw of augmentation parameters. Disabled techniques hold their
/// identity value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub shear: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
}

impl AugmentDraw {
    /// Draws all six parameters in a fixed order, so the stream consumed is
    /// the same whichever techniques are enabled.
    pub fn sample(config: &AugmentConfig, rng: &mut Rng) -> Self {
        let rotation = rng.symmetric(config.rotation_deg);
        let shear = rng.symmetric(config.shear);
        let shift_x = rng.symmetric(config.shift_frac);
        let shift_y = rng.symmetric(config.shift_frac);
        let zoom_x = 1.0 + rng.symmetric(config.zoom_delta);
        let zoom_y = 1.0 + rng.symmetric(config.zoom_delta);
        let on = |enabled: bool, v: f64, identity: f64| if enabled { v } else { identity };
        AugmentDraw {
            rotation_deg: on(config.rotation_enabled, rotation, 0.0),
            shear: on(config.shear_enabled, shear, 0.0),
            shift_x: on(config.shift_enabled, shift_x, 0.0),
            shift_y: on(config.shift_enabled, shift_y, 0.0),
            zoom_x: on(config.zoom_enabled, zoom_x, 1.0),
            zoom_y: on(config.zoom_enabled, zoom_y, 1.0),
        }
    }

    pub fn to_map(&self, width: usize, height: usize) -> Result<AffineMap> {
        affine_matrix(
            self.rotation_deg,
            self.shear,
            self.shift_x,
            self.shift_y,
            self.zoom_x,
            self.zoom_y,
            width,
            height,
        )
    }
}

/// Applies one random draw to a `[c,h,w]` image. The label passes through
/// untouched.
pub fn random_augment<T: Scalar>(
    img: &Tensor<T>,
    label: usize,
    config: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Tensor<T>, usize)> {
    let (out, _) = random_augment_with_draw(img, config, rng)?;
    Ok((out, label))
}

/// As [`random_augment`], also returning the parameters that were drawn.
pub fn random_augment_with_draw<T: Scalar>(
    img: &Tensor<T>,
    config: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Tensor<T>, AugmentDraw)> {
    config.validate()?;
    let [_, h, w] = match *img.shape() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "expected a [channels, height, width] image".into(),
            })
        }
    };
    let draw = AugmentDraw::sample(config, rng);
    let map = draw.to_map(w, h)?;
    Ok((warp_image(img, &map, T::zero())?, draw))
}

/// Augments every sample of a `[n,c,h,w]` batch in place. Sample `k` uses
/// the generator `rng_for(k)`, so the result does not depend on the order
/// samples are processed in.
pub(crate) fn augment_batch<T: Scalar>(
    batch: &mut Tensor<T>,
    config: &AugmentConfig,
    mut rng_for: impl FnMut(usize) -> Rng,
) -> Result<()> {
    if config.is_identity() {
        return Ok(());
    }
    let [n, c, h, w] = batch.dims4()?;
    let size = c * h * w;
    let mut scratch = vec![T::zero(); size];
    for k in 0..n {
        let draw = AugmentDraw::sample(config, &mut rng_for(k));
        let map = draw.to_map(w, h)?;
        let sample = &mut batch.data_mut()[k * size..(k + 1) * size];
        warp_into(sample, c, h, w, &map, T::zero(), &mut scratch);
        sample.copy_from_slice(&scratch);
    }
    Ok(())
}

/// Multiplies every element by `factor`.
pub fn rescale<T: Scalar>(img: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::param(format!("rescale factor {factor} must be positive")));
    }
    let f = T::from_f64(factor);
    let data = img.data().iter().map(|&v| v * f).collect();
    Tensor::from_vec(img.shape(), data)
}

/// Writes a `[1,h,w]` image as binary PGM or a `[3,h,w]` image as binary
/// PPM. Values are multiplied by 255, rounded and clamped to `0..=255`.
pub fn write_pnm<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let (c, h, w) = match *img.shape() {
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "PNM output needs 1 or 3 channels".into(),
            })
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let to_byte = |v: T| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
    for i in 0..h * w {
        for ch in 0..c {
            bytes.push(to_byte(img.data()[ch * h * w + i]));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
