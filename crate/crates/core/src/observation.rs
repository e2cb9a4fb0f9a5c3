//! Template/illumination observation model.
//!
//! Inside the region of interest a frame equals `I_0 + ΦΛ` plus Gaussian
//! noise; every other pixel is independent uniform clutter on
//! `[0, pixel_max]`. The residual `Y(ROI(U)) − I_0 − ΦΛ` is affine in `Λ`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param, Error, Result};
use crate::legendre::{Dictionary, TemplatePatch};
use crate::models::{isotropic_gaussian_log, CoeffVector, MotionState};

/// Grey-level image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Vec<f64>,
    height: usize,
    width: usize,
}

impl Frame {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Size(format!(
                "{} pixels cannot form a {height} x {width} frame",
                pixels.len()
            )));
        }
        Ok(Self {
            pixels,
            height,
            width,
        })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Total pixel count `m`.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Frame pixels covered by the transformed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiIndexSet {
    /// Rounded row coordinate per template pixel.
    pub rows: Vec<i64>,
    /// Rounded column coordinate per template pixel.
    pub cols: Vec<i64>,
    /// Flat frame index per template pixel (`usize::MAX` where out of frame).
    pub indices: Vec<usize>,
    pub valid: bool,
}

/// Pixel noise inside the region of interest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    /// Two-component mixture: nominal Gaussian plus a wide outlier Gaussian.
    GaussianMixture,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma_sq: f64,
    pub sigma_out_sq: f64,
    pub p_out: f64,
    /// Upper bound of the uniform clutter.
    pub pixel_max: f64,
}

impl NoiseModel {
    pub fn gaussian(sigma_sq: f64, pixel_max: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma_sq,
            sigma_out_sq: sigma_sq,
            p_out: 0.0,
            pixel_max,
        }
    }

    pub fn mixture(sigma_sq: f64, sigma_out_sq: f64, p_out: f64, pixel_max: f64) -> Result<Self> {
        let model = Self {
            kind: NoiseKind::GaussianMixture,
            sigma_sq,
            sigma_out_sq,
            p_out,
            pixel_max,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(param("sigma_o_sq", "must be a finite non-negative variance"));
        }
        if !(self.pixel_max > 0.0) {
            return Err(param("pixel_max", "must be positive"));
        }
        if self.kind == NoiseKind::GaussianMixture {
            if !(self.sigma_sq > 0.0) {
                return Err(param("sigma_o_sq", "mixture noise needs a positive variance"));
            }
            if !(self.sigma_out_sq >= self.sigma_sq) {
                return Err(param("sigma_out_sq", "must be at least sigma_o_sq"));
            }
            if !(0.0..1.0).contains(&self.p_out) {
                return Err(param("p_out", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Rounded, translated and scaled template coordinates. Non-positive or
/// non-finite scales, and any coordinate outside the frame, clear `valid`.
pub fn compute_roi(
    motion: &MotionState,
    template: &TemplatePatch,
    frame_dims: (usize, usize),
) -> RoiIndexSet {
    let (h, w) = (frame_dims.0 as i64, frame_dims.1 as i64);
    let (ci, cj) = template.centroid();
    let s = motion.scale;
    let mut valid = s > 0.0 && s.is_finite() && motion.ux.is_finite() && motion.uy.is_finite();
    let n = template.len();
    let mut rows = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(n);
    for (&i0, &j0) in template.coord_i().iter().zip(template.coord_j()) {
        // f64::round rounds half away from zero
        let r = (motion.ux + s * (i0 as f64 - ci) + ci).round();
        let c = (motion.uy + s * (j0 as f64 - cj) + cj).round();
        let (r, c) = if r.is_finite() && c.is_finite() {
            (r as i64, c as i64)
        } else {
            (i64::MIN, i64::MIN)
        };
        let inside = (0..h).contains(&r) && (0..w).contains(&c);
        valid &= inside;
        rows.push(r);
        cols.push(c);
        indices.push(if inside { (r * w + c) as usize } else { usize::MAX });
    }
    RoiIndexSet {
        rows,
        cols,
        indices,
        valid,
    }
}

/// Synthesises one frame: clutter everywhere, then `I_0 + ΦΛ + noise` on the
/// region of interest. ROI pixels are not clamped. Draw order: one uniform per
/// frame pixel (row-major), then one noise draw per template pixel.
#[allow(clippy::too_many_arguments)]
pub fn render_frame<R: Rng + ?Sized>(
    motion: &MotionState,
    coeffs: &CoeffVector,
    template: &TemplatePatch,
    dict: &Dictionary,
    frame_dims: (usize, usize),
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Frame> {
    let roi = compute_roi(motion, template, frame_dims);
    if !roi.valid {
        return Err(Error::InvalidRoi);
    }
    check_dims(coeffs, template, dict)?;
    let m = frame_dims.0 * frame_dims.1;
    let mut pixels: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * noise.pixel_max).collect();
    let illum = dict.apply(coeffs);
    let sd = noise.sigma_sq.sqrt();
    let sd_out = noise.sigma_out_sq.sqrt();
    for (p, &idx) in roi.indices.iter().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        let scale = match noise.kind {
            NoiseKind::Gaussian => sd,
            NoiseKind::GaussianMixture => {
                if rng.random::<f64>() < noise.p_out {
                    sd_out
                } else {
                    sd
                }
            }
        };
        pixels[idx] = template.pixels()[p] + illum[p] + scale * z;
    }
    Frame::new(pixels, frame_dims.0, frame_dims.1)
}

fn check_dims(coeffs: &CoeffVector, template: &TemplatePatch, dict: &Dictionary) -> Result<()> {
    if dict.n_rows() != template.len() || dict.n_cols() != coeffs.len() {
        return Err(Error::Size(format!(
            "dictionary {} x {}, template {} pixels, {} coefficients",
            dict.n_rows(),
            dict.n_cols(),
            template.len(),
            coeffs.len()
        )));
    }
    Ok(())
}

/// `Y(ROI) − I_0` for a valid region of interest.
pub fn roi_offset(frame: &Frame, roi: &RoiIndexSet, template: &TemplatePatch) -> Result<DVector<f64>> {
    if !roi.valid {
        return Err(Error::InvalidRoi);
    }
    if roi.indices.len() != template.len() {
        return Err(Error::Size("ROI and template lengths differ".into()));
    }
    let px = frame.pixels();
    Ok(DVector::from_iterator(
        template.len(),
        roi.indices
            .iter()
            .zip(template.pixels().iter())
            .map(|(&idx, &t)| px[idx] - t),
    ))
}

/// The affine residual `Y(ROI(U)) − I_0 − ΦΛ`.
pub fn residual_g(
    frame: &Frame,
    motion: &MotionState,
    coeffs: &CoeffVector,
    template: &TemplatePatch,
    dict: &Dictionary,
) -> Result<DVector<f64>> {
    check_dims(coeffs, template, dict)?;
    let roi = compute_roi(motion, template, frame.dims());
    Ok(roi_offset(frame, &roi, template)? - dict.apply(coeffs))
}

/// Log observation likelihood of an ROI residual in a frame of `m` pixels.
pub fn log_likelihood_of_residual(residual: &DVector<f64>, m: usize, noise: &NoiseModel) -> f64 {
    let n_l = residual.len();
    let clutter = (m.saturating_sub(n_l)) as f64 * (1.0 / noise.pixel_max).ln();
    let data = match noise.kind {
        NoiseKind::Gaussian => isotropic_gaussian_log(residual.norm_squared(), noise.sigma_sq, n_l),
        NoiseKind::GaussianMixture => {
            let ln_in = (1.0 - noise.p_out).ln() - 0.5 * (2.0 * PI * noise.sigma_sq).ln();
            let ln_out = noise.p_out.ln() - 0.5 * (2.0 * PI * noise.sigma_out_sq).ln();
            residual
                .iter()
                .map(|&r| {
                    let a = ln_in - r * r / (2.0 * noise.sigma_sq);
                    let b = ln_out - r * r / (2.0 * noise.sigma_out_sq);
                    let hi = a.max(b);
                    if hi == f64::NEG_INFINITY {
                        hi
                    } else {
                        hi + ((a - hi).exp() + (b - hi).exp()).ln()
                    }
                })
                .sum()
        }
    };
    data + clutter
}

/// Log observation likelihood; `-inf` for an out-of-frame region of interest.
pub fn log_likelihood(
    frame: &Frame,
    motion: &MotionState,
    coeffs: &CoeffVector,
    template: &TemplatePatch,
    dict: &Dictionary,
    noise: &NoiseModel,
) -> f64 {
    match residual_g(frame, motion, coeffs, template, dict) {
        Ok(r) => log_likelihood_of_residual(&r, frame.len(), noise),
        Err(_) => f64::NEG_INFINITY,
    }
}
