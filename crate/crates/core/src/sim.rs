//! Synthetic sequences and tracking metrics.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{param, Error, Result};
use crate::legendre::{Dictionary, TemplatePatch};
use crate::models::{
    sample_coeff_transition, sample_motion_transition, sample_support_transition, CoeffVector, FullState,
    ModelParams, MotionState, SupportSet,
};
use crate::observation::{render_frame, Frame, NoiseModel};
use crate::rng::{stream, SEQUENCE_LANE};

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplatePattern {
    /// Two off-centre Gaussian bumps on a linear ramp.
    #[default]
    Bumps,
    Constant,
}

impl TemplatePattern {
    pub fn tag(self) -> &'static str {
        match self {
            TemplatePattern::Bumps => "bumps",
            TemplatePattern::Constant => "constant",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "bumps" => Some(TemplatePattern::Bumps),
            "constant" => Some(TemplatePattern::Constant),
            _ => None,
        }
    }
}

/// Lowest and highest template intensity.
pub const TEMPLATE_RANGE: (f64, f64) = (40.0, 220.0);

/// Deterministic synthetic grayscale template with its top-left corner at the
/// frame origin. The seed jitters the bump centres by at most one pixel.
pub fn make_template(pattern: TemplatePattern, h: usize, w: usize, seed: u64) -> Result<TemplatePatch> {
    if h < 4 || w < 4 {
        return Err(param("template", format!("{h} x {w} is smaller than 4 x 4")));
    }
    let (lo, hi) = TEMPLATE_RANGE;
    let pixels: Vec<f64> = match pattern {
        TemplatePattern::Constant => alloc::vec![(lo + hi) / 2.0; h * w],
        TemplatePattern::Bumps => {
            let mut rng = stream(seed, 0);
            let mut jitter = || rng.random::<f64>() * 2.0 - 1.0;
            let (hf, wf) = (h as f64, w as f64);
            let b1 = (0.3 * hf + jitter(), 0.35 * wf + jitter(), 0.15 * hf.min(wf));
            let b2 = (0.65 * hf + jitter(), 0.7 * wf + jitter(), 0.2 * hf.min(wf));
            let raw: Vec<f64> = (0..h * w)
                .map(|p| {
                    let (i, j) = ((p / w) as f64, (p % w) as f64);
                    let bump = |(ci, cj, s): (f64, f64, f64)| {
                        (-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2.0 * s * s)).exp()
                    };
                    bump(b1) + 0.7 * bump(b2) + 0.4 * (i / hf) + 0.2 * (j / wf)
                })
                .collect();
            let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            raw.into_iter().map(|v| lo + (hi - lo) * (v - min) / (max - min)).collect()
        }
    };
    TemplatePatch::new(pixels, h, w, 0, 0)
}

/// Everything needed to synthesise one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    /// Number of frames after the initial one.
    pub n_frames: usize,
    pub frame_dims: (usize, usize),
    pub template_dims: (usize, usize),
    pub pattern: TemplatePattern,
    pub template_seed: u64,
    /// Legendre order; the state has `2d + 1` coefficients.
    pub d: usize,
    pub params: ModelParams,
    /// The support moves only on frames divisible by this.
    pub support_period: usize,
    pub initial_support: usize,
    pub initial_motion: MotionState,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            n_frames: 50,
            frame_dims: (96, 96),
            template_dims: (32, 32),
            pattern: TemplatePattern::Bumps,
            template_seed: 0,
            d: 20,
            params: ModelParams::simulation(),
            support_period: 5,
            initial_support: 5,
            initial_motion: MotionState::IDENTITY,
        }
    }
}

impl SequenceConfig {
    pub fn n_lambda(&self) -> usize {
        2 * self.d + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.support_period == 0 {
            return Err(param("support_period", "must be at least 1"));
        }
        if self.params.n_lambda != self.n_lambda() {
            return Err(param(
                "n_lambda",
                format!("{} does not match 2d + 1 = {}", self.params.n_lambda, self.n_lambda()),
            ));
        }
        if self.initial_support > self.n_lambda() {
            return Err(param("initial_support", "exceeds n_lambda"));
        }
        let (fh, fw) = self.frame_dims;
        let (th, tw) = self.template_dims;
        if th > fh || tw > fw {
            return Err(param("template", format!("{th} x {tw} template does not fit a {fh} x {fw} frame")));
        }
        Ok(())
    }

    /// The template centred in the frame.
    pub fn template(&self) -> Result<TemplatePatch> {
        let (th, tw) = self.template_dims;
        let t = make_template(self.pattern, th, tw, self.template_seed)?;
        let oi = (self.frame_dims.0 - th) / 2;
        let oj = (self.frame_dims.1 - tw) / 2;
        Ok(t.placed_at(oi as i64, oj as i64))
    }
}

/// States for frames `0..=n_frames` and the frames rendered from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub template: TemplatePatch,
    pub states: Vec<FullState>,
    pub frames: Vec<Frame>,
}

/// `k` distinct indices of `0..n`, in increasing order.
fn random_subset<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort_unstable();
    out
}

/// Synthesises a sequence. All draws come from stream `SEQUENCE_LANE` of
/// `seed`, in the order: initial support, then per frame motion, support (on
/// change frames), coefficients, frame pixels.
pub fn generate_sequence(cfg: &SequenceConfig, seed: u64) -> Result<GroundTruth> {
    cfg.validate()?;
    let template = cfg.template()?;
    let dict = Dictionary::legendre(&template, cfg.d)?;
    let noise = NoiseModel::gaussian(cfg.params.sigma_o_sq, cfg.params.pixel_max);
    let n = cfg.n_lambda();
    let mut rng = stream(seed, SEQUENCE_LANE);
    let support = SupportSet::new(random_subset(cfg.initial_support, n, &mut rng), n)?;
    let mut state = FullState::new(cfg.initial_motion, support, CoeffVector::zeros(n))?;
    let mut states = Vec::with_capacity(cfg.n_frames + 1);
    let mut frames = Vec::with_capacity(cfg.n_frames + 1);
    for t in 0..=cfg.n_frames {
        if t > 0 {
            let motion = sample_motion_transition(&state.motion, &cfg.params, &mut rng);
            let support = if t % cfg.support_period == 0 {
                sample_support_transition(&state.support, &cfg.params, &mut rng)
            } else {
                state.support.clone()
            };
            let coeffs = sample_coeff_transition(&state.coeffs, &support, &cfg.params, &mut rng);
            state = FullState::new(motion, support, coeffs)?;
        }
        frames.push(render_frame(
            &state.motion,
            &state.coeffs,
            &template,
            &dict,
            cfg.frame_dims,
            &noise,
            &mut rng,
        )?);
        states.push(state.clone());
    }
    Ok(GroundTruth {
        template,
        states,
        frames,
    })
}

/// Distance between the translations of two motion states.
pub fn location_error(truth: &MotionState, estimate: &MotionState) -> f64 {
    (truth.ux - estimate.ux).hypot(truth.uy - estimate.uy)
}

/// `(‖U − Û‖² + ‖Λ − Λ̂‖², ‖U‖² + ‖Λ‖²)`. The shorter coefficient vector is
/// read as zero-padded.
pub fn squared_error(truth: &FullState, motion: &MotionState, coeffs: &CoeffVector) -> (f64, f64) {
    let u = truth.motion.to_array();
    let e = motion.to_array();
    let mut num: f64 = u.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut den: f64 = u.iter().map(|a| a * a).sum();
    let n = truth.coeffs.len().max(coeffs.len());
    for j in 0..n {
        let a = truth.coeffs.get(j).copied().unwrap_or(0.0);
        let b = coeffs.get(j).copied().unwrap_or(0.0);
        num += (a - b) * (a - b);
        den += a * a;
    }
    (num, den)
}

/// Running Monte Carlo sums for a per-frame NMSE.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NmseAccumulator {
    num: Vec<f64>,
    den: Vec<f64>,
    runs: usize,
}

impl NmseAccumulator {
    pub fn new(n_frames: usize) -> Self {
        Self {
            num: alloc::vec![0.0; n_frames],
            den: alloc::vec![0.0; n_frames],
            runs: 0,
        }
    }

    /// Adds one run of per-frame truths and estimates.
    pub fn add_run(&mut self, truth: &[FullState], estimates: &[(MotionState, CoeffVector)]) -> Result<()> {
        if truth.len() != self.num.len() || estimates.len() != truth.len() {
            return Err(Error::Size(format!(
                "{} truths and {} estimates for {} frames",
                truth.len(),
                estimates.len(),
                self.num.len()
            )));
        }
        for (t, (s, (u, c))) in truth.iter().zip(estimates).enumerate() {
            let (n, d) = squared_error(s, u, c);
            self.num[t] += n;
            self.den[t] += d;
        }
        self.runs += 1;
        Ok(())
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    /// Per-frame NMSE; `None` where the denominator is zero.
    pub fn finish(&self) -> Vec<Option<f64>> {
        self.num
            .iter()
            .zip(&self.den)
            .map(|(n, d)| (*d > 0.0).then(|| n / d))
            .collect()
    }
}

/// Per-frame NMSE over runs.
pub fn nmse(truths: &[Vec<FullState>], estimates: &[Vec<(MotionState, CoeffVector)>]) -> Result<Vec<Option<f64>>> {
    if truths.len() != estimates.len() {
        return Err(Error::Size("truth and estimate run counts differ".into()));
    }
    let frames = truths.first().map_or(0, Vec::len);
    let mut acc = NmseAccumulator::new(frames);
    for (t, e) in truths.iter().zip(estimates) {
        acc.add_run(t, e)?;
    }
    Ok(acc.finish())
}
