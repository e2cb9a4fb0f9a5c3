//! Particle filters: PaFiMoCS, its slow-support-change variant, PF-MT and the
//! PF-Gordon and auxiliary-PF baselines.
//!
//! Every variant runs the same outer loop. Each particle slot is propagated
//! and weighted independently with its own random stream. The weights are
//! then normalised, the posterior mean is taken, and the set is resampled.
//! Mode-tracking variants replace importance sampling of the coefficients
//! with a convex solve per particle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{param, Error, Result};
use crate::legendre::{energy_support, Dictionary, TemplatePatch};
use crate::models::{
    sample_coeff_transition, sample_motion_transition, sample_support_transition, stp_coeffs_log,
    stp_support_log, CoeffVector, FullState, ModelParams, MotionState, SupportSet,
};
use crate::observation::{compute_roi, log_likelihood_of_residual, roi_offset, Frame, NoiseModel};
use crate::rng::{stream, Stream, RESAMPLE_LANE};
use crate::solver::{solve, ModeTrackingProblem, SolverConfig};

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

/// Smallest variance handed to the solver; zero-noise models are degenerate
/// point masses for weighting but still need a finite cost.
pub const SOLVER_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    PfGordon,
    AuxPf,
    PfMt,
    Pafimocs,
    PafimocsSsc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::PfGordon,
        Variant::AuxPf,
        Variant::PfMt,
        Variant::Pafimocs,
        Variant::PafimocsSsc,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::PfGordon => "pf-gordon",
            Variant::AuxPf => "aux-pf",
            Variant::PfMt => "pf-mt",
            Variant::Pafimocs => "pafimocs",
            Variant::PafimocsSsc => "pafimocs-ssc",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    /// Variants that carry a sparse support.
    pub fn is_sparse(self) -> bool {
        matches!(self, Variant::Pafimocs | Variant::PafimocsSsc)
    }

    /// Default `(β, γ)` of the simulated-video regime.
    pub fn simulation_multipliers(self) -> (f64, f64) {
        match self {
            Variant::Pafimocs => (0.4, 0.7),
            Variant::PafimocsSsc => (0.4, 0.5),
            _ => (1.0, 0.0),
        }
    }

    /// Default `(β, γ)` of the real-video regime.
    pub fn video_multipliers(self) -> (f64, f64) {
        match self {
            Variant::Pafimocs => (1.0, 0.7),
            Variant::PafimocsSsc => (1.0, 0.5),
            _ => (1.0, 0.0),
        }
    }
}

/// How a solved coefficient vector is cut back to a support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Smallest prefix holding this fraction of the energy.
    Energy(f64),
    /// Strict magnitude threshold.
    FixedAlpha(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Energy(crate::legendre::ENERGY_FRACTION)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ResampleRule {
    #[default]
    EveryStep,
    /// Resample only when the effective sample size drops below this
    /// fraction of `n_pf`.
    EssBelow(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub variant: Variant,
    pub n_pf: usize,
    /// Legendre order; the filter works with `2d + 1` coefficients.
    pub d: usize,
    pub threshold: ThresholdRule,
    pub solver: SolverConfig,
    pub resample: ResampleRule,
    pub beta: f64,
    pub gamma: f64,
    /// Sparse-outlier multiplier for the mode-tracking solve.
    pub gamma_outlier: Option<f64>,
    /// Likelihood override; defaults to Gaussian noise from the model.
    pub likelihood: Option<NoiseModel>,
}

impl FilterConfig {
    /// Simulation-regime defaults for `variant`.
    pub fn new(variant: Variant, n_pf: usize, d: usize) -> Self {
        let (beta, gamma) = variant.simulation_multipliers();
        Self {
            variant,
            n_pf,
            d,
            threshold: ThresholdRule::default(),
            solver: SolverConfig::default(),
            resample: ResampleRule::EveryStep,
            beta,
            gamma,
            gamma_outlier: None,
            likelihood: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pf == 0 {
            return Err(param("n_pf", "need at least one particle"));
        }
        match self.threshold {
            ThresholdRule::Energy(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(param("threshold", "energy fraction must lie in (0, 1]"));
            }
            ThresholdRule::FixedAlpha(a) if !(a >= 0.0) => {
                return Err(param("threshold", "alpha must be non-negative"));
            }
            _ => {}
        }
        if let ResampleRule::EssBelow(f) = self.resample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(param("resample", "ESS fraction must lie in (0, 1]"));
            }
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(param("beta", "multipliers must be non-negative"));
        }
        Ok(())
    }
}

/// Support of `coeffs` under `rule`.
pub fn threshold_support(coeffs: &CoeffVector, rule: ThresholdRule) -> Result<SupportSet> {
    match rule {
        ThresholdRule::FixedAlpha(alpha) => Ok(SupportSet::from_mask(
            &coeffs.iter().map(|c| c.abs() > alpha).collect::<Vec<_>>(),
        )),
        ThresholdRule::Energy(fraction) => energy_support(coeffs, fraction).map(|(s, _)| s),
    }
}

/// Low-variance systematic resampling: ancestor indices for `weights`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::Contract("cannot resample an empty set".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Contract("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("weights sum to {total}, not 1")));
    }
    let step = 1.0 / n as f64;
    let offset = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = offset + k as f64 * step;
        while u >= cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        // rounding in the running sum can land on a trailing zero weight
        let mut pick = i;
        while weights[pick] == 0.0 && pick > 0 {
            pick -= 1;
        }
        out.push(pick);
    }
    Ok(out)
}

/// Normalises log-weights in place and returns the pre-normalisation
/// maximum. `None` when every weight is zero.
fn normalize_log_weights(lw: &mut [f64]) -> Option<f64> {
    let hi = lw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = lw.iter().map(|&v| if v.is_nan() { 0.0 } else { (v - hi).exp() }).sum();
    let log_norm = hi + sum.ln();
    for v in lw.iter_mut() {
        *v = if v.is_nan() { f64::NEG_INFINITY } else { *v - log_norm };
    }
    Some(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: FullState,
    pub log_weight: f64,
}

/// Particle population with one random stream per slot.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    streams: Vec<Stream>,
    resampler: Stream,
    pub step: usize,
}

impl ParticleSet {
    /// `n_pf` copies of `state` with uniform weights.
    pub fn initialized(state: FullState, n_pf: usize, seed: u64) -> Result<Self> {
        if n_pf == 0 {
            return Err(param("n_pf", "need at least one particle"));
        }
        let lw = -(n_pf as f64).ln();
        Ok(Self {
            particles: vec![
                Particle {
                    state,
                    log_weight: lw,
                };
                n_pf
            ],
            streams: (0..n_pf as u64).map(|i| stream(seed, i)).collect(),
            resampler: stream(seed, RESAMPLE_LANE),
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        let sq: f64 = self.particles.iter().map(|p| (2.0 * p.log_weight).exp()).sum();
        1.0 / sq
    }

    fn resample(&mut self) -> Result<()> {
        let ancestors = systematic_resample(&self.weights(), &mut self.resampler)?;
        let lw = -(self.len() as f64).ln();
        let old = core::mem::take(&mut self.particles);
        self.particles = ancestors
            .into_iter()
            .map(|a| Particle {
                state: old[a].state.clone(),
                log_weight: lw,
            })
            .collect();
        Ok(())
    }
}

/// Weighted means of the motion and coefficient states.
pub fn posterior_estimate(set: &ParticleSet) -> (MotionState, CoeffVector) {
    let n = set.particles.first().map_or(0, |p| p.state.coeffs.len());
    let mut u = [0.0; 3];
    let mut c = CoeffVector::zeros(n);
    for p in &set.particles {
        let w = p.log_weight.exp();
        if w == 0.0 {
            continue;
        }
        for (acc, v) in u.iter_mut().zip(p.state.motion.to_array()) {
            *acc += w * v;
        }
        c.axpy(w, &p.state.coeffs, 1.0);
    }
    (MotionState::from_array(u), c)
}

/// Diagnostics of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub motion: MotionState,
    pub coeffs: CoeffVector,
    /// Effective sample size after weighting, before resampling.
    pub ess: f64,
    pub max_log_weight: f64,
    pub resampled: bool,
    pub invalid_roi: usize,
    pub support_sizes: Vec<usize>,
    /// Mode-tracking solves that hit the iteration cap.
    pub unconverged_solves: usize,
}

/// A configured filter bound to its template, dictionary and model.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: FilterConfig,
    pub params: ModelParams,
    template: TemplatePatch,
    dict: Dictionary,
    noise: NoiseModel,
    pub set: ParticleSet,
}

struct Weighted {
    state: FullState,
    log_weight: f64,
    invalid_roi: bool,
    unconverged: bool,
}

impl Tracker {
    /// Filter initialised at the known state `initial`. Its coefficients are
    /// truncated (or zero-padded) to the `2d + 1` columns of the filter's
    /// dictionary.
    pub fn new(
        config: FilterConfig,
        template: TemplatePatch,
        params: ModelParams,
        initial: &FullState,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let dict = Dictionary::legendre(&template, config.d)?;
        Self::with_dictionary(config, template, dict, params, initial, seed)
    }

    /// As [`Tracker::new`] with a caller-built dictionary.
    pub fn with_dictionary(
        config: FilterConfig,
        template: TemplatePatch,
        dict: Dictionary,
        params: ModelParams,
        initial: &FullState,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if dict.n_rows() != template.len() {
            return Err(Error::Size("dictionary rows differ from template size".into()));
        }
        let n = dict.n_cols();
        let coeffs = CoeffVector::from_fn(n, |j, _| initial.coeffs.get(j).copied().unwrap_or(0.0));
        let support = if config.variant.is_sparse() {
            SupportSet::new(initial.support.iter().filter(|&j| j < n).collect(), n)?
        } else {
            SupportSet::full(n)
        };
        let coeffs = if config.variant.is_sparse() {
            support.restrict(&coeffs)
        } else {
            coeffs
        };
        let state = FullState::new(initial.motion, support, coeffs)?;
        let noise = config
            .likelihood
            .unwrap_or_else(|| NoiseModel::gaussian(params.sigma_o_sq, params.pixel_max));
        noise.validate()?;
        let set = ParticleSet::initialized(state, config.n_pf, seed)?;
        Ok(Self {
            config,
            params,
            template,
            dict,
            noise,
            set,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn template(&self) -> &TemplatePatch {
        &self.template
    }

    /// Current weighted estimate.
    pub fn estimate(&self) -> (MotionState, CoeffVector) {
        posterior_estimate(&self.set)
    }

    /// Log observation likelihood; `-inf` with an out-of-frame ROI.
    fn log_ol(&self, frame: &Frame, motion: &MotionState, coeffs: &CoeffVector) -> (f64, bool) {
        let roi = compute_roi(motion, &self.template, frame.dims());
        match roi_offset(frame, &roi, &self.template) {
            Ok(y) => (
                log_likelihood_of_residual(&(y - self.dict.apply(coeffs)), frame.len(), &self.noise),
                false,
            ),
            Err(_) => (f64::NEG_INFINITY, true),
        }
    }

    /// Mode-tracking solve of the coefficients given the sampled motion.
    fn mode_track(
        &self,
        y: nalgebra::DVector<f64>,
        prev: &CoeffVector,
        cond: SupportSet,
        beta: f64,
        gamma: f64,
    ) -> Result<(CoeffVector, bool)> {
        let mut problem = ModeTrackingProblem::new(
            y,
            &self.dict,
            prev.clone(),
            cond,
            self.params.sigma_o_sq.max(SOLVER_VARIANCE_FLOOR),
            self.params.sigma_l_sq.max(SOLVER_VARIANCE_FLOOR),
        )
        .with_multipliers(beta, gamma);
        problem.gamma_outlier = self.config.gamma_outlier;
        let res = solve(&problem, &self.config.solver)?;
        Ok((res.lambda, !res.converged))
    }

    fn propagate(&self, prev: &FullState, frame: &Frame, rng: &mut Stream) -> Result<Weighted> {
        let p = &self.params;
        let motion = sample_motion_transition(&prev.motion, p, rng);
        let invalid = |state: FullState| Weighted {
            state,
            log_weight: f64::NEG_INFINITY,
            invalid_roi: true,
            unconverged: false,
        };
        let roi = compute_roi(&motion, &self.template, frame.dims());
        match self.config.variant {
            Variant::PfGordon | Variant::AuxPf => {
                let coeffs = sample_coeff_transition(&prev.coeffs, &prev.support, p, rng);
                let state = FullState::new(motion, prev.support.clone(), coeffs)?;
                let (lw, bad) = self.log_ol(frame, &state.motion, &state.coeffs);
                Ok(Weighted {
                    state,
                    log_weight: lw,
                    invalid_roi: bad,
                    unconverged: false,
                })
            }
            Variant::PfMt => {
                let Ok(y) = roi_offset(frame, &roi, &self.template) else {
                    return Ok(invalid(FullState::new(motion, prev.support.clone(), prev.coeffs.clone())?));
                };
                let full = SupportSet::full(self.dict.n_cols());
                let (coeffs, unconverged) = self.mode_track(y, &prev.coeffs, full.clone(), 1.0, 0.0)?;
                let (ol, _) = self.log_ol(frame, &motion, &coeffs);
                let stp = stp_coeffs_log(&coeffs, &prev.coeffs, &full, p)?;
                Ok(Weighted {
                    state: FullState::new(motion, full, coeffs)?,
                    log_weight: ol + stp,
                    invalid_roi: false,
                    unconverged,
                })
            }
            Variant::Pafimocs | Variant::PafimocsSsc => {
                let ssc = self.config.variant == Variant::PafimocsSsc;
                let cond = if ssc {
                    prev.support.clone()
                } else {
                    sample_support_transition(&prev.support, p, rng)
                };
                let Ok(y) = roi_offset(frame, &roi, &self.template) else {
                    return Ok(invalid(FullState::new(motion, prev.support.clone(), prev.coeffs.clone())?));
                };
                let (solved, unconverged) =
                    self.mode_track(y, &prev.coeffs, cond, self.config.beta, self.config.gamma)?;
                let support = threshold_support(&solved, self.config.threshold)?;
                let coeffs = support.restrict(&solved);
                let (ol, _) = self.log_ol(frame, &motion, &coeffs);
                let mut lw = ol + stp_coeffs_log(&coeffs, &prev.coeffs, &support, p)?;
                if ssc {
                    lw += stp_support_log(&support, &prev.support, p);
                }
                Ok(Weighted {
                    state: FullState::new(motion, support, coeffs)?,
                    log_weight: lw,
                    invalid_roi: false,
                    unconverged,
                })
            }
        }
    }

    /// Advances the filter by one frame.
    pub fn step(&mut self, frame: &Frame) -> Result<StepReport> {
        let step = self.set.step + 1;
        let n = self.set.len();
        let lost = |invalid_roi| Error::TrackerLost {
            step,
            n_particles: n,
            invalid_roi,
        };

        // auxiliary first stage: pick ancestors by the likelihood at the
        // zero-noise prediction of each particle
        let mut first_stage = vec![0.0; n];
        if self.config.variant == Variant::AuxPf {
            let mut lw: Vec<f64> = self
                .set
                .particles
                .iter()
                .map(|p| p.log_weight + self.log_ol(frame, &p.state.motion, &p.state.coeffs).0)
                .collect();
            let firsts: Vec<f64> = lw
                .iter()
                .zip(&self.set.particles)
                .map(|(l, p)| l - p.log_weight)
                .collect();
            let bad = firsts.iter().filter(|v| **v == f64::NEG_INFINITY).count();
            normalize_log_weights(&mut lw).ok_or_else(|| lost(bad))?;
            let weights: Vec<f64> = lw.iter().map(|v| v.exp()).collect();
            let ancestors = systematic_resample(&weights, &mut self.set.resampler)?;
            let uniform = -(n as f64).ln();
            let old = core::mem::take(&mut self.set.particles);
            self.set.particles = ancestors
                .iter()
                .map(|&a| Particle {
                    state: old[a].state.clone(),
                    log_weight: uniform,
                })
                .collect();
            first_stage = ancestors.iter().map(|&a| firsts[a]).collect();
        }

        let mut outcomes = Vec::with_capacity(n);
        for i in 0..n {
            let prev = self.set.particles[i].state.clone();
            let mut rng = self.set.streams[i].clone();
            let w = self.propagate(&prev, frame, &mut rng)?;
            self.set.streams[i] = rng;
            outcomes.push(w);
        }

        let invalid_roi = outcomes.iter().filter(|w| w.invalid_roi).count();
        let unconverged_solves = outcomes.iter().filter(|w| w.unconverged).count();
        let mut lw: Vec<f64> = outcomes
            .iter()
            .zip(&self.set.particles)
            .zip(&first_stage)
            .map(|((w, p), f)| {
                let v = p.log_weight + w.log_weight - f;
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect();
        let max_log_weight = normalize_log_weights(&mut lw).ok_or_else(|| lost(invalid_roi))?;
        self.set.particles = outcomes
            .into_iter()
            .zip(lw)
            .map(|(w, log_weight)| Particle {
                state: w.state,
                log_weight,
            })
            .collect();
        self.set.step = step;

        let (motion, coeffs) = posterior_estimate(&self.set);
        let ess = self.set.ess();
        let support_sizes = self.set.particles.iter().map(|p| p.state.support.len()).collect();
        let resampled = match self.config.resample {
            ResampleRule::EveryStep => true,
            ResampleRule::EssBelow(f) => ess < f * n as f64,
        };
        if resampled {
            self.set.resample()?;
        }
        Ok(StepReport {
            step,
            motion,
            coeffs,
            ess,
            max_log_weight,
            resampled,
            invalid_roi,
            support_sizes,
            unconverged_solves,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::render_frame;
    use proptest::prelude::*;

    fn template() -> TemplatePatch {
        let (h, w) = (10, 10);
        let px = (0..h * w)
            .map(|p| {
                let (i, j) = ((p / w) as f64, (p % w) as f64);
                60.0 + 8.0 * i + 5.0 * j + 30.0 * (-((i - 3.0).powi(2) + (j - 6.0).powi(2)) / 6.0).exp()
            })
            .collect();
        TemplatePatch::new(px, h, w, 10, 10).unwrap()
    }

    #[test]
    fn tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert_eq!(Variant::from_tag("pf"), None);
    }

    #[test]
    fn threshold_examples() {
        let c = CoeffVector::from_vec(vec![1.0, 0.4, -0.6]);
        assert_eq!(threshold_support(&c, ThresholdRule::FixedAlpha(0.5)).unwrap().indices(), &[0, 2]);
        assert!(threshold_support(&CoeffVector::zeros(3), ThresholdRule::FixedAlpha(0.5)).unwrap().is_empty());
        assert!(threshold_support(&CoeffVector::zeros(3), ThresholdRule::default()).unwrap().is_empty());
        let e = CoeffVector::from_vec(vec![10.0, 0.1, 0.0]);
        assert_eq!(threshold_support(&e, ThresholdRule::default()).unwrap().indices(), &[0]);
    }

    #[test]
    fn resample_examples() {
        let mut rng = stream(1, 0);
        assert_eq!(systematic_resample(&[0.25; 4], &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(systematic_resample(&[0.0, 1.0, 0.0], &mut rng).unwrap(), vec![1, 1, 1]);
        assert!(matches!(systematic_resample(&[0.5, 0.6], &mut rng), Err(Error::Contract(_))));
        assert!(matches!(systematic_resample(&[], &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn resample_offspring_is_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let trials = 100_000;
        let mut counts = [0.0f64; 5];
        let mut sq = [0.0f64; 5];
        let mut rng = stream(2, 0);
        for _ in 0..trials {
            let mut c = [0.0f64; 5];
            for a in systematic_resample(&w, &mut rng).unwrap() {
                c[a] += 1.0;
            }
            for k in 0..5 {
                counts[k] += c[k];
                sq[k] += c[k] * c[k];
            }
        }
        for k in 0..5 {
            let mean = counts[k] / trials as f64;
            let var = sq[k] / trials as f64 - mean * mean;
            let se = (var / trials as f64).sqrt().max(1e-9);
            assert!((mean - 5.0 * w[k]).abs() <= 3.0 * se + 1e-12, "{k}: {mean} vs {}", 5.0 * w[k]);
        }
    }

    fn set_with(motions: &[[f64; 3]], coeffs: &[Vec<f64>], lw: &[f64]) -> ParticleSet {
        let n = coeffs[0].len();
        let mut set = ParticleSet::initialized(
            FullState::new(MotionState::IDENTITY, SupportSet::full(n), CoeffVector::zeros(n)).unwrap(),
            motions.len(),
            0,
        )
        .unwrap();
        for (k, p) in set.particles.iter_mut().enumerate() {
            p.state = FullState::new(
                MotionState::from_array(motions[k]),
                SupportSet::full(n),
                CoeffVector::from_vec(coeffs[k].clone()),
            )
            .unwrap();
            p.log_weight = lw[k];
        }
        set
    }

    #[test]
    fn posterior_examples() {
        let half = 0.5f64.ln();
        let set = set_with(&[[0.0, 0.0, 1.0], [2.0, 0.0, 1.0]], &[vec![1.0], vec![3.0]], &[half, half]);
        let (u, c) = posterior_estimate(&set);
        assert_eq!(u, MotionState::new(1.0, 0.0, 1.0));
        assert_eq!(c[0], 2.0);
        let one = set_with(&[[0.3, -1.0, 1.2]], &[vec![0.5, -0.5]], &[0.0]);
        let (u, c) = posterior_estimate(&one);
        assert_eq!(u, MotionState::new(0.3, -1.0, 1.2));
        assert_eq!(c.as_slice(), &[0.5, -0.5]);
    }

    #[test]
    fn normalisation_handles_dead_particles() {
        let mut lw = vec![f64::NEG_INFINITY, -1000.0, -1001.0, f64::NAN];
        let hi = normalize_log_weights(&mut lw).unwrap();
        assert_eq!(hi, -1000.0);
        let s: f64 = lw.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(lw[3], f64::NEG_INFINITY);
        assert!(normalize_log_weights(&mut [f64::NEG_INFINITY; 3]).is_none());
    }

    fn degenerate_params() -> ModelParams {
        ModelParams {
            n_lambda: 5,
            s_expected: 2,
            p_a: 0.0,
            p_r: 0.0,
            sigma_l_sq: 0.0,
            sigma_u: [0.0; 3],
            sigma_o_sq: 0.0,
            pixel_max: 255.0,
        }
    }

    #[test]
    fn degenerate_single_particle_is_exact() {
        let t = template();
        let params = degenerate_params();
        let dict = Dictionary::legendre(&t, 2).unwrap();
        let truth = FullState::new(MotionState::new(1.0, -2.0, 1.0), SupportSet::empty(5), CoeffVector::zeros(5)).unwrap();
        let noise = NoiseModel::gaussian(0.0, 255.0);
        for v in Variant::ALL {
            let mut tr = Tracker::new(FilterConfig::new(v, 1, 2), t.clone(), params.clone(), &truth, 3).unwrap();
            let mut rng = stream(9, 0);
            for _ in 0..10 {
                let f = render_frame(&truth.motion, &truth.coeffs, &t, &dict, (40, 40), &noise, &mut rng).unwrap();
                let r = tr.step(&f).unwrap();
                assert_eq!(r.motion, truth.motion, "{v:?}");
                assert_eq!(r.coeffs, truth.coeffs, "{v:?}");
                assert_eq!(tr.set.particles[0].log_weight, 0.0);
            }
        }
    }

    #[test]
    fn lost_tracker_reports() {
        let t = template();
        let mut params = degenerate_params();
        params.sigma_o_sq = 1.0;
        let truth = FullState::new(MotionState::new(100.0, 0.0, 1.0), SupportSet::empty(5), CoeffVector::zeros(5)).unwrap();
        let frame = Frame::new(vec![0.0; 1600], 40, 40).unwrap();
        let mut tr = Tracker::new(FilterConfig::new(Variant::Pafimocs, 3, 2), t, params, &truth, 0).unwrap();
        match tr.step(&frame) {
            Err(Error::TrackerLost {
                step: 1,
                n_particles: 3,
                invalid_roi: 3,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn steps_are_deterministic_and_normalised() {
        let t = template();
        let mut params = ModelParams::simulation();
        params.n_lambda = 9;
        params.s_expected = 2;
        let dict = Dictionary::legendre(&t, 4).unwrap();
        let truth = FullState::new(
            MotionState::IDENTITY,
            SupportSet::new(vec![0, 3], 9).unwrap(),
            CoeffVector::from_fn(9, |j, _| if j == 0 { 0.2 } else if j == 3 { -0.1 } else { 0.0 }),
        )
        .unwrap();
        let noise = NoiseModel::gaussian(1.0, 255.0);
        let mut rng = stream(4, 0);
        let frames: Vec<Frame> = (0..4)
            .map(|_| render_frame(&truth.motion, &truth.coeffs, &t, &dict, (40, 40), &noise, &mut rng).unwrap())
            .collect();
        for v in Variant::ALL {
            let mut cfg = FilterConfig::new(v, 12, 4);
            cfg.resample = ResampleRule::EssBelow(0.5);
            let run = || {
                let mut tr = Tracker::new(cfg.clone(), t.clone(), params.clone(), &truth, 11).unwrap();
                let mut out = Vec::new();
                for f in &frames {
                    let r = tr.step(f).unwrap();
                    let s: f64 = tr.set.weights().iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                    if r.resampled {
                        let u = -(12f64).ln();
                        assert!(tr.set.particles.iter().all(|p| p.log_weight == u));
                    }
                    if v.is_sparse() {
                        for p in &tr.set.particles {
                            for j in p.state.support.complement().iter() {
                                assert_eq!(p.state.coeffs[j], 0.0);
                            }
                        }
                    }
                    out.push(r);
                }
                out
            };
            assert_eq!(run(), run(), "{v:?}");
        }
    }

    proptest! {
        #[test]
        fn resample_output_is_valid(raw in proptest::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let a = systematic_resample(&w, &mut stream(seed, 0)).unwrap();
            prop_assert_eq!(a.len(), w.len());
            prop_assert!(a.windows(2).all(|p| p[0] <= p[1]));
            for &i in &a {
                prop_assert!(w[i] > 0.0);
            }
        }
    }
}
