//! Flat `key = value` configuration.
//!
//! One setting per line, `#` starts a comment. Model keys are shared with
//! [`ModelParams`]; harness keys describe the sequence and the filter line-up.
//! Per-filter overrides are written `<label>.<key>`, solver settings
//! `solver.<key>`. Unknown keys are an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pafimocs_core::filters::{FilterConfig, ResampleRule, ThresholdRule, Variant};
use pafimocs_core::models::{derive_pr_stationary, ModelParams, MotionState};
use pafimocs_core::sim::{SequenceConfig, TemplatePattern};
use pafimocs_core::solver::{SolverConfig, StepRule};

use crate::error::{HarnessError, Result};

/// Multiplier defaults to use when a filter sets none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regime {
    #[default]
    Simulation,
    Video,
}

/// One filter of the line-up, e.g. `pf-mt-3`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub label: String,
    pub config: FilterConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub sequence: SequenceConfig,
    pub n_monte_carlo: usize,
    pub regime: Regime,
    pub filters: Vec<FilterSpec>,
}

pub const STANDARD_FILTERS: [&str; 8] = [
    "pafimocs",
    "pafimocs-ssc",
    "pf-mt-3",
    "pf-mt-20",
    "pf-gordon-3",
    "pf-gordon-20",
    "aux-pf-3",
    "aux-pf-20",
];

impl SimConfig {
    /// The simulated-video experiment: 100 particles per filter, 50 frames,
    /// 20 runs.
    pub fn standard() -> Self {
        let sequence = SequenceConfig::default();
        let filters = STANDARD_FILTERS
            .iter()
            .map(|l| filter_from_label(l, sequence.d, 100, Regime::Simulation).expect("built-in label"))
            .collect();
        Self {
            seed: 42,
            sequence,
            n_monte_carlo: 20,
            regime: Regime::Simulation,
            filters,
        }
    }

    /// The standard setup cut to 2 runs of 10 frames.
    pub fn smoke() -> Self {
        let mut c = Self::standard();
        c.n_monte_carlo = 2;
        c.sequence.n_frames = 10;
        c
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(cfg_err(k + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (k + 1, value.trim().to_string())).is_some() {
                return Err(cfg_err(k + 1, format!("duplicate key `{key}`")));
            }
        }
        build(entries)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_kv_string(&self) -> String {
        let s = &self.sequence;
        let p = &s.params;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("n_monte_carlo", self.n_monte_carlo.to_string());
        put("regime", regime_tag(self.regime).into());
        put("n_frames", s.n_frames.to_string());
        put("frame_h", s.frame_dims.0.to_string());
        put("frame_w", s.frame_dims.1.to_string());
        put("template_h", s.template_dims.0.to_string());
        put("template_w", s.template_dims.1.to_string());
        put("template_pattern", s.pattern.tag().into());
        put("template_seed", s.template_seed.to_string());
        put("d", s.d.to_string());
        put("support_period", s.support_period.to_string());
        put("initial_support", s.initial_support.to_string());
        put("initial_ux", s.initial_motion.ux.to_string());
        put("initial_uy", s.initial_motion.uy.to_string());
        put("initial_scale", s.initial_motion.scale.to_string());
        put("s_expected", p.s_expected.to_string());
        put("p_a", p.p_a.to_string());
        put("p_r", p.p_r.to_string());
        put("sigma_l_sq", p.sigma_l_sq.to_string());
        put("sigma_u_xx", p.sigma_u[0].to_string());
        put("sigma_u_yy", p.sigma_u[1].to_string());
        put("sigma_u_ss", p.sigma_u[2].to_string());
        put("sigma_o_sq", p.sigma_o_sq.to_string());
        put("pixel_max", p.pixel_max.to_string());
        let labels: Vec<&str> = self.filters.iter().map(|f| f.label.as_str()).collect();
        put("filters", labels.join(", "));
        for f in &self.filters {
            let c = &f.config;
            put(&format!("{}.n_pf", f.label), c.n_pf.to_string());
            put(&format!("{}.beta", f.label), c.beta.to_string());
            put(&format!("{}.gamma", f.label), c.gamma.to_string());
            if let Some(g) = c.gamma_outlier {
                put(&format!("{}.gamma_outlier", f.label), g.to_string());
            }
            put(&format!("{}.threshold", f.label), threshold_tag(c.threshold));
            put(&format!("{}.resample", f.label), resample_tag(c.resample));
            put(&format!("{}.solver.max_iterations", f.label), c.solver.max_iterations.to_string());
            put(&format!("{}.solver.kkt_tolerance", f.label), c.solver.kkt_tolerance.to_string());
            put(&format!("{}.solver.step", f.label), step_tag(c.solver.step).into());
        }
        out
    }
}

fn cfg_err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        message: message.into(),
    }
}

fn regime_tag(r: Regime) -> &'static str {
    match r {
        Regime::Simulation => "simulation",
        Regime::Video => "video",
    }
}

fn step_tag(s: StepRule) -> &'static str {
    match s {
        StepRule::SpectralBound => "spectral",
        StepRule::Backtracking => "backtracking",
    }
}

fn threshold_tag(t: ThresholdRule) -> String {
    match t {
        ThresholdRule::Energy(f) => format!("energy:{f}"),
        ThresholdRule::FixedAlpha(a) => format!("alpha:{a}"),
    }
}

fn resample_tag(r: ResampleRule) -> String {
    match r {
        ResampleRule::EveryStep => "every-step".into(),
        ResampleRule::EssBelow(f) => format!("ess:{f}"),
    }
}

/// Splits `pf-mt-3` into the variant and an explicit order, if any.
pub fn parse_label(label: &str) -> Option<(Variant, Option<usize>)> {
    if let Some(v) = Variant::from_tag(label) {
        return Some((v, None));
    }
    let (tag, d) = label.rsplit_once('-')?;
    Some((Variant::from_tag(tag)?, Some(d.parse().ok()?)))
}

fn filter_from_label(label: &str, default_d: usize, n_pf: usize, regime: Regime) -> Option<FilterSpec> {
    let (variant, d) = parse_label(label)?;
    let mut config = FilterConfig::new(variant, n_pf, d.unwrap_or(default_d));
    (config.beta, config.gamma) = match regime {
        Regime::Simulation => variant.simulation_multipliers(),
        Regime::Video => variant.video_multipliers(),
    };
    Some(FilterSpec {
        label: label.to_string(),
        config,
    })
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| cfg_err(line, format!("cannot parse `{v}` for `{key}`"))),
        }
    }
}

fn build(map: BTreeMap<String, (usize, String)>) -> Result<SimConfig> {
    let mut e = Entries { map };
    let base = SimConfig::standard();
    let seq0 = &base.sequence;
    let p0 = &seq0.params;

    let seed = e.parse("seed", base.seed)?;
    let n_monte_carlo = e.parse("n_monte_carlo", base.n_monte_carlo)?;
    let regime = match e.take("regime") {
        None => Regime::Simulation,
        Some((_, v)) if v == "simulation" => Regime::Simulation,
        Some((_, v)) if v == "video" => Regime::Video,
        Some((line, v)) => return Err(cfg_err(line, format!("unknown regime `{v}`"))),
    };
    let d = e.parse("d", seq0.d)?;
    let pattern = match e.take("template_pattern") {
        None => seq0.pattern,
        Some((line, v)) => {
            TemplatePattern::from_tag(&v).ok_or_else(|| cfg_err(line, format!("unknown template pattern `{v}`")))?
        }
    };
    let s_expected = e.parse("s_expected", p0.s_expected)?;
    let p_a = e.parse("p_a", p0.p_a)?;
    let n_lambda = 2 * d + 1;
    let p_r = match e.take("p_r") {
        None => p0.p_r,
        Some((line, v)) if v == "stationary" => {
            derive_pr_stationary(p_a, s_expected, n_lambda).map_err(|err| cfg_err(line, err.to_string()))?
        }
        Some((line, v)) => v
            .parse()
            .map_err(|_| cfg_err(line, format!("cannot parse `{v}` for `p_r`")))?,
    };
    if let Some((line, v)) = e.take("n_lambda") {
        if v.parse::<usize>().ok() != Some(n_lambda) {
            return Err(cfg_err(line, format!("n_lambda = {v} disagrees with 2d + 1 = {n_lambda}")));
        }
    }
    let params = ModelParams {
        n_lambda,
        s_expected,
        p_a,
        p_r,
        sigma_l_sq: e.parse("sigma_l_sq", p0.sigma_l_sq)?,
        sigma_u: [
            e.parse("sigma_u_xx", p0.sigma_u[0])?,
            e.parse("sigma_u_yy", p0.sigma_u[1])?,
            e.parse("sigma_u_ss", p0.sigma_u[2])?,
        ],
        sigma_o_sq: e.parse("sigma_o_sq", p0.sigma_o_sq)?,
        pixel_max: e.parse("pixel_max", p0.pixel_max)?,
    };
    let sequence = SequenceConfig {
        n_frames: e.parse("n_frames", seq0.n_frames)?,
        frame_dims: (e.parse("frame_h", seq0.frame_dims.0)?, e.parse("frame_w", seq0.frame_dims.1)?),
        template_dims: (
            e.parse("template_h", seq0.template_dims.0)?,
            e.parse("template_w", seq0.template_dims.1)?,
        ),
        pattern,
        template_seed: e.parse("template_seed", seq0.template_seed)?,
        d,
        params,
        support_period: e.parse("support_period", seq0.support_period)?,
        initial_support: e.parse("initial_support", seq0.initial_support)?,
        initial_motion: MotionState::new(
            e.parse("initial_ux", seq0.initial_motion.ux)?,
            e.parse("initial_uy", seq0.initial_motion.uy)?,
            e.parse("initial_scale", seq0.initial_motion.scale)?,
        ),
    };
    sequence.validate()?;
    if sequence.n_frames == 0 {
        return Err(cfg_err(0, "n_frames must be at least 1"));
    }

    let n_pf = e.parse("n_pf", 100usize)?;
    let solver = SolverConfig {
        max_iterations: e.parse("solver.max_iterations", SolverConfig::default().max_iterations)?,
        kkt_tolerance: e.parse("solver.kkt_tolerance", SolverConfig::default().kkt_tolerance)?,
        step: parse_step(e.take("solver.step"))?,
        ..SolverConfig::default()
    };
    let (labels_line, labels) = match e.take("filters") {
        None => (0, STANDARD_FILTERS.iter().map(|s| s.to_string()).collect::<Vec<_>>()),
        Some((line, v)) => (line, v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
    };
    if labels.is_empty() {
        return Err(cfg_err(labels_line, "empty filter list"));
    }
    let mut filters = Vec::with_capacity(labels.len());
    for label in labels {
        if filters.iter().any(|f: &FilterSpec| f.label == label) {
            return Err(cfg_err(labels_line, format!("filter `{label}` listed twice")));
        }
        let mut spec = filter_from_label(&label, d, n_pf, regime)
            .ok_or_else(|| cfg_err(labels_line, format!("unknown filter `{label}`")))?;
        let c = &mut spec.config;
        c.solver = solver.clone();
        c.n_pf = e.parse(&format!("{label}.n_pf"), c.n_pf)?;
        c.beta = e.parse(&format!("{label}.beta"), c.beta)?;
        c.gamma = e.parse(&format!("{label}.gamma"), c.gamma)?;
        if let Some((line, v)) = e.take(&format!("{label}.gamma_outlier")) {
            c.gamma_outlier = Some(v.parse().map_err(|_| cfg_err(line, format!("cannot parse `{v}`")))?);
        }
        if let Some((line, v)) = e.take(&format!("{label}.threshold")) {
            c.threshold = parse_threshold(&v).ok_or_else(|| cfg_err(line, format!("bad threshold rule `{v}`")))?;
        }
        if let Some((line, v)) = e.take(&format!("{label}.resample")) {
            c.resample = parse_resample(&v).ok_or_else(|| cfg_err(line, format!("bad resample rule `{v}`")))?;
        }
        c.solver.max_iterations = e.parse(&format!("{label}.solver.max_iterations"), c.solver.max_iterations)?;
        c.solver.kkt_tolerance = e.parse(&format!("{label}.solver.kkt_tolerance"), c.solver.kkt_tolerance)?;
        if let Some(entry) = e.take(&format!("{label}.solver.step")) {
            c.solver.step = parse_step(Some(entry))?;
        }
        c.validate()?;
        filters.push(spec);
    }
    if let Some((key, (line, _))) = e.map.into_iter().min_by_key(|(_, (line, _))| *line) {
        return Err(cfg_err(line, format!("unknown key `{key}`")));
    }
    Ok(SimConfig {
        seed,
        sequence,
        n_monte_carlo,
        regime,
        filters,
    })
}

fn parse_step(entry: Option<(usize, String)>) -> Result<StepRule> {
    match entry {
        None => Ok(StepRule::SpectralBound),
        Some((_, v)) if v == "spectral" => Ok(StepRule::SpectralBound),
        Some((_, v)) if v == "backtracking" => Ok(StepRule::Backtracking),
        Some((line, v)) => Err(cfg_err(line, format!("unknown step rule `{v}`"))),
    }
}

fn parse_threshold(v: &str) -> Option<ThresholdRule> {
    let (kind, x) = v.split_once(':')?;
    let x: f64 = x.trim().parse().ok()?;
    match kind.trim() {
        "energy" => Some(ThresholdRule::Energy(x)),
        "alpha" => Some(ThresholdRule::FixedAlpha(x)),
        _ => None,
    }
}

fn parse_resample(v: &str) -> Option<ResampleRule> {
    if v == "every-step" {
        return Some(ResampleRule::EveryStep);
    }
    let (kind, x) = v.split_once(':')?;
    (kind.trim() == "ess").then_some(())?;
    Some(ResampleRule::EssBelow(x.trim().parse().ok()?))
}
