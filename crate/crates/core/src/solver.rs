//! Convex mode-tracking solver.
//!
//! Minimises
//!
//! ```text
//! C(Λ, O) = ‖y − ΦΛ − O‖² / (2σ_o²) + β ‖(Λ − Λ_prev)_T‖² / (2σ_l²)
//!           + γ ‖Λ_{Tᶜ}‖₁ + γ' ‖O‖₁
//! ```
//!
//! where `y = Y(ROI) − I_0`, `T` is the conditioning support and the outlier
//! block `O` is present only when `gamma_outlier` is set. Without the ℓ1 term
//! (`T` full) this is the ridge cost of plain mode tracking.
//!
//! The minimiser is accelerated proximal gradient with function-value
//! restarts, so accepted iterates never increase the objective. Once the
//! sign pattern of an iterate has been stable for a few iterations, the
//! solver tries an exact Newton step on that pattern and keeps it when its
//! KKT residual is within tolerance. The outlier block is eliminated in
//! closed form (soft thresholding), which turns the data term into a Huber
//! loss in `Λ`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{param, Error, Result};
use crate::legendre::Dictionary;
use crate::models::{CoeffVector, SupportSet};

/// One particle's mode-tracking subproblem.
#[derive(Debug, Clone)]
pub struct ModeTrackingProblem<'a> {
    /// `Y(ROI) − I_0`, length `n_l`.
    pub y: DVector<f64>,
    pub dict: &'a Dictionary,
    pub lambda_prev: CoeffVector,
    /// Coordinates carrying the quadratic prior; the rest are ℓ1-penalised.
    pub cond_support: SupportSet,
    pub sigma_o_sq: f64,
    pub sigma_l_sq: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_outlier: Option<f64>,
}

impl<'a> ModeTrackingProblem<'a> {
    /// Problem with the conventional multipliers `β = 1`, `γ = 0` and no
    /// outlier block.
    pub fn new(
        y: DVector<f64>,
        dict: &'a Dictionary,
        lambda_prev: CoeffVector,
        cond_support: SupportSet,
        sigma_o_sq: f64,
        sigma_l_sq: f64,
    ) -> Self {
        Self {
            y,
            dict,
            lambda_prev,
            cond_support,
            sigma_o_sq,
            sigma_l_sq,
            beta: 1.0,
            gamma: 0.0,
            gamma_outlier: None,
        }
    }

    pub fn with_multipliers(mut self, beta: f64, gamma: f64) -> Self {
        self.beta = beta;
        self.gamma = gamma;
        self
    }

    pub fn with_outliers(mut self, gamma_outlier: f64) -> Self {
        self.gamma_outlier = Some(gamma_outlier);
        self
    }

    pub fn n_lambda(&self) -> usize {
        self.dict.n_cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_l, n) = (self.dict.n_rows(), self.dict.n_cols());
        if self.y.len() != n_l || self.lambda_prev.len() != n || self.cond_support.ambient_size() != n {
            return Err(Error::Size(format!(
                "y has {} entries, lambda_prev {}, support ambient {} for a {n_l} x {n} dictionary",
                self.y.len(),
                self.lambda_prev.len(),
                self.cond_support.ambient_size()
            )));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if self.lambda_prev.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lambda_prev"));
        }
        for (name, v) in [("sigma_o_sq", self.sigma_o_sq), ("sigma_l_sq", self.sigma_l_sq)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(param(name, "solver variances must be positive"));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v < 0.0 {
                return Err(param(name, "must be non-negative"));
            }
        }
        if let Some(g) = self.gamma_outlier {
            if !g.is_finite() {
                return Err(Error::NonFinite("gamma_outlier"));
            }
            if g < 0.0 {
                return Err(param("gamma_outlier", "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Step-size rule of the proximal gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `1/L` with `L = λ_max(ΦᵀΦ)/σ_o² + β/σ_l²`.
    #[default]
    SpectralBound,
    /// Beck–Teboulle backtracking from the largest Hessian diagonal entry.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub step: StepRule,
    pub warm_start: Option<CoeffVector>,
    /// Try exact Newton steps on stable sign patterns.
    pub polish: bool,
    /// Keep an (iteration, objective, kkt) row per accepted iterate.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            kkt_tolerance: 1e-6,
            step: StepRule::SpectralBound,
            warm_start: None,
            polish: true,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_warm_start(mut self, start: CoeffVector) -> Self {
        self.warm_start = Some(start);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub lambda: CoeffVector,
    pub outlier: Option<DVector<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

/// Soft-thresholding `sign(v) · max(|v| − t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Direct evaluation of the cost at `(lambda, outlier)`.
pub fn evaluate_cost(
    problem: &ModeTrackingProblem<'_>,
    lambda: &CoeffVector,
    outlier: Option<&DVector<f64>>,
) -> f64 {
    let mut r = &problem.y - problem.dict.apply(lambda);
    if let Some(o) = outlier {
        r -= o;
    }
    let mut cost = r.norm_squared() / (2.0 * problem.sigma_o_sq);
    let mut prior = 0.0;
    for j in problem.cond_support.iter() {
        let d = lambda[j] - problem.lambda_prev[j];
        prior += d * d;
    }
    cost += problem.beta * prior / (2.0 * problem.sigma_l_sq);
    let l1: f64 = problem
        .cond_support
        .complement()
        .iter()
        .map(|j| lambda[j].abs())
        .sum();
    cost += problem.gamma * l1;
    if let (Some(o), Some(g)) = (outlier, problem.gamma_outlier) {
        cost += g * o.iter().map(|v| v.abs()).sum::<f64>();
    }
    cost
}

fn l1_violation(grad: f64, x: f64, weight: f64) -> f64 {
    if x > 0.0 {
        (grad + weight).abs()
    } else if x < 0.0 {
        (grad - weight).abs()
    } else {
        (grad.abs() - weight).max(0.0)
    }
}

/// Gradient of the smooth part with respect to `Λ` (and `O` when given).
pub fn smooth_gradient(
    problem: &ModeTrackingProblem<'_>,
    lambda: &CoeffVector,
    outlier: Option<&DVector<f64>>,
) -> (DVector<f64>, DVector<f64>) {
    let mut r = &problem.y - problem.dict.apply(lambda);
    if let Some(o) = outlier {
        r -= o;
    }
    let mut g_lambda = problem.dict.adjoint(&r) * (-1.0 / problem.sigma_o_sq);
    let w = problem.beta / problem.sigma_l_sq;
    for j in problem.cond_support.iter() {
        g_lambda[j] += w * (lambda[j] - problem.lambda_prev[j]);
    }
    let g_out = r * (-1.0 / problem.sigma_o_sq);
    (g_lambda, g_out)
}

/// Largest violation of the first-order optimality conditions at
/// `(lambda, outlier)`. Zero exactly at a minimiser.
pub fn kkt_residual(
    problem: &ModeTrackingProblem<'_>,
    lambda: &CoeffVector,
    outlier: Option<&DVector<f64>>,
) -> f64 {
    let (g, g_out) = smooth_gradient(problem, lambda, outlier);
    let mask = problem.cond_support.mask();
    let mut worst = 0.0f64;
    for j in 0..lambda.len() {
        let v = if mask[j] {
            g[j].abs()
        } else {
            l1_violation(g[j], lambda[j], problem.gamma)
        };
        worst = worst.max(v);
    }
    if let Some(o) = outlier {
        let weight = problem.gamma_outlier.unwrap_or(0.0);
        for i in 0..o.len() {
            worst = worst.max(l1_violation(g_out[i], o[i], weight));
        }
    }
    worst
}

/// Smooth part of the objective in `Λ` after any closed-form elimination.
enum Smooth {
    /// `½ΛᵀHΛ − bᵀΛ + c`.
    Quadratic {
        h: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
    },
    /// Huber data term from eliminating the outlier block, plus the prior.
    Huber {
        tau: f64,
        inv_var: f64,
        prior_w: f64,
    },
}

struct Composite<'p, 'a> {
    problem: &'p ModeTrackingProblem<'a>,
    smooth: Smooth,
    penalized: Vec<bool>,
    lipschitz: f64,
    diag_max: f64,
}

impl<'p, 'a> Composite<'p, 'a> {
    fn new(problem: &'p ModeTrackingProblem<'a>) -> Self {
        let dict = problem.dict;
        let inv_var = 1.0 / problem.sigma_o_sq;
        let prior_w = problem.beta / problem.sigma_l_sq;
        let in_t = problem.cond_support.mask();
        let penalized: Vec<bool> = in_t.iter().map(|m| !m).collect();
        let gram = dict.gram();
        let diag_max = (0..gram.nrows())
            .map(|j| gram[(j, j)] * inv_var + if in_t[j] { prior_w } else { 0.0 })
            .fold(0.0f64, f64::max);
        let prior_bound = if problem.cond_support.is_empty() { 0.0 } else { prior_w };
        let lipschitz = dict.gram_max_eigenvalue() * inv_var + prior_bound;
        let smooth = match problem.gamma_outlier {
            None => {
                let mut h = gram * inv_var;
                let mut b = dict.adjoint(&problem.y) * inv_var;
                let mut c = problem.y.norm_squared() * inv_var / 2.0;
                for j in problem.cond_support.iter() {
                    h[(j, j)] += prior_w;
                    b[j] += prior_w * problem.lambda_prev[j];
                    c += prior_w * problem.lambda_prev[j] * problem.lambda_prev[j] / 2.0;
                }
                Smooth::Quadratic { h, b, c }
            }
            Some(g) => Smooth::Huber {
                tau: g * problem.sigma_o_sq,
                inv_var,
                prior_w,
            },
        };
        Self {
            problem,
            smooth,
            penalized,
            lipschitz: lipschitz.max(f64::MIN_POSITIVE),
            diag_max,
        }
    }

    /// Smooth value and gradient.
    fn smooth_eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        match &self.smooth {
            Smooth::Quadratic { h, b, c } => {
                let hx = h * x;
                let value = 0.5 * x.dot(&hx) - b.dot(x) + c;
                (value, hx - b)
            }
            Smooth::Huber {
                tau,
                inv_var,
                prior_w,
            } => {
                let p = self.problem;
                let r = &p.y - p.dict.apply(x);
                let mut value = 0.0;
                let psi = r.map(|ri| {
                    if ri.abs() <= *tau {
                        value += ri * ri * inv_var / 2.0;
                        ri
                    } else {
                        value += (tau * inv_var) * (ri.abs() - tau / 2.0);
                        tau.copysign(ri)
                    }
                });
                let mut g = p.dict.adjoint(&psi) * (-inv_var);
                for j in p.cond_support.iter() {
                    let d = x[j] - p.lambda_prev[j];
                    value += prior_w * d * d / 2.0;
                    g[j] += prior_w * d;
                }
                (value, g)
            }
        }
    }

    fn l1(&self, x: &DVector<f64>) -> f64 {
        self.problem.gamma
            * x.iter()
                .zip(&self.penalized)
                .filter(|(_, p)| **p)
                .map(|(v, _)| v.abs())
                .sum::<f64>()
    }

    fn prox_step(&self, y: &DVector<f64>, grad: &DVector<f64>, lipschitz: f64) -> DVector<f64> {
        let t = self.problem.gamma / lipschitz;
        DVector::from_iterator(
            y.len(),
            y.iter().zip(grad.iter()).zip(&self.penalized).map(|((&yj, &gj), &pen)| {
                let v = yj - gj / lipschitz;
                if pen {
                    soft_threshold(v, t)
                } else {
                    v
                }
            }),
        )
    }

    fn kkt(&self, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let gamma = self.problem.gamma;
        x.iter()
            .zip(grad.iter())
            .zip(&self.penalized)
            .map(|((&xj, &gj), &pen)| if pen { l1_violation(gj, xj, gamma) } else { gj.abs() })
            .fold(0.0, f64::max)
    }

    fn pattern(&self, x: &DVector<f64>) -> Vec<i8> {
        let mut pat: Vec<i8> = x
            .iter()
            .zip(&self.penalized)
            .map(|(&v, &pen)| if !pen { 2 } else if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 })
            .collect();
        if let Smooth::Huber { tau, .. } = self.smooth {
            let r = &self.problem.y - self.problem.dict.apply(x);
            pat.extend(r.iter().map(|&ri| if ri > tau { 1 } else if ri < -tau { -1 } else { 0 }));
        }
        pat
    }

    /// Exact minimiser with the ℓ1 signs fixed to `signs` (0 pins a
    /// coordinate to zero) and, for the Huber loss, the outlier pixels of
    /// `anchor` treated as linear.
    fn pattern_solve(&self, anchor: &DVector<f64>, signs: &[i8]) -> Option<DVector<f64>> {
        let p = self.problem;
        let n = anchor.len();
        let active: Vec<usize> = (0..n).filter(|&j| !self.penalized[j] || signs[j] != 0).collect();
        if active.is_empty() {
            return Some(DVector::zeros(n));
        }
        let (h, b) = match &self.smooth {
            Smooth::Quadratic { h, b, .. } => (h.clone(), b.clone()),
            Smooth::Huber {
                tau,
                inv_var,
                prior_w,
            } => {
                let r = &p.y - p.dict.apply(anchor);
                let phi = p.dict.matrix();
                let mut h = p.dict.gram() * *inv_var;
                let mut b = p.dict.adjoint(&p.y) * *inv_var;
                for (i, &ri) in r.iter().enumerate() {
                    if ri.abs() > *tau {
                        let row = phi.row(i);
                        // drop the outlier pixel from the quadratic, keep its linear pull
                        h -= row.transpose() * row * *inv_var;
                        let coef = -p.y[i] * inv_var + (tau * inv_var).copysign(ri);
                        b += row.transpose() * coef;
                    }
                }
                for j in p.cond_support.iter() {
                    h[(j, j)] += prior_w;
                    b[j] += prior_w * p.lambda_prev[j];
                }
                (h, b)
            }
        };
        let k = active.len();
        let h_aa = DMatrix::from_fn(k, k, |a, c| h[(active[a], active[c])]);
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            if self.penalized[j] {
                b[j] - p.gamma * f64::from(signs[j])
            } else {
                b[j]
            }
        });
        let z_a = h_aa.cholesky()?.solve(&rhs);
        let mut z = DVector::zeros(n);
        for (a, &j) in active.iter().enumerate() {
            z[j] = z_a[a];
        }
        Some(z)
    }

    /// Active-set refinement started from the sign pattern of `x`: coordinates
    /// whose solved sign disagrees are pinned to zero, zero coordinates that
    /// violate the subgradient bound are released, and the pattern is
    /// re-solved. Returns a point, its smooth value and gradient, and its
    /// KKT residual once that residual is within `tol`.
    fn active_set_polish(&self, x: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, f64, DVector<f64>, f64)> {
        let gamma = self.problem.gamma;
        let mut signs: Vec<i8> = x
            .iter()
            .zip(&self.penalized)
            .map(|(&v, &pen)| if !pen || v == 0.0 { 0 } else if v > 0.0 { 1 } else { -1 })
            .collect();
        let mut anchor = x.clone();
        let mut last_pattern = self.pattern(x);
        for _ in 0..POLISH_ROUNDS {
            let z = self.pattern_solve(&anchor, &signs)?;
            let mut changed = false;
            for j in 0..z.len() {
                if signs[j] != 0 && (z[j] == 0.0 || (z[j] > 0.0) != (signs[j] > 0)) {
                    signs[j] = 0;
                    changed = true;
                }
            }
            if changed {
                anchor = z;
                continue;
            }
            let (fz, gz) = self.smooth_eval(&z);
            let kz = self.kkt(&z, &gz);
            if kz <= tol {
                return Some((z, fz, gz, kz));
            }
            for j in 0..z.len() {
                if self.penalized[j] && signs[j] == 0 && gz[j].abs() > gamma {
                    signs[j] = if gz[j] > 0.0 { -1 } else { 1 };
                    changed = true;
                }
            }
            let pattern = self.pattern(&z);
            if !changed && pattern == last_pattern {
                return None;
            }
            last_pattern = pattern;
            anchor = z;
        }
        None
    }
}

/// Bound on active-set rounds per polish attempt.
const POLISH_ROUNDS: usize = 25;

/// Polish is also retried this often while the pattern keeps moving.
const POLISH_PERIOD: usize = 100;

/// Minimises the cost over `Λ` (and `O` when `gamma_outlier` is set).
pub fn solve(problem: &ModeTrackingProblem<'_>, config: &SolverConfig) -> Result<SolverResult> {
    problem.validate()?;
    if !(config.kkt_tolerance > 0.0) {
        return Err(param("kkt_tolerance", "must be positive"));
    }
    let n = problem.n_lambda();
    let start = match &config.warm_start {
        Some(w) if w.len() == n => {
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("warm_start"));
            }
            w.clone()
        }
        Some(w) => {
            return Err(Error::Size(format!("warm start has {} entries, expected {n}", w.len())));
        }
        None => problem.lambda_prev.clone(),
    };
    let comp = Composite::new(problem);
    let mut lipschitz = match config.step {
        StepRule::SpectralBound => comp.lipschitz,
        StepRule::Backtracking => comp.diag_max.max(f64::MIN_POSITIVE),
    };

    let mut x = start;
    let (fx_smooth, mut grad_x) = comp.smooth_eval(&x);
    let mut fx = fx_smooth + comp.l1(&x);
    let mut kkt = comp.kkt(&x, &grad_x);
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(TraceRow {
            iteration: 0,
            objective: fx,
            kkt_residual: kkt,
        });
    }

    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut pattern = comp.pattern(&x);
    let mut stable_for = 0usize;
    let mut polished_pattern: Option<Vec<i8>> = None;
    let mut iterations = 0;

    let try_polish = |x: &DVector<f64>, fx: f64| -> Option<(DVector<f64>, f64, DVector<f64>, f64)> {
        let (z, fs, gz, kz) = comp.active_set_polish(x, config.kkt_tolerance)?;
        let fz = fs + comp.l1(&z);
        (kz <= config.kkt_tolerance && fz <= fx + 1e-12 * fx.abs().max(1.0)).then_some((z, fz, gz, kz))
    };

    if config.polish && kkt > config.kkt_tolerance {
        if let Some((z, fz, gz, kz)) = try_polish(&x, fx) {
            x = z;
            fx = fz;
            grad_x = gz;
            kkt = kz;
            if config.record_trace {
                trace.push(TraceRow {
                    iteration: 0,
                    objective: fx,
                    kkt_residual: kkt,
                });
            }
        }
        polished_pattern = Some(pattern.clone());
    }

    while kkt > config.kkt_tolerance && iterations < config.max_iterations {
        iterations += 1;
        let (fy, grad_y) = if momentum == 1.0 && y == x {
            (fx - comp.l1(&x), grad_x.clone())
        } else {
            comp.smooth_eval(&y)
        };
        let mut z = comp.prox_step(&y, &grad_y, lipschitz);
        let (mut fz_smooth, mut grad_z) = comp.smooth_eval(&z);
        if config.step == StepRule::Backtracking {
            loop {
                let d = &z - &y;
                let model = fy + grad_y.dot(&d) + 0.5 * lipschitz * d.norm_squared();
                if fz_smooth <= model + 1e-12 * model.abs().max(1.0) || lipschitz >= comp.lipschitz * 4.0 {
                    break;
                }
                lipschitz *= 2.0;
                z = comp.prox_step(&y, &grad_y, lipschitz);
                (fz_smooth, grad_z) = comp.smooth_eval(&z);
            }
        }
        let fz = fz_smooth + comp.l1(&z);
        if fz > fx && !(momentum == 1.0 && y == x) {
            // restart: next iteration is a plain proximal gradient step from x
            momentum = 1.0;
            y = x.clone();
            continue;
        }
        if fz > fx {
            // cannot happen with a valid step; stop rather than ascend
            break;
        }
        let x_prev = core::mem::replace(&mut x, z);
        fx = fz;
        grad_x = grad_z;
        kkt = comp.kkt(&x, &grad_x);
        if config.record_trace {
            trace.push(TraceRow {
                iteration: iterations,
                objective: fx,
                kkt_residual: kkt,
            });
        }
        let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        y = &x + (&x - &x_prev) * ((momentum - 1.0) / next);
        momentum = next;

        if config.polish && kkt > config.kkt_tolerance {
            let pat = comp.pattern(&x);
            if pat == pattern {
                stable_for += 1;
            } else {
                pattern = pat;
                stable_for = 0;
            }
            let due = (stable_for >= 5 && polished_pattern.as_ref() != Some(&pattern))
                || iterations % POLISH_PERIOD == 0;
            if due {
                polished_pattern = Some(pattern.clone());
                if let Some((z, fz, gz, kz)) = try_polish(&x, fx) {
                    x = z;
                    fx = fz;
                    grad_x = gz;
                    kkt = kz;
                    if config.record_trace {
                        trace.push(TraceRow {
                            iteration: iterations,
                            objective: fx,
                            kkt_residual: kkt,
                        });
                    }
                }
            }
        }
    }

    let outlier = match comp.smooth {
        Smooth::Huber { tau, .. } => {
            let r = &problem.y - problem.dict.apply(&x);
            Some(r.map(|ri| soft_threshold(ri, tau)))
        }
        Smooth::Quadratic { .. } => None,
    };
    let objective = evaluate_cost(problem, &x, outlier.as_ref());
    Ok(SolverResult {
        lambda: x,
        outlier,
        objective,
        kkt_residual: kkt,
        iterations,
        converged: kkt <= config.kkt_tolerance,
        trace,
    })
}

/// Joint minimisation over `(Λ, O)`; requires `gamma_outlier`.
pub fn solve_with_outliers(problem: &ModeTrackingProblem<'_>, config: &SolverConfig) -> Result<SolverResult> {
    if problem.gamma_outlier.is_none() {
        return Err(param("gamma_outlier", "outlier solve needs an outlier multiplier"));
    }
    solve(problem, config)
}

/// Best support change found by exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub lambda: CoeffVector,
    pub added: SupportSet,
    pub removed: SupportSet,
    pub objective: f64,
    /// Objective of the best candidate with a different support; `+inf` when
    /// there is none.
    pub runner_up: f64,
}

/// Largest `n_lambda` the brute-force oracle enumerates.
pub const ORACLE_MAX_N: usize = 12;

fn log_odds_penalty(count: usize, p: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        -(count as f64) * (p / (1.0 - p)).ln()
    }
}

/// Exhaustive minimiser of the support-change cost over all additions
/// `A ⊆ Tᶜ` and removals `R ⊆ T` with `|A| + |R| ≤ max_total_change`.
/// `T` is `problem.cond_support`; the quadratic prior stays on all of `T`,
/// removed coordinates are pinned to zero, and each candidate pays
/// `−|A| log(p_a/(1−p_a)) − |R| log(p_r/(1−p_r))`.
pub fn brute_force_ssc_oracle(
    problem: &ModeTrackingProblem<'_>,
    p_a: f64,
    p_r: f64,
    max_total_change: usize,
) -> Result<OracleResult> {
    problem.validate()?;
    let n = problem.n_lambda();
    if n > ORACLE_MAX_N {
        return Err(Error::EnumerationGuard {
            n_lambda: n,
            limit: ORACLE_MAX_N,
        });
    }
    let inv_var = 1.0 / problem.sigma_o_sq;
    let prior_w = problem.beta / problem.sigma_l_sq;
    let prev = &problem.cond_support;
    let mut h = problem.dict.gram() * inv_var;
    let mut b = problem.dict.adjoint(&problem.y) * inv_var;
    let mut c = problem.y.norm_squared() * inv_var / 2.0;
    for j in prev.iter() {
        h[(j, j)] += prior_w;
        b[j] += prior_w * problem.lambda_prev[j];
        c += prior_w * problem.lambda_prev[j] * problem.lambda_prev[j] / 2.0;
    }
    let in_prev = prev.mask();
    let mut best: Option<OracleResult> = None;
    let mut runner_up = f64::INFINITY;
    for bits in 0u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| bits >> j & 1 == 1).collect();
        let added = support.iter().filter(|&&j| !in_prev[j]).count();
        let removed = prev.iter().filter(|&j| bits >> j & 1 == 0).count();
        if added + removed > max_total_change {
            continue;
        }
        let k = support.len();
        let mut lambda = CoeffVector::zeros(n);
        if k > 0 {
            let h_ss = DMatrix::from_fn(k, k, |a, c| h[(support[a], support[c])]);
            let b_s = DVector::from_fn(k, |a, _| b[support[a]]);
            let sol = match h_ss.clone().cholesky() {
                Some(ch) => ch.solve(&b_s),
                None => h_ss
                    .pseudo_inverse(1e-12)
                    .map_err(|_| Error::RankDeficient {
                        condition: f64::INFINITY,
                    })?
                    * b_s,
            };
            for (a, &j) in support.iter().enumerate() {
                lambda[j] = sol[a];
            }
        }
        let smooth = 0.5 * lambda.dot(&(&h * &lambda)) - b.dot(&lambda) + c;
        let objective = smooth + log_odds_penalty(added, p_a) + log_odds_penalty(removed, p_r);
        let support_set = SupportSet::new(support, n)?;
        match &best {
            Some(cur) if objective >= cur.objective => runner_up = runner_up.min(objective),
            _ => {
                if let Some(cur) = &best {
                    runner_up = runner_up.min(cur.objective);
                }
                best = Some(OracleResult {
                    lambda,
                    added: support_set.difference(prev),
                    removed: prev.difference(&support_set),
                    objective,
                    runner_up: f64::INFINITY,
                });
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::Contract("no candidate within the change bound".into()))?;
    best.runner_up = runner_up;
    Ok(best)
}
