//! Slow reference computations for tests. Everything here is built from the
//! dictionary matrix directly and shares no code path with the solver.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::solver::ModeTrackingProblem;

/// Cost recomputed from scratch.
pub fn reference_cost(p: &ModeTrackingProblem<'_>, lambda: &DVector<f64>, outlier: Option<&DVector<f64>>) -> f64 {
    let phi = p.dict.matrix();
    let mut data = 0.0;
    for i in 0..phi.nrows() {
        let mut r = p.y[i];
        for j in 0..phi.ncols() {
            r -= phi[(i, j)] * lambda[j];
        }
        if let Some(o) = outlier {
            r -= o[i];
        }
        data += r * r;
    }
    let mut total = data / (2.0 * p.sigma_o_sq);
    for j in 0..lambda.len() {
        if p.cond_support.contains(j) {
            let d = lambda[j] - p.lambda_prev[j];
            total += p.beta * d * d / (2.0 * p.sigma_l_sq);
        } else {
            total += p.gamma * lambda[j].abs();
        }
    }
    if let (Some(o), Some(g)) = (outlier, p.gamma_outlier) {
        total += g * o.iter().map(|v| v.abs()).sum::<f64>();
    }
    total
}

/// Global minimiser found by trying every sign pattern on the ℓ1
/// coordinates: each pattern fixes the ℓ1 term to a linear one, the smooth
/// problem on the active coordinates is solved exactly, and patterns whose
/// solution disagrees with the assumed signs are discarded. Exponential in
/// the number of ℓ1 coordinates; meant for `n_lambda ≤ 8`.
pub fn sign_pattern_minimum(p: &ModeTrackingProblem<'_>) -> (DVector<f64>, f64) {
    let phi = p.dict.matrix();
    let n = phi.ncols();
    let w = p.beta / p.sigma_l_sq;
    let free: Vec<usize> = (0..n).filter(|&j| !p.cond_support.contains(j)).collect();
    let mut h = phi.transpose() * phi / p.sigma_o_sq;
    let mut b = phi.transpose() * &p.y / p.sigma_o_sq;
    for j in p.cond_support.iter() {
        h[(j, j)] += w;
        b[j] += w * p.lambda_prev[j];
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    let patterns = 3usize.pow(free.len() as u32);
    for code in 0..patterns {
        let mut signs = alloc::vec![0i8; n];
        let mut c = code;
        for &j in &free {
            signs[j] = (c % 3) as i8 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..n)
            .filter(|&j| p.cond_support.contains(j) || signs[j] != 0)
            .collect();
        let mut lambda = DVector::zeros(n);
        if !active.is_empty() {
            let k = active.len();
            let h_a = DMatrix::from_fn(k, k, |r, s| h[(active[r], active[s])]);
            let rhs = DVector::from_fn(k, |r, _| b[active[r]] - p.gamma * f64::from(signs[active[r]]));
            let Some(z) = h_a.lu().solve(&rhs) else {
                continue;
            };
            let consistent = active
                .iter()
                .zip(z.iter())
                .all(|(&j, &v)| signs[j] == 0 || (v > 0.0) == (signs[j] > 0) && v != 0.0);
            if !consistent {
                continue;
            }
            for (&j, &v) in active.iter().zip(z.iter()) {
                lambda[j] = v;
            }
        }
        let cost = reference_cost(p, &lambda, None);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((lambda, cost));
        }
    }
    best.expect("the all-zero pattern is always feasible")
}

/// Central finite difference of the smooth part of the cost along
/// coordinate `j` of `Λ`.
pub fn finite_difference_gradient(p: &ModeTrackingProblem<'_>, lambda: &DVector<f64>, j: usize, h: f64) -> f64 {
    let smooth = |x: &DVector<f64>| {
        let mut q = p.clone();
        q.gamma = 0.0;
        reference_cost(&q, x, None)
    };
    let mut plus = lambda.clone();
    let mut minus = lambda.clone();
    plus[j] += h;
    minus[j] -= h;
    (smooth(&plus) - smooth(&minus)) / (2.0 * h)
}
