//! State representation, state transition sampling and state transition priors.
//!
//! The full state is the triple (motion, support set, coefficient vector).
//! Supports follow a Bernoulli add/remove chain, coefficients a Gaussian random
//! walk restricted to the current support, and motion a diagonal Gaussian walk.
//! All priors are evaluated in the log domain; an impossible transition is
//! reported as `f64::NEG_INFINITY`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param, Error, Result};

/// Dense coefficient vector of length `n_lambda`.
pub type CoeffVector = DVector<f64>;

/// Sorted set of distinct indices into `0..ambient_size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SupportSet {
    indices: Vec<usize>,
    ambient: usize,
}

impl SupportSet {
    /// Builds a set from arbitrary-order indices. Duplicates and out-of-range
    /// indices are rejected.
    pub fn new(mut indices: Vec<usize>, ambient: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!("duplicate support index {}", w[0])));
        }
        if let Some(&last) = indices.last() {
            if last >= ambient {
                return Err(Error::Contract(format!(
                    "support index {last} outside ambient size {ambient}"
                )));
            }
        }
        Ok(Self { indices, ambient })
    }

    pub fn empty(ambient: usize) -> Self {
        Self {
            indices: Vec::new(),
            ambient,
        }
    }

    pub fn full(ambient: usize) -> Self {
        Self {
            indices: (0..ambient).collect(),
            ambient,
        }
    }

    /// Indices `j` with `mask[j] == true`.
    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            indices: mask
                .iter()
                .enumerate()
                .filter_map(|(j, &m)| m.then_some(j))
                .collect(),
            ambient: mask.len(),
        }
    }

    /// Indices of the nonzero entries of `values`.
    pub fn of_nonzeros(values: &CoeffVector) -> Self {
        Self {
            indices: values
                .iter()
                .enumerate()
                .filter_map(|(j, &v)| (v != 0.0).then_some(j))
                .collect(),
            ambient: values.len(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ambient_size(&self) -> usize {
        self.ambient
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    /// Membership mask of length `ambient_size`.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = alloc::vec![false; self.ambient];
        for &j in &self.indices {
            mask[j] = true;
        }
        mask
    }

    /// Indices of `0..ambient_size` not in the set.
    pub fn complement(&self) -> Self {
        let mut out = Vec::with_capacity(self.ambient - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for j in 0..self.ambient {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        Self {
            indices: out,
            ambient: self.ambient,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        let (a, b) = (&self.indices, &other.indices);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut k) = (0, 0);
        while i < a.len() && k < b.len() {
            match a[i].cmp(&b[k]) {
                core::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                core::cmp::Ordering::Greater => {
                    out.push(b[k]);
                    k += 1;
                }
                core::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    k += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[k..]);
        Self {
            indices: out,
            ambient: self.ambient.max(other.ambient),
        }
    }

    /// `self \ other`.
    pub fn difference(&self, other: &Self) -> Self {
        let b = &other.indices;
        let mut k = 0;
        let mut out = Vec::with_capacity(self.indices.len());
        for &j in &self.indices {
            while k < b.len() && b[k] < j {
                k += 1;
            }
            if k == b.len() || b[k] != j {
                out.push(j);
            }
        }
        Self {
            indices: out,
            ambient: self.ambient,
        }
    }

    /// Copy of `values` with every entry outside the set set to exactly zero.
    pub fn restrict(&self, values: &CoeffVector) -> CoeffVector {
        let mut out = CoeffVector::zeros(values.len());
        for &j in &self.indices {
            out[j] = values[j];
        }
        out
    }
}

/// Translation (pixels) and scale of the template in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionState {
    /// Row (i) translation.
    pub ux: f64,
    /// Column (j) translation.
    pub uy: f64,
    pub scale: f64,
}

impl MotionState {
    pub const IDENTITY: Self = Self {
        ux: 0.0,
        uy: 0.0,
        scale: 1.0,
    };

    pub fn new(ux: f64, uy: f64, scale: f64) -> Self {
        Self { ux, uy, scale }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.ux, self.uy, self.scale]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Default for MotionState {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Motion, support and coefficients of one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub motion: MotionState,
    pub support: SupportSet,
    pub coeffs: CoeffVector,
}

impl FullState {
    pub fn new(motion: MotionState, support: SupportSet, coeffs: CoeffVector) -> Result<Self> {
        if coeffs.len() != support.ambient_size() {
            return Err(Error::Size(format!(
                "coefficient length {} differs from support ambient size {}",
                coeffs.len(),
                support.ambient_size()
            )));
        }
        Ok(Self {
            motion,
            support,
            coeffs,
        })
    }
}

/// State transition and noise parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_lambda: usize,
    /// Expected support size.
    pub s_expected: usize,
    /// Per-index probability of joining the support.
    pub p_a: f64,
    /// Per-index probability of leaving the support.
    pub p_r: f64,
    /// Variance of the per-coefficient random walk.
    pub sigma_l_sq: f64,
    /// Diagonal of the motion walk covariance (x, y, scale).
    pub sigma_u: [f64; 3],
    /// Observation noise variance.
    pub sigma_o_sq: f64,
    /// Clutter intensity ceiling.
    pub pixel_max: f64,
}

impl ModelParams {
    /// Parameters of the simulated-video experiment: 41 Legendre coefficients,
    /// expected support 5, slow support change, unit pixel noise and pure
    /// translation.
    pub fn simulation() -> Self {
        Self {
            n_lambda: 41,
            s_expected: 5,
            p_a: 0.03,
            p_r: 0.216,
            sigma_l_sq: 0.01,
            sigma_u: [0.5, 0.5, 0.0],
            sigma_o_sq: 1.0,
            pixel_max: 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_a", self.p_a), ("p_r", self.p_r)] {
            if !(0.0..0.5).contains(&p) {
                return Err(param(name, format!("{p} is not in [0, 0.5)")));
            }
        }
        let variances = [
            ("sigma_l_sq", self.sigma_l_sq),
            ("sigma_u_xx", self.sigma_u[0]),
            ("sigma_u_yy", self.sigma_u[1]),
            ("sigma_u_ss", self.sigma_u[2]),
            ("sigma_o_sq", self.sigma_o_sq),
        ];
        for (name, v) in variances {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(param(name, format!("{v} is not a finite non-negative variance")));
            }
        }
        if self.n_lambda == 0 {
            return Err(param("n_lambda", "must be positive"));
        }
        if self.s_expected > self.n_lambda {
            return Err(param("s_expected", "exceeds n_lambda"));
        }
        if !(self.pixel_max > 0.0 && self.pixel_max.is_finite()) {
            return Err(param("pixel_max", "must be positive"));
        }
        Ok(())
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::simulation()
    }
}

/// Removal probability that keeps the expected support size at `s`.
pub fn derive_pr_stationary(p_a: f64, s: usize, n_lambda: usize) -> Result<f64> {
    if s == 0 || s >= n_lambda {
        return Err(param("s_expected", format!("need 0 < s < n_lambda, got s = {s}, n_lambda = {n_lambda}")));
    }
    if !(p_a >= 0.0) {
        return Err(param("p_a", "must be non-negative"));
    }
    let p_r = p_a * ((n_lambda - s) as f64 / s as f64);
    if p_r >= 1.0 {
        return Err(param("p_r", format!("derived removal probability {p_r} is not below 1")));
    }
    Ok(p_r)
}

/// Draws `prev ∪ A \ R`: every index outside `prev` joins with probability
/// `p_a`, every index of `prev` leaves with probability `p_r`. One uniform is
/// consumed per index, in index order.
pub fn sample_support_transition<R: Rng + ?Sized>(
    prev: &SupportSet,
    params: &ModelParams,
    rng: &mut R,
) -> SupportSet {
    let n = prev.ambient_size();
    let mut out = Vec::with_capacity(prev.len() + 4);
    let mut it = prev.indices().iter().peekable();
    for j in 0..n {
        let inside = it.peek() == Some(&&j);
        if inside {
            it.next();
        }
        let u: f64 = rng.random();
        let keep = if inside { u >= params.p_r } else { u < params.p_a };
        if keep {
            out.push(j);
        }
    }
    SupportSet {
        indices: out,
        ambient: n,
    }
}

/// `k · ln p` with the convention `0 · ln 0 = 0`.
fn xlogp(k: usize, p: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

/// Log-probability of moving from support `prev` to support `new`.
pub fn stp_support_log(new: &SupportSet, prev: &SupportSet, params: &ModelParams) -> f64 {
    let n = prev.ambient_size();
    let added = new.difference(prev).len();
    let removed = prev.difference(new).len();
    let kept_out = n - prev.len() - added;
    let kept_in = prev.len() - removed;
    xlogp(added, params.p_a)
        + xlogp(kept_out, 1.0 - params.p_a)
        + xlogp(removed, params.p_r)
        + xlogp(kept_in, 1.0 - params.p_r)
}

/// Random walk on the new support, exact zeros elsewhere.
pub fn sample_coeff_transition<R: Rng + ?Sized>(
    prev: &CoeffVector,
    new_support: &SupportSet,
    params: &ModelParams,
    rng: &mut R,
) -> CoeffVector {
    let sd = params.sigma_l_sq.sqrt();
    let mut out = CoeffVector::zeros(prev.len());
    for j in new_support.iter() {
        let z: f64 = StandardNormal.sample(rng);
        out[j] = prev[j] + sd * z;
    }
    out
}

/// Log-density of an isotropic Gaussian in `dim` dimensions given the summed
/// squared deviation. A zero variance is read as a point mass: `0` for an exact
/// match and `-inf` otherwise.
pub(crate) fn isotropic_gaussian_log(sq_dev: f64, variance: f64, dim: usize) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    if variance == 0.0 {
        return if sq_dev == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -sq_dev / (2.0 * variance) - 0.5 * dim as f64 * (2.0 * PI * variance).ln()
}

/// Log-density of the coefficient walk restricted to `support`.
pub fn stp_coeffs_log(
    new: &CoeffVector,
    prev: &CoeffVector,
    support: &SupportSet,
    params: &ModelParams,
) -> Result<f64> {
    if new.len() != prev.len() || new.len() != support.ambient_size() {
        return Err(Error::Size(format!(
            "coefficient lengths {} / {} and support size {} disagree",
            new.len(),
            prev.len(),
            support.ambient_size()
        )));
    }
    let mut it = support.indices().iter().peekable();
    let mut sq = 0.0;
    for (j, (&a, &b)) in new.iter().zip(prev.iter()).enumerate() {
        if it.peek() == Some(&&j) {
            it.next();
            sq += (a - b) * (a - b);
        } else if a != 0.0 {
            return Err(Error::Contract(format!(
                "coefficient {j} is {a} outside the conditioning support"
            )));
        }
    }
    Ok(isotropic_gaussian_log(sq, params.sigma_l_sq, support.len()))
}

/// Motion random walk draw: independent Gaussian increment per component.
pub fn sample_motion_transition<R: Rng + ?Sized>(
    prev: &MotionState,
    params: &ModelParams,
    rng: &mut R,
) -> MotionState {
    let mut out = prev.to_array();
    for (x, v) in out.iter_mut().zip(params.sigma_u) {
        let z: f64 = StandardNormal.sample(rng);
        *x += v.sqrt() * z;
    }
    MotionState::from_array(out)
}

/// Log-density of the motion walk (diagonal covariance, per-component point
/// mass where the variance is zero).
pub fn stp_motion_log(new: &MotionState, prev: &MotionState, params: &ModelParams) -> f64 {
    new.to_array()
        .iter()
        .zip(prev.to_array())
        .zip(params.sigma_u)
        .map(|((a, b), v)| isotropic_gaussian_log((a - b) * (a - b), v, 1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;
    use proptest::prelude::*;

    fn params(n: usize, p_a: f64, p_r: f64) -> ModelParams {
        ModelParams {
            n_lambda: n,
            s_expected: 1,
            p_a,
            p_r,
            ..ModelParams::simulation()
        }
    }

    fn set(ix: &[usize], n: usize) -> SupportSet {
        SupportSet::new(ix.to_vec(), n).unwrap()
    }

    #[test]
    fn pr_stationary_examples() {
        assert_eq!(derive_pr_stationary(0.03, 5, 41).unwrap(), 0.216);
        assert_eq!(derive_pr_stationary(0.0, 5, 41).unwrap(), 0.0);
        assert!((derive_pr_stationary(0.06, 20, 41).unwrap() - 0.063).abs() < 1e-15);
        assert!(derive_pr_stationary(0.03, 0, 41).is_err());
        assert!(derive_pr_stationary(0.5, 1, 41).is_err());
    }

    #[test]
    fn support_set_rejects_bad_indices() {
        assert!(SupportSet::new(vec![1, 1], 4).is_err());
        assert!(SupportSet::new(vec![4], 4).is_err());
        assert_eq!(set(&[3, 0], 4).indices(), &[0, 3]);
    }

    #[test]
    fn support_set_algebra() {
        let a = set(&[0, 2, 5], 8);
        let b = set(&[2, 3], 8);
        assert_eq!(a.union(&b).indices(), &[0, 2, 3, 5]);
        assert_eq!(a.difference(&b).indices(), &[0, 5]);
        assert_eq!(a.complement().indices(), &[1, 3, 4, 6, 7]);
        assert!(a.contains(5) && !a.contains(4));
    }

    #[test]
    fn support_transition_degenerate_cases() {
        let mut rng = stream(1, 0);
        let prev = set(&[1, 3], 5);
        assert_eq!(sample_support_transition(&prev, &params(5, 0.0, 0.0), &mut rng), prev);
        let prev = set(&[1], 4);
        let swapped = sample_support_transition(&prev, &params(4, 1.0, 1.0), &mut rng);
        assert_eq!(swapped.indices(), &[0, 2, 3]);
    }

    #[test]
    fn stp_support_hand_values() {
        let p = params(2, 0.2, 0.3);
        let prev = set(&[0], 2);
        assert!((stp_support_log(&prev, &prev, &p) - 0.56f64.ln()).abs() < 1e-14);
        let grown = set(&[0, 1], 2);
        assert!((stp_support_log(&grown, &prev, &p) - 0.14f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn stp_support_zero_probability_is_neg_infinity() {
        let p = params(3, 0.0, 0.0);
        let prev = set(&[0], 3);
        assert_eq!(stp_support_log(&set(&[0, 1], 3), &prev, &p), f64::NEG_INFINITY);
        assert_eq!(stp_support_log(&prev, &prev, &p), 0.0);
    }

    #[test]
    fn stp_support_normalizes_over_all_subsets() {
        for n in 1..=8usize {
            let p = params(n, 0.13, 0.37);
            let prev = SupportSet::from_mask(&(0..n).map(|j| j % 3 == 0).collect::<Vec<_>>());
            let total: f64 = (0u32..1 << n)
                .map(|bits| {
                    let mask: Vec<bool> = (0..n).map(|j| bits >> j & 1 == 1).collect();
                    stp_support_log(&SupportSet::from_mask(&mask), &prev, &p).exp()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "n = {n}: {total}");
        }
    }

    #[test]
    fn coeff_transition_restricts_previous_values() {
        let p = ModelParams {
            sigma_l_sq: 0.0,
            ..params(3, 0.1, 0.1)
        };
        let prev = CoeffVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut rng = stream(2, 0);
        let out = sample_coeff_transition(&prev, &set(&[0, 2], 3), &p, &mut rng);
        assert_eq!(out.as_slice(), &[1.0, 0.0, 3.0]);
        let out = sample_coeff_transition(&prev, &SupportSet::empty(3), &p, &mut rng);
        assert_eq!(out.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn stp_coeffs_values() {
        let mut p = params(3, 0.1, 0.1);
        p.sigma_l_sq = 1.0;
        let prev = CoeffVector::from_vec(vec![0.5, -1.0, 2.0]);
        let full = SupportSet::full(3);
        let expect = -1.5 * (2.0 * PI).ln();
        assert!((stp_coeffs_log(&prev, &prev, &full, &p).unwrap() - expect).abs() < 1e-14);

        let zero = CoeffVector::zeros(3);
        assert_eq!(stp_coeffs_log(&zero, &prev, &SupportSet::empty(3), &p).unwrap(), 0.0);

        p.sigma_l_sq = 4.0;
        let one = set(&[1], 3);
        let new = CoeffVector::from_vec(vec![0.0, 1.0, 0.0]);
        let expect = -0.5 * (8.0 * PI).ln() - 0.5;
        assert!((stp_coeffs_log(&new, &prev, &one, &p).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn stp_coeffs_rejects_off_support_mass() {
        let p = params(2, 0.1, 0.1);
        let new = CoeffVector::from_vec(vec![1.0, 1.0]);
        let err = stp_coeffs_log(&new, &new, &set(&[0], 2), &p).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn motion_prior_normalizer() {
        let mut p = params(1, 0.1, 0.1);
        p.sigma_u = [25.0, 25.0, 0.1];
        let u = MotionState::new(3.0, -2.0, 1.0);
        let expect = -0.5 * ((2.0 * PI).powi(3) * 25.0 * 25.0 * 0.1).ln();
        assert!((stp_motion_log(&u, &u, &p) - expect).abs() < 1e-12);

        p.sigma_u = [0.0; 3];
        let mut rng = stream(3, 0);
        assert_eq!(sample_motion_transition(&u, &p, &mut rng), u);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::simulation().validate().is_ok());
        let mut p = ModelParams::simulation();
        p.p_a = 0.5;
        assert!(p.validate().is_err());
        let mut p = ModelParams::simulation();
        p.sigma_o_sq = -1.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn sampled_coeffs_vanish_off_support(seed in any::<u64>(), mask in proptest::collection::vec(any::<bool>(), 1..24)) {
            let n = mask.len();
            let support = SupportSet::from_mask(&mask);
            let mut rng = stream(seed, 0);
            let prev = CoeffVector::from_fn(n, |j, _| j as f64 - 3.5);
            let out = sample_coeff_transition(&prev, &support, &ModelParams::simulation(), &mut rng);
            for j in 0..n {
                if !mask[j] {
                    prop_assert_eq!(out[j].to_bits(), 0.0f64.to_bits());
                }
            }
        }

        #[test]
        fn union_and_difference_match_masks(a in proptest::collection::vec(any::<bool>(), 16), b in proptest::collection::vec(any::<bool>(), 16)) {
            let (sa, sb) = (SupportSet::from_mask(&a), SupportSet::from_mask(&b));
            let u: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x || *y).collect();
            let d: Vec<bool> = a.iter().zip(&b).map(|(x, y)| *x && !*y).collect();
            prop_assert_eq!(sa.union(&sb), SupportSet::from_mask(&u));
            prop_assert_eq!(sa.difference(&sb), SupportSet::from_mask(&d));
        }
    }
}
