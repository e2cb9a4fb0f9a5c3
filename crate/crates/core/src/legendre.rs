//! Legendre illumination dictionary, least-squares coefficient fitting and
//! energy-support analysis of coefficient sequences.
//!
//! Column `k` of the dictionary is the template modulated by a separable
//! Legendre image: `P_0 ≡ 1`, odd `k` uses `p_{(k+1)/2}` along rows, even
//! `k ≥ 2` uses `p_{k/2}` along columns. Pixel index `i ∈ 0..h` is mapped to
//! `x = 2i/(h-1) - 1`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{CoeffVector, SupportSet};

/// Energy fraction used for support estimation.
pub const ENERGY_FRACTION: f64 = 0.99;

/// Template image `I_0` with its frame coordinates at the identity motion.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePatch {
    pixels: DVector<f64>,
    height: usize,
    width: usize,
    coord_i: Vec<i64>,
    coord_j: Vec<i64>,
    centroid_i: f64,
    centroid_j: f64,
}

impl TemplatePatch {
    /// Row-major `height × width` pixels whose top-left corner sits at frame
    /// position `(origin_i, origin_j)`.
    pub fn new(
        pixels: Vec<f64>,
        height: usize,
        width: usize,
        origin_i: i64,
        origin_j: i64,
    ) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Size(format!(
                "template of {} pixels cannot be {height} x {width}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite()) {
            return Err(Error::Domain(format!("template pixel {bad} is not finite")));
        }
        let n = height * width;
        let mut coord_i = Vec::with_capacity(n);
        let mut coord_j = Vec::with_capacity(n);
        for r in 0..height as i64 {
            for c in 0..width as i64 {
                coord_i.push(origin_i + r);
                coord_j.push(origin_j + c);
            }
        }
        let mean = |v: &[i64]| v.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let centroid_i = mean(&coord_i);
        let centroid_j = mean(&coord_j);
        Ok(Self {
            pixels: DVector::from_vec(pixels),
            height,
            width,
            coord_i,
            coord_j,
            centroid_i,
            centroid_j,
        })
    }

    /// Same pixels placed at a new frame origin.
    pub fn placed_at(&self, origin_i: i64, origin_j: i64) -> Self {
        Self::new(
            self.pixels.as_slice().to_vec(),
            self.height,
            self.width,
            origin_i,
            origin_j,
        )
        .expect("valid template stays valid")
    }

    pub fn pixels(&self) -> &DVector<f64> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels `n_l`.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn coord_i(&self) -> &[i64] {
        &self.coord_i
    }

    pub fn coord_j(&self) -> &[i64] {
        &self.coord_j
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.centroid_i, self.centroid_j)
    }
}

/// Origin of a dictionary matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Legendre,
    Custom,
}

/// Tall `n_l × n_lambda` dictionary with its cached Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    columns: DMatrix<f64>,
    order: usize,
    kind: DictionaryKind,
    gram: DMatrix<f64>,
    gram_max: f64,
    gram_min: f64,
}

impl Dictionary {
    /// Legendre dictionary of order `d` (`2d + 1` columns) for `template`.
    pub fn legendre(template: &TemplatePatch, d: usize) -> Result<Self> {
        let (h, w) = (template.height(), template.width());
        if d > 0 && (h < 2 || w < 2) {
            return Err(Error::Size(format!(
                "Legendre images need at least 2 x 2 pixels, template is {h} x {w}"
            )));
        }
        let xi = grid(h);
        let xj = grid(w);
        let n_lambda = 2 * d + 1;
        let pix = template.pixels();
        let columns = DMatrix::from_fn(h * w, n_lambda, |p, k| {
            let (r, c) = (p / w, p % w);
            pix[p] * basis_value(k, &xi, &xj, r, c)
        });
        Ok(Self::assemble(columns, d, DictionaryKind::Legendre))
    }

    /// Wraps an arbitrary matrix; `order` is carried as metadata only.
    pub fn custom(columns: DMatrix<f64>, order: usize) -> Result<Self> {
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary entries"));
        }
        Ok(Self::assemble(columns, order, DictionaryKind::Custom))
    }

    /// Reassembles a stored matrix, keeping the Legendre tag when the column
    /// count matches `2d + 1`.
    pub fn from_parts(columns: DMatrix<f64>, order: usize, legendre: bool) -> Result<Self> {
        let mut dict = Self::custom(columns, order)?;
        if legendre && dict.n_cols() == 2 * order + 1 {
            dict.kind = DictionaryKind::Legendre;
        }
        Ok(dict)
    }

    fn assemble(columns: DMatrix<f64>, order: usize, kind: DictionaryKind) -> Self {
        let gram = columns.tr_mul(&columns);
        let (gram_max, gram_min) = if gram.nrows() == 0 {
            (0.0, 0.0)
        } else {
            let eig = gram.clone().symmetric_eigenvalues();
            (eig.max(), eig.min())
        };
        Self {
            columns,
            order,
            kind,
            gram,
            gram_max,
            gram_min,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    /// `n_l`.
    pub fn n_rows(&self) -> usize {
        self.columns.nrows()
    }

    /// `n_lambda`.
    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }

    /// `ΦᵀΦ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Largest eigenvalue of `ΦᵀΦ`.
    pub fn gram_max_eigenvalue(&self) -> f64 {
        self.gram_max
    }

    /// Smallest eigenvalue of `ΦᵀΦ`.
    pub fn gram_min_eigenvalue(&self) -> f64 {
        self.gram_min
    }

    /// Condition number of `ΦᵀΦ`; infinite when singular.
    pub fn gram_condition(&self) -> f64 {
        if self.gram_min <= 0.0 {
            f64::INFINITY
        } else {
            self.gram_max / self.gram_min
        }
    }

    /// `true` when `ΦᵀΦ` is numerically invertible.
    pub fn has_full_column_rank(&self) -> bool {
        let tol = self.gram_max * f64::EPSILON * (self.n_rows().max(self.n_cols()) as f64);
        self.n_cols() <= self.n_rows() && self.gram_min > tol
    }

    /// `ΦΛ`.
    pub fn apply(&self, coeffs: &CoeffVector) -> DVector<f64> {
        &self.columns * coeffs
    }

    /// `Φᵀy`.
    pub fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        self.columns.tr_mul(y)
    }
}

fn grid(n: usize) -> Vec<f64> {
    if n < 2 {
        return alloc::vec![0.0; n];
    }
    let den = (n - 1) as f64;
    (0..n).map(|i| 2.0 * i as f64 / den - 1.0).collect()
}

fn basis_value(k: usize, xi: &[f64], xj: &[f64], r: usize, c: usize) -> f64 {
    if k == 0 {
        1.0
    } else if k % 2 == 1 {
        legendre_unchecked(k.div_ceil(2), xi[r])
    } else {
        legendre_unchecked(k / 2, xj[c])
    }
}

fn legendre_unchecked(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for n in 1..k {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * cur - nf * prev) / (nf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Legendre polynomial `p_k(x)` by the Bonnet recurrence.
pub fn legendre_eval(k: usize, x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("Legendre argument {x} outside [-1, 1]")));
    }
    Ok(legendre_unchecked(k, x))
}

/// Basis image `P_k` as an `h × w` matrix.
pub fn build_basis_image(k: usize, h: usize, w: usize) -> Result<DMatrix<f64>> {
    if h < 2 || w < 2 {
        return Err(Error::Size(format!("basis image needs h, w >= 2, got {h} x {w}")));
    }
    let (xi, xj) = (grid(h), grid(w));
    Ok(DMatrix::from_fn(h, w, |r, c| basis_value(k, &xi, &xj, r, c)))
}

/// Maximum likelihood coefficients of `patch − I_0` in the dictionary,
/// computed from a thin QR factorisation.
pub fn ml_coeff_fit(
    patch: &DVector<f64>,
    template: &TemplatePatch,
    dict: &Dictionary,
) -> Result<CoeffVector> {
    if patch.len() != template.len() || patch.len() != dict.n_rows() {
        return Err(Error::Size(format!(
            "patch of {} pixels, template of {}, dictionary with {} rows",
            patch.len(),
            template.len(),
            dict.n_rows()
        )));
    }
    if !dict.has_full_column_rank() {
        return Err(Error::RankDeficient {
            condition: dict.gram_condition(),
        });
    }
    let rhs = patch - template.pixels();
    let qr = dict.matrix().clone().qr();
    let qtb = qr.q().tr_mul(&rhs);
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient {
            condition: dict.gram_condition(),
        })
}

/// Smallest magnitude-ordered prefix of `coeffs` holding at least `fraction`
/// of the squared norm, and the magnitude of its last element. Ties go to the
/// lower index; a zero vector gives the empty set with threshold 0.
pub fn energy_support(coeffs: &CoeffVector, fraction: f64) -> Result<(SupportSet, f64)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("energy fraction {fraction} not in (0, 1]")));
    }
    let n = coeffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        coeffs[b]
            .abs()
            .partial_cmp(&coeffs[a].abs())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    // summed in sorted order so a full prefix matches the total bit for bit
    let total: f64 = order.iter().map(|&j| coeffs[j] * coeffs[j]).sum();
    if total == 0.0 {
        return Ok((SupportSet::empty(n), 0.0));
    }
    let target = fraction * total;
    let mut captured = 0.0;
    let mut taken = Vec::new();
    for &j in &order {
        captured += coeffs[j] * coeffs[j];
        taken.push(j);
        if captured >= target {
            break;
        }
    }
    let alpha = coeffs[*taken.last().expect("nonzero total")].abs();
    Ok((SupportSet::new(taken, n)?, alpha))
}

/// Per-frame support statistics of a coefficient sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportTraceRow {
    pub support: SupportSet,
    /// Energy threshold of the frame.
    pub alpha: f64,
    /// `|T_t| / n_lambda`.
    pub supp_frac: f64,
    /// `|T_t \ T_{t-1}| / |T_t|`; `None` on the first frame.
    pub add_frac: Option<f64>,
    /// `|T_{t-1} \ T_t| / |T_t|`; `None` on the first frame.
    pub del_frac: Option<f64>,
    /// Set when `|T_t| = 0` forced the change ratios to 0.
    pub empty_support: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupportTrace {
    pub rows: Vec<SupportTraceRow>,
}

impl SupportTrace {
    /// Frames × indices support membership.
    pub fn membership(&self) -> Vec<Vec<bool>> {
        self.rows.iter().map(|r| r.support.mask()).collect()
    }

    pub fn mean_add_frac(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.add_frac))
    }

    pub fn mean_del_frac(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.del_frac))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Energy supports and change ratios of `sequence`. A single frame yields the
/// size column only.
pub fn support_trace(sequence: &[CoeffVector]) -> Result<SupportTrace> {
    let Some(first) = sequence.first() else {
        return Err(Error::Size("support trace needs at least one frame".into()));
    };
    let n = first.len();
    let mut rows: Vec<SupportTraceRow> = Vec::with_capacity(sequence.len());
    for coeffs in sequence {
        if coeffs.len() != n {
            return Err(Error::Size(format!(
                "coefficient length {} differs from {n}",
                coeffs.len()
            )));
        }
        let (support, alpha) = energy_support(coeffs, ENERGY_FRACTION)?;
        let size = support.len();
        let (add_frac, del_frac, empty_support) = match rows.last() {
            None => (None, None, size == 0),
            Some(_) if size == 0 => (Some(0.0), Some(0.0), true),
            Some(prev) => {
                let added = support.difference(&prev.support).len() as f64;
                let removed = prev.support.difference(&support).len() as f64;
                (Some(added / size as f64), Some(removed / size as f64), false)
            }
        };
        rows.push(SupportTraceRow {
            supp_frac: if n == 0 { 0.0 } else { size as f64 / n as f64 },
            support,
            alpha,
            add_frac,
            del_frac,
            empty_support,
        });
    }
    Ok(SupportTrace { rows })
}
