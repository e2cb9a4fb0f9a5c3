//! Illumination sparsity analysis: fit every aligned patch in the Legendre
//! dictionary, take 99%-energy supports and report how they evolve.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use pafimocs_core::legendre::{ml_coeff_fit, support_trace, Dictionary, SupportTrace, TemplatePatch};
use pafimocs_core::models::CoeffVector;

use crate::error::{HarnessError, Result};
use crate::io::{read_matrix, write_text};

pub const TRACE_HEADER: &str = "# pafimocs-support-trace v1";
pub const MEMBERSHIP_HEADER: &str = "# pafimocs-membership v1";

/// ML coefficients of each patch. Patches must match the template size.
pub fn fit_patches(patches: &[DVector<f64>], template: &TemplatePatch, dict: &Dictionary) -> Result<Vec<CoeffVector>> {
    patches
        .iter()
        .map(|p| ml_coeff_fit(p, template, dict).map_err(HarnessError::from))
        .collect()
}

/// Frames-by-coefficients matrix, one row per frame.
pub fn coeff_rows(m: &DMatrix<f64>) -> Vec<CoeffVector> {
    (0..m.nrows()).map(|r| m.row(r).transpose()).collect()
}

/// Matrix files of `dir` in name order.
pub fn patch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads `h × w` patch matrices and flattens them row-major.
pub fn read_patches(files: &[PathBuf]) -> Result<Vec<DVector<f64>>> {
    files
        .iter()
        .map(|f| {
            let m = read_matrix(f)?;
            Ok(DVector::from_row_slice(m.transpose().as_slice()))
        })
        .collect()
}

pub fn trace_csv(trace: &SupportTrace) -> String {
    let mut out = format!("{TRACE_HEADER}\nframe,size,supp_frac,add_frac,del_frac,alpha\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (t, r) in trace.rows.iter().enumerate() {
        out.push_str(&format!(
            "{t},{},{},{},{},{}\n",
            r.support.len(),
            r.supp_frac,
            opt(r.add_frac),
            opt(r.del_frac),
            r.alpha
        ));
    }
    out
}

pub fn membership_csv(trace: &SupportTrace) -> String {
    let n = trace.rows.first().map_or(0, |r| r.support.ambient_size());
    let mut out = format!("{MEMBERSHIP_HEADER}\nframe");
    for j in 0..n {
        out.push_str(&format!(",c{j}"));
    }
    out.push('\n');
    for (t, mask) in trace.membership().iter().enumerate() {
        out.push_str(&t.to_string());
        for &b in mask {
            out.push_str(if b { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

/// Computes the trace of `coeffs` and writes `support_trace.csv` and
/// `membership.csv` into `dir`.
pub fn analyze_support(coeffs: &[CoeffVector], dir: &Path) -> Result<SupportTrace> {
    let trace = support_trace(coeffs)?;
    write_text(&dir.join("support_trace.csv"), &trace_csv(&trace))?;
    write_text(&dir.join("membership.csv"), &membership_csv(&trace))?;
    Ok(trace)
}
