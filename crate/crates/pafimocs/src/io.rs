//! File formats.
//!
//! Matrices are plain text: a header line of integers (`rows cols`, or
//! `n_l n_lambda d` for dictionaries) followed by one whitespace-separated
//! row per line. Values are written in Rust's shortest round-trip form, so a
//! write/read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use nalgebra::{DMatrix, DVector};
use pafimocs_core::legendre::{Dictionary, TemplatePatch};
use pafimocs_core::models::{CoeffVector, FullState, MotionState, SupportSet};
use pafimocs_core::observation::Frame;
use pafimocs_core::sim::{GroundTruth, SequenceConfig};
use pafimocs_core::solver::ModeTrackingProblem;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn matrix_body(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

/// Text form of a matrix with a `rows cols` header.
pub fn matrix_to_string(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    matrix_body(&mut out, m);
    out
}

/// Parses the header integers and the `rows × cols` body that follows.
fn parse_matrix(text: &str, header_len: usize, path: &Path) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let bad = |msg: String| HarnessError::format(path, msg);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty matrix file".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header field `{t}`"))))
        .collect::<Result<_>>()?;
    if header.len() != header_len {
        return Err(bad(format!("expected {header_len} header fields, found {}", header.len())));
    }
    let (rows, cols) = (header[0], header[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for (r, line) in lines.enumerate() {
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(t.parse::<f64>().map_err(|_| bad(format!("bad value `{t}` on row {r}")))?);
        }
        if data.len() - before != cols {
            return Err(bad(format!("row {r} has {} values, expected {cols}", data.len() - before)));
        }
    }
    if data.len() != rows * cols {
        return Err(bad(format!("expected {rows} rows, found {}", data.len() / cols.max(1))));
    }
    Ok((header, DMatrix::from_row_slice(rows, cols, &data)))
}

pub fn matrix_from_str(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    Ok(parse_matrix(text, 2, path)?.1)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_str(&read_text(path)?, path)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_to_string(m))
}

/// Dictionary with an `n_l n_lambda d` header.
pub fn dictionary_to_string(dict: &Dictionary) -> String {
    let m = dict.matrix();
    let mut out = format!("{} {} {}\n", m.nrows(), m.ncols(), dict.order());
    matrix_body(&mut out, m);
    out
}

/// Reads a dictionary file. A matrix with `2d + 1` columns is taken to be
/// the Legendre dictionary of order `d`, anything else a custom one.
pub fn dictionary_from_str(text: &str, path: &Path) -> Result<Dictionary> {
    let (header, m) = parse_matrix(text, 3, path)?;
    let legendre = m.ncols() == 2 * header[2] + 1;
    Ok(Dictionary::from_parts(m, header[2], legendre)?)
}

pub fn write_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    write_text(path, &dictionary_to_string(dict))
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    dictionary_from_str(&read_text(path)?, path)
}

pub fn frame_matrix(frame: &Frame) -> DMatrix<f64> {
    DMatrix::from_row_slice(frame.height(), frame.width(), frame.pixels())
}

pub fn frame_from_matrix(m: &DMatrix<f64>) -> Result<Frame> {
    let pixels = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).map(|rc| m[rc]).collect();
    Ok(Frame::new(pixels, m.nrows(), m.ncols())?)
}

/// 8-bit PGM of the frame, values rounded and clamped to `[0, 255]`.
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let bytes: Vec<u8> = frame.pixels().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let img = image::GrayImage::from_raw(frame.width() as u32, frame.height() as u32, bytes)
        .expect("buffer matches frame dimensions");
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let encoder = PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    img.write_with_encoder(encoder)?;
    Ok(())
}

pub fn template_matrix(t: &TemplatePatch) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.height(), t.width(), t.pixels().as_slice())
}

/// Sequence metadata stored next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub format: String,
    pub seed: u64,
    pub n_frames: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub template_origin: (i64, i64),
    pub d: usize,
    pub n_lambda: usize,
}

pub const SEQUENCE_FORMAT: &str = "pafimocs-sequence v1";
const TRUTH_HEADER: &str = "# pafimocs-truth v1";

/// A sequence loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSequence {
    pub meta: SequenceMeta,
    pub template: TemplatePatch,
    pub states: Vec<FullState>,
    pub frames: Vec<Frame>,
}

fn frame_path(dir: &Path, t: usize, ext: &str) -> PathBuf {
    dir.join("frames").join(format!("frame_{t:04}.{ext}"))
}

/// Writes `meta.json`, `template.txt`, `truth.csv` and one text matrix and
/// one PGM per frame under `frames/`.
pub fn write_sequence(dir: &Path, cfg: &SequenceConfig, seed: u64, truth: &GroundTruth, pgm: bool) -> Result<()> {
    create_dir(dir)?;
    let meta = SequenceMeta {
        format: SEQUENCE_FORMAT.into(),
        seed,
        n_frames: cfg.n_frames,
        frame_h: cfg.frame_dims.0,
        frame_w: cfg.frame_dims.1,
        template_origin: (truth.template.coord_i()[0], truth.template.coord_j()[0]),
        d: cfg.d,
        n_lambda: cfg.n_lambda(),
    };
    write_text(&dir.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    write_matrix(&dir.join("template.txt"), &template_matrix(&truth.template))?;
    write_text(&dir.join("truth.csv"), &truth_csv(&truth.states))?;
    for (t, frame) in truth.frames.iter().enumerate() {
        write_matrix(&frame_path(dir, t, "txt"), &frame_matrix(frame))?;
        if pgm {
            write_pgm(&frame_path(dir, t, "pgm"), frame)?;
        }
    }
    Ok(())
}

/// Per-frame motion, support (indices joined by `;`) and coefficients.
pub fn truth_csv(states: &[FullState]) -> String {
    let n = states.first().map_or(0, |s| s.coeffs.len());
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    let mut header = vec!["frame".to_string(), "ux".into(), "uy".into(), "scale".into(), "support".into()];
    header.extend((0..n).map(|j| format!("lambda_{j}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, s) in states.iter().enumerate() {
        let support: Vec<String> = s.support.iter().map(|j| j.to_string()).collect();
        let _ = write!(out, "{t},{},{},{},{}", s.motion.ux, s.motion.uy, s.motion.scale, support.join(";"));
        for v in s.coeffs.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_truth(text: &str, n_lambda: usize, path: &Path) -> Result<Vec<FullState>> {
    let bad = |msg: String| HarnessError::format(path, msg);
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut states = Vec::new();
    for (t, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 + n_lambda {
            return Err(bad(format!("truth row {t} has {} fields, expected {}", rec.len(), 5 + n_lambda)));
        }
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(format!("bad number `{}` in row {t}", &rec[k])));
        let motion = MotionState::new(num(1)?, num(2)?, num(3)?);
        let indices = rec[4]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad(format!("bad support index `{s}` in row {t}"))))
            .collect::<Result<Vec<usize>>>()?;
        let coeffs = CoeffVector::from_iterator(n_lambda, (5..5 + n_lambda).map(num).collect::<Result<Vec<_>>>()?);
        states.push(FullState::new(motion, SupportSet::new(indices, n_lambda)?, coeffs)?);
    }
    Ok(states)
}

pub fn read_sequence(dir: &Path) -> Result<StoredSequence> {
    let meta_path = dir.join("meta.json");
    let meta: SequenceMeta = serde_json::from_str(&read_text(&meta_path)?)?;
    if meta.format != SEQUENCE_FORMAT {
        return Err(HarnessError::format(meta_path, format!("unsupported format `{}`", meta.format)));
    }
    let t = read_matrix(&dir.join("template.txt"))?;
    let pixels = (0..t.nrows()).flat_map(|r| (0..t.ncols()).map(move |c| (r, c))).map(|rc| t[rc]).collect();
    let template = TemplatePatch::new(pixels, t.nrows(), t.ncols(), meta.template_origin.0, meta.template_origin.1)?;
    let truth_path = dir.join("truth.csv");
    let states = parse_truth(&read_text(&truth_path)?, meta.n_lambda, &truth_path)?;
    let frames = (0..=meta.n_frames)
        .map(|t| frame_from_matrix(&read_matrix(&frame_path(dir, t, "txt"))?))
        .collect::<Result<Vec<_>>>()?;
    if states.len() != frames.len() {
        return Err(HarnessError::format(
            truth_path,
            format!("{} truth rows for {} frames", states.len(), frames.len()),
        ));
    }
    Ok(StoredSequence {
        meta,
        template,
        states,
        frames,
    })
}

/// A mode-tracking problem with its dictionary, for reproducing a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSnapshot {
    pub y: Vec<f64>,
    /// Dictionary rows.
    pub n_l: usize,
    pub n_lambda: usize,
    pub d: usize,
    /// Dictionary entries, row-major.
    pub dictionary: Vec<f64>,
    pub lambda_prev: Vec<f64>,
    pub cond_support: Vec<usize>,
    pub sigma_o_sq: f64,
    pub sigma_l_sq: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_outlier: Option<f64>,
}

impl ProblemSnapshot {
    pub fn capture(p: &ModeTrackingProblem<'_>) -> Self {
        let m = p.dict.matrix();
        Self {
            y: p.y.as_slice().to_vec(),
            n_l: m.nrows(),
            n_lambda: m.ncols(),
            d: p.dict.order(),
            dictionary: m.transpose().as_slice().to_vec(),
            lambda_prev: p.lambda_prev.as_slice().to_vec(),
            cond_support: p.cond_support.indices().to_vec(),
            sigma_o_sq: p.sigma_o_sq,
            sigma_l_sq: p.sigma_l_sq,
            beta: p.beta,
            gamma: p.gamma,
            gamma_outlier: p.gamma_outlier,
        }
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        if self.dictionary.len() != self.n_l * self.n_lambda {
            return Err(pafimocs_core::Error::Size(format!(
                "{} dictionary entries for {} x {}",
                self.dictionary.len(),
                self.n_l,
                self.n_lambda
            ))
            .into());
        }
        let m = DMatrix::from_row_slice(self.n_l, self.n_lambda, &self.dictionary);
        Ok(Dictionary::from_parts(m, self.d, self.n_lambda == 2 * self.d + 1)?)
    }

    /// The problem over `dict`, which should come from [`Self::dictionary`].
    pub fn problem<'a>(&self, dict: &'a Dictionary) -> Result<ModeTrackingProblem<'a>> {
        let mut p = ModeTrackingProblem::new(
            DVector::from_vec(self.y.clone()),
            dict,
            DVector::from_vec(self.lambda_prev.clone()),
            SupportSet::new(self.cond_support.clone(), self.n_lambda)?,
            self.sigma_o_sq,
            self.sigma_l_sq,
        )
        .with_multipliers(self.beta, self.gamma);
        p.gamma_outlier = self.gamma_outlier;
        p.validate()?;
        Ok(p)
    }
}
