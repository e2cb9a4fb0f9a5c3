//! Monte Carlo experiment driver.
//!
//! Run `r` uses the sequence seed `derive_seed(master, r)`; each filter of
//! that run gets `derive_seed(run_seed, label_lane(label))`. Runs and filters
//! are executed in parallel but collected in (run, filter) order, and every
//! reduction sums in that order, so outputs do not depend on scheduling.

use std::fmt::Write as _;
use std::path::Path;

use pafimocs_core::filters::{StepReport, Tracker};
use pafimocs_core::legendre::TemplatePatch;
use pafimocs_core::models::{CoeffVector, FullState, ModelParams, MotionState};
use pafimocs_core::observation::Frame;
use pafimocs_core::rng::{derive_seed, label_lane};
use pafimocs_core::sim::{generate_sequence, location_error, squared_error};
use pafimocs_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{FilterSpec, SimConfig};
use crate::error::Result;
use crate::io::write_text;

pub const RUNS_HEADER: &str = "# pafimocs-runs v1";
pub const AGGREGATE_HEADER: &str = "# pafimocs-aggregate v1";
pub const TRACK_HEADER: &str = "# pafimocs-track v1";

pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

pub fn filter_seed(run_seed: u64, label: &str) -> u64 {
    derive_seed(run_seed, label_lane(label))
}

/// Estimates of one filter over a sequence, frame 0 included.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub estimates: Vec<(MotionState, CoeffVector)>,
    /// One report per completed step.
    pub reports: Vec<StepReport>,
    /// Frame at which every particle died. The estimate is held from there on.
    pub lost_at: Option<usize>,
}

/// Runs a truth-initialised filter over `frames[1..]`.
pub fn track_sequence(
    spec: &FilterSpec,
    template: &TemplatePatch,
    params: &ModelParams,
    initial: &FullState,
    frames: &[Frame],
    seed: u64,
) -> Result<FilterTrace> {
    let mut tracker = Tracker::new(spec.config.clone(), template.clone(), params.clone(), initial, seed)?;
    let mut estimates = Vec::with_capacity(frames.len());
    estimates.push(tracker.estimate());
    let mut reports = Vec::with_capacity(frames.len().saturating_sub(1));
    let mut lost_at = None;
    for (t, frame) in frames.iter().enumerate().skip(1) {
        if lost_at.is_none() {
            match tracker.step(frame) {
                Ok(report) => {
                    estimates.push((report.motion, report.coeffs.clone()));
                    reports.push(report);
                    continue;
                }
                Err(Error::TrackerLost { .. }) => lost_at = Some(t),
                Err(e) => return Err(e.into()),
            }
        }
        let held = estimates.last().expect("frame 0 estimate").clone();
        estimates.push(held);
    }
    Ok(FilterTrace {
        estimates,
        reports,
        lost_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub sq_err: f64,
    pub sq_norm: f64,
    pub location_error: f64,
}

/// One filter on one Monte Carlo sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub filter: String,
    pub frames: Vec<FrameMetrics>,
    pub lost_at: Option<usize>,
    pub unconverged_solves: usize,
}

/// Per-frame metrics of one filter across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub filter: String,
    /// `None` where every run has a zero denominator.
    pub nmse: Vec<Option<f64>>,
    pub le_mean: Vec<f64>,
    /// Standard error of the mean; 0 with fewer than two runs.
    pub le_stderr: Vec<f64>,
    pub lost_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by run, then by the configured filter order.
    pub records: Vec<RunRecord>,
    pub series: Vec<MetricSeries>,
}

impl ExperimentResult {
    pub fn series(&self, label: &str) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.filter == label)
    }
}

fn frame_metrics(truth: &[FullState], trace: &FilterTrace) -> Vec<FrameMetrics> {
    truth
        .iter()
        .zip(&trace.estimates)
        .map(|(s, (u, c))| {
            let (sq_err, sq_norm) = squared_error(s, u, c);
            FrameMetrics {
                sq_err,
                sq_norm,
                location_error: location_error(&s.motion, u),
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentResult> {
    cfg.sequence.validate()?;
    let per_run: Vec<Vec<RunRecord>> = (0..cfg.n_monte_carlo)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(cfg.seed, run);
            let truth = generate_sequence(&cfg.sequence, seed)?;
            cfg.filters
                .par_iter()
                .map(|spec| {
                    let trace = track_sequence(
                        spec,
                        &truth.template,
                        &cfg.sequence.params,
                        &truth.states[0],
                        &truth.frames,
                        filter_seed(seed, &spec.label),
                    )?;
                    Ok(RunRecord {
                        run,
                        seed,
                        filter: spec.label.clone(),
                        frames: frame_metrics(&truth.states, &trace),
                        lost_at: trace.lost_at,
                        unconverged_solves: trace.reports.iter().map(|r| r.unconverged_solves).sum(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let series = cfg
        .filters
        .iter()
        .map(|f| aggregate(&f.label, records.iter().filter(|r| r.filter == f.label)))
        .collect();
    Ok(ExperimentResult { records, series })
}

fn aggregate<'a>(label: &str, records: impl Iterator<Item = &'a RunRecord>) -> MetricSeries {
    let records: Vec<&RunRecord> = records.collect();
    let n_frames = records.first().map_or(0, |r| r.frames.len());
    let runs = records.len() as f64;
    let mut nmse = Vec::with_capacity(n_frames);
    let mut le_mean = Vec::with_capacity(n_frames);
    let mut le_stderr = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let (num, den) = records
            .iter()
            .fold((0.0, 0.0), |(n, d), r| (n + r.frames[t].sq_err, d + r.frames[t].sq_norm));
        nmse.push((den > 0.0).then(|| num / den));
        let mean = records.iter().map(|r| r.frames[t].location_error).sum::<f64>() / runs;
        let stderr = if records.len() > 1 {
            let var = records
                .iter()
                .map(|r| (r.frames[t].location_error - mean).powi(2))
                .sum::<f64>()
                / (runs - 1.0);
            (var / runs).sqrt()
        } else {
            0.0
        };
        le_mean.push(mean);
        le_stderr.push(stderr);
    }
    MetricSeries {
        filter: label.to_string(),
        nmse,
        le_mean,
        le_stderr,
        lost_runs: records.iter().filter(|r| r.lost_at.is_some()).count(),
    }
}

fn csv_text(header: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let body = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(format!("{header}\n{}", String::from_utf8(body).expect("csv output is utf-8")))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn runs_csv(result: &ExperimentResult) -> Result<String> {
    let rows = result.records.iter().flat_map(|r| {
        r.frames.iter().enumerate().map(move |(t, m)| {
            let lost = r.lost_at.is_some_and(|l| t >= l);
            vec![
                r.run.to_string(),
                r.seed.to_string(),
                r.filter.clone(),
                t.to_string(),
                m.sq_err.to_string(),
                m.sq_norm.to_string(),
                m.location_error.to_string(),
                u8::from(lost).to_string(),
            ]
        })
    });
    csv_text(
        RUNS_HEADER,
        &["run", "seed", "filter", "frame", "sq_err", "sq_norm", "location_error", "lost"],
        rows,
    )
}

pub fn aggregate_csv(result: &ExperimentResult) -> Result<String> {
    let rows = result.series.iter().flat_map(|s| {
        (0..s.nmse.len()).map(move |t| {
            vec![
                s.filter.clone(),
                t.to_string(),
                opt(s.nmse[t]),
                s.le_mean[t].to_string(),
                s.le_stderr[t].to_string(),
                s.lost_runs.to_string(),
            ]
        })
    });
    csv_text(
        AGGREGATE_HEADER,
        &["filter", "frame", "nmse", "le_mean", "le_stderr", "lost_runs"],
        rows,
    )
}

#[derive(Debug, Serialize)]
struct FilterSummary<'a> {
    label: &'a str,
    final_nmse: Option<f64>,
    mean_nmse: Option<f64>,
    final_le_mean: Option<f64>,
    lost_runs: usize,
    unconverged_solves: usize,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    format: &'static str,
    seed: u64,
    n_monte_carlo: usize,
    n_frames: usize,
    filters: Vec<FilterSummary<'a>>,
}

pub fn summary_json(cfg: &SimConfig, result: &ExperimentResult) -> Result<String> {
    let filters = result
        .series
        .iter()
        .map(|s| {
            let defined: Vec<f64> = s.nmse.iter().skip(1).flatten().copied().collect();
            FilterSummary {
                label: &s.filter,
                final_nmse: s.nmse.last().copied().flatten(),
                mean_nmse: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                final_le_mean: s.le_mean.last().copied(),
                lost_runs: s.lost_runs,
                unconverged_solves: result
                    .records
                    .iter()
                    .filter(|r| r.filter == s.filter)
                    .map(|r| r.unconverged_solves)
                    .sum(),
            }
        })
        .collect();
    let summary = Summary {
        format: "pafimocs-summary v1",
        seed: cfg.seed,
        n_monte_carlo: cfg.n_monte_carlo,
        n_frames: cfg.sequence.n_frames,
        filters,
    };
    Ok(serde_json::to_string_pretty(&summary)? + "\n")
}

/// Writes `runs.csv`, `aggregate.csv`, `summary.json` and the resolved
/// `config.txt` into `dir`.
pub fn write_experiment(dir: &Path, cfg: &SimConfig, result: &ExperimentResult) -> Result<()> {
    write_text(&dir.join("runs.csv"), &runs_csv(result)?)?;
    write_text(&dir.join("aggregate.csv"), &aggregate_csv(result)?)?;
    write_text(&dir.join("summary.json"), &summary_json(cfg, result)?)?;
    write_text(&dir.join("config.txt"), &cfg.to_kv_string())
}

/// Per-step filter log: diagnostics, the estimate, and the per-particle
/// support sizes joined by `;`.
pub fn track_csv(label: &str, trace: &FilterTrace) -> Result<String> {
    let n = trace.estimates.first().map_or(0, |e| e.1.len());
    let mut columns: Vec<String> = ["step", "filter", "ess", "max_log_weight", "resampled", "invalid_roi", "ux", "uy", "scale"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    columns.extend((0..n).map(|j| format!("lambda_{j}")));
    columns.push("support_sizes".into());
    let rows = trace.reports.iter().map(|r| {
        let mut row = vec![
            r.step.to_string(),
            label.to_string(),
            r.ess.to_string(),
            r.max_log_weight.to_string(),
            u8::from(r.resampled).to_string(),
            r.invalid_roi.to_string(),
            r.motion.ux.to_string(),
            r.motion.uy.to_string(),
            r.motion.scale.to_string(),
        ];
        row.extend(r.coeffs.iter().map(|v| v.to_string()));
        let mut sizes = String::new();
        for (k, s) in r.support_sizes.iter().enumerate() {
            let _ = write!(sizes, "{}{s}", if k > 0 { ";" } else { "" });
        }
        row.push(sizes);
        row
    });
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    csv_text(TRACK_HEADER, &cols, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(filter: &str, run: usize, errs: &[(f64, f64, f64)], lost_at: Option<usize>) -> RunRecord {
        RunRecord {
            run,
            seed: run as u64,
            filter: filter.into(),
            frames: errs
                .iter()
                .map(|&(sq_err, sq_norm, location_error)| FrameMetrics {
                    sq_err,
                    sq_norm,
                    location_error,
                })
                .collect(),
            lost_at,
            unconverged_solves: 0,
        }
    }

    #[test]
    fn aggregation_pools_numerators_and_denominators() {
        let a = record("f", 0, &[(0.0, 0.0, 1.0), (1.0, 4.0, 2.0)], None);
        let b = record("f", 1, &[(0.0, 0.0, 3.0), (3.0, 4.0, 4.0)], Some(1));
        let s = aggregate("f", [&a, &b].into_iter());
        assert_eq!(s.nmse, vec![None, Some(0.5)]);
        assert_eq!(s.le_mean, vec![2.0, 3.0]);
        // sample sd of {1, 3} is √2, over √2 runs
        assert!((s.le_stderr[0] - 1.0).abs() < 1e-15);
        assert_eq!(s.lost_runs, 1);
    }

    #[test]
    fn csv_files_carry_versioned_headers() {
        let result = ExperimentResult {
            records: vec![record("pafimocs", 0, &[(0.0, 1.0, 0.0), (0.5, 1.0, 0.25)], Some(1))],
            series: vec![aggregate(
                "pafimocs",
                [&record("pafimocs", 0, &[(0.0, 0.0, 0.0)], None)].into_iter(),
            )],
        };
        let runs = runs_csv(&result).unwrap();
        let mut lines = runs.lines();
        assert_eq!(lines.next(), Some(RUNS_HEADER));
        assert_eq!(lines.next(), Some("run,seed,filter,frame,sq_err,sq_norm,location_error,lost"));
        assert_eq!(lines.next(), Some("0,0,pafimocs,0,0,1,0,0"));
        assert_eq!(lines.next(), Some("0,0,pafimocs,1,0.5,1,0.25,1"));
        let agg = aggregate_csv(&result).unwrap();
        assert!(agg.starts_with(AGGREGATE_HEADER));
        assert!(agg.ends_with("pafimocs,0,,0,0,0\n"));
    }
}
