use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pafimocs::analysis::{analyze_support, coeff_rows, fit_patches, patch_files, read_patches};
use pafimocs::experiment::{filter_seed, run_experiment, run_seed, track_csv, track_sequence, write_experiment};
use pafimocs::io::{read_dictionary, read_matrix, read_sequence, read_text, write_sequence, write_text, ProblemSnapshot};
use pafimocs::{HarnessError, Result, SimConfig};
use pafimocs_core::legendre::{Dictionary, TemplatePatch};
use pafimocs_core::sim::{generate_sequence, location_error, squared_error};
use pafimocs_core::solver::{solve, solve_with_outliers, SolverConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pafimocs", version, about = "Particle-filtered modified-CS tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Monte Carlo run whose sequence to generate.
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_pgm: bool,
    },
    /// Run the configured filters on a stored sequence.
    Track {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full Monte Carlo experiment.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Energy supports of a coefficient sequence or of aligned patches.
    AnalyzeSupport {
        /// Frames-by-coefficients matrix file.
        #[arg(long, conflicts_with_all = ["patches", "template"])]
        coeffs: Option<PathBuf>,
        /// Directory of patch matrix files, read in name order.
        #[arg(long, requires = "template")]
        patches: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Legendre order used to fit patches.
        #[arg(long, default_value_t = 20)]
        d: usize,
        /// Dictionary file to fit patches with instead of a Legendre one.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one stored mode-tracking problem.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        /// Write the per-iteration trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = SolverConfig::default().max_iterations)]
        max_iterations: usize,
        #[arg(long, default_value_t = SolverConfig::default().kkt_tolerance)]
        kkt_tolerance: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::from_file(p),
        None => Ok(SimConfig::standard()),
    }
}

fn simulate(config: Option<&Path>, run: usize, out: &Path, pgm: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = run_seed(cfg.seed, run);
    let truth = generate_sequence(&cfg.sequence, seed)?;
    write_sequence(out, &cfg.sequence, seed, &truth, pgm)?;
    println!("wrote {} frames to {}", truth.frames.len(), out.display());
    Ok(())
}

fn track(sequence: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let seq = read_sequence(sequence)?;
    let mut metrics = String::from("# pafimocs-track-metrics v1\nfilter,frame,sq_err,sq_norm,location_error\n");
    for spec in &cfg.filters {
        let trace = track_sequence(
            spec,
            &seq.template,
            &cfg.sequence.params,
            &seq.states[0],
            &seq.frames,
            filter_seed(seq.meta.seed, &spec.label),
        )?;
        write_text(&out.join(format!("track_{}.csv", spec.label)), &track_csv(&spec.label, &trace)?)?;
        for (t, (s, (u, c))) in seq.states.iter().zip(&trace.estimates).enumerate() {
            let (e, n) = squared_error(s, u, c);
            metrics.push_str(&format!("{},{t},{e},{n},{}\n", spec.label, location_error(&s.motion, u)));
        }
        if let Some(t) = trace.lost_at {
            eprintln!("{}: lost at frame {t}", spec.label);
        }
    }
    write_text(&out.join("metrics.csv"), &metrics)
}

fn experiment(config: Option<&Path>, out: &Path, seed: Option<u64>, runs: Option<usize>) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.n_monte_carlo = runs.unwrap_or(cfg.n_monte_carlo);
    let result = run_experiment(&cfg)?;
    write_experiment(out, &cfg, &result)?;
    for s in &result.series {
        let last = s.nmse.last().copied().flatten();
        println!(
            "{:<14} nmse[{}] = {}  lost runs = {}",
            s.filter,
            s.nmse.len().saturating_sub(1),
            last.map_or("undefined".into(), |v| format!("{v:.4}")),
            s.lost_runs
        );
    }
    Ok(())
}

fn analyze(
    coeffs: Option<&Path>,
    patches: Option<&Path>,
    template: Option<&Path>,
    d: usize,
    dictionary: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let sequence = match (coeffs, patches, template) {
        (Some(c), _, _) => coeff_rows(&read_matrix(c)?),
        (None, Some(dir), Some(t)) => {
            let m = read_matrix(t)?;
            let pixels = m.transpose().as_slice().to_vec();
            let template = TemplatePatch::new(pixels, m.nrows(), m.ncols(), 0, 0)?;
            let dict = match dictionary {
                Some(p) => read_dictionary(p)?,
                None => Dictionary::legendre(&template, d)?,
            };
            fit_patches(&read_patches(&patch_files(dir)?)?, &template, &dict)?
        }
        _ => {
            return Err(HarnessError::Config {
                line: 0,
                message: "give --coeffs, or --patches with --template".into(),
            })
        }
    };
    let trace = analyze_support(&sequence, out)?;
    println!(
        "{} frames, mean add ratio {}, mean removal ratio {}",
        trace.rows.len(),
        trace.mean_add_frac().map_or("n/a".into(), |v| format!("{v:.4}")),
        trace.mean_del_frac().map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    lambda: Vec<f64>,
    outlier: Option<Vec<f64>>,
    objective: f64,
    kkt_residual: f64,
    iterations: usize,
    converged: bool,
}

fn solve_cmd(problem: &Path, trace: Option<&Path>, max_iterations: usize, kkt_tolerance: f64) -> Result<()> {
    let snapshot: ProblemSnapshot = serde_json::from_str(&read_text(problem)?)?;
    let dict = snapshot.dictionary()?;
    let p = snapshot.problem(&dict)?;
    let cfg = SolverConfig {
        max_iterations,
        kkt_tolerance,
        record_trace: trace.is_some(),
        ..SolverConfig::default()
    };
    let res = if p.gamma_outlier.is_some() {
        solve_with_outliers(&p, &cfg)?
    } else {
        solve(&p, &cfg)?
    };
    if let Some(path) = trace {
        let mut text = String::from("# pafimocs-solver-trace v1\niteration,objective,kkt_residual\n");
        for row in &res.trace {
            text.push_str(&format!("{},{},{}\n", row.iteration, row.objective, row.kkt_residual));
        }
        write_text(path, &text)?;
    }
    let out = SolveOutput {
        lambda: res.lambda.as_slice().to_vec(),
        outlier: res.outlier.map(|o| o.as_slice().to_vec()),
        objective: res.objective,
        kkt_residual: res.kkt_residual,
        iterations: res.iterations,
        converged: res.converged,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate {
            config,
            run,
            out,
            no_pgm,
        } => simulate(config.as_deref(), *run, out, !no_pgm),
        Command::Track { sequence, config, out } => track(sequence, config.as_deref(), out),
        Command::Experiment { config, out, seed, runs } => experiment(config.as_deref(), out, *seed, *runs),
        Command::AnalyzeSupport {
            coeffs,
            patches,
            template,
            d,
            dictionary,
            out,
        } => analyze(
            coeffs.as_deref(),
            patches.as_deref(),
            template.as_deref(),
            *d,
            dictionary.as_deref(),
            out,
        ),
        Command::Solve {
            problem,
            trace,
            max_iterations,
            kkt_tolerance,
        } => solve_cmd(problem, trace.as_deref(), *max_iterations, *kkt_tolerance),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
