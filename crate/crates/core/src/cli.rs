//! Command-line front end: flat JSON configuration, `run`, `report` and
//! `oracle` subcommands. Reports are CSV tables on stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionConfig, ImprovementMode};
use crate::driver::{best_so_far, cost_report, run, EvaluatorSpec, RunConfig, RunHistory};
use crate::error::{Error, Result};
use crate::evaluators::{grid_oracle, SyntheticBurnerParams};
use crate::fidelity_cost::runtime_predict;
use crate::problem::Bounds;
use crate::surrogate::ard_importance;

#[derive(Debug, Parser)]
#[command(
    name = "mfbo",
    version,
    about = "Multi-fidelity constrained Bayesian optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run or resume an optimization campaign.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Optimization iterations after the initial design.
        #[arg(long)]
        iterations: Option<usize>,
        /// Pin the mesh to its finest size.
        #[arg(long)]
        single_fidelity: bool,
        /// Override the history file location.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Emit a diagnostic table from a history file.
    Report {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum)]
        kind: ReportKind,
        /// Single-fidelity history to compare against (`cost` only).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 2e-6)]
        nox_cap: f64,
    },
    /// Brute-force the synthetic burner's optima on the finest mesh.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Convergence,
    Ard,
    Cost,
    Tradeoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Synthetic,
    Subprocess,
}

/// On-disk run configuration. Every key is optional; unknown keys are
/// rejected. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub h_min: f64,
    pub h_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub n_init: usize,
    pub n_iterations: usize,
    pub cadence: usize,
    pub seed: u64,
    pub single_fidelity: bool,
    pub history_path: PathBuf,
    pub beta: f64,
    pub gamma: f64,
    pub nox_cap: f64,
    pub mc_samples: usize,
    pub restarts: usize,
    pub raw_samples: usize,
    pub improvement: ImprovementMode,
    pub evaluator: EvaluatorKind,
    pub command: Option<String>,
    pub workdir: PathBuf,
    pub timeout_s: f64,
    /// Noise stream of the synthetic burner, independent of `seed`.
    pub synthetic_seed: u64,
    pub synthetic_temperature_noise: f64,
    pub synthetic_nox_noise: f64,
    pub synthetic_wall_time_sigma: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let b = Bounds::default();
        let run = RunConfig::default();
        let acq = AcquisitionConfig::default();
        let synthetic = SyntheticBurnerParams::default();
        Self {
            h_min: b.lower[0],
            h_max: b.upper[0],
            l_min: b.lower[1],
            l_max: b.upper[1],
            s_min: b.lower[2],
            s_max: b.upper[2],
            n_init: run.n_init,
            n_iterations: run.n_iterations,
            cadence: run.cadence,
            seed: run.seed,
            single_fidelity: false,
            history_path: PathBuf::from("bo_history.csv"),
            beta: acq.beta,
            gamma: acq.gamma,
            nox_cap: acq.nox_cap,
            mc_samples: acq.mc_samples,
            restarts: acq.restarts,
            raw_samples: acq.raw_samples,
            improvement: acq.mode,
            evaluator: EvaluatorKind::Synthetic,
            command: None,
            workdir: PathBuf::from("runs"),
            timeout_s: 24.0 * 3600.0,
            synthetic_seed: synthetic.seed,
            synthetic_temperature_noise: synthetic.temperature_noise,
            synthetic_nox_noise: synthetic.nox_noise,
            synthetic_wall_time_sigma: synthetic.wall_time_sigma,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            kind: "io",
            reason: format!("{}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            kind: "schema",
            reason: format!("{}: {e}", path.display()),
        })
    }

    /// Validated run configuration; `base_dir` anchors relative paths.
    pub fn to_run_config(&self, base_dir: &Path) -> Result<RunConfig> {
        let bounds = Bounds::new(
            [self.h_min, self.l_min, self.s_min],
            [self.h_max, self.l_max, self.s_max],
        )?;
        let mut synthetic = SyntheticBurnerParams {
            seed: self.synthetic_seed,
            temperature_noise: self.synthetic_temperature_noise,
            nox_noise: self.synthetic_nox_noise,
            wall_time_sigma: self.synthetic_wall_time_sigma,
            ..SyntheticBurnerParams::default()
        };
        // the runtime law's area normalizer follows the design box
        synthetic.runtime.a0 = bounds.mid_area();
        let evaluator = match self.evaluator {
            EvaluatorKind::Synthetic => EvaluatorSpec::Synthetic(synthetic),
            EvaluatorKind::Subprocess => {
                let command = self.command.clone().ok_or(Error::Config {
                    kind: "evaluator",
                    reason: "subprocess evaluator needs `command`".into(),
                })?;
                if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
                    return Err(Error::Config {
                        kind: "evaluator",
                        reason: format!("timeout_s must be positive, got {}", self.timeout_s),
                    });
                }
                EvaluatorSpec::Subprocess {
                    command,
                    workdir: base_dir.join(&self.workdir),
                    timeout: Duration::from_secs_f64(self.timeout_s),
                }
            }
        };
        let cfg = RunConfig {
            bounds,
            n_init: self.n_init,
            n_iterations: self.n_iterations,
            acquisition: AcquisitionConfig {
                beta: self.beta,
                gamma: self.gamma,
                nox_cap: self.nox_cap,
                mc_samples: self.mc_samples,
                restarts: self.restarts,
                raw_samples: self.raw_samples,
                seed: self.seed,
                mode: self.improvement,
            },
            evaluator,
            cadence: self.cadence,
            history_path: Some(base_dir.join(&self.history_path)),
            seed: self.seed,
            single_fidelity: self.single_fidelity,
            ..RunConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Short machine-readable category of an error, used in `error[...]` lines.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config { kind, .. } => kind,
        Error::OutOfBounds { .. } | Error::InvalidBounds { .. } | Error::UnitRange { .. } => {
            "bounds"
        }
        Error::InvalidParameter { .. } => "parameter",
        Error::Protocol { .. } | Error::Timeout { .. } | Error::EvaluatorStreak { .. } => {
            "evaluator"
        }
        Error::History(_) | Error::Csv(_) => "history",
        Error::Comparison(_) => "comparison",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        _ => "numerics",
    }
}

/// Process exit code: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::OutOfBounds { .. }
        | Error::InvalidBounds { .. }
        | Error::UnitRange { .. }
        | Error::InvalidParameter { .. } => 2,
        _ => 1,
    }
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let file = ConfigFile::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.to_run_config(base)
}

/// `run`: executes the campaign and prints the best feasible design.
pub fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    iterations: Option<usize>,
    single_fidelity: bool,
    history: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut cfg = load_run_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.acquisition.seed = seed;
    }
    if let Some(n) = iterations {
        cfg.n_iterations = n;
    }
    cfg.single_fidelity |= single_fidelity;
    if let Some(h) = history {
        cfg.history_path = Some(h.to_path_buf());
    }
    let result = run(&cfg)?;
    let cap = cfg.acquisition.nox_cap;
    let path = cfg.history_path.as_deref().unwrap_or(Path::new("-"));
    writeln!(out, "history: {} ({} rows)", path.display(), result.len())?;
    match best_so_far(&result.observations(), cap).last() {
        Some(b) => {
            let o = &result.rows[b.found_at - 1];
            writeln!(
                out,
                "best: iteration={} h_mm={:.3} l_mm={:.3} s_mm={:.4} t_mean_K={:.3} nox={:.4e} feasible=true",
                b.found_at, b.x.h, b.x.l, b.x.s, b.t_mean, o.nox
            )?;
        }
        None => writeln!(out, "best: none feasible=false")?,
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `report`: one tidy CSV table on `out`.
pub fn cmd_report(
    history: &Path,
    kind: ReportKind,
    baseline: Option<&Path>,
    nox_cap: f64,
    out: &mut dyn Write,
) -> Result<()> {
    let h = RunHistory::read_csv(history)?;
    let mut w = csv::Writer::from_writer(out);
    match kind {
        ReportKind::Convergence => {
            w.write_record([
                "iteration",
                "phase",
                "t_mean_K",
                "nox",
                "feasible",
                "best_t_mean_K",
            ])?;
            let best = best_so_far(&h.observations(), nox_cap);
            for r in &h.rows {
                let b = best
                    .iter()
                    .find(|b| b.iteration == r.iteration)
                    .map(|b| b.t_mean);
                let feasible = r.observation().is_feasible(nox_cap);
                let phase = if r.phase == crate::driver::Phase::Doe {
                    "DOE"
                } else {
                    "BO"
                };
                w.write_record([
                    r.iteration.to_string(),
                    phase.into(),
                    r.t_mean_k.to_string(),
                    r.nox.to_string(),
                    feasible.to_string(),
                    opt(b),
                ])?;
            }
        }
        ReportKind::Ard => {
            w.write_record([
                "iteration",
                "imp_h_T",
                "imp_l_T",
                "imp_s_T",
                "imp_h_N",
                "imp_l_N",
                "imp_s_N",
            ])?;
            for r in &h.rows {
                let (Some(t), Some(n)) = (r.objective_hyper(), r.constraint_hyper()) else {
                    continue;
                };
                let (it, inn) = (ard_importance(&t)?, ard_importance(&n)?);
                let mut rec = vec![r.iteration.to_string()];
                rec.extend(it.iter().chain(&inn).map(f64::to_string));
                w.write_record(rec)?;
            }
        }
        ReportKind::Cost => match baseline {
            Some(base) => {
                let hf = RunHistory::read_csv(base)?;
                let c = cost_report(&h.observations(), &hf.observations())?;
                w.write_record(["total_mf_s", "total_hf_s", "reduction_percent"])?;
                w.write_record(
                    [c.total_mf_s, c.total_hf_s, c.reduction_percent].map(|v| v.to_string()),
                )?;
            }
            None => {
                w.write_record([
                    "iteration",
                    "z",
                    "wall_time_s",
                    "t_hat_s",
                    "cumulative_wall_time_s",
                ])?;
                let bounds = Bounds::default();
                let mut cumulative = 0.0;
                for r in &h.rows {
                    if r.wall_time_s.is_finite() {
                        cumulative += r.wall_time_s;
                    }
                    let t_hat = r
                        .runtime(&bounds)
                        .and_then(|c| runtime_predict(&r.point(), &c, &bounds).ok());
                    w.write_record([
                        r.iteration.to_string(),
                        r.z.to_string(),
                        r.wall_time_s.to_string(),
                        opt(t_hat),
                        cumulative.to_string(),
                    ])?;
                }
            }
        },
        ReportKind::Tradeoff => {
            w.write_record([
                "iteration",
                "h_mm",
                "l_mm",
                "area_mm2",
                "t_mean_K",
                "nox",
                "feasible",
            ])?;
            for r in h.rows.iter().filter(|r| r.converged) {
                w.write_record([
                    r.iteration.to_string(),
                    r.h_mm.to_string(),
                    r.l_mm.to_string(),
                    (r.h_mm * r.l_mm).to_string(),
                    r.t_mean_k.to_string(),
                    r.nox.to_string(),
                    r.observation().is_feasible(nox_cap).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `oracle`: grid search of the synthetic burner, written as JSON.
pub fn cmd_oracle(config: &Path, grid: usize, out_path: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = load_run_config(config)?;
    let EvaluatorSpec::Synthetic(params) = &cfg.evaluator else {
        return Err(Error::Config {
            kind: "evaluator",
            reason: "the oracle is only defined for the synthetic evaluator".into(),
        });
    };
    let report = grid_oracle(params, &cfg.bounds, grid, cfg.acquisition.nox_cap)?;
    report.write(out_path)?;
    match &report.constrained {
        Some(c) => writeln!(
            out,
            "constrained: h_mm={} l_mm={} t_mean_K={} nox={:e}",
            c.h_mm, c.l_mm, c.t_mean_k, c.nox
        )?,
        None => writeln!(out, "constrained: none")?,
    }
    let u = &report.unconstrained;
    writeln!(
        out,
        "unconstrained: h_mm={} l_mm={} t_mean_K={} nox={:e}",
        u.h_mm, u.l_mm, u.t_mean_k, u.nox
    )?;
    Ok(())
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Run {
            config,
            seed,
            iterations,
            single_fidelity,
            history,
        } => cmd_run(
            config,
            *seed,
            *iterations,
            *single_fidelity,
            history.as_deref(),
            out,
        ),
        Command::Report {
            history,
            kind,
            baseline,
            nox_cap,
        } => cmd_report(history, *kind, baseline.as_deref(), *nox_cap, out),
        Command::Oracle {
            config,
            grid,
            out: path,
        } => cmd_oracle(config, *grid, path, out),
    }
}
