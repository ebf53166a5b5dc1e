//! The optimization loop: Sobol initial design, surrogate fits with warm
//! starts, penalized proposal, evaluation, and an append-only history that
//! doubles as the resume checkpoint.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::acquisition::{propose, AcquisitionConfig, PenalizedAcquisition};
use crate::error::{Error, Result};
use crate::evaluators::{
    EvaluationRequest, Evaluator, SubprocessEvaluator, SyntheticBurnerParams, SyntheticEvaluator,
};
use crate::fidelity_cost::{calibrate_runtime, fidelity_index, RuntimeCoefficients};
use crate::problem::{denormalize, normalize, Bounds, DesignPoint, Observation, DIM};
use crate::qmc::SobolGenerator;
use crate::surrogate::{fit, FitOptions, FitReport, GpHyperparameters, GpModel, HyperPriors};

/// Consecutive unconverged evaluations tolerated before aborting.
pub const FAILURE_STREAK_LIMIT: usize = 5;

/// Exact header of the history file.
pub const HISTORY_COLUMNS: [&str; 32] = [
    "iteration",
    "phase",
    "h_mm",
    "l_mm",
    "s_mm",
    "z",
    "t_mean_K",
    "nox",
    "mesh_cells",
    "wall_time_s",
    "converged",
    "acq_value",
    "pf",
    "penalty_z",
    "penalty_t",
    "ell_h_T",
    "ell_l_T",
    "ell_s_T",
    "noise_T",
    "outscale_T",
    "ell_h_N",
    "ell_l_N",
    "ell_s_N",
    "noise_N",
    "outscale_N",
    "mll_T",
    "mll_N",
    "rt_C",
    "rt_A1",
    "rt_B1",
    "rt_A2",
    "rt_B2",
];

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Synthetic(SyntheticBurnerParams),
    Subprocess {
        command: String,
        workdir: PathBuf,
        timeout: Duration,
    },
}

impl EvaluatorSpec {
    pub fn build(&self, bounds: &Bounds) -> Box<dyn Evaluator> {
        match self {
            Self::Synthetic(p) => Box::new(SyntheticEvaluator::new(*p, *bounds)),
            Self::Subprocess {
                command,
                workdir,
                timeout,
            } => Box::new(SubprocessEvaluator::new(
                command.clone(),
                workdir.clone(),
                *timeout,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bounds: Bounds,
    pub n_init: usize,
    /// Optimization iterations after the initial design.
    pub n_iterations: usize,
    pub acquisition: AcquisitionConfig,
    pub evaluator: EvaluatorSpec,
    /// Evaluations between runtime-model recalibrations.
    pub cadence: usize,
    /// Where the history is written; resumed from if it already exists.
    pub history_path: Option<PathBuf>,
    pub seed: u64,
    /// Pin the mesh to the finest size everywhere, design included.
    pub single_fidelity: bool,
    pub priors: HyperPriors,
    pub fit: FitOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds::default(),
            n_init: 8,
            n_iterations: 42,
            acquisition: AcquisitionConfig::default(),
            evaluator: EvaluatorSpec::Synthetic(SyntheticBurnerParams::default()),
            cadence: 10,
            history_path: None,
            seed: 0,
            single_fidelity: false,
            priors: HyperPriors::default(),
            fit: FitOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.acquisition.validate()?;
        if self.n_init < 2 {
            return Err(Error::InvalidParameter {
                name: "n_init",
                reason: format!("must be >= 2, got {}", self.n_init),
            });
        }
        if self.cadence < 1 {
            return Err(Error::InvalidParameter {
                name: "cadence",
                reason: "must be >= 1".into(),
            });
        }
        if let EvaluatorSpec::Synthetic(p) = &self.evaluator {
            p.validate()?;
        }
        Ok(())
    }

    pub fn total_evaluations(&self) -> usize {
        self.n_init + self.n_iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "DOE")]
    Doe,
    #[serde(rename = "BO")]
    Bo,
}

/// One line of the history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub phase: Phase,
    pub h_mm: f64,
    pub l_mm: f64,
    pub s_mm: f64,
    pub z: f64,
    #[serde(rename = "t_mean_K")]
    pub t_mean_k: f64,
    pub nox: f64,
    pub mesh_cells: u64,
    pub wall_time_s: f64,
    pub converged: bool,
    pub acq_value: Option<f64>,
    pub pf: Option<f64>,
    pub penalty_z: Option<f64>,
    pub penalty_t: Option<f64>,
    #[serde(rename = "ell_h_T")]
    pub ell_h_t: Option<f64>,
    #[serde(rename = "ell_l_T")]
    pub ell_l_t: Option<f64>,
    #[serde(rename = "ell_s_T")]
    pub ell_s_t: Option<f64>,
    #[serde(rename = "noise_T")]
    pub noise_t: Option<f64>,
    #[serde(rename = "outscale_T")]
    pub outscale_t: Option<f64>,
    #[serde(rename = "ell_h_N")]
    pub ell_h_n: Option<f64>,
    #[serde(rename = "ell_l_N")]
    pub ell_l_n: Option<f64>,
    #[serde(rename = "ell_s_N")]
    pub ell_s_n: Option<f64>,
    #[serde(rename = "noise_N")]
    pub noise_n: Option<f64>,
    #[serde(rename = "outscale_N")]
    pub outscale_n: Option<f64>,
    #[serde(rename = "mll_T")]
    pub mll_t: Option<f64>,
    #[serde(rename = "mll_N")]
    pub mll_n: Option<f64>,
    #[serde(rename = "rt_C")]
    pub rt_c: Option<f64>,
    #[serde(rename = "rt_A1")]
    pub rt_a1: Option<f64>,
    #[serde(rename = "rt_B1")]
    pub rt_b1: Option<f64>,
    #[serde(rename = "rt_A2")]
    pub rt_a2: Option<f64>,
    #[serde(rename = "rt_B2")]
    pub rt_b2: Option<f64>,
}

fn split_hyper(h: Option<&FitReport>) -> ([Option<f64>; 3], Option<f64>, Option<f64>, Option<f64>) {
    match h {
        Some(r) => (
            r.hyper.lengthscales.map(Some),
            Some(r.hyper.noise_variance),
            Some(r.hyper.output_scale),
            Some(r.log_marginal_likelihood),
        ),
        None => ([None; 3], None, None, None),
    }
}

impl HistoryRow {
    pub fn point(&self) -> DesignPoint {
        DesignPoint::new(self.h_mm, self.l_mm, self.s_mm)
    }

    pub fn observation(&self) -> Observation {
        Observation {
            x: self.point(),
            t_mean: self.t_mean_k,
            nox: self.nox,
            wall_time: self.wall_time_s,
            mesh_cells: self.mesh_cells,
            converged: self.converged,
            z: self.z,
            acquisition_value: self.acq_value,
        }
    }

    pub fn objective_hyper(&self) -> Option<GpHyperparameters> {
        Some(GpHyperparameters {
            lengthscales: [self.ell_h_t?, self.ell_l_t?, self.ell_s_t?],
            output_scale: self.outscale_t?,
            noise_variance: self.noise_t?,
        })
    }

    pub fn constraint_hyper(&self) -> Option<GpHyperparameters> {
        Some(GpHyperparameters {
            lengthscales: [self.ell_h_n?, self.ell_l_n?, self.ell_s_n?],
            output_scale: self.outscale_n?,
            noise_variance: self.noise_n?,
        })
    }

    pub fn runtime(&self, b: &Bounds) -> Option<RuntimeCoefficients> {
        Some(RuntimeCoefficients {
            c: self.rt_c?,
            a1: self.rt_a1?,
            b1: self.rt_b1?,
            a2: self.rt_a2?,
            b2: self.rt_b2?,
            a0: b.mid_area(),
        })
    }

    fn set_models(&mut self, t: Option<&FitReport>, n: Option<&FitReport>) {
        let (ell, noise, scale, mll) = split_hyper(t);
        [self.ell_h_t, self.ell_l_t, self.ell_s_t] = ell;
        (self.noise_t, self.outscale_t, self.mll_t) = (noise, scale, mll);
        let (ell, noise, scale, mll) = split_hyper(n);
        [self.ell_h_n, self.ell_l_n, self.ell_s_n] = ell;
        (self.noise_n, self.outscale_n, self.mll_n) = (noise, scale, mll);
    }

    fn set_runtime(&mut self, c: Option<&RuntimeCoefficients>) {
        self.rt_c = c.map(|c| c.c);
        self.rt_a1 = c.map(|c| c.a1);
        self.rt_b1 = c.map(|c| c.b1);
        self.rt_a2 = c.map(|c| c.a2);
        self.rt_b2 = c.map(|c| c.b2);
    }
}

/// Ordered evaluation log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
}

impl RunHistory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.rows.iter().map(HistoryRow::observation).collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != HISTORY_COLUMNS {
            return Err(Error::History(format!(
                "{}: unexpected header {:?}",
                path.display(),
                header
            )));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<HistoryRow>, _>>()?;
        for (i, r) in rows.iter().enumerate() {
            if r.iteration != i + 1 {
                return Err(Error::History(format!(
                    "{}: row {} has iteration {}",
                    path.display(),
                    i + 1,
                    r.iteration
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(HISTORY_COLUMNS)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Appends rows to the history file, flushing after each.
struct HistorySink {
    writer: Option<csv::Writer<File>>,
}

impl HistorySink {
    fn open(path: Option<&Path>, existing_rows: usize) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self { writer: None });
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let writer = if existing_rows > 0 {
            let file = OpenOptions::new().append(true).open(path)?;
            csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file)
        } else {
            let mut file = File::create(path)?;
            writeln!(file, "{}", HISTORY_COLUMNS.join(","))?;
            csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file)
        };
        Ok(Self {
            writer: Some(writer),
        })
    }

    fn push(&mut self, row: &HistoryRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.serialize(row)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent per-iteration stream derived from the run seed.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    splitmix(splitmix(seed) ^ iteration as u64)
}

/// Initial-design point `index` (0-based) of a run.
pub fn design_point(cfg: &RunConfig, index: usize) -> Result<DesignPoint> {
    let mut gen = SobolGenerator::new(DIM, Some(cfg.seed))?;
    gen.seek(index as u64);
    let p = gen.next_point();
    let mut u = [p[0], p[1], p[2]];
    if cfg.single_fidelity {
        u[2] = 0.0;
    }
    denormalize(&u, &cfg.bounds)
}

fn failure_streak(rows: &[HistoryRow]) -> usize {
    rows.iter().rev().take_while(|r| !r.converged).count()
}

struct Models {
    objective: GpModel,
    constraint: GpModel,
    objective_fit: FitReport,
    constraint_fit: FitReport,
}

fn fit_models(cfg: &RunConfig, rows: &[HistoryRow]) -> Result<Models> {
    let good: Vec<&HistoryRow> = rows.iter().filter(|r| r.converged).collect();
    let inputs = good
        .iter()
        .map(|r| normalize(&r.point(), &cfg.bounds))
        .collect::<Result<Vec<_>>>()?;
    let t: Vec<f64> = good.iter().map(|r| r.t_mean_k).collect();
    let n: Vec<f64> = good.iter().map(|r| r.nox).collect();
    let warm_t = rows.iter().rev().find_map(HistoryRow::objective_hyper);
    let warm_n = rows.iter().rev().find_map(HistoryRow::constraint_hyper);
    let mut objective = GpModel::new(inputs.clone(), &t)?;
    let objective_fit = fit(&mut objective, &cfg.priors, warm_t.as_ref(), &cfg.fit)?;
    let mut constraint = GpModel::new(inputs, &n)?;
    let constraint_fit = fit(&mut constraint, &cfg.priors, warm_n.as_ref(), &cfg.fit)?;
    Ok(Models {
        objective,
        constraint,
        objective_fit,
        constraint_fit,
    })
}

/// Runtime coefficients in force for the next proposal. Recalibrates when
/// none are in force yet or the evaluation count is a multiple of the
/// cadence; depends only on the history so resumed runs match.
fn runtime_in_force(cfg: &RunConfig, rows: &[HistoryRow]) -> RuntimeCoefficients {
    let previous = rows.iter().rev().find_map(|r| r.runtime(&cfg.bounds));
    if let Some(prev) = previous {
        if !rows.len().is_multiple_of(cfg.cadence) {
            return prev;
        }
    }
    let obs: Vec<Observation> = rows.iter().map(HistoryRow::observation).collect();
    match calibrate_runtime(&obs, &cfg.bounds, previous.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            log::info!("runtime calibration skipped: {e}");
            previous.unwrap_or_else(|| RuntimeCoefficients::fallback(&obs, &cfg.bounds))
        }
    }
}

fn evaluate_row(
    evaluator: &dyn Evaluator,
    cfg: &RunConfig,
    iteration: usize,
    phase: Phase,
    x: &DesignPoint,
) -> Result<HistoryRow> {
    let z = fidelity_index(x, &cfg.bounds)?;
    let req = EvaluationRequest::new(x, format!("run_{iteration:04}"), z);
    let r = evaluator.evaluate(&req);
    if let Some(msg) = &r.message {
        log::warn!("iteration {iteration}: {msg}");
    }
    Ok(HistoryRow {
        iteration,
        phase,
        h_mm: x.h,
        l_mm: x.l,
        s_mm: x.s,
        z,
        t_mean_k: r.t_mean,
        nox: r.nox,
        mesh_cells: r.mesh_cells,
        wall_time_s: r.wall_time,
        converged: r.converged,
        acq_value: None,
        pf: None,
        penalty_z: None,
        penalty_t: None,
        ell_h_t: None,
        ell_l_t: None,
        ell_s_t: None,
        noise_t: None,
        outscale_t: None,
        ell_h_n: None,
        ell_l_n: None,
        ell_s_n: None,
        noise_n: None,
        outscale_n: None,
        mll_t: None,
        mll_n: None,
        rt_c: None,
        rt_a1: None,
        rt_b1: None,
        rt_a2: None,
        rt_b2: None,
    })
}

/// Runs (or resumes) a campaign with the evaluator named in `cfg`.
pub fn run(cfg: &RunConfig) -> Result<RunHistory> {
    let evaluator = cfg.evaluator.build(&cfg.bounds);
    run_with(cfg, evaluator.as_ref())
}

/// Runs (or resumes) a campaign against an explicit evaluator.
///
/// An existing history file is read, validated, and extended up to
/// `n_init + n_iterations` rows. Every row is flushed as soon as it exists.
pub fn run_with(cfg: &RunConfig, evaluator: &dyn Evaluator) -> Result<RunHistory> {
    cfg.validate()?;
    let mut history = match &cfg.history_path {
        Some(p) if p.exists() => RunHistory::read_csv(p)?,
        _ => RunHistory::default(),
    };
    if !history.is_empty() {
        log::info!("resuming from {} existing rows", history.len());
    }
    let mut sink = HistorySink::open(cfg.history_path.as_deref(), history.len())?;
    let total = cfg.total_evaluations();

    while history.len() < total {
        let iteration = history.len() + 1;
        let row = if history.len() < cfg.n_init {
            let x = design_point(cfg, history.len())?;
            evaluate_row(evaluator, cfg, iteration, Phase::Doe, &x)?
        } else {
            bo_step(cfg, evaluator, &history.rows, iteration)?
        };
        log::info!(
            "iteration {iteration} {:?}: h={:.2} l={:.2} s={:.3} T={:.2} NOx={:.3e} converged={}",
            row.phase,
            row.h_mm,
            row.l_mm,
            row.s_mm,
            row.t_mean_k,
            row.nox,
            row.converged
        );
        sink.push(&row)?;
        history.rows.push(row);
        let streak = failure_streak(&history.rows);
        if streak >= FAILURE_STREAK_LIMIT {
            return Err(Error::EvaluatorStreak { streak });
        }
    }
    Ok(history)
}

fn bo_step(
    cfg: &RunConfig,
    evaluator: &dyn Evaluator,
    rows: &[HistoryRow],
    iteration: usize,
) -> Result<HistoryRow> {
    let pinned = cfg.single_fidelity.then_some(0.0);
    let models = match fit_models(cfg, rows) {
        Ok(m) => m,
        Err(e @ (Error::TooFewPoints { .. } | Error::ConstantTargets)) => {
            // not enough signal to model yet: keep filling the design
            log::warn!(
                "iteration {iteration}: surrogate unavailable ({e}); taking next design point"
            );
            let x = design_point(cfg, iteration - 1)?;
            return evaluate_row(evaluator, cfg, iteration, Phase::Bo, &x);
        }
        Err(e) => return Err(e),
    };
    let coeffs = runtime_in_force(cfg, rows);
    let acq_cfg = AcquisitionConfig {
        seed: iteration_seed(cfg.seed, iteration),
        ..cfg.acquisition
    };
    let acq = PenalizedAcquisition::new(
        &models.objective,
        &models.constraint,
        &acq_cfg,
        &coeffs,
        &cfg.bounds,
    )?;
    if acq.incumbent_fallback {
        log::warn!(
            "iteration {iteration}: no incumbent predicted feasible; using all observations"
        );
    }
    let proposal = propose(&acq, &models.objective, pinned)?;
    if proposal.pure_exploration {
        log::warn!("iteration {iteration}: all acquisition scores vanished; pure exploration");
    }
    let mut row = evaluate_row(evaluator, cfg, iteration, Phase::Bo, &proposal.x)?;
    row.acq_value = Some(proposal.breakdown.score);
    row.pf = Some(proposal.breakdown.pf);
    row.penalty_z = Some(proposal.breakdown.penalty_z);
    row.penalty_t = Some(proposal.breakdown.penalty_t);
    row.set_models(Some(&models.objective_fit), Some(&models.constraint_fit));
    row.set_runtime(Some(&coeffs));
    Ok(row)
}

/// Running best realized feasible temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestPoint {
    /// 1-based evaluation index.
    pub iteration: usize,
    /// 1-based index of the evaluation that set the current best.
    pub found_at: usize,
    pub t_mean: f64,
    pub x: DesignPoint,
}

/// Cumulative best observed temperature over converged observations whose
/// observed NOx meets `cap`. Starts at the first feasible observation.
pub fn best_so_far(history: &[Observation], cap: f64) -> Vec<BestPoint> {
    let mut out = Vec::new();
    let mut best: Option<(usize, f64, DesignPoint)> = None;
    for (i, o) in history.iter().enumerate() {
        if o.is_feasible(cap) && best.is_none_or(|(_, t, _)| o.t_mean > t) {
            best = Some((i + 1, o.t_mean, o.x));
        }
        if let Some((found_at, t_mean, x)) = best {
            out.push(BestPoint {
                iteration: i + 1,
                found_at,
                t_mean,
                x,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub total_mf_s: f64,
    pub total_hf_s: f64,
    /// `(1 - mf / hf) * 100`.
    pub reduction_percent: f64,
}

/// Total wall time of a multi-fidelity campaign against a single-fidelity
/// one of the same length.
pub fn cost_report(mf: &[Observation], hf: &[Observation]) -> Result<CostReport> {
    if mf.len() != hf.len() {
        return Err(Error::Comparison(format!(
            "histories differ in length: {} vs {}",
            mf.len(),
            hf.len()
        )));
    }
    let total = |h: &[Observation]| {
        h.iter()
            .map(|o| o.wall_time)
            .filter(|t| t.is_finite())
            .sum::<f64>()
    };
    let (total_mf_s, total_hf_s) = (total(mf), total(hf));
    if !(total_hf_s > 0.0) {
        return Err(Error::Comparison(
            "reference history has no wall time".into(),
        ));
    }
    Ok(CostReport {
        total_mf_s,
        total_hf_s,
        reduction_percent: (1.0 - total_mf_s / total_hf_s) * 100.0,
    })
}
