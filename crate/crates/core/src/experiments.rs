//! Config-driven experiment runner: dimension sweeps, coupling comparisons,
//! SGD-vs-ODE comparisons, two-layer runs and artifact emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{
    activation_coeffs, effective_search_coeffs, likelihood_coeffs_mc, Activation,
};
use crate::hermite::{likelihood_coeff_exact, HermiteConvention, HermiteSeries};
use crate::mcm::{CensorMode, McmParams, McmSampler, SpikeSet};
use crate::ode::{
    integrate, sgd_ode_compare, CompareReport, OdeTrajectory, SearchOdeCoeffs, TimeMap,
};
use crate::perceptron::{
    lr_schedule, train, train_from, InitCondition, LrSchedule, OverlapTrace, PerceptronState,
    RecoveryReport, SgdConfig,
};
use crate::sampling::{LatentCoupling, Purpose, RngHandle};
use crate::stats::{censored_quantile, ols, LinearFit};
use crate::two_layer::{
    train_online, InputCovariance, Spike, StaircaseTimes, TeacherKind, TeacherSpec, TrainConfig2L,
    TrainingLog, TwoLayerNet, TwoLayerTask,
};

/// Version every config file must declare in `schema_version`.
pub const SCHEMA_VERSION: u32 = 1;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SWEEP_SUMMARY_HEADER: &str =
    "d,runs,recovered,censoring_fraction,median_tau,q1_tau,q3_tau,budget,delta";

pub const COUPLING_TABLE_HEADER: &str =
    "d,q,runs,tau_u_finite,tau_v_finite,median_tau_u,median_tau_v,median_tau_v_over_tau_u";

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn relu() -> Activation {
    Activation::Relu
}

/// Which spikes a perceptron run carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    CovOnly,
    CumOnly,
    McmIndependent,
    /// `nu = sign(lambda)` with probability `q`.
    McmCorrelated {
        q: f64,
    },
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::CovOnly => "cov_only",
            Task::CumOnly => "cum_only",
            Task::McmIndependent => "mcm_independent",
            Task::McmCorrelated { .. } => "mcm_correlated",
        }
    }

    /// Task of the two-spike model at coupling probability `q`.
    pub fn from_q(q: f64) -> Self {
        if q == 0.0 {
            Task::McmIndependent
        } else {
            Task::McmCorrelated { q }
        }
    }

    pub fn coupling(&self) -> LatentCoupling {
        match *self {
            Task::McmCorrelated { q: 1.0 } => LatentCoupling::SignMatched,
            Task::McmCorrelated { q } => LatentCoupling::PartialSign { q },
            _ => LatentCoupling::Independent,
        }
    }

    pub fn params(&self, d: usize, betas: Betas) -> McmParams {
        let (bu, bv) = match self {
            Task::CovOnly => (betas.beta_u, 0.0),
            Task::CumOnly => (0.0, betas.beta_v),
            _ => (betas.beta_u, betas.beta_v),
        };
        McmParams::new(d, 0.0, bu, bv, self.coupling())
    }

    /// Spike whose recovery time is the scaling quantity.
    pub fn target(&self) -> Spike {
        match self {
            Task::CovOnly => Spike::U,
            _ => Spike::V,
        }
    }

    fn validate(&self) -> Result<()> {
        self.coupling().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub beta_u: f64,
    pub beta_v: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Self {
            beta_u: 5.0,
            beta_v: 10.0,
        }
    }
}

/// Named sample budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// `d log^2 d`
    DLog2,
    /// `d^2 log d`
    D2Log,
    /// `d^3 log^2 d`
    D3Log2,
    /// `d^3`
    D3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub rule: BudgetRule,
    pub prefactor: f64,
}

impl Budget {
    pub fn new(rule: BudgetRule, prefactor: f64) -> Self {
        Self { rule, prefactor }
    }

    /// Step budget at dimension `d`, rounded up.
    pub fn steps(&self, d: usize) -> u64 {
        let x = d as f64;
        let l = x.ln();
        let base = match self.rule {
            BudgetRule::DLog2 => x * l * l,
            BudgetRule::D2Log => x * x * l,
            BudgetRule::D3Log2 => x * x * x * l * l,
            BudgetRule::D3 => x * x * x,
        };
        (self.prefactor * base).ceil() as u64
    }

    fn validate(&self) -> Result<()> {
        if !(self.prefactor > 0.0 && self.prefactor.is_finite()) {
            return Err(Error::Config(format!(
                "budget prefactor must be positive, got {}",
                self.prefactor
            )));
        }
        Ok(())
    }
}

/// Everything a single perceptron run needs besides `d` and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub task: Task,
    #[serde(default)]
    pub betas: Betas,
    #[serde(default = "relu")]
    pub activation: Activation,
    pub lr: LrSchedule,
    pub budget: Budget,
    /// Weak-recovery threshold.
    pub eta: f64,
    #[serde(default)]
    pub init: InitCondition,
    /// Approximate number of trace points per run.
    #[serde(default = "default_trace_points")]
    pub trace_points: u64,
}

fn default_trace_points() -> u64 {
    1000
}

impl RunSpec {
    fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.budget.validate()?;
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if self.trace_points == 0 {
            return Err(Error::Config("trace_points must be positive".into()));
        }
        Ok(())
    }

    fn sgd_config(&self, d: usize) -> Result<SgdConfig> {
        let max_steps = self.budget.steps(d);
        Ok(SgdConfig {
            delta: lr_schedule(self.lr, d as f64)?,
            max_steps,
            eta: self.eta,
            init: self.init,
            record_every: (max_steps / self.trace_points).max(1),
            stop_on_recovery: true,
        })
    }
}

/// One finished perceptron run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task: Task,
    pub seed: u64,
    pub regime: String,
    #[serde(flatten)]
    pub report: RecoveryReport,
}

impl RunRecord {
    pub fn tau(&self, spike: Spike) -> Option<u64> {
        match spike {
            Spike::U => self.report.tau_u,
            Spike::V => self.report.tau_v,
            Spike::M => None,
        }
    }
}

pub fn run_id(task: Task, d: usize, seed: u64) -> String {
    match task {
        Task::McmCorrelated { q } => format!("{}_q{q}_d{d:04}_s{seed}", task.as_str()),
        _ => format!("{}_d{d:04}_s{seed}", task.as_str()),
    }
}

/// Runs one seed. Spikes, initialization and data come from separate streams
/// derived from `(seed, d)`, so runs that differ only in the coupling are paired.
pub fn run_perceptron(spec: &RunSpec, d: usize, seed: u64) -> Result<RunRecord> {
    spec.validate()?;
    let run = d as u32;
    let spikes = SpikeSet::orthogonal(d, &mut RngHandle::derive(seed, run, Purpose::Spikes))?;
    let params = spec.task.params(d, spec.betas);
    let config = spec.sgd_config(d)?;
    let report = train(
        &params,
        &spikes,
        &spec.activation,
        &config,
        &mut RngHandle::derive(seed, run, Purpose::Init),
        &mut RngHandle::derive(seed, run, Purpose::Data),
    )?;
    Ok(RunRecord {
        run_id: run_id(spec.task, d, seed),
        task: spec.task,
        seed,
        regime: spec.lr.regime.as_str().to_string(),
        report,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub spec: RunSpec,
    pub dims: Vec<usize>,
    pub seeds: u32,
    #[serde(default)]
    pub base_seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.spec.validate()?;
        check_dims(&self.dims, 3)?;
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| self.base_seed + s).collect()
    }
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn check_dims(dims: &[usize], min_len: usize) -> Result<()> {
    if dims.len() < min_len {
        return Err(Error::Config(format!(
            "need at least {min_len} dims, got {}",
            dims.len()
        )));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("dims must be strictly increasing".into()));
    }
    if dims.first().is_some_and(|&d| d < 3) {
        return Err(Error::Config("dims must be at least 3".into()));
    }
    Ok(())
}

/// Recovery-time statistics at one dimension. Censored runs count as
/// infinitely late; a quantile landing on them is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub d: usize,
    pub runs: usize,
    pub recovered: usize,
    pub censoring_fraction: f64,
    pub median_tau: Option<f64>,
    pub q1_tau: Option<f64>,
    pub q3_tau: Option<f64>,
    pub budget: u64,
    pub delta: f64,
}

impl DimSummary {
    pub fn from_taus(d: usize, taus: &[Option<f64>], budget: u64, delta: f64) -> Self {
        let recovered = taus.iter().filter(|t| t.is_some()).count();
        Self {
            d,
            runs: taus.len(),
            recovered,
            censoring_fraction: if taus.is_empty() {
                0.0
            } else {
                1.0 - recovered as f64 / taus.len() as f64
            },
            median_tau: censored_quantile(taus, 0.5),
            q1_tau: censored_quantile(taus, 0.25),
            q3_tau: censored_quantile(taus, 0.75),
            budget,
            delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub per_dim: Vec<DimSummary>,
    /// Fraction of all runs that never recovered.
    pub censoring_fraction: f64,
}

/// Least squares of `log tau` on `log d`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientSamples {
            got: points.len(),
            need: 2,
        });
    }
    if points.iter().any(|&(d, t)| !(d > 0.0 && t > 0.0)) {
        return Err(Error::param("power-law fit needs positive d and tau"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(d, t)| (d.ln(), t.ln())).collect();
    Ok(ols(&logs))
}

/// Fits the median recovery time against `d`; aborts if any median is censored.
pub fn fit_scaling(per_dim: &[DimSummary]) -> Result<ScalingFit> {
    let mut points = Vec::with_capacity(per_dim.len());
    for s in per_dim {
        match s.median_tau {
            Some(m) if m > 0.0 => points.push((s.d as f64, m)),
            Some(_) => {
                return Err(Error::param(format!(
                    "median recovery time is zero at d = {} (runs start recovered); fit aborted",
                    s.d
                )))
            }
            None => {
                return Err(Error::Censored {
                    d: s.d,
                    censored: s.runs - s.recovered,
                    runs: s.runs,
                })
            }
        }
    }
    let fit = fit_power_law(&points)?;
    let runs: usize = per_dim.iter().map(|s| s.runs).sum();
    let recovered: usize = per_dim.iter().map(|s| s.recovered).sum();
    Ok(ScalingFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        per_dim: per_dim.to_vec(),
        censoring_fraction: 1.0 - recovered as f64 / runs.max(1) as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<DimSummary>,
    pub fit: Option<ScalingFit>,
    /// Why the fit was aborted, if it was.
    pub fit_error: Option<String>,
}

fn run_grid(spec: &RunSpec, dims: &[usize], seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let jobs: Vec<(usize, u64)> = dims
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(d, s)| run_perceptron(spec, d, s))
        .collect()
}

fn summarize(spec: &RunSpec, dims: &[usize], records: &[RunRecord]) -> Result<Vec<DimSummary>> {
    let target = spec.task.target();
    dims.iter()
        .map(|&d| {
            let taus: Vec<Option<f64>> = records
                .iter()
                .filter(|r| r.report.d == d)
                .map(|r| r.tau(target).map(|t| t as f64))
                .collect();
            Ok(DimSummary::from_taus(
                d,
                &taus,
                spec.budget.steps(d),
                lr_schedule(spec.lr, d as f64)?,
            ))
        })
        .collect()
}

/// Runs `seeds x dims` perceptron runs in parallel, then summarizes and fits
/// the target recovery time against `d`.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let records = run_grid(&config.spec, &config.dims, &config.seed_list())?;
    let summaries = summarize(&config.spec, &config.dims, &records)?;
    let (fit, fit_error) = match fit_scaling(&summaries) {
        Ok(f) => (Some(f), None),
        Err(e) => {
            log::warn!("{e}");
            (None, Some(e.to_string()))
        }
    };
    Ok(SweepResult {
        config: config.clone(),
        records,
        summaries,
        fit,
        fit_error,
    })
}

pub fn sweep_summary_csv(summaries: &[DimSummary]) -> String {
    let mut s = String::from(SWEEP_SUMMARY_HEADER);
    s.push('\n');
    for r in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.d,
            r.runs,
            r.recovered,
            r.censoring_fraction,
            opt(r.median_tau),
            opt(r.q1_tau),
            opt(r.q3_tau),
            r.budget,
            r.delta
        );
    }
    s
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Template run; its task is replaced by the coupling under test.
    #[serde(flatten)]
    pub spec: RunSpec,
    pub dims: Vec<usize>,
    /// Coupling probabilities; `0` is independent, `1` sign-matched.
    pub qs: Vec<f64>,
    pub seeds: u32,
    #[serde(default)]
    pub base_seed: u64,
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.spec.validate()?;
        check_dims(&self.dims, 1)?;
        if self.qs.is_empty() || self.qs.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config(
                "qs must be a non-empty list in [0, 1]".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| self.base_seed + s).collect()
    }
}

/// Paired statistics for one `(d, q)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub d: usize,
    pub q: f64,
    pub runs: usize,
    pub tau_u_finite: usize,
    pub tau_v_finite: usize,
    pub median_tau_u: Option<f64>,
    /// `None` when censored.
    pub median_tau_v: Option<f64>,
    /// Median of the per-seed ratio, a censored `tau_v` giving an infinite ratio.
    pub median_tau_v_over_tau_u: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareResult {
    pub config: CompareConfig,
    pub records: Vec<RunRecord>,
    pub table: Vec<RatioRow>,
}

impl CompareResult {
    pub fn row(&self, d: usize, q: f64) -> Option<&RatioRow> {
        self.table.iter().find(|r| r.d == d && r.q == q)
    }
}

/// Runs every coupling in `config.qs` on identical seeds and tabulates
/// recovery of `v` per `(d, q)`.
pub fn compare_couplings(config: &CompareConfig) -> Result<CompareResult> {
    config.validate()?;
    let seeds = config.seed_list();
    let mut records = Vec::new();
    let mut table = Vec::new();
    for &q in &config.qs {
        let spec = RunSpec {
            task: Task::from_q(q),
            ..config.spec.clone()
        };
        let recs = run_grid(&spec, &config.dims, &seeds)?;
        for &d in &config.dims {
            let at_d: Vec<&RunRecord> = recs.iter().filter(|r| r.report.d == d).collect();
            let tu: Vec<Option<f64>> = at_d
                .iter()
                .map(|r| r.report.tau_u.map(|t| t as f64))
                .collect();
            let tv: Vec<Option<f64>> = at_d
                .iter()
                .map(|r| r.report.tau_v.map(|t| t as f64))
                .collect();
            let ratio: Vec<Option<f64>> = at_d
                .iter()
                .map(|r| match (r.report.tau_u, r.report.tau_v) {
                    (Some(u), Some(v)) => Some(v as f64 / (u as f64).max(1.0)),
                    _ => None,
                })
                .collect();
            table.push(RatioRow {
                d,
                q,
                runs: at_d.len(),
                tau_u_finite: tu.iter().flatten().count(),
                tau_v_finite: tv.iter().flatten().count(),
                median_tau_u: censored_quantile(&tu, 0.5),
                median_tau_v: censored_quantile(&tv, 0.5),
                median_tau_v_over_tau_u: censored_quantile(&ratio, 0.5),
            });
        }
        records.extend(recs);
    }
    Ok(CompareResult {
        config: config.clone(),
        records,
        table,
    })
}

pub fn coupling_table_csv(rows: &[RatioRow]) -> String {
    let mut s = String::from(COUPLING_TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.d,
            r.q,
            r.runs,
            r.tau_u_finite,
            r.tau_v_finite,
            opt(r.median_tau_u),
            opt(r.median_tau_v),
            opt(r.median_tau_v_over_tau_u)
        );
    }
    s
}

/// Seed-averaged SGD against the search-phase ODE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeComparisonConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub d: usize,
    pub coupling: LatentCoupling,
    #[serde(default)]
    pub betas: Betas,
    #[serde(default = "relu")]
    pub activation: Activation,
    pub lr: LrSchedule,
    pub seeds: u32,
    #[serde(default)]
    pub base_seed: u64,
    /// Common initial overlaps; `d^{-1/2}` for both when absent.
    #[serde(default)]
    pub alpha0: Option<(f64, f64)>,
    pub region: f64,
    /// SGD steps per seed; when absent, 1.25 times the ODE exit time.
    #[serde(default)]
    pub steps: Option<u64>,
    /// ODE step in ODE time units.
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
}

fn default_record_every() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeComparison {
    pub coeffs: SearchOdeCoeffs,
    pub steps: u64,
    pub mean_trace: OverlapTrace,
    pub trajectory: OdeTrajectory,
    pub report: CompareReport,
}

/// Search-phase coefficients of the two-spike model for activation `sigma`.
pub fn model_search_coeffs(sigma: &Activation, params: &McmParams) -> Result<SearchOdeCoeffs> {
    effective_search_coeffs(&HermiteSeries::closed_form(sigma, params, 4)?)
}

/// All seeds start from the same `w_0` with the requested overlaps and see
/// independent data streams; the averaged trace is compared with the ODE
/// started from the same overlaps, under the `(delta / d)` time map.
pub fn ode_comparison(config: &OdeComparisonConfig) -> Result<OdeComparison> {
    check_schema(config.schema_version)?;
    if config.seeds == 0 {
        return Err(Error::Config("seeds must be positive".into()));
    }
    let d = config.d;
    let params = McmParams::new(
        d,
        0.0,
        config.betas.beta_u,
        config.betas.beta_v,
        config.coupling,
    );
    let coeffs = model_search_coeffs(&config.activation, &params)?;
    let delta = lr_schedule(config.lr, d as f64)?;
    let time_map = TimeMap::new(delta, d);
    let a0 = (d as f64).powf(-0.5);
    let (au0, av0) = config.alpha0.unwrap_or((a0, a0));
    let steps = match config.steps {
        Some(s) => s,
        None => {
            let horizon = 1e3;
            let probe = integrate(&coeffs, (au0, av0), horizon, config.dt, config.region)?;
            let exit = probe.exit_time.ok_or_else(|| {
                Error::InvalidComparison(format!("ODE does not leave the region by t = {horizon}"))
            })?;
            (1.25 * exit / time_map.scale()).ceil() as u64
        }
    };
    let t_end = steps as f64 * time_map.scale();
    let trajectory = integrate(&coeffs, (au0, av0), t_end, config.dt, config.region)?;
    let spikes = SpikeSet::orthogonal(
        d,
        &mut RngHandle::derive(config.base_seed, d as u32, Purpose::Spikes),
    )?;
    let w0 = PerceptronState::with_overlaps(
        &spikes,
        au0,
        av0,
        &mut RngHandle::derive(config.base_seed, d as u32, Purpose::Init),
    )?;
    let sgd = SgdConfig {
        delta,
        max_steps: steps,
        eta: 0.99,
        init: InitCondition::Uniform,
        record_every: config.record_every.max(1),
        stop_on_recovery: false,
    };
    let seeds: Vec<u64> = (0..config.seeds as u64)
        .map(|s| config.base_seed + s)
        .collect();
    let traces: Vec<OverlapTrace> = seeds
        .into_par_iter()
        .map(|s| {
            let mut rng = RngHandle::derive(s, d as u32, Purpose::Data);
            train_from(
                w0.clone(),
                &params,
                &spikes,
                &config.activation,
                &sgd,
                &mut rng,
            )
            .map(|r| r.trace)
        })
        .collect::<Result<_>>()?;
    let mean_trace = OverlapTrace::average(&traces)?;
    let report = sgd_ode_compare(&mean_trace, &trajectory, time_map, config.region)?;
    Ok(OdeComparison {
        coeffs,
        steps,
        mean_trace,
        trajectory,
        report,
    })
}

pub fn trajectory_csv(traj: &OdeTrajectory) -> String {
    let mut s = String::from("t,alpha_u,alpha_v\n");
    for &(t, u, v) in &traj.points {
        let _ = writeln!(s, "{t},{u},{v}");
    }
    s
}

/// Input of the `ode` command: explicit coefficients or a model to derive them from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OdeInput {
    Coeffs(SearchOdeCoeffs),
    Model {
        #[serde(default)]
        betas: Betas,
        coupling: LatentCoupling,
        #[serde(default = "relu")]
        activation: Activation,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub input: OdeInput,
    pub alpha0: (f64, f64),
    pub t_end: f64,
    pub dt: f64,
    pub region: f64,
}

pub fn run_ode(config: &OdeConfig) -> Result<(SearchOdeCoeffs, OdeTrajectory)> {
    check_schema(config.schema_version)?;
    let coeffs = match &config.input {
        OdeInput::Coeffs(c) => *c,
        OdeInput::Model {
            betas,
            coupling,
            activation,
        } => {
            let params = McmParams::new(2, 0.0, betas.beta_u, betas.beta_v, *coupling);
            model_search_coeffs(activation, &params)?
        }
    };
    let traj = integrate(
        &coeffs,
        config.alpha0,
        config.t_end,
        config.dt,
        config.region,
    )?;
    Ok((coeffs, traj))
}

/// Input of the `perceptron` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerceptronConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub spec: RunSpec,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PerceptronConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.spec.validate()?;
        check_dims(&[self.d], 1)
    }
}

/// Input of the `sample` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub params: McmParams,
    pub n: usize,
    #[serde(default = "full_mode")]
    pub mode: CensorMode,
    #[serde(default)]
    pub keep_latents: bool,
    #[serde(default)]
    pub seed: u64,
}

fn full_mode() -> CensorMode {
    CensorMode::Full
}

/// `n` samples as CSV with columns `y,x_0..x_{d-1}` and optionally `lambda,nu`.
pub fn samples_csv(config: &SampleConfig) -> Result<String> {
    check_schema(config.schema_version)?;
    let d = config.params.d;
    let spikes = SpikeSet::orthogonal(d, &mut RngHandle::derive(config.seed, 0, Purpose::Spikes))?;
    let sampler = McmSampler::new(config.params, spikes, config.mode)?;
    let mut rng = RngHandle::derive(config.seed, 0, Purpose::Data);
    let mut s = String::from("y");
    for i in 0..d {
        let _ = write!(s, ",x_{i}");
    }
    if config.keep_latents {
        s.push_str(",lambda,nu");
    }
    s.push('\n');
    for _ in 0..config.n {
        let sample = sampler.sample(&mut rng, config.keep_latents);
        let _ = write!(s, "{}", sample.y);
        for x in &sample.x {
            let _ = write!(s, ",{x}");
        }
        if config.keep_latents {
            match sample.latents {
                Some((l, n)) => {
                    let _ = write!(s, ",{l},{n}");
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// Input of the `coeffs` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffsConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default = "relu")]
    pub activation: Activation,
    pub params: McmParams,
    pub max_degree: usize,
    pub n_mc: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const COEFFS_HEADER: &str = "kind,i,j,value,std_error,closed_form";

/// Activation coefficients (quadrature, zero standard error) and likelihood
/// coefficients (Monte Carlo with standard errors, next to the closed form).
pub fn coeffs_csv(config: &CoeffsConfig) -> Result<String> {
    check_schema(config.schema_version)?;
    let c = activation_coeffs(&config.activation, config.max_degree)?;
    let mut rng = RngHandle::derive(config.seed, 0, Purpose::MonteCarlo);
    let table = likelihood_coeffs_mc(&config.params, config.max_degree, config.n_mc, &mut rng)?;
    let mut s = String::from(COEFFS_HEADER);
    s.push('\n');
    for (k, v) in c.iter().enumerate() {
        let _ = writeln!(s, "sigma,{k},,{v},0,{v}");
    }
    for (i, row) in table.iter().enumerate() {
        for (j, est) in row.iter().enumerate() {
            if i + j > config.max_degree {
                continue;
            }
            let exact = likelihood_coeff_exact(&config.params, i, j)?;
            let _ = writeln!(
                s,
                "likelihood,{i},{j},{},{},{exact}",
                est.estimate, est.std_error
            );
        }
    }
    Ok(s)
}

/// Data side of a two-layer run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TwoLayerExperiment {
    Mcm {
        beta_m: f64,
        beta_u: f64,
        beta_v: f64,
        coupling: LatentCoupling,
    },
    Teacher {
        teacher: TeacherKind,
        #[serde(default)]
        input_cov: InputCovariance,
        #[serde(default)]
        convention: HermiteConvention,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLayerConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub d: usize,
    pub m: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
    pub experiment: TwoLayerExperiment,
    pub train: TrainConfig2L,
}

/// Summary of a two-layer run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLayerSummary {
    pub run_id: String,
    pub seed: u64,
    pub steps: u64,
    pub staircase: StaircaseTimes,
    pub separation_step: Option<u64>,
    pub threshold: f64,
    pub threshold_m: Option<u64>,
    pub threshold_u: Option<u64>,
    pub threshold_v: Option<u64>,
}

/// Staircase drop, staircase gap, separation gap and persistence, and
/// top-5 overlap threshold used in two-layer summaries.
pub const STAIRCASE_DROP: f64 = 0.05;
pub const STAIRCASE_GAP: f64 = 0.03;
pub const SEPARATION_GAP: f64 = 0.03;
pub const SEPARATION_PERSIST: usize = 2;
pub const OVERLAP_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone)]
pub struct TwoLayerRun {
    pub log: TrainingLog,
    pub summary: TwoLayerSummary,
}

/// Trains one network for seed `config.train.seed`.
pub fn run_two_layer(config: &TwoLayerConfig) -> Result<TwoLayerRun> {
    check_schema(config.schema_version)?;
    let (d, seed) = (config.d, config.train.seed);
    let spikes = SpikeSet::orthogonal(d, &mut RngHandle::derive(seed, 0, Purpose::Spikes))?;
    let task = match config.experiment {
        TwoLayerExperiment::Mcm {
            beta_m,
            beta_u,
            beta_v,
            coupling,
        } => TwoLayerTask::Mcm {
            params: McmParams::new(d, beta_m, beta_u, beta_v, coupling),
            spikes,
        },
        TwoLayerExperiment::Teacher {
            teacher,
            input_cov,
            convention,
        } => TwoLayerTask::Teacher(TeacherSpec {
            kind: teacher,
            spikes,
            input_cov,
            convention,
        }),
    };
    let mut net = TwoLayerNet::init(
        d,
        config.m,
        config.activation.clone(),
        &mut RngHandle::derive(seed, 0, Purpose::Init),
    )?;
    let log = train_online(
        &mut net,
        &task,
        &config.train,
        &mut RngHandle::derive(seed, 0, Purpose::Data),
        &mut RngHandle::derive(seed, 0, Purpose::TestSet),
    )?;
    let label = match &config.experiment {
        TwoLayerExperiment::Mcm { coupling, .. } => match coupling {
            LatentCoupling::Independent => "mcm_independent".to_string(),
            LatentCoupling::SignMatched => "mcm_sign_matched".to_string(),
            LatentCoupling::PartialSign { q } => format!("mcm_q{q}"),
        },
        TwoLayerExperiment::Teacher {
            teacher, input_cov, ..
        } => match (teacher, input_cov) {
            (TeacherKind::Plain, InputCovariance::Identity) => "teacher_plain".to_string(),
            (TeacherKind::Mixed, InputCovariance::Identity) => "teacher_mixed".to_string(),
            (k, InputCovariance::CrossSpiked { gamma }) => {
                format!(
                    "teacher_{}_cross{gamma}",
                    if *k == TeacherKind::Plain {
                        "plain"
                    } else {
                        "mixed"
                    }
                )
            }
        },
    };
    let summary = TwoLayerSummary {
        run_id: format!("two_layer_{label}_d{d:04}_s{seed}"),
        seed,
        steps: config.train.steps,
        staircase: log.staircase(STAIRCASE_DROP, STAIRCASE_GAP),
        separation_step: log.separation_step(SEPARATION_GAP, SEPARATION_PERSIST),
        threshold: OVERLAP_THRESHOLD,
        threshold_m: log.overlap_threshold_step(Spike::M, OVERLAP_THRESHOLD),
        threshold_u: log.overlap_threshold_step(Spike::U, OVERLAP_THRESHOLD),
        threshold_v: log.overlap_threshold_step(Spike::V, OVERLAP_THRESHOLD),
    };
    Ok(TwoLayerRun { log, summary })
}

/// A run as written to disk: trace CSV body and report JSON.
#[derive(Debug, Clone)]
pub struct ArtifactRun {
    pub run_id: String,
    pub seed: u64,
    pub trace_csv: String,
    pub report: serde_json::Value,
}

impl ArtifactRun {
    pub fn from_record(r: &RunRecord) -> Result<Self> {
        Ok(Self {
            run_id: r.run_id.clone(),
            seed: r.seed,
            trace_csv: r.report.trace.to_csv(),
            report: serde_json::to_value(r)?,
        })
    }

    pub fn from_two_layer(run: &TwoLayerRun) -> Result<Self> {
        Ok(Self {
            run_id: run.summary.run_id.clone(),
            seed: run.summary.seed,
            trace_csv: run.log.to_csv(),
            report: serde_json::to_value(&run.summary)?,
        })
    }
}

/// Everything one command writes.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub command: String,
    pub config: serde_json::Value,
    pub runs: Vec<ArtifactRun>,
    pub summaries: Vec<DimSummary>,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
    /// Additional files as `(relative path, body)`.
    pub extra: Vec<(String, String)>,
    pub wall_clock_seconds: f64,
}

impl Artifacts {
    pub fn from_sweep(result: &SweepResult, wall_clock_seconds: f64) -> Result<Self> {
        Ok(Self {
            command: "sweep".into(),
            config: serde_json::to_value(&result.config)?,
            runs: result
                .records
                .iter()
                .map(ArtifactRun::from_record)
                .collect::<Result<_>>()?,
            summaries: result.summaries.clone(),
            fit: result.fit.clone(),
            fit_error: result.fit_error.clone(),
            extra: Vec::new(),
            wall_clock_seconds,
        })
    }

    pub fn from_compare(result: &CompareResult, wall_clock_seconds: f64) -> Result<Self> {
        Ok(Self {
            command: "compare".into(),
            config: serde_json::to_value(&result.config)?,
            runs: result
                .records
                .iter()
                .map(ArtifactRun::from_record)
                .collect::<Result<_>>()?,
            extra: vec![(
                "coupling_ratios.csv".into(),
                coupling_table_csv(&result.table),
            )],
            wall_clock_seconds,
            ..Default::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub seed: u64,
    pub trace: String,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub command: String,
    pub created_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub runs: Vec<ManifestEntry>,
    pub files: Vec<String>,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `traces/<run>.csv`, `reports/<run>.json`, `sweep_summary.csv`,
/// any extra files and `manifest.json` under `out_dir`.
pub fn emit_artifacts(artifacts: &Artifacts, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut runs = Vec::with_capacity(artifacts.runs.len());
    for run in &artifacts.runs {
        let trace = format!("traces/{}.csv", run.run_id);
        let report = format!("reports/{}.json", run.run_id);
        write_file(&out_dir.join(&trace), &run.trace_csv)?;
        write_file(
            &out_dir.join(&report),
            &serde_json::to_string_pretty(&run.report)?,
        )?;
        files.push(trace.clone());
        files.push(report.clone());
        runs.push(ManifestEntry {
            run_id: run.run_id.clone(),
            seed: run.seed,
            trace,
            report,
        });
    }
    write_file(
        &out_dir.join("sweep_summary.csv"),
        &sweep_summary_csv(&artifacts.summaries),
    )?;
    files.push("sweep_summary.csv".into());
    for (name, body) in &artifacts.extra {
        write_file(&out_dir.join(name), body)?;
        files.push(name.clone());
    }
    let mut seeds: Vec<u64> = artifacts.runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        library_version: LIBRARY_VERSION.to_string(),
        command: artifacts.command.clone(),
        created_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_clock_seconds: artifacts.wall_clock_seconds,
        config: artifacts.config.clone(),
        seeds,
        runs,
        files,
        fit: artifacts.fit.clone(),
        fit_error: artifacts.fit_error.clone(),
    };
    write_file(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Parses a JSON config after checking its `schema_version`.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Config("missing integer field schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Path of a frozen default config shipped with the repository.
pub fn default_config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}
