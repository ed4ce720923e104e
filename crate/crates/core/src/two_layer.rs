//! Two-layer network `f(x) = sum_k a_k sigma(w_k.x)` trained by online SGD on
//! the mixed-cumulant classification task or on Hermite teacher targets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{hermite_eval, Activation, HermiteConvention};
use crate::mcm::{CensorMode, McmParams, McmSampler, SpikeSet, TestSet};
use crate::sampling::RngHandle;
use crate::vecops::{axpy, dot, norm};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoLayerNet {
    pub d: usize,
    pub m: usize,
    /// First-layer weights, row `k` is `w_k`.
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub activation: Activation,
}

impl TwoLayerNet {
    pub fn new(d: usize, w: Vec<f64>, a: Vec<f64>, activation: Activation) -> Result<Self> {
        let m = a.len();
        if m == 0 || d == 0 || w.len() != m * d {
            return Err(Error::param(format!(
                "weights of length {} do not form {m} rows of dimension {d}",
                w.len()
            )));
        }
        if w.iter().chain(&a).any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite network weight"));
        }
        Ok(Self {
            d,
            m,
            w,
            a,
            activation,
        })
    }

    /// Rows i.i.d. `N(0, 1/d)`, second layer i.i.d. `+-1/m`.
    pub fn init(d: usize, m: usize, activation: Activation, rng: &mut RngHandle) -> Result<Self> {
        let s = 1.0 / (d as f64).sqrt();
        let w = (0..m * d).map(|_| s * rng.gaussian()).collect();
        let a = (0..m).map(|_| rng.rademacher() / m as f64).collect();
        Self::new(d, w, a, activation)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.w[k * self.d..(k + 1) * self.d]
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.w
            .chunks_exact(self.d)
            .zip(&self.a)
            .map(|(wk, ak)| ak * self.activation.eval(dot(wk, x)))
            .sum()
    }

    fn forward_into(&self, x: &[f64], pre: &mut [f64]) -> f64 {
        let mut f = 0.0;
        for ((wk, ak), h) in self.w.chunks_exact(self.d).zip(&self.a).zip(pre.iter_mut()) {
            *h = dot(wk, x);
            f += ak * self.activation.eval(*h);
        }
        f
    }

    /// Squared loss `(f(x) - y)^2 / 2` and its gradients `(dW, da)`.
    pub fn loss_gradients(&self, x: &[f64], target: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let mut pre = vec![0.0; self.m];
        let e = self.forward_into(x, &mut pre) - target;
        let mut gw = vec![0.0; self.m * self.d];
        let mut ga = vec![0.0; self.m];
        for k in 0..self.m {
            ga[k] = e * self.activation.eval(pre[k]);
            let c = e * self.a[k] * self.activation.derivative(pre[k]);
            axpy(c, x, &mut gw[k * self.d..(k + 1) * self.d]);
        }
        (0.5 * e * e, gw, ga)
    }

    /// One SGD step on the squared loss; returns the loss before the step.
    fn sgd_step(&mut self, x: &[f64], target: f64, eta1: f64, eta2: f64, pre: &mut [f64]) -> f64 {
        let e = self.forward_into(x, pre) - target;
        for k in 0..self.m {
            let h = pre[k];
            let c = -eta1 * e * self.a[k] * self.activation.derivative(h);
            if c != 0.0 {
                axpy(c, x, &mut self.w[k * self.d..(k + 1) * self.d]);
            }
            self.a[k] -= eta2 * e * self.activation.eval(h);
        }
        0.5 * e * e
    }
}

/// Mean of the `k` largest normalized overlaps `|w_j.direction| / |w_j|`.
/// Zero rows are skipped.
pub fn top_k_overlaps(net: &TwoLayerNet, direction: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > net.m {
        return Err(Error::param(format!(
            "need 1 <= k <= m = {}, got {k}",
            net.m
        )));
    }
    let mut overlaps: Vec<f64> = Vec::with_capacity(net.m);
    for j in 0..net.m {
        let row = net.row(j);
        let n = norm(row);
        if n == 0.0 {
            log::warn!("hidden neuron {j} has zero norm and is excluded from the overlap");
            continue;
        }
        overlaps.push(dot(row, direction).abs() / n);
    }
    if overlaps.len() < k {
        return Err(Error::param("fewer nonzero neurons than k"));
    }
    overlaps.sort_by(|a, b| b.total_cmp(a));
    Ok(overlaps[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// `h1(m.x) + h2(u.x) + h4(v.x)`
    Plain,
    /// `h1(m.x) + h1(u.x) h1(v.x) + h2(u.x) + h4(v.x)`
    Mixed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputCovariance {
    #[default]
    Identity,
    /// `1 + gamma (uv^T + vu^T)`
    CrossSpiked { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub kind: TeacherKind,
    pub spikes: SpikeSet,
    #[serde(default)]
    pub input_cov: InputCovariance,
    #[serde(default)]
    pub convention: HermiteConvention,
}

impl TeacherSpec {
    pub fn validate(&self) -> Result<()> {
        if let InputCovariance::CrossSpiked { gamma } = self.input_cov {
            if !(gamma > -1.0 && gamma < 1.0) {
                return Err(Error::param(format!(
                    "gamma must lie in (-1, 1), got {gamma}"
                )));
            }
        }
        if !self.spikes.is_orthogonal() {
            return Err(Error::param("teacher spikes must be orthonormal"));
        }
        Ok(())
    }
}

pub fn teacher_label(spec: &TeacherSpec, x: &[f64]) -> f64 {
    let h = |k: usize, z: f64| hermite_eval(k, z, spec.convention).expect("degree <= 4");
    let s = &spec.spikes;
    let (zm, zu, zv) = (dot(&s.m, x), dot(&s.u, x), dot(&s.v, x));
    let mut y = h(1, zm) + h(2, zu) + h(4, zv);
    if spec.kind == TeacherKind::Mixed {
        y += h(1, zu) * h(1, zv);
    }
    y
}

/// Writes one teacher input into `x`.
pub fn fill_teacher_input(spec: &TeacherSpec, rng: &mut RngHandle, x: &mut [f64]) {
    rng.fill_gaussian(x);
    if let InputCovariance::CrossSpiked { gamma } = spec.input_cov {
        // Cholesky of [[1, g], [g, 1]] acting on the (u, v) coordinates
        let s = &spec.spikes;
        let (a, b) = (dot(&s.u, x), dot(&s.v, x));
        let b_new = gamma * a + (1.0 - gamma * gamma).sqrt() * b;
        axpy(b_new - b, &s.v, x);
    }
}

pub fn sample_teacher_input(spec: &TeacherSpec, rng: &mut RngHandle) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut x = vec![0.0; spec.spikes.dim()];
    fill_teacher_input(spec, rng, &mut x);
    Ok(x)
}

#[derive(Debug, Clone)]
pub enum TwoLayerTask {
    Mcm { params: McmParams, spikes: SpikeSet },
    Teacher(TeacherSpec),
}

impl TwoLayerTask {
    pub fn spikes(&self) -> &SpikeSet {
        match self {
            Self::Mcm { spikes, .. } => spikes,
            Self::Teacher(spec) => &spec.spikes,
        }
    }
}

/// When evaluation snapshots are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalSchedule {
    Linear {
        every: u64,
    },
    /// Roughly `per_decade` log-spaced steps per factor of ten.
    Log {
        per_decade: u32,
    },
}

impl EvalSchedule {
    /// Evaluation steps in `[0, steps]`, always including both ends.
    pub fn steps(&self, steps: u64) -> Vec<u64> {
        let mut out = vec![0];
        match *self {
            Self::Linear { every } => {
                let every = every.max(1);
                out.extend((1..=steps / every).map(|k| k * every));
            }
            Self::Log { per_decade } => {
                let per = per_decade.max(1) as f64;
                let mut k = 0.0;
                loop {
                    let t = 10f64.powf(k / per).round() as u64;
                    if t > steps {
                        break;
                    }
                    if out.last() != Some(&t) {
                        out.push(t);
                    }
                    k += 1.0;
                }
            }
        }
        if out.last() != Some(&steps) {
            out.push(steps);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig2L {
    pub eta1: f64,
    /// Second-layer rate ratio, `eta2 = eps * eta1`.
    pub eps: f64,
    pub steps: u64,
    pub eval: EvalSchedule,
    /// Test samples per evaluation set (per class for classification).
    pub eval_set_size: usize,
    pub eval_modes: Vec<CensorMode>,
    pub seed: u64,
}

impl Default for TrainConfig2L {
    fn default() -> Self {
        Self {
            eta1: 1.0,
            eps: 0.01,
            steps: 100_000,
            eval: EvalSchedule::Linear { every: 1000 },
            eval_set_size: 2000,
            eval_modes: CensorMode::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig2L {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 >= 0.0 && self.eta1.is_finite()) {
            return Err(Error::param("eta1 must be finite and non-negative"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::param("eps must lie in (0, 1]"));
        }
        if self.eval_set_size == 0 {
            return Err(Error::param("eval_set_size must be positive"));
        }
        Ok(())
    }
}

/// One evaluation snapshot. Classification errors are misclassification
/// rates per censored test set; for teacher tasks `err_full` is the test MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    /// Mean training loss since the previous snapshot.
    pub loss_train: Option<f64>,
    pub err_full: Option<f64>,
    pub err_mean_only: Option<f64>,
    pub err_mean_cov: Option<f64>,
    pub err_gauss_equiv: Option<f64>,
    pub top5_m: f64,
    pub top5_u: f64,
    pub top5_v: f64,
}

impl LogRow {
    pub fn err(&self, mode: CensorMode) -> Option<f64> {
        match mode {
            CensorMode::Full => self.err_full,
            CensorMode::MeanOnly => self.err_mean_only,
            CensorMode::MeanCov => self.err_mean_cov,
            CensorMode::GaussianEquivalent => self.err_gauss_equiv,
        }
    }

    fn set_err(&mut self, mode: CensorMode, v: f64) {
        let slot = match mode {
            CensorMode::Full => &mut self.err_full,
            CensorMode::MeanOnly => &mut self.err_mean_only,
            CensorMode::MeanCov => &mut self.err_mean_cov,
            CensorMode::GaussianEquivalent => &mut self.err_gauss_equiv,
        };
        *slot = Some(v);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

pub const TRAINING_LOG_HEADER: &str =
    "step,loss_train,err_full,err_mean_only,err_mean_cov,err_gauss_equiv,top5_m,top5_u,top5_v";

impl TrainingLog {
    /// CSV with [`TRAINING_LOG_HEADER`]; missing values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8e}")).unwrap_or_default();
        let mut s = String::from(TRAINING_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.8e},{:.8e},{:.8e}\n",
                r.step,
                opt(r.loss_train),
                opt(r.err_full),
                opt(r.err_mean_only),
                opt(r.err_mean_cov),
                opt(r.err_gauss_equiv),
                r.top5_m,
                r.top5_u,
                r.top5_v
            ));
        }
        s
    }

    /// First logged step at which the error on `mode` is at most its initial
    /// value minus `drop`.
    pub fn first_drop(&self, mode: CensorMode, drop: f64) -> Option<u64> {
        let initial = self.rows.first()?.err(mode)?;
        self.rows
            .iter()
            .find(|r| r.err(mode).is_some_and(|e| e <= initial - drop))
            .map(|r| r.step)
    }

    /// First logged step from which `|err_full - err_gauss_equiv| > gap` holds
    /// for `persist` consecutive snapshots.
    pub fn separation_step(&self, gap: f64, persist: usize) -> Option<u64> {
        let persist = persist.max(1);
        let flags: Vec<bool> = self
            .rows
            .iter()
            .map(|r| match (r.err_full, r.err_gauss_equiv) {
                (Some(a), Some(b)) => (a - b).abs() > gap,
                _ => false,
            })
            .collect();
        (0..flags.len())
            .find(|&i| i + persist <= flags.len() && flags[i..i + persist].iter().all(|&f| f))
            .map(|i| self.rows[i].step)
    }

    /// Staircase times. `t_mean` is the first drop of the mean-only error by
    /// `drop`; `t_cov` the first step where the mean+covariance error sits
    /// `gap` below the mean-only error; `t_hoc` the first step where the full
    /// error sits `gap` below the mean+covariance error.
    pub fn staircase(&self, drop: f64, gap: f64) -> StaircaseTimes {
        let below = |a: CensorMode, b: CensorMode| {
            self.rows
                .iter()
                .find(|r| match (r.err(a), r.err(b)) {
                    (Some(x), Some(y)) => x <= y - gap,
                    _ => false,
                })
                .map(|r| r.step)
        };
        StaircaseTimes {
            t_mean: self.first_drop(CensorMode::MeanOnly, drop),
            t_cov: below(CensorMode::MeanCov, CensorMode::MeanOnly),
            t_hoc: below(CensorMode::Full, CensorMode::MeanCov),
        }
    }

    /// First logged step at which the top-5 overlap with the given spike
    /// exceeds `threshold`.
    pub fn overlap_threshold_step(&self, spike: Spike, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| {
                let v = match spike {
                    Spike::M => r.top5_m,
                    Spike::U => r.top5_u,
                    Spike::V => r.top5_v,
                };
                v > threshold
            })
            .map(|r| r.step)
    }
}

/// Staircase times; `None` means not reached within the logged run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaircaseTimes {
    pub t_mean: Option<u64>,
    pub t_cov: Option<u64>,
    pub t_hoc: Option<u64>,
}

impl StaircaseTimes {
    /// `t_mean <= t_cov <= t_hoc` with `t_mean` and `t_cov` reached; an
    /// unreached `t_hoc` counts as infinitely late.
    pub fn ordered(&self) -> bool {
        match (self.t_mean, self.t_cov) {
            (Some(m), Some(c)) => m <= c && self.t_hoc.is_none_or(|h| c <= h),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spike {
    M,
    U,
    V,
}

struct EvalSet {
    mode: Option<CensorMode>,
    data: TestSet,
}

fn build_eval_sets(
    task: &TwoLayerTask,
    config: &TrainConfig2L,
    rng: &mut RngHandle,
) -> Result<Vec<EvalSet>> {
    match task {
        TwoLayerTask::Mcm { params, spikes } => config
            .eval_modes
            .iter()
            .map(|&mode| {
                let sampler = McmSampler::new(*params, spikes.clone(), mode)?;
                Ok(EvalSet {
                    mode: Some(mode),
                    data: TestSet::balanced(&sampler, config.eval_set_size, rng),
                })
            })
            .collect(),
        TwoLayerTask::Teacher(spec) => {
            let d = spec.spikes.dim();
            let n = config.eval_set_size;
            let mut xs = vec![0.0; n * d];
            let mut ys = Vec::with_capacity(n);
            for row in xs.chunks_exact_mut(d) {
                fill_teacher_input(spec, rng, row);
                ys.push(teacher_label(spec, row));
            }
            Ok(vec![EvalSet {
                mode: None,
                data: TestSet { d, xs, ys },
            }])
        }
    }
}

fn evaluate(net: &TwoLayerNet, set: &EvalSet) -> f64 {
    let n = set.data.len() as f64;
    let total: f64 = set
        .data
        .rows()
        .map(|(x, y)| {
            let f = net.forward(x);
            match set.mode {
                Some(_) => f64::from(u8::from(f * y <= 0.0)),
                None => (f - y) * (f - y),
            }
        })
        .sum();
    total / n
}

/// Online SGD with batch size one. Training samples come from `data_rng`,
/// evaluation sets from `eval_rng`; the net is updated in place.
pub fn train_online(
    net: &mut TwoLayerNet,
    task: &TwoLayerTask,
    config: &TrainConfig2L,
    data_rng: &mut RngHandle,
    eval_rng: &mut RngHandle,
) -> Result<TrainingLog> {
    config.validate()?;
    let d = net.d;
    let spikes = task.spikes().clone();
    if spikes.dim() != d {
        return Err(Error::InvalidDimension(spikes.dim()));
    }
    let sampler = match task {
        TwoLayerTask::Mcm { params, spikes } => {
            Some(McmSampler::new(*params, spikes.clone(), CensorMode::Full)?)
        }
        TwoLayerTask::Teacher(spec) => {
            spec.validate()?;
            None
        }
    };
    let sets = build_eval_sets(task, config, eval_rng)?;
    let snapshot = |net: &TwoLayerNet, step: u64, loss: Option<f64>| -> Result<LogRow> {
        let errs: Vec<f64> = sets.par_iter().map(|s| evaluate(net, s)).collect();
        let mut row = LogRow {
            step,
            loss_train: loss,
            err_full: None,
            err_mean_only: None,
            err_mean_cov: None,
            err_gauss_equiv: None,
            top5_m: top_k_overlaps(net, &spikes.m, 5.min(net.m))?,
            top5_u: top_k_overlaps(net, &spikes.u, 5.min(net.m))?,
            top5_v: top_k_overlaps(net, &spikes.v, 5.min(net.m))?,
        };
        for (set, e) in sets.iter().zip(errs) {
            row.set_err(set.mode.unwrap_or(CensorMode::Full), e);
        }
        Ok(row)
    };
    let eval_steps = config.eval.steps(config.steps);
    let mut next_eval = eval_steps.iter().copied().peekable();
    let mut log = TrainingLog::default();
    let eta2 = config.eps * config.eta1;
    let mut x = vec![0.0; d];
    let mut pre = vec![0.0; net.m];
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    for step in 0..=config.steps {
        if next_eval.peek() == Some(&step) {
            next_eval.next();
            let mean = (loss_n > 0).then(|| loss_sum / loss_n as f64);
            log.rows.push(snapshot(net, step, mean)?);
            loss_sum = 0.0;
            loss_n = 0;
        }
        if step == config.steps {
            break;
        }
        let target = match (&sampler, task) {
            (Some(s), _) => s.fill(data_rng, &mut x).0,
            (None, TwoLayerTask::Teacher(spec)) => {
                fill_teacher_input(spec, data_rng, &mut x);
                teacher_label(spec, &x)
            }
            _ => unreachable!("the sampler exists exactly for classification tasks"),
        };
        let loss = net.sgd_step(&x, target, config.eta1, eta2, &mut pre);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: step + 1 });
        }
        loss_sum += loss;
        loss_n += 1;
    }
    if net.w.iter().chain(&net.a).any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: config.steps });
    }
    Ok(log)
}
