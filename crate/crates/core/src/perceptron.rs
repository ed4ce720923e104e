//! Spherical perceptron trained by projected online SGD on the correlation
//! loss `L(w, (x, y)) = 1 - y sigma(w.x)`, with overlap tracking and
//! weak-recovery stopping times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::Activation;
use crate::mcm::{CensorMode, LabeledSample, McmParams, McmSampler, SpikeSet};
use crate::sampling::{sample_unit_sphere, RngHandle};
use crate::vecops::{axpy, dot, norm, orthogonalize_against, scale};

const UNIT_TOL: f64 = 1e-6;
const MAX_INIT_DRAWS: usize = 100_000;

/// Current weight with cached overlaps `alpha_u = u.w`, `alpha_v = v.w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronState {
    pub w: Vec<f64>,
    pub t: u64,
    pub alpha_u: f64,
    pub alpha_v: f64,
}

impl PerceptronState {
    pub fn new(w: Vec<f64>, spikes: &SpikeSet) -> Result<Self> {
        if w.len() != spikes.dim() {
            return Err(Error::InvalidDimension(w.len()));
        }
        check_unit(&w)?;
        Ok(Self {
            alpha_u: dot(&spikes.u, &w),
            alpha_v: dot(&spikes.v, &w),
            w,
            t: 0,
        })
    }

    /// Uniform draw from the sphere.
    pub fn random(spikes: &SpikeSet, rng: &mut RngHandle) -> Result<Self> {
        Self::new(sample_unit_sphere(spikes.dim(), rng)?, spikes)
    }

    /// Unit vector `alpha_u u + alpha_v v + sqrt(1 - alpha_u^2 - alpha_v^2) w_perp`
    /// with a random `w_perp` orthogonal to the spikes.
    pub fn with_overlaps(
        spikes: &SpikeSet,
        alpha_u: f64,
        alpha_v: f64,
        rng: &mut RngHandle,
    ) -> Result<Self> {
        let rest = 1.0 - alpha_u * alpha_u - alpha_v * alpha_v;
        if rest < 0.0 || !spikes.is_orthogonal() {
            return Err(Error::Domain {
                alpha_u,
                alpha_v,
                reason: "no unit vector has these overlaps",
            });
        }
        let d = spikes.dim();
        let mut perp = rng.gaussian_vec(d);
        orthogonalize_against(&mut perp, &[&spikes.m, &spikes.u, &spikes.v]);
        let n = norm(&perp);
        scale(rest.sqrt() / n, &mut perp);
        axpy(alpha_u, &spikes.u, &mut perp);
        axpy(alpha_v, &spikes.v, &mut perp);
        let r = norm(&perp);
        scale(1.0 / r, &mut perp);
        Self::new(perp, spikes)
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

fn check_unit(w: &[f64]) -> Result<()> {
    let n = norm(w);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidState(format!("weight norm {n} is not 1")));
    }
    Ok(())
}

/// Sign condition imposed on the initial overlaps by rejection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCondition {
    #[default]
    Uniform,
    /// `alpha_u(0) alpha_v(0) > 0`
    Matched,
    /// `alpha_u(0) alpha_v(0) < 0`
    Mismatched,
}

impl InitCondition {
    fn accepts(self, alpha_u: f64, alpha_v: f64) -> bool {
        match self {
            Self::Uniform => true,
            Self::Matched => alpha_u * alpha_v > 0.0,
            Self::Mismatched => alpha_u * alpha_v < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub delta: f64,
    pub max_steps: u64,
    pub eta: f64,
    pub init: InitCondition,
    pub record_every: u64,
    /// End the run once every spike with nonzero strength has been recovered.
    pub stop_on_recovery: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            max_steps: 100_000,
            eta: 0.3,
            init: InitCondition::Uniform,
            record_every: 100,
            stop_on_recovery: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param(format!(
                "eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: u64,
    pub alpha_u: f64,
    pub alpha_v: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapTrace {
    pub points: Vec<TracePoint>,
}

impl OverlapTrace {
    fn push(&mut self, t: u64, alpha_u: f64, alpha_v: f64) {
        if self.points.last().is_some_and(|p| p.t == t) {
            return;
        }
        self.points.push(TracePoint {
            t,
            alpha_u,
            alpha_v,
        });
    }

    /// Pointwise mean over the steps recorded in every trace.
    pub fn average(traces: &[OverlapTrace]) -> Result<OverlapTrace> {
        let first = traces
            .first()
            .ok_or_else(|| Error::param("no traces to average"))?;
        let n = traces.len() as f64;
        let mut cursors = vec![0usize; traces.len()];
        let mut points = Vec::new();
        'grid: for p0 in &first.points {
            let (mut su, mut sv) = (0.0, 0.0);
            for (tr, c) in traces.iter().zip(cursors.iter_mut()) {
                while *c < tr.points.len() && tr.points[*c].t < p0.t {
                    *c += 1;
                }
                match tr.points.get(*c) {
                    Some(p) if p.t == p0.t => {
                        su += p.alpha_u;
                        sv += p.alpha_v;
                    }
                    _ => continue 'grid,
                }
            }
            points.push(TracePoint {
                t: p0.t,
                alpha_u: su / n,
                alpha_v: sv / n,
            });
        }
        if points.is_empty() {
            return Err(Error::param("traces share no recorded steps"));
        }
        Ok(OverlapTrace { points })
    }

    /// CSV with header `t,alpha_u,alpha_v`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,alpha_u,alpha_v\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.10e},{:.10e}\n", p.t, p.alpha_u, p.alpha_v));
        }
        s
    }
}

/// Outcome of one training run. `None` stopping times mean the threshold was
/// not reached within the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub tau_u: Option<u64>,
    pub tau_v: Option<u64>,
    pub eta: f64,
    pub delta: f64,
    pub d: usize,
    pub steps: u64,
    pub init_alpha_u: f64,
    pub init_alpha_v: f64,
    pub final_alpha_u: f64,
    pub final_alpha_v: f64,
    pub max_abs_alpha_u: f64,
    pub max_abs_alpha_v: f64,
    #[serde(skip)]
    pub trace: OverlapTrace,
}

/// `(1 - w w^T) g`.
pub fn spherical_gradient(w: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_unit(w)?;
    let c = dot(w, g);
    let mut out = g.to_vec();
    axpy(-c, w, &mut out);
    Ok(out)
}

/// Euclidean gradient of the correlation loss, `-y sigma'(w.x) x`.
pub fn sample_gradient(w: &[f64], sample: &LabeledSample, sigma: &Activation) -> Vec<f64> {
    let s = -sample.y * sigma.derivative(dot(w, &sample.x));
    sample.x.iter().map(|xi| s * xi).collect()
}

/// One projected step `w <- normalize(w - (delta/d) (1 - ww^T)(-y sigma'(w.x) x))`.
pub fn sgd_step(
    state: &PerceptronState,
    sample: &LabeledSample,
    sigma: &Activation,
    delta: f64,
    spikes: &SpikeSet,
) -> Result<PerceptronState> {
    check_unit(&state.w)?;
    let mut next = state.clone();
    step_in_place(&mut next, &sample.x, sample.y, sigma, delta, spikes)?;
    Ok(next)
}

/// In-place step; the tangent update is `c (x - (w.x) w)` with
/// `c = (delta/d) y sigma'(w.x)`.
#[inline]
fn step_in_place(
    state: &mut PerceptronState,
    x: &[f64],
    y: f64,
    sigma: &Activation,
    delta: f64,
    spikes: &SpikeSet,
) -> Result<()> {
    let d = state.w.len() as f64;
    let pre = dot(&state.w, x);
    let c = delta / d * y * sigma.derivative(pre);
    state.t += 1;
    if c == 0.0 {
        return Ok(());
    }
    let keep = 1.0 - c * pre;
    for (wi, xi) in state.w.iter_mut().zip(x) {
        *wi = keep * *wi + c * xi;
    }
    let n = norm(&state.w);
    if !n.is_finite() {
        return Err(Error::Divergence { step: state.t });
    }
    if n == 0.0 {
        return Err(Error::Internal(
            "tangent update produced a zero vector".into(),
        ));
    }
    scale(1.0 / n, &mut state.w);
    state.alpha_u = dot(&spikes.u, &state.w);
    state.alpha_v = dot(&spikes.v, &state.w);
    Ok(())
}

/// Draws an initial state satisfying `condition` by rejection.
pub fn initial_state(
    spikes: &SpikeSet,
    condition: InitCondition,
    rng: &mut RngHandle,
) -> Result<PerceptronState> {
    for _ in 0..MAX_INIT_DRAWS {
        let s = PerceptronState::random(spikes, rng)?;
        if condition.accepts(s.alpha_u, s.alpha_v) {
            return Ok(s);
        }
    }
    Err(Error::InvalidState(format!(
        "no initialization satisfying {condition:?} in {MAX_INIT_DRAWS} draws"
    )))
}

/// Draws `w_0` from `init_rng` under the configured sign condition, then
/// trains on fresh samples from `data_rng`.
pub fn train(
    params: &McmParams,
    spikes: &SpikeSet,
    sigma: &Activation,
    config: &SgdConfig,
    init_rng: &mut RngHandle,
    data_rng: &mut RngHandle,
) -> Result<RecoveryReport> {
    config.validate()?;
    let state = initial_state(spikes, config.init, init_rng)?;
    train_from(state, params, spikes, sigma, config, data_rng)
}

/// Online SGD from a given initial state, one fresh sample per step.
pub fn train_from(
    mut state: PerceptronState,
    params: &McmParams,
    spikes: &SpikeSet,
    sigma: &Activation,
    config: &SgdConfig,
    data_rng: &mut RngHandle,
) -> Result<RecoveryReport> {
    config.validate()?;
    if params.beta_m != 0.0 {
        return Err(Error::param(
            "perceptron runs take no mean spike (beta_m = 0)",
        ));
    }
    check_unit(&state.w)?;
    let sampler = McmSampler::new(*params, spikes.clone(), CensorMode::Full)?;
    let d = params.d;
    if state.w.len() != d {
        return Err(Error::InvalidDimension(state.w.len()));
    }
    let eta = config.eta;
    let need_u = params.beta_u > 0.0;
    let need_v = params.beta_v > 0.0;
    let mut trace = OverlapTrace::default();
    trace.push(state.t, state.alpha_u, state.alpha_v);
    let (init_u, init_v) = (state.alpha_u, state.alpha_v);
    let (mut max_u, mut max_v) = (init_u.abs(), init_v.abs());
    let mut tau_u = (init_u.abs() >= eta).then_some(state.t);
    let mut tau_v = (init_v.abs() >= eta).then_some(state.t);
    let start = state.t;
    let mut x = vec![0.0; d];
    while state.t - start < config.max_steps {
        if config.stop_on_recovery
            && (need_u || need_v)
            && (!need_u || tau_u.is_some())
            && (!need_v || tau_v.is_some())
        {
            break;
        }
        let (y, _) = sampler.fill(data_rng, &mut x);
        step_in_place(&mut state, &x, y, sigma, config.delta, spikes)?;
        let (au, av) = (state.alpha_u.abs(), state.alpha_v.abs());
        max_u = max_u.max(au);
        max_v = max_v.max(av);
        let mut hit = false;
        if tau_u.is_none() && au >= eta {
            tau_u = Some(state.t);
            hit = true;
        }
        if tau_v.is_none() && av >= eta {
            tau_v = Some(state.t);
            hit = true;
        }
        if hit || (state.t - start).is_multiple_of(config.record_every) {
            trace.push(state.t, state.alpha_u, state.alpha_v);
        }
    }
    trace.push(state.t, state.alpha_u, state.alpha_v);
    Ok(RecoveryReport {
        tau_u,
        tau_v,
        eta,
        delta: config.delta,
        d,
        steps: state.t - start,
        init_alpha_u: init_u,
        init_alpha_v: init_v,
        final_alpha_u: state.alpha_u,
        final_alpha_v: state.alpha_v,
        max_abs_alpha_u: max_u,
        max_abs_alpha_v: max_v,
        trace,
    })
}

/// Learning-rate scalings in the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrRegime {
    /// `a / log d`
    CovLarge,
    /// `a / (d log d)`
    CumulantScale,
    /// `a / (d log d)`, the rate at which only a suboptimal guarantee holds
    SubOptimal,
    /// `a`
    Fixed,
}

impl LrRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::CovLarge => "cov_large",
            Self::CumulantScale => "cumulant_scale",
            Self::SubOptimal => "sub_optimal",
            Self::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub regime: LrRegime,
    #[serde(default = "unit_prefactor")]
    pub prefactor: f64,
}

fn unit_prefactor() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn new(regime: LrRegime) -> Self {
        Self {
            regime,
            prefactor: 1.0,
        }
    }

    pub fn with_prefactor(regime: LrRegime, prefactor: f64) -> Self {
        Self { regime, prefactor }
    }
}

pub fn lr_schedule(schedule: LrSchedule, d: f64) -> Result<f64> {
    if !(d >= 3.0) {
        return Err(Error::param(format!(
            "learning-rate schedules need d >= 3, got {d}"
        )));
    }
    let a = schedule.prefactor;
    Ok(match schedule.regime {
        LrRegime::CovLarge => a / d.ln(),
        LrRegime::CumulantScale | LrRegime::SubOptimal => a / (d * d.ln()),
        LrRegime::Fixed => a,
    })
}
