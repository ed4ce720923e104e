//! Deterministic search-phase dynamics of the overlaps and their comparison
//! with seed-averaged SGD traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptron::OverlapTrace;

/// Coefficients of the search-phase normal form of the population loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOdeCoeffs {
    pub c20: f64,
    pub c11: f64,
    pub c04: f64,
}

/// Uniformly sampled `(t, alpha_u, alpha_v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub dt: f64,
    pub region: f64,
    pub points: Vec<(f64, f64, f64)>,
    /// Time at which an overlap left `|alpha| <= region`, if it did.
    pub exit_time: Option<f64>,
}

impl OdeTrajectory {
    /// Linear interpolation at time `t`; `None` outside the sampled range.
    pub fn at(&self, t: f64) -> Option<(f64, f64)> {
        let first = self.points.first()?;
        if t < first.0 {
            return None;
        }
        let k = ((t - first.0) / self.dt).floor() as usize;
        if k + 1 >= self.points.len() {
            let last = self.points.last()?;
            return ((t - last.0).abs() < 1e-9 * self.dt.max(1.0)).then_some((last.1, last.2));
        }
        let (t0, u0, v0) = self.points[k];
        let (t1, u1, v1) = self.points[k + 1];
        let f = (t - t0) / (t1 - t0);
        Some((u0 + f * (u1 - u0), v0 + f * (v1 - v0)))
    }

    pub fn end(&self) -> (f64, f64, f64) {
        *self
            .points
            .last()
            .expect("trajectory has at least the initial point")
    }
}

/// Right-hand side of the search-phase system
/// `au' = 2 c20 au + c11 av`, `av' = c11 au + 4 c04 av^3 - 2 c20 au^2 av`.
#[inline]
pub fn ode_rhs(c: &SearchOdeCoeffs, alpha_u: f64, alpha_v: f64) -> (f64, f64) {
    (
        2.0 * c.c20 * alpha_u + c.c11 * alpha_v,
        c.c11 * alpha_u + 4.0 * c.c04 * alpha_v.powi(3) - 2.0 * c.c20 * alpha_u * alpha_u * alpha_v,
    )
}

fn rk4(c: &SearchOdeCoeffs, (u, v): (f64, f64), h: f64) -> (f64, f64) {
    let k1 = ode_rhs(c, u, v);
    let k2 = ode_rhs(c, u + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
    let k3 = ode_rhs(c, u + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
    let k4 = ode_rhs(c, u + h * k3.0, v + h * k3.1);
    (
        u + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        v + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

fn outside(state: (f64, f64), region: f64) -> bool {
    state.0.abs() > region || state.1.abs() > region
}

fn run_fixed(
    c: &SearchOdeCoeffs,
    alpha0: (f64, f64),
    t_end: f64,
    dt: f64,
    region: f64,
) -> OdeTrajectory {
    let steps = (t_end / dt).round() as usize;
    let mut state = alpha0;
    let mut points = Vec::with_capacity(steps + 1);
    points.push((0.0, state.0, state.1));
    let mut exit_time = None;
    for k in 0..steps {
        let next = rk4(c, state, dt);
        if outside(next, region) {
            // bisect on the sub-step length for the crossing time
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if outside(rk4(c, state, mid), region) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            exit_time = Some(k as f64 * dt + hi);
            break;
        }
        state = next;
        points.push(((k + 1) as f64 * dt, state.0, state.1));
    }
    OdeTrajectory {
        dt,
        region,
        points,
        exit_time,
    }
}

/// Classical fixed-step RK4 from `alpha0` up to `t_end`, stopping early when
/// an overlap leaves `|alpha| <= region`.
///
/// The run is repeated with `dt / 2`; if the two disagree by more than `1e-8`
/// (relative to the overlap scale) at their last common grid time, the step
/// is rejected.
pub fn integrate(
    coeffs: &SearchOdeCoeffs,
    alpha0: (f64, f64),
    t_end: f64,
    dt: f64,
    region: f64,
) -> Result<OdeTrajectory> {
    if !(dt > 0.0 && t_end >= 0.0 && region > 0.0) {
        return Err(Error::param(
            "integrate needs dt > 0, t_end >= 0, region > 0",
        ));
    }
    if outside(alpha0, region) {
        return Err(Error::param(
            "initial overlaps outside the integration region",
        ));
    }
    let coarse = run_fixed(coeffs, alpha0, t_end, dt, region);
    let fine = run_fixed(coeffs, alpha0, t_end, 0.5 * dt, region);
    let k = (coarse.points.len() - 1).min((fine.points.len() - 1) / 2);
    let a = coarse.points[k];
    let b = fine.points[2 * k];
    let scale = a.1.abs().max(a.2.abs()).max(1e-300);
    let diff = (a.1 - b.1).abs().max((a.2 - b.2).abs()) / scale;
    if diff > 1e-8 {
        return Err(Error::StepSize { diff });
    }
    Ok(coarse)
}

/// Map from SGD steps to ODE time, `t_ode = convention_factor * (delta / d) * t_sgd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub delta: f64,
    pub d: usize,
    pub convention_factor: f64,
}

impl TimeMap {
    pub fn new(delta: f64, d: usize) -> Self {
        Self {
            delta,
            d,
            convention_factor: 1.0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.convention_factor * self.delta / self.d as f64
    }
}

/// Outcome of comparing an averaged SGD trace with an ODE trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub time_map: TimeMap,
    /// ODE time per SGD step used for the comparison.
    pub time_scale: f64,
    pub sup_deviation: f64,
    pub points_compared: usize,
    pub region: f64,
    /// Multiplier of `time_scale` that minimizes the sup deviation.
    pub fitted_scale_factor: f64,
    pub fitted_sup_deviation: f64,
}

fn sup_deviation(
    trace: &OverlapTrace,
    traj: &OdeTrajectory,
    scale: f64,
    region: f64,
) -> (f64, usize) {
    let mut sup: f64 = 0.0;
    let mut n = 0;
    for p in &trace.points {
        if p.alpha_u.abs() > region || p.alpha_v.abs() > region {
            break;
        }
        let Some((u, v)) = traj.at(scale * p.t as f64) else {
            break;
        };
        if u.abs() > region || v.abs() > region {
            break;
        }
        sup = sup.max((u - p.alpha_u).abs()).max((v - p.alpha_v).abs());
        n += 1;
    }
    (sup, n)
}

/// Sup-norm distance between an (averaged) SGD trace and the ODE, over the
/// part of the trace where both stay inside `|alpha| <= region`. SGD step `t`
/// is mapped to ODE time through `time_map`.
pub fn sgd_ode_compare(
    trace: &OverlapTrace,
    traj: &OdeTrajectory,
    time_map: TimeMap,
    region: f64,
) -> Result<CompareReport> {
    let time_scale = time_map.scale();
    if region > traj.region {
        return Err(Error::InvalidComparison(format!(
            "comparison region {region} exceeds the integration region {}",
            traj.region
        )));
    }
    if !(time_scale > 0.0) {
        return Err(Error::InvalidComparison(
            "time scale must be positive".into(),
        ));
    }
    let (sup, n) = sup_deviation(trace, traj, time_scale, region);
    if n == 0 {
        return Err(Error::InvalidComparison(
            "no overlapping points to compare".into(),
        ));
    }
    // golden-section search for the best time-scale multiplier in [1/4, 4]
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |log_m: f64| sup_deviation(trace, traj, time_scale * log_m.exp(), region).0;
    let (mut a, mut b) = (0.25f64.ln(), 4f64.ln());
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let best = 0.5 * (a + b);
    Ok(CompareReport {
        time_map,
        time_scale,
        sup_deviation: sup,
        points_compared: n,
        region,
        fitted_scale_factor: best.exp(),
        fitted_sup_deviation: f(best),
    })
}
