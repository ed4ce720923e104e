//! Hermite machinery: basis evaluation, activation coefficients `c^sigma_k`,
//! likelihood-ratio coefficients `c^L_ij` of the mixed-cumulant model, and the
//! truncated population loss of the spherical perceptron.
//!
//! Internally everything is in the orthonormal basis
//! `h_k = He_k / sqrt(k!)`, where `He_k` are the probabilists' polynomials
//! (`He_2(z) = z^2 - 1`, `He_4(+-1) = -2`).

mod activation;
pub mod quadrature;

use serde::{Deserialize, Serialize};

pub use activation::{Activation, ScalarFn};

use crate::error::{Error, Result};
use crate::mcm::McmParams;
use crate::ode::SearchOdeCoeffs;
use crate::sampling::{draw_latents, RngHandle};
use quadrature::{GaussHermite, GaussLegendre};

/// Highest degree accepted by [`hermite_eval`].
pub const MAX_DEGREE: usize = 30;

/// Default truncation degree of [`HermiteSeries`].
pub const DEFAULT_TRUNCATION: usize = 8;

const QUAD_NODES: usize = 200;
const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HermiteConvention {
    /// Orthonormal under the standard Gaussian.
    #[default]
    Normalized,
    /// Monic `He_k`.
    Probabilists,
}

/// Evaluates `h_k(z)` (or `He_k(z)`) by the three-term recurrence.
pub fn hermite_eval(k: usize, z: f64, convention: HermiteConvention) -> Result<f64> {
    if k > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree: k,
            cap: MAX_DEGREE,
        });
    }
    Ok(match convention {
        HermiteConvention::Probabilists => probabilists_upto(k, z)[k],
        HermiteConvention::Normalized => normalized_upto(k, z)[k],
    })
}

/// `He_0(z) ..= He_k(z)`.
pub fn probabilists_upto(k: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(z);
    }
    for n in 1..k {
        let next = z * out[n] - n as f64 * out[n - 1];
        out.push(next);
    }
    out
}

/// `h_0(z) ..= h_k(z)` by the orthonormal recurrence
/// `h_{n+1} = (z h_n - sqrt(n) h_{n-1}) / sqrt(n + 1)`.
pub fn normalized_upto(k: usize, z: f64) -> Vec<f64> {
    let mut out = vec![0.0; k + 1];
    normalized_into(z, &mut out);
    out
}

#[inline]
pub(crate) fn normalized_into(z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = z;
    }
    for n in 1..out.len() - 1 {
        let nf = n as f64;
        out[n + 1] = (z * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
}

/// `sqrt(k!)`, the factor with `He_k = sqrt(k!) h_k`.
pub fn sqrt_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).sqrt()).product()
}

pub fn probabilists_to_normalized(k: usize, value: f64) -> f64 {
    value / sqrt_factorial(k)
}

pub fn normalized_to_probabilists(k: usize, value: f64) -> f64 {
    value * sqrt_factorial(k)
}

/// Monomial coefficients of `h_k`.
pub(crate) fn normalized_monomial_coeffs(k: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    let mut cur = vec![0.0, 1.0];
    if k == 0 {
        return prev;
    }
    for n in 1..k {
        let mut next = vec![0.0; n + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= n as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    let s = sqrt_factorial(k);
    cur.iter().map(|c| c / s).collect()
}

/// `c^sigma_k = E[sigma(z) h_k(z)]`.
pub fn activation_coeff(sigma: &Activation, k: usize) -> Result<f64> {
    Ok(activation_coeffs(sigma, k)?[k])
}

/// `c^sigma_0 ..= c^sigma_max_degree`.
///
/// Smooth activations use Gauss-Hermite with 200 nodes, checked against 400.
/// Activations with kinks are integrated piecewise between kinks with
/// composite Gauss-Legendre, checked against twice as many panels.
pub fn activation_coeffs(sigma: &Activation, max_degree: usize) -> Result<Vec<f64>> {
    if max_degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree: max_degree,
            cap: MAX_DEGREE,
        });
    }
    let (coarse, fine) = if sigma.kinks().is_empty() {
        let n = QUAD_NODES.max(max_degree + 1);
        (
            hermite_rule_coeffs(sigma, max_degree, n),
            hermite_rule_coeffs(sigma, max_degree, 2 * n),
        )
    } else {
        (
            piecewise_coeffs(sigma, max_degree, 4),
            piecewise_coeffs(sigma, max_degree, 8),
        )
    };
    let diff = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // polynomials are integrated exactly by both rules
    if diff > QUAD_TOL && !sigma.is_polynomial() {
        return Err(Error::Quadrature { diff });
    }
    Ok(fine)
}

fn hermite_rule_coeffs(sigma: &Activation, max_degree: usize, n: usize) -> Vec<f64> {
    let rule = GaussHermite::new(n);
    let mut out = vec![0.0; max_degree + 1];
    let mut h = vec![0.0; max_degree + 1];
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let s = w * sigma.eval(z);
        normalized_into(z, &mut h);
        for (o, hk) in out.iter_mut().zip(&h) {
            *o += s * hk;
        }
    }
    out
}

fn piecewise_coeffs(sigma: &Activation, max_degree: usize, panels_per_unit: usize) -> Vec<f64> {
    const REACH: f64 = 24.0;
    let rule = GaussLegendre::new(20);
    let mut breaks: Vec<f64> = sigma.kinks().to_vec();
    breaks.sort_by(f64::total_cmp);
    let lo = breaks.first().copied().unwrap_or(0.0) - REACH;
    let hi = breaks.last().copied().unwrap_or(0.0) + REACH;
    let mut edges = vec![lo];
    edges.extend(breaks);
    edges.push(hi);
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    (0..=max_degree)
        .map(|k| {
            edges
                .windows(2)
                .map(|e| {
                    let panels = (((e[1] - e[0]) * panels_per_unit as f64).ceil() as usize).max(1);
                    rule.integrate(e[0], e[1], panels, |z| {
                        let h = normalized_upto(k, z)[k];
                        sigma.eval(z) * h * norm * (-0.5 * z * z).exp()
                    })
                })
                .sum()
        })
        .collect()
}

/// Exact `E[lambda^i]` for a standard normal.
fn gaussian_moment(i: usize) -> f64 {
    if i % 2 == 1 {
        return 0.0;
    }
    (1..i).step_by(2).map(|x| x as f64).product()
}

/// Exact `E[|lambda|^i]` for a standard normal.
fn gaussian_abs_moment(i: usize) -> f64 {
    let mut m = if i.is_multiple_of(2) {
        1.0
    } else {
        crate::sampling::SQRT_2_OVER_PI
    };
    let mut k = if i.is_multiple_of(2) { 0 } else { 1 };
    while k < i {
        k += 2;
        m *= (k - 1) as f64;
    }
    m
}

/// `E[lambda^i sign(lambda)^j]`.
fn signed_moment(i: usize, j: usize) -> f64 {
    if j.is_multiple_of(2) {
        gaussian_moment(i)
    } else if i % 2 == 1 {
        gaussian_abs_moment(i)
    } else {
        0.0
    }
}

fn check_theory_params(params: &McmParams) -> Result<()> {
    params.validate()?;
    if params.beta_m != 0.0 {
        return Err(Error::param(
            "likelihood-ratio coefficients need beta_m = 0",
        ));
    }
    Ok(())
}

/// Closed form of the normalized likelihood coefficient `c^L_ij`, i.e.
/// `E_plant[h_i(u.x) h_j(v.x)]` for orthogonal spikes.
///
/// With `y_u = sqrt(beta_u) lambda + z_1` and
/// `y_v = a nu + b z_2` (`a^2 + b^2 = 1`), Gaussian smoothing of Hermite
/// polynomials gives `E_z[He_i(y_u)] = (sqrt(beta_u) lambda)^i` and
/// `E_z[He_j(y_v)] = a^j He_j(nu)`; what remains is a moment of the latents.
pub fn likelihood_coeff_exact(params: &McmParams, i: usize, j: usize) -> Result<f64> {
    check_theory_params(params)?;
    if i + j > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree: i + j,
            cap: MAX_DEGREE,
        });
    }
    Ok(likelihood_coeff_unchecked(params, i, j))
}

fn likelihood_coeff_unchecked(params: &McmParams, i: usize, j: usize) -> f64 {
    let a = (params.beta_v / (1.0 + params.beta_v)).sqrt();
    let he_j_at_one = probabilists_upto(j, 1.0)[j];
    let q = params.coupling.sign_probability();
    let independent = if j.is_multiple_of(2) {
        gaussian_moment(i)
    } else {
        0.0
    };
    let latent = (1.0 - q) * independent + q * signed_moment(i, j);
    let raw = params.beta_u.sqrt().powi(i as i32) * a.powi(j as i32) * he_j_at_one * latent;
    raw / (sqrt_factorial(i) * sqrt_factorial(j))
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl CoeffEstimate {
    /// Fails when the standard error exceeds `tol`.
    pub fn require(&self, tol: f64) -> Result<()> {
        if self.std_error > tol {
            Err(Error::Accuracy {
                achieved: self.std_error,
                requested: tol,
            })
        } else {
            Ok(())
        }
    }
}

/// Monte-Carlo estimate of `c^L_ij = E_plant[h_i(u.x) h_j(v.x)]`.
///
/// Only the projections `(u.x, v.x)` enter, so planted samples are drawn
/// directly in the two-dimensional span of orthogonal spikes. A `tolerance`
/// that the standard error exceeds is reported through `log::warn!`; the
/// estimate is still returned.
pub fn likelihood_coeff(
    params: &McmParams,
    i: usize,
    j: usize,
    n_mc: usize,
    tolerance: Option<f64>,
    rng: &mut RngHandle,
) -> Result<CoeffEstimate> {
    let table = likelihood_coeffs_mc(params, i + j, n_mc, rng)?;
    let est = table[i][j];
    if let Some(tol) = tolerance {
        if let Err(e) = est.require(tol) {
            log::warn!("c^L_({i},{j}): {e}");
        }
    }
    Ok(est)
}

/// Monte-Carlo estimates of every `c^L_ij` with `i + j <= max_degree`,
/// all from the same `n_mc` planted draws.
pub fn likelihood_coeffs_mc(
    params: &McmParams,
    max_degree: usize,
    n_mc: usize,
    rng: &mut RngHandle,
) -> Result<Vec<Vec<CoeffEstimate>>> {
    check_theory_params(params)?;
    if max_degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree: max_degree,
            cap: MAX_DEGREE,
        });
    }
    if n_mc < 2 {
        return Err(Error::InsufficientSamples { got: n_mc, need: 2 });
    }
    let k = max_degree;
    let a = params.beta_v.sqrt();
    let inv = 1.0 / (1.0 + params.beta_v).sqrt();
    let su = params.beta_u.sqrt();
    let mut sum = vec![vec![0.0; k + 1]; k + 1];
    let mut sq = vec![vec![0.0; k + 1]; k + 1];
    let mut hu = vec![0.0; k + 1];
    let mut hv = vec![0.0; k + 1];
    for _ in 0..n_mc {
        let (lambda, nu) = draw_latents(params.coupling, rng);
        let yu = su * lambda + rng.gaussian();
        let yv = (a * nu + rng.gaussian()) * inv;
        normalized_into(yu, &mut hu);
        normalized_into(yv, &mut hv);
        for i in 0..=k {
            for j in 0..=k - i {
                let p = hu[i] * hv[j];
                sum[i][j] += p;
                sq[i][j] += p * p;
            }
        }
    }
    let n = n_mc as f64;
    Ok((0..=k)
        .map(|i| {
            (0..=k)
                .map(|j| {
                    if i + j > k {
                        return CoeffEstimate {
                            estimate: 0.0,
                            std_error: 0.0,
                        };
                    }
                    let mean = sum[i][j] / n;
                    let var = (sq[i][j] / n - mean * mean).max(0.0) * n / (n - 1.0);
                    CoeffEstimate {
                        estimate: mean,
                        std_error: (var / n).sqrt(),
                    }
                })
                .collect()
        })
        .collect())
}

/// Truncated double series of the population loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteSeries {
    /// `c^sigma_0 ..= c^sigma_K`.
    pub c_sigma: Vec<f64>,
    /// `c_l[i][j] = c^L_ij` for `i + j <= K`; entries beyond are zero.
    pub c_l: Vec<Vec<f64>>,
    pub truncation: usize,
    pub convention: HermiteConvention,
}

impl HermiteSeries {
    pub fn new(c_sigma: Vec<f64>, c_l: Vec<Vec<f64>>, truncation: usize) -> Result<Self> {
        if c_sigma.len() != truncation + 1 || c_l.len() != truncation + 1 {
            return Err(Error::param("series tables must have truncation + 1 rows"));
        }
        if c_l.iter().any(|row| row.len() != truncation + 1) {
            return Err(Error::param("likelihood table must be square"));
        }
        Ok(Self {
            c_sigma,
            c_l,
            truncation,
            convention: HermiteConvention::Normalized,
        })
    }

    /// Series with closed-form likelihood coefficients.
    pub fn closed_form(sigma: &Activation, params: &McmParams, truncation: usize) -> Result<Self> {
        check_theory_params(params)?;
        let c_sigma = activation_coeffs(sigma, truncation)?;
        let c_l = (0..=truncation)
            .map(|i| {
                (0..=truncation)
                    .map(|j| {
                        if i + j <= truncation {
                            likelihood_coeff_unchecked(params, i, j)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(c_sigma, c_l, truncation)
    }

    /// Series with Monte-Carlo likelihood coefficients; `c^L_00` is pinned to 1.
    pub fn monte_carlo(
        sigma: &Activation,
        params: &McmParams,
        truncation: usize,
        n_mc: usize,
        rng: &mut RngHandle,
    ) -> Result<Self> {
        let c_sigma = activation_coeffs(sigma, truncation)?;
        let table = likelihood_coeffs_mc(params, truncation, n_mc, rng)?;
        let mut c_l: Vec<Vec<f64>> = table
            .iter()
            .map(|row| row.iter().map(|c| c.estimate).collect())
            .collect();
        c_l[0][0] = 1.0;
        Self::new(c_sigma, c_l, truncation)
    }

    pub fn c_l(&self, i: usize, j: usize) -> f64 {
        if i + j > self.truncation {
            0.0
        } else {
            self.c_l[i][j]
        }
    }

    pub fn c_sigma(&self, k: usize) -> f64 {
        self.c_sigma.get(k).copied().unwrap_or(0.0)
    }
}

fn check_overlaps(alpha_u: f64, alpha_v: f64) -> Result<()> {
    if !(alpha_u.abs() < 0.5 && alpha_v.abs() < 0.5) {
        return Err(Error::Domain {
            alpha_u,
            alpha_v,
            reason: "the series is only valid for |alpha| < 1/2",
        });
    }
    Ok(())
}

/// `sqrt((i + j)! / (i! j!))`, the weight of `h_i(u.x) h_j(v.x)` in the
/// expansion of `h_{i+j}(w.x)` along the `(u, v)` plane.
pub fn multinomial_weight(i: usize, j: usize) -> f64 {
    sqrt_factorial(i + j) / (sqrt_factorial(i) * sqrt_factorial(j))
}

/// `l(alpha_u, alpha_v) = 1 + c^sigma_0 / 2 - 1/2 sum_{i+j<=K} w_ij c^L_ij c^sigma_{i+j} alpha_u^i alpha_v^j`
/// with `w_ij` the [`multinomial_weight`] of the normalized basis.
pub fn population_loss(series: &HermiteSeries, alpha_u: f64, alpha_v: f64) -> Result<f64> {
    check_overlaps(alpha_u, alpha_v)?;
    let k = series.truncation;
    let mut acc = 0.0;
    let mut pu = 1.0;
    for i in 0..=k {
        let mut pv = 1.0;
        for j in 0..=k - i {
            acc += multinomial_weight(i, j) * series.c_l[i][j] * series.c_sigma[i + j] * pu * pv;
            pv *= alpha_v;
        }
        pu *= alpha_u;
    }
    Ok(1.0 + 0.5 * (series.c_sigma[0] - acc))
}

/// Term-wise derivative of [`population_loss`]: `(dl/dalpha_u, dl/dalpha_v)`.
pub fn population_gradient(
    series: &HermiteSeries,
    alpha_u: f64,
    alpha_v: f64,
) -> Result<(f64, f64)> {
    check_overlaps(alpha_u, alpha_v)?;
    let k = series.truncation;
    let pow = |x: f64, n: usize| x.powi(n as i32);
    let (mut gu, mut gv) = (0.0, 0.0);
    for i in 0..=k {
        for j in 0..=k - i {
            let c = multinomial_weight(i, j) * series.c_l[i][j] * series.c_sigma[i + j];
            if c == 0.0 {
                continue;
            }
            if i > 0 {
                gu += c * i as f64 * pow(alpha_u, i - 1) * pow(alpha_v, j);
            }
            if j > 0 {
                gv += c * j as f64 * pow(alpha_u, i) * pow(alpha_v, j - 1);
            }
        }
    }
    Ok((-0.5 * gu, -0.5 * gv))
}

/// Coefficients of the search-phase normal form
/// `l = const - (c20 alpha_u^2 + c11 alpha_u alpha_v + c04 alpha_v^4)`.
pub fn effective_search_coeffs(series: &HermiteSeries) -> Result<SearchOdeCoeffs> {
    if series.truncation < 4 {
        return Err(Error::param("search coefficients need truncation >= 4"));
    }
    let c2 = series.c_sigma[2];
    let c4 = series.c_sigma[4];
    if c2 <= 0.0 || c4 >= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "need c^sigma_2 > 0 and c^sigma_4 < 0, got {c2:.4e} and {c4:.4e}"
        )));
    }
    let coeffs = SearchOdeCoeffs {
        c20: 0.5 * series.c_l(2, 0) * c2,
        c11: 0.5 * multinomial_weight(1, 1) * series.c_l(1, 1) * c2,
        c04: 0.5 * series.c_l(0, 4) * c4,
    };
    if coeffs.c20 < 0.0 || coeffs.c04 < 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "negative search coefficients c20 = {:.4e}, c04 = {:.4e}",
            coeffs.c20, coeffs.c04
        )));
    }
    Ok(coeffs)
}

#[cfg(test)]
mod tests;
