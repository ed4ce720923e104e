//! Independent Monte-Carlo oracles: population loss at prescribed overlaps,
//! directional cumulants, and checks on the student activation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{activation_coeffs, Activation};
use crate::mcm::{CensorMode, McmParams, McmSampler, SpikeSet};
use crate::perceptron::PerceptronState;
use crate::sampling::{sample_unit_sphere, RngHandle};
use crate::vecops::dot;

const MC_CHUNKS: usize = 64;

/// Monte-Carlo estimate of `E[1 - y sigma(w.x)]` at a unit `w` with the given
/// overlaps, from full `d`-dimensional draws. Returns `(estimate, std_error)`.
pub fn mc_population_loss(
    params: &McmParams,
    spikes: &SpikeSet,
    sigma: &Activation,
    alpha_u: f64,
    alpha_v: f64,
    n_mc: usize,
    rng: &mut RngHandle,
) -> Result<(f64, f64)> {
    if alpha_u * alpha_u + alpha_v * alpha_v > 1.0 {
        return Err(Error::Domain {
            alpha_u,
            alpha_v,
            reason: "overlaps must satisfy alpha_u^2 + alpha_v^2 <= 1",
        });
    }
    if n_mc < 2 {
        return Err(Error::InsufficientSamples { got: n_mc, need: 2 });
    }
    let w = PerceptronState::with_overlaps(spikes, alpha_u, alpha_v, rng)?.w;
    let sampler = McmSampler::new(*params, spikes.clone(), CensorMode::Full)?;
    let streams = rng.split(MC_CHUNKS);
    let per = n_mc.div_ceil(MC_CHUNKS);
    let sums: Vec<(f64, f64, usize)> = streams
        .into_par_iter()
        .enumerate()
        .map(|(c, mut r)| {
            let count = per.min(n_mc.saturating_sub(c * per));
            let mut x = vec![0.0; params.d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (y, _) = sampler.fill(&mut r, &mut x);
                let l = 1.0 - y * sigma.eval(dot(&w, &x));
                s1 += l;
                s2 += l * l;
            }
            (s1, s2, count)
        })
        .collect();
    let (s1, s2, n) = sums
        .iter()
        .fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = n as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    Ok((mean, (var.max(0.0) / n).sqrt()))
}

/// Cumulant estimate along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub direction: Vec<f64>,
    pub order: usize,
    pub estimate: f64,
    /// Batch-means standard error.
    pub std_error: f64,
    pub n: usize,
}

pub const MIN_CUMULANT_SAMPLES: usize = 10_000;
const CUMULANT_BATCHES: usize = 50;

/// Unbiased k-statistic of order `k` in `2..=4`.
pub fn k_statistic(values: &[f64], k: usize) -> Result<f64> {
    let n = values.len() as f64;
    if values.len() <= k {
        return Err(Error::InsufficientSamples {
            got: values.len(),
            need: k + 1,
        });
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for &v in values {
        let c = v - mean;
        let c2 = c * c;
        s2 += c2;
        s3 += c2 * c;
        s4 += c2 * c2;
    }
    // power sums of centered data, so S1 = 0
    Ok(match k {
        2 => s2 / (n - 1.0),
        3 => n * s3 / ((n - 1.0) * (n - 2.0)),
        4 => (n * (n + 1.0) * s4 - 3.0 * (n - 1.0) * s2 * s2) / ((n - 1.0) * (n - 2.0) * (n - 3.0)),
        _ => {
            return Err(Error::param(format!(
                "cumulant order must be 2, 3 or 4, got {k}"
            )))
        }
    })
}

/// k-statistic of the projections `x.direction` of row-major `samples`.
pub fn directional_cumulant(samples: &[f64], direction: &[f64], k: usize) -> Result<MomentReport> {
    if !(2..=4).contains(&k) {
        return Err(Error::param(format!(
            "cumulant order must be 2, 3 or 4, got {k}"
        )));
    }
    let d = direction.len();
    if d == 0 || !samples.len().is_multiple_of(d) {
        return Err(Error::InvalidDimension(d));
    }
    let proj: Vec<f64> = samples.chunks_exact(d).map(|x| dot(x, direction)).collect();
    projected_cumulant(&proj, direction.to_vec(), k)
}

/// As [`directional_cumulant`] on already projected values.
pub fn projected_cumulant(proj: &[f64], direction: Vec<f64>, k: usize) -> Result<MomentReport> {
    let n = proj.len();
    if n < MIN_CUMULANT_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: n,
            need: MIN_CUMULANT_SAMPLES,
        });
    }
    let estimate = k_statistic(proj, k)?;
    let size = n / CUMULANT_BATCHES;
    let batch: Vec<f64> = proj
        .chunks_exact(size)
        .take(CUMULANT_BATCHES)
        .map(|b| k_statistic(b, k))
        .collect::<Result<_>>()?;
    let b = batch.len() as f64;
    let mean = batch.iter().sum::<f64>() / b;
    let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0);
    // each batch holds 1/b of the data, so the full-sample variance is var / b
    Ok(MomentReport {
        direction,
        order: k,
        estimate,
        std_error: (var / b).sqrt(),
        n,
    })
}

/// Outcome of the activation and sample-wise error checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub c2: f64,
    pub c4: f64,
    pub c2_positive: bool,
    pub c4_negative: bool,
    /// Maximum over the probed directions of `E[sigma'(w.x)^4]`.
    pub max_derivative_moment_4: f64,
    /// Maximum over the probed directions of `E[|sigma'(w.x)|^(8 + iota)]`.
    pub max_derivative_moment_8: f64,
    pub iota: f64,
    /// Number of random unit `w` probed. The maxima under-approximate the
    /// supremum over the sphere.
    pub directions: usize,
    pub samples_per_direction: usize,
    /// `sum_{k <= K} k |c^sigma_k|` for `K = 0, 1, ...`.
    pub weighted_partial_sums: Vec<f64>,
    pub passed: bool,
}

pub fn assumption_check(
    sigma: &Activation,
    params: &McmParams,
    max_degree: usize,
    rng: &mut RngHandle,
) -> Result<AssumptionReport> {
    const DIRECTIONS: usize = 100;
    const SAMPLES: usize = 2_000;
    const IOTA: f64 = 0.5;
    let coeffs = activation_coeffs(sigma, max_degree.max(4))?;
    let (c2, c4) = (coeffs[2], coeffs[4]);
    let mut partial = Vec::with_capacity(coeffs.len());
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        acc += k as f64 * c.abs();
        partial.push(acc);
    }
    let spikes = SpikeSet::orthogonal(params.d, rng)?;
    let sampler = McmSampler::new(*params, spikes, CensorMode::Full)?;
    let streams = rng.split(DIRECTIONS);
    let moments: Vec<(f64, f64)> = streams
        .into_par_iter()
        .map(|mut r| {
            let w = sample_unit_sphere(params.d, &mut r).expect("d >= 1");
            let mut x = vec![0.0; params.d];
            let (mut m4, mut m8) = (0.0, 0.0);
            for _ in 0..SAMPLES {
                sampler.fill(&mut r, &mut x);
                let g = sigma.derivative(dot(&w, &x)).abs();
                m4 += g.powi(4);
                m8 += g.powf(8.0 + IOTA);
            }
            (m4 / SAMPLES as f64, m8 / SAMPLES as f64)
        })
        .collect();
    let max4 = moments.iter().map(|m| m.0).fold(0.0, f64::max);
    let max8 = moments.iter().map(|m| m.1).fold(0.0, f64::max);
    let c2_positive = c2 > 1e-12;
    let c4_negative = c4 < -1e-12;
    Ok(AssumptionReport {
        c2,
        c4,
        c2_positive,
        c4_negative,
        max_derivative_moment_4: max4,
        max_derivative_moment_8: max8,
        iota: IOTA,
        directions: DIRECTIONS,
        samples_per_direction: SAMPLES,
        weighted_partial_sums: partial,
        passed: c2_positive && c4_negative && max4.is_finite() && max8.is_finite(),
    })
}
