//! Labeled samples from the mixed-cumulant model and its censored,
//! single-spike and Gaussian-equivalent variants.
//!
//! A planted input (`y = +1`) is
//! `x = beta_m m + sqrt(beta_u) lambda u + S (sqrt(beta_v) nu v + z)` with the
//! rank-one whitening `S = 1 - c vv^T`, `c = beta_v / (1 + beta_v + sqrt(1 + beta_v))`.
//! Inputs with `y = -1` are standard Gaussian. All operations are O(d) per
//! sample; no d x d matrix is ever formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{draw_latents, sample_unit_sphere, LatentCoupling, RngHandle};
use crate::vecops::{axpy, dot, norm, normalize, orthogonalize_against};

const UNIT_TOL: f64 = 1e-10;

/// The hidden directions of the mean, covariance and cumulant spikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSet {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub overlap_uv: f64,
}

impl SpikeSet {
    /// Three mutually orthogonal uniformly random unit vectors.
    pub fn orthogonal(d: usize, rng: &mut RngHandle) -> Result<Self> {
        Self::with_overlap(d, 0.0, rng)
    }

    /// Random spikes with `u . v = rho`; `m` is orthogonal to both.
    pub fn with_overlap(d: usize, rho: f64, rng: &mut RngHandle) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidDimension(d));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::param(format!("spike overlap {rho} outside [-1, 1]")));
        }
        let u = sample_unit_sphere(d, rng)?;
        let e = orthogonal_draw(d, &[&u], rng);
        let mut v = u.clone();
        crate::vecops::scale(rho, &mut v);
        axpy((1.0 - rho * rho).max(0.0).sqrt(), &e, &mut v);
        normalize(&mut v);
        let m = orthogonal_draw(d, &[&u, &e], rng);
        let overlap_uv = dot(&u, &v);
        Ok(Self {
            m,
            u,
            v,
            overlap_uv,
        })
    }

    pub fn from_vectors(m: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let d = m.len();
        if d == 0 || u.len() != d || v.len() != d {
            return Err(Error::param(
                "spike vectors must share a non-zero dimension",
            ));
        }
        for (name, s) in [("m", &m), ("u", &u), ("v", &v)] {
            if (norm(s) - 1.0).abs() > UNIT_TOL {
                return Err(Error::param(format!("spike {name} is not a unit vector")));
            }
        }
        let overlap_uv = dot(&u, &v);
        Ok(Self {
            m,
            u,
            v,
            overlap_uv,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn is_orthogonal(&self) -> bool {
        dot(&self.m, &self.u).abs() < UNIT_TOL
            && dot(&self.m, &self.v).abs() < UNIT_TOL
            && self.overlap_uv.abs() < UNIT_TOL
    }
}

fn orthogonal_draw(d: usize, basis: &[&[f64]], rng: &mut RngHandle) -> Vec<f64> {
    loop {
        let mut x = rng.gaussian_vec(d);
        // twice for numerical orthogonality
        orthogonalize_against(&mut x, basis);
        orthogonalize_against(&mut x, basis);
        if normalize(&mut x) > 1e-6 {
            return x;
        }
    }
}

/// Signal-to-noise ratios, latent coupling and dimension of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmParams {
    pub d: usize,
    pub beta_m: f64,
    pub beta_u: f64,
    pub beta_v: f64,
    #[serde(default)]
    pub coupling: LatentCoupling,
}

impl McmParams {
    pub fn new(d: usize, beta_m: f64, beta_u: f64, beta_v: f64, coupling: LatentCoupling) -> Self {
        Self {
            d,
            beta_m,
            beta_u,
            beta_v,
            coupling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidDimension(self.d));
        }
        for (name, b) in [
            ("beta_m", self.beta_m),
            ("beta_u", self.beta_u),
            ("beta_v", self.beta_v),
        ] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::param(format!(
                    "{name} = {b} must be finite and >= 0"
                )));
            }
        }
        self.coupling.validate()
    }

    /// Cross-covariance coefficient `sqrt(beta_u beta_v / (1 + beta_v)) E[lambda nu]`.
    pub fn cross_covariance(&self) -> f64 {
        (self.beta_u * self.beta_v / (1.0 + self.beta_v)).sqrt() * self.coupling.correlation()
    }

    /// Parameters of a censored test distribution.
    pub fn censored(&self, mode: CensorMode) -> Self {
        let mut p = *self;
        match mode {
            CensorMode::MeanOnly => {
                p.beta_u = 0.0;
                p.beta_v = 0.0;
            }
            CensorMode::MeanCov => p.beta_v = 0.0,
            CensorMode::Full | CensorMode::GaussianEquivalent => {}
        }
        p
    }
}

/// Which single spike a one-direction dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleSpike {
    CovarianceOnly,
    CumulantOnly,
}

impl SingleSpike {
    pub fn params(self, d: usize, beta: f64) -> McmParams {
        match self {
            SingleSpike::CovarianceOnly => {
                McmParams::new(d, 0.0, beta, 0.0, LatentCoupling::Independent)
            }
            SingleSpike::CumulantOnly => {
                McmParams::new(d, 0.0, 0.0, beta, LatentCoupling::Independent)
            }
        }
    }
}

/// One labeled input.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
    /// `(lambda, nu)`; only for planted samples drawn with retention on.
    pub latents: Option<(f64, f64)>,
}

/// Test-time distribution for the planted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorMode {
    Full,
    MeanOnly,
    MeanCov,
    GaussianEquivalent,
}

impl CensorMode {
    pub const ALL: [CensorMode; 4] = [
        CensorMode::Full,
        CensorMode::MeanOnly,
        CensorMode::MeanCov,
        CensorMode::GaussianEquivalent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CensorMode::Full => "full",
            CensorMode::MeanOnly => "mean_only",
            CensorMode::MeanCov => "mean_cov",
            CensorMode::GaussianEquivalent => "gauss_equiv",
        }
    }
}

/// Coefficient `c` of the whitening `S = 1 - c vv^T`.
pub fn whitening_coefficient(beta_v: f64) -> f64 {
    beta_v / (1.0 + beta_v + (1.0 + beta_v).sqrt())
}

/// Returns `S x` for the whitening matrix of `beta_v` along unit `v`.
pub fn whitening_apply(beta_v: f64, v: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if !(beta_v >= 0.0) {
        return Err(Error::param(format!("beta_v = {beta_v} must be >= 0")));
    }
    if v.len() != x.len() {
        return Err(Error::param("whitening: dimension mismatch"));
    }
    let mut out = x.to_vec();
    let c = whitening_coefficient(beta_v);
    axpy(-c * dot(v, x), v, &mut out);
    Ok(out)
}

/// Covariance of planted inputs in factored form
/// `1 + B K B^T` with `B = [u v]` and `K = [[beta_u, kappa], [kappa, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCovariance {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub beta_u: f64,
    pub cross: f64,
}

impl PlantedCovariance {
    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// `C x` in O(d).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let pu = dot(&self.u, x);
        let pv = dot(&self.v, x);
        let mut out = x.to_vec();
        axpy(self.beta_u * pu + self.cross * pv, &self.u, &mut out);
        axpy(self.cross * pu, &self.v, &mut out);
        out
    }

    /// `a^T C b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.apply(b))
    }

    /// The 2x2 block of `C` in the `(u, v)` basis.
    pub fn block(&self) -> [[f64; 2]; 2] {
        [[1.0 + self.beta_u, self.cross], [self.cross, 1.0]]
    }

    /// Lower Cholesky factor of [`Self::block`].
    fn block_cholesky(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, c]] = self.block();
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (c - l21 * l21).sqrt();
        [[l11, 0.0], [l21, l22]]
    }

    /// Leading eigenvector by power iteration on the factored form.
    pub fn leading_eigenvector(&self, iters: usize) -> Vec<f64> {
        let mut x: Vec<f64> = self.u.iter().zip(&self.v).map(|(a, b)| a + b).collect();
        normalize(&mut x);
        for _ in 0..iters {
            x = self.apply(&x);
            normalize(&mut x);
        }
        x
    }

    /// Overwrites `z` (a standard normal draw) with a `N(0, C)` draw.
    pub(crate) fn transform_standard(&self, z: &mut [f64]) {
        let gu = dot(&self.u, z);
        let gv = dot(&self.v, z);
        let l = self.block_cholesky();
        let nu = l[0][0] * gu;
        let nv = l[1][0] * gu + l[1][1] * gv;
        axpy(nu - gu, &self.u, z);
        axpy(nv - gv, &self.v, z);
    }
}

/// Covariance of planted inputs, `1 + beta_u uu^T + kappa (uv^T + vu^T)`.
pub fn planted_covariance(params: &McmParams, spikes: &SpikeSet) -> Result<PlantedCovariance> {
    params.validate()?;
    check_dims(params, spikes)?;
    if spikes.overlap_uv.abs() > UNIT_TOL {
        return Err(Error::param(
            "planted covariance needs orthogonal covariance and cumulant spikes",
        ));
    }
    Ok(PlantedCovariance {
        u: spikes.u.clone(),
        v: spikes.v.clone(),
        beta_u: params.beta_u,
        cross: params.cross_covariance(),
    })
}

fn check_dims(params: &McmParams, spikes: &SpikeSet) -> Result<()> {
    if spikes.dim() != params.d {
        return Err(Error::param(format!(
            "spike dimension {} does not match d = {}",
            spikes.dim(),
            params.d
        )));
    }
    Ok(())
}

/// Validated, allocation-free sampler for one (possibly censored) distribution.
#[derive(Debug, Clone)]
pub struct McmSampler {
    params: McmParams,
    spikes: SpikeSet,
    mode: CensorMode,
    whitening: f64,
    covariance: Option<PlantedCovariance>,
}

impl McmSampler {
    pub fn new(params: McmParams, spikes: SpikeSet, mode: CensorMode) -> Result<Self> {
        params.validate()?;
        check_dims(&params, &spikes)?;
        let effective = params.censored(mode);
        let covariance = match mode {
            CensorMode::GaussianEquivalent => Some(planted_covariance(&params, &spikes)?),
            _ => None,
        };
        Ok(Self {
            whitening: whitening_coefficient(effective.beta_v),
            params: effective,
            spikes,
            mode,
            covariance,
        })
    }

    pub fn params(&self) -> &McmParams {
        &self.params
    }

    pub fn spikes(&self) -> &SpikeSet {
        &self.spikes
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    /// Draws the label and writes the input into `x`. Returns `(y, latents)`,
    /// where latents are `Some` only for planted non-Gaussian-equivalent draws.
    #[inline]
    pub fn fill(&self, rng: &mut RngHandle, x: &mut [f64]) -> (f64, Option<(f64, f64)>) {
        let y = rng.rademacher();
        if y < 0.0 {
            rng.fill_gaussian(x);
            (y, None)
        } else {
            (y, self.fill_planted(rng, x))
        }
    }

    /// Writes a planted-class input into `x`.
    #[inline]
    pub fn fill_planted(&self, rng: &mut RngHandle, x: &mut [f64]) -> Option<(f64, f64)> {
        rng.fill_gaussian(x);
        let p = &self.params;
        let s = &self.spikes;
        if let Some(cov) = &self.covariance {
            cov.transform_standard(x);
            if p.beta_m > 0.0 {
                axpy(p.beta_m, &s.m, x);
            }
            return None;
        }
        let (lambda, nu) = draw_latents(p.coupling, rng);
        if p.beta_v > 0.0 {
            let a = p.beta_v.sqrt() * nu;
            // S(a v + z) = z + (a - c (a + v.z)) v
            let proj = a + dot(&s.v, x);
            axpy(a - self.whitening * proj, &s.v, x);
        }
        if p.beta_u > 0.0 {
            axpy(p.beta_u.sqrt() * lambda, &s.u, x);
        }
        if p.beta_m > 0.0 {
            axpy(p.beta_m, &s.m, x);
        }
        Some((lambda, nu))
    }

    pub fn sample(&self, rng: &mut RngHandle, keep_latents: bool) -> LabeledSample {
        let mut x = vec![0.0; self.params.d];
        let (y, latents) = self.fill(rng, &mut x);
        LabeledSample {
            x,
            y,
            latents: if keep_latents { latents } else { None },
        }
    }

    pub fn mode(&self) -> CensorMode {
        self.mode
    }
}

/// One draw from the full mixed-cumulant model.
pub fn sample_mcm(
    params: &McmParams,
    spikes: &SpikeSet,
    rng: &mut RngHandle,
    keep_latents: bool,
) -> Result<LabeledSample> {
    let sampler = McmSampler::new(*params, spikes.clone(), CensorMode::Full)?;
    Ok(sampler.sample(rng, keep_latents))
}

/// One draw from a censored variant of the model.
pub fn sample_censored(
    params: &McmParams,
    spikes: &SpikeSet,
    mode: CensorMode,
    rng: &mut RngHandle,
) -> Result<LabeledSample> {
    let sampler = McmSampler::new(*params, spikes.clone(), mode)?;
    Ok(sampler.sample(rng, false))
}

/// Endless stream of fresh samples.
pub struct SampleStream {
    sampler: McmSampler,
    rng: RngHandle,
    keep_latents: bool,
}

impl Iterator for SampleStream {
    type Item = LabeledSample;

    fn next(&mut self) -> Option<LabeledSample> {
        Some(self.sampler.sample(&mut self.rng, self.keep_latents))
    }
}

impl SampleStream {
    pub fn new(sampler: McmSampler, rng: RngHandle, keep_latents: bool) -> Self {
        Self {
            sampler,
            rng,
            keep_latents,
        }
    }
}

/// Stream of samples carrying a single spike with strength `beta`.
pub fn single_spike_dataset(
    kind: SingleSpike,
    beta: f64,
    spikes: &SpikeSet,
    rng: RngHandle,
) -> Result<SampleStream> {
    if !(beta > 0.0) {
        return Err(Error::param(format!(
            "single-spike beta = {beta} must be > 0"
        )));
    }
    let params = kind.params(spikes.dim(), beta);
    let sampler = McmSampler::new(params, spikes.clone(), CensorMode::Full)?;
    Ok(SampleStream::new(sampler, rng, false))
}

/// A cached, balanced evaluation set stored row-major.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub d: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl TestSet {
    /// `per_class` samples from each class, planted class drawn from `sampler`.
    pub fn balanced(sampler: &McmSampler, per_class: usize, rng: &mut RngHandle) -> Self {
        let d = sampler.dim();
        let n = 2 * per_class;
        let mut xs = vec![0.0; n * d];
        let mut ys = Vec::with_capacity(n);
        for (i, row) in xs.chunks_exact_mut(d).enumerate() {
            if i % 2 == 0 {
                sampler.fill_planted(rng, row);
                ys.push(1.0);
            } else {
                rng.fill_gaussian(row);
                ys.push(-1.0);
            }
        }
        Self { d, xs, ys }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.chunks_exact(self.d).zip(self.ys.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Purpose;

    fn spikes(d: usize, seed: u64) -> SpikeSet {
        SpikeSet::orthogonal(d, &mut RngHandle::derive(seed, 0, Purpose::Spikes)).unwrap()
    }

    fn dense_whitening(beta_v: f64, v: &[f64], x: &[f64]) -> Vec<f64> {
        let c = whitening_coefficient(beta_v);
        let d = v.len();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let s = if i == j { 1.0 } else { 0.0 } - c * v[i] * v[j];
                        s * x[j]
                    })
                    .sum()
            })
            .collect()
    }

    /// Planted-class projections onto a pair of directions.
    fn planted_projections(
        sampler: &McmSampler,
        a: &[f64],
        b: &[f64],
        n: usize,
        seed: u64,
    ) -> Vec<(f64, f64)> {
        let mut rng = RngHandle::new(seed);
        let mut x = vec![0.0; sampler.dim()];
        (0..n)
            .map(|_| {
                sampler.fill_planted(&mut rng, &mut x);
                (dot(a, &x), dot(b, &x))
            })
            .collect()
    }

    fn covariance(p: &[(f64, f64)]) -> (f64, f64, f64) {
        let n = p.len() as f64;
        let (ma, mb) = p.iter().fold((0.0, 0.0), |s, (a, b)| (s.0 + a, s.1 + b));
        let (ma, mb) = (ma / n, mb / n);
        let mut caa = 0.0;
        let mut cab = 0.0;
        let mut cbb = 0.0;
        for (a, b) in p {
            caa += (a - ma) * (a - ma);
            cab += (a - ma) * (b - mb);
            cbb += (b - mb) * (b - mb);
        }
        (caa / n, cab / n, cbb / n)
    }

    #[test]
    fn spike_constructions_hold_their_invariants() {
        let s = spikes(32, 1);
        assert!(s.is_orthogonal());
        for w in [&s.m, &s.u, &s.v] {
            assert!((norm(w) - 1.0).abs() < 1e-10);
        }
        let r = SpikeSet::with_overlap(32, 0.4, &mut RngHandle::new(5)).unwrap();
        assert!((dot(&r.u, &r.v) - 0.4).abs() < 1e-10);
        assert!((r.overlap_uv - 0.4).abs() < 1e-10);
        assert!(dot(&r.m, &r.u).abs() < 1e-10 && dot(&r.m, &r.v).abs() < 1e-10);
        assert!(SpikeSet::orthogonal(2, &mut RngHandle::new(0)).is_err());
    }

    #[test]
    fn whitening_examples() {
        let s = spikes(8, 2);
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        assert_eq!(whitening_apply(0.0, &s.v, &x).unwrap(), x);

        let mut perp = x.clone();
        orthogonalize_against(&mut perp, &[&s.v]);
        let out = whitening_apply(5.0, &s.v, &perp).unwrap();
        for (a, b) in out.iter().zip(&perp) {
            assert!((a - b).abs() < 1e-12);
        }

        let out = whitening_apply(3.0, &s.v, &s.v).unwrap();
        let dense = dense_whitening(3.0, &s.v, &s.v);
        for ((o, dn), v) in out.iter().zip(&dense).zip(&s.v) {
            assert!((o - v / 2.0).abs() < 1e-12);
            assert!((o - dn).abs() < 1e-12);
        }
        assert!(whitening_apply(-1.0, &s.v, &x).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = spikes(16, 3);
        let p = McmParams::new(32, 0.0, 1.0, 1.0, LatentCoupling::Independent);
        assert!(sample_mcm(&p, &s, &mut RngHandle::new(0), false).is_err());
    }

    #[test]
    fn signal_free_classes_share_the_standard_gaussian() {
        let d = 16;
        let s = spikes(d, 4);
        let p = McmParams::new(d, 0.0, 0.0, 0.0, LatentCoupling::SignMatched);
        let sampler = McmSampler::new(p, s, CensorMode::Full).unwrap();
        let mut rng = RngHandle::new(8);
        let n = 40_000;
        let mut means = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [0usize; 2];
        let mut x = vec![0.0; d];
        for _ in 0..n {
            let (y, _) = sampler.fill(&mut rng, &mut x);
            let k = usize::from(y > 0.0);
            counts[k] += 1;
            axpy(1.0, &x, &mut means[k]);
        }
        let balance = counts[1] as f64 / n as f64 - 0.5;
        assert!(balance.abs() < 3.0 / (4.0 * n as f64).sqrt());
        for i in 0..d {
            let diff = means[1][i] / counts[1] as f64 - means[0][i] / counts[0] as f64;
            // 5 standard errors of a difference of two means with n/2 samples each
            assert!(
                diff.abs() < 5.0 * (4.0 / n as f64).sqrt(),
                "coord {i}: {diff}"
            );
        }
    }

    #[test]
    fn whitening_makes_cumulant_direction_unit_variance() {
        let d = 32;
        let s = spikes(d, 5);
        let p = McmParams::new(d, 0.0, 0.0, 10.0, LatentCoupling::Independent);
        let sampler = McmSampler::new(p, s.clone(), CensorMode::Full).unwrap();
        let proj = planted_projections(&sampler, &s.v, &s.v, 200_000, 9);
        let (cvv, _, _) = covariance(&proj);
        assert!((cvv - 1.0).abs() < 0.03, "{cvv}");
    }

    #[test]
    fn whitening_invariant_identity_planted_covariance() {
        let d = 8;
        let s = spikes(d, 6);
        let p = McmParams::new(d, 0.0, 0.0, 4.0, LatentCoupling::Independent);
        let sampler = McmSampler::new(p, s, CensorMode::Full).unwrap();
        let n = 100_000;
        let mut rng = RngHandle::new(10);
        let mut x = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        let mut first = vec![0.0; d];
        for _ in 0..n {
            sampler.fill_planted(&mut rng, &mut x);
            axpy(1.0, &x, &mut first);
            for i in 0..d {
                for j in 0..d {
                    second[i * d + j] += x[i] * x[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..d {
            for j in 0..d {
                let c = second[i * d + j] / nf - first[i] * first[j] / (nf * nf);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 5.0 / nf.sqrt(), "C[{i}][{j}] = {c}");
            }
        }
    }

    #[test]
    fn cross_covariance_under_sign_matched_latents() {
        // oracle value sqrt(50/11) * sqrt(2/pi) = 1.70116...
        let d = 64;
        let s = spikes(d, 7);
        let p = McmParams::new(d, 0.0, 5.0, 10.0, LatentCoupling::SignMatched);
        let expected = (50.0f64 / 11.0).sqrt() * crate::sampling::SQRT_2_OVER_PI;
        assert!((p.cross_covariance() - expected).abs() < 1e-12);
        let sampler = McmSampler::new(p, s.clone(), CensorMode::Full).unwrap();
        let proj = planted_projections(&sampler, &s.u, &s.v, 500_000, 11);
        let (cuu, cuv, cvv) = covariance(&proj);
        assert!((cuv - 1.7012).abs() < 0.02, "{cuv}");
        assert!((cuu - 6.0).abs() < 0.05, "{cuu}");
        assert!((cvv - 1.0).abs() < 0.02, "{cvv}");
    }

    #[test]
    fn planted_covariance_closed_forms() {
        let d = 32;
        let s = spikes(d, 8);
        let indep = McmParams::new(d, 0.0, 5.0, 10.0, LatentCoupling::Independent);
        let c = planted_covariance(&indep, &s).unwrap();
        assert_eq!(c.cross, 0.0);
        assert!((c.bilinear(&s.u, &s.u) - 6.0).abs() < 1e-12);
        assert!(c.bilinear(&s.u, &s.v).abs() < 1e-12);
        assert!((c.bilinear(&s.m, &s.m) - 1.0).abs() < 1e-12);

        let none = McmParams::new(d, 0.0, 0.0, 10.0, LatentCoupling::SignMatched);
        let c = planted_covariance(&none, &s).unwrap();
        assert!(c.bilinear(&s.u, &s.v).abs() < 1e-12);
        assert!((c.bilinear(&s.u, &s.u) - 1.0).abs() < 1e-12);

        let overlapping = SpikeSet::with_overlap(d, 0.3, &mut RngHandle::new(1)).unwrap();
        assert!(planted_covariance(&indep, &overlapping).is_err());
    }

    #[test]
    fn sign_matched_cross_coefficient_matches_monte_carlo() {
        let d = 32;
        let s = spikes(d, 12);
        let p = McmParams::new(d, 0.0, 5.0, 10.0, LatentCoupling::SignMatched);
        let c = planted_covariance(&p, &s).unwrap();
        let expected = (50.0f64 / 11.0).sqrt() * (2.0 / std::f64::consts::PI).sqrt();
        assert!((c.cross - expected).abs() < 1e-12);
        let sampler = McmSampler::new(p, s.clone(), CensorMode::Full).unwrap();
        let (_, cuv, _) = covariance(&planted_projections(&sampler, &s.u, &s.v, 1_000_000, 3));
        assert!((cuv - expected).abs() < 0.02);
        // Gaussian-equivalent draws reproduce the same second moments.
        let ge = McmSampler::new(p, s.clone(), CensorMode::GaussianEquivalent).unwrap();
        let (guu, guv, gvv) = covariance(&planted_projections(&ge, &s.u, &s.v, 1_000_000, 4));
        assert!((guu - 6.0).abs() < 0.05 && (guv - expected).abs() < 0.02);
        assert!((gvv - 1.0).abs() < 0.02);
    }

    #[test]
    fn leading_eigenvector_touches_both_spikes() {
        let d = 32;
        let s = spikes(d, 13);
        let p = McmParams::new(d, 0.0, 5.0, 10.0, LatentCoupling::SignMatched);
        let c = planted_covariance(&p, &s).unwrap();
        let e = c.leading_eigenvector(200);
        assert!(dot(&e, &s.u) > 0.0 && dot(&e, &s.v) > 0.0);
    }

    #[test]
    fn censored_modes() {
        let d = 32;
        let s = spikes(d, 14);
        let p = McmParams::new(d, 1.0, 5.0, 10.0, LatentCoupling::Independent);
        // Full is the model itself: same stream, same draws.
        let full = sample_censored(&p, &s, CensorMode::Full, &mut RngHandle::new(1)).unwrap();
        let direct = sample_mcm(&p, &s, &mut RngHandle::new(1), false).unwrap();
        assert_eq!(full, direct);

        let mean_only = McmSampler::new(p, s.clone(), CensorMode::MeanOnly).unwrap();
        let proj = planted_projections(&mean_only, &s.m, &s.u, 200_000, 2);
        let n = proj.len() as f64;
        let mean_m = proj.iter().map(|p| p.0).sum::<f64>() / n;
        let (cmm, cmu, cuu) = covariance(&proj);
        assert!((mean_m - 1.0).abs() < 0.01);
        assert!((cmm - 1.0).abs() < 0.02 && cmu.abs() < 0.02 && (cuu - 1.0).abs() < 0.02);
    }

    #[test]
    fn gaussian_equivalent_has_no_excess_kurtosis_along_v() {
        let d = 16;
        let s = spikes(d, 15);
        let p = McmParams::new(d, 0.0, 0.0, 10.0, LatentCoupling::Independent);
        let ge = McmSampler::new(p, s.clone(), CensorMode::GaussianEquivalent).unwrap();
        let proj = planted_projections(&ge, &s.v, &s.v, 1_000_000, 6);
        let n = proj.len() as f64;
        let m2 = proj.iter().map(|p| p.0 * p.0).sum::<f64>() / n;
        let m4 = proj.iter().map(|p| p.0.powi(4)).sum::<f64>() / n;
        assert!((m4 - 3.0 * m2 * m2).abs() < 0.05, "{}", m4 - 3.0 * m2 * m2);
    }

    #[test]
    fn single_spike_streams() {
        let d = 32;
        let s = spikes(d, 16);
        let stream =
            single_spike_dataset(SingleSpike::CovarianceOnly, 5.0, &s, RngHandle::new(2)).unwrap();
        let planted: Vec<(f64, f64)> = stream
            .filter(|x| x.y > 0.0)
            .take(1_000_000)
            .map(|x| (dot(&x.x, &s.u), 0.0))
            .collect();
        let (cuu, _, _) = covariance(&planted);
        assert!((cuu - 6.0).abs() < 0.05, "{cuu}");

        let stream =
            single_spike_dataset(SingleSpike::CumulantOnly, 10.0, &s, RngHandle::new(3)).unwrap();
        let proj: Vec<f64> = stream
            .filter(|x| x.y > 0.0)
            .take(1_000_000)
            .map(|x| dot(&x.x, &s.v))
            .collect();
        let n = proj.len() as f64;
        let m2 = proj.iter().map(|p| p * p).sum::<f64>() / n;
        let m4 = proj.iter().map(|p| p.powi(4)).sum::<f64>() / n;
        let k4 = m4 - 3.0 * m2 * m2;
        // -2 (10/11)^2 = -1.6529
        assert!((k4 + 1.6529).abs() < 0.05, "{k4}");

        assert!(
            single_spike_dataset(SingleSpike::CumulantOnly, 0.0, &s, RngHandle::new(3)).is_err()
        );
    }

    #[test]
    fn latents_only_on_planted_samples_when_requested() {
        let d = 8;
        let s = spikes(d, 17);
        let p = McmParams::new(d, 0.0, 1.0, 1.0, LatentCoupling::SignMatched);
        let mut rng = RngHandle::new(1);
        for _ in 0..200 {
            let x = sample_mcm(&p, &s, &mut rng, true).unwrap();
            assert_eq!(x.latents.is_some(), x.y > 0.0);
            let x = sample_mcm(&p, &s, &mut rng, false).unwrap();
            assert!(x.latents.is_none());
        }
    }
}
