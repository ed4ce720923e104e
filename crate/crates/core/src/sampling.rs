//! Seedable random primitives: Gaussian vectors, Rademacher signs, uniform
//! directions on the sphere and coupled latent-variable pairs.
//!
//! Every handle is a ChaCha8 stream. Handles derived with
//! [`RngHandle::derive`] share the 256-bit key of their master seed and differ
//! in the 64-bit stream id, so their outputs never overlap (each stream has
//! 2^64 blocks).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sqrt(2 / pi)`, the mean of `|z|` for a standard normal `z`.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// What a derived stream is used for. Part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Spikes = 1,
    Init = 2,
    Data = 3,
    TestSet = 4,
    MonteCarlo = 5,
    Diagnostics = 6,
}

/// Single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream for `(run, purpose)` under master `seed`.
    pub fn derive(seed: u64, run: u32, purpose: Purpose) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((run as u64) << 8) | purpose as u64);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.inner.sample(StandardNormal);
        }
    }

    pub fn gaussian_vec(&mut self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        self.fill_gaussian(&mut v);
        v
    }

    #[inline]
    pub fn rademacher(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `n` child handles seeded from this stream, for parallel fan-out.
    pub fn split(&mut self, n: usize) -> Vec<RngHandle> {
        (0..n)
            .map(|_| RngHandle::new(self.inner.random::<u64>()))
            .collect()
    }
}

/// Joint law of the latent pair `(lambda, nu)` attached to a planted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LatentCoupling {
    /// `lambda ~ N(0,1)` and `nu ~ Rademacher(1/2)` independent.
    #[default]
    Independent,
    /// `nu = sign(lambda)`.
    SignMatched,
    /// `nu = sign(lambda)` with probability `q`, otherwise an independent sign.
    PartialSign { q: f64 },
}

impl LatentCoupling {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LatentCoupling::PartialSign { q } if !(0.0..=1.0).contains(&q) => Err(Error::param(
                format!("partial-sign coupling probability {q} outside [0, 1]"),
            )),
            _ => Ok(()),
        }
    }

    /// Probability that `nu` is tied to the sign of `lambda`.
    pub fn sign_probability(&self) -> f64 {
        match *self {
            LatentCoupling::Independent => 0.0,
            LatentCoupling::SignMatched => 1.0,
            LatentCoupling::PartialSign { q } => q,
        }
    }

    /// Population correlation `E[lambda * nu]`.
    pub fn correlation(&self) -> f64 {
        self.sign_probability() * SQRT_2_OVER_PI
    }
}

/// Uniform draw from the unit sphere in `R^d`.
pub fn sample_unit_sphere(d: usize, rng: &mut RngHandle) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    loop {
        let mut w = rng.gaussian_vec(d);
        let n = crate::vecops::normalize(&mut w);
        if n > 1e-300 {
            return Ok(w);
        }
    }
}

pub fn sample_latent_pair(coupling: LatentCoupling, rng: &mut RngHandle) -> Result<(f64, f64)> {
    coupling.validate()?;
    Ok(draw_latents(coupling, rng))
}

/// Unchecked version of [`sample_latent_pair`] for hot loops.
#[inline]
pub(crate) fn draw_latents(coupling: LatentCoupling, rng: &mut RngHandle) -> (f64, f64) {
    let lambda = rng.gaussian();
    let tied = match coupling {
        LatentCoupling::Independent => false,
        LatentCoupling::SignMatched => true,
        LatentCoupling::PartialSign { q } => rng.uniform() < q,
    };
    let nu = if tied {
        if lambda >= 0.0 {
            1.0
        } else {
            -1.0
        }
    } else {
        rng.rademacher()
    };
    (lambda, nu)
}
