use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// A user-supplied scalar function.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Activation functions for the perceptron and the two-layer network.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `softplus(tau z) / tau`; tends to ReLU as `tau` grows.
    SmoothedRelu {
        tau: f64,
    },
    /// `sum_k coeffs[k] z^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    #[serde(skip)]
    Custom {
        value: ScalarFn,
        derivative: Option<ScalarFn>,
        /// Points where the function is not smooth; used to split quadrature.
        kinks: Vec<f64>,
    },
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "Relu"),
            Activation::SmoothedRelu { tau } => write!(f, "SmoothedRelu({tau})"),
            Activation::Polynomial { coeffs } => write!(f, "Polynomial({coeffs:?})"),
            Activation::Custom { kinks, .. } => write!(f, "Custom(kinks = {kinks:?})"),
        }
    }
}

impl Activation {
    pub fn identity() -> Self {
        Activation::Polynomial {
            coeffs: vec![0.0, 1.0],
        }
    }

    /// The orthonormal Hermite polynomial `h_k` as an activation.
    pub fn hermite(k: usize) -> Self {
        Activation::Polynomial {
            coeffs: super::normalized_monomial_coeffs(k),
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::SmoothedRelu { tau } => softplus(tau * z) / tau,
            Activation::Polynomial { coeffs } => horner(coeffs, z),
            Activation::Custom { value, .. } => value(z),
        }
    }

    /// Derivative; ReLU uses `1[z > 0]`. Custom functions without a supplied
    /// derivative fall back to a central difference.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothedRelu { tau } => sigmoid(tau * z),
            Activation::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * z + k as f64 * c;
                }
                acc
            }
            Activation::Custom {
                value, derivative, ..
            } => match derivative {
                Some(d) => d(z),
                None => {
                    let h = 1e-6 * z.abs().max(1.0);
                    (value(z + h) - value(z - h)) / (2.0 * h)
                }
            },
        }
    }

    pub fn has_derivative(&self) -> bool {
        !matches!(
            self,
            Activation::Custom {
                derivative: None,
                ..
            }
        )
    }

    pub(crate) fn kinks(&self) -> &[f64] {
        match self {
            Activation::Relu => &[0.0],
            Activation::Custom { kinks, .. } => kinks,
            _ => &[],
        }
    }

    pub(crate) fn is_polynomial(&self) -> bool {
        matches!(self, Activation::Polynomial { .. })
    }
}

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
