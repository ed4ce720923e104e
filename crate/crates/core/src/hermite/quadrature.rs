//! Gauss-Hermite and Gauss-Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights integrating against the standard normal density.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule; exact for polynomials of degree `2n - 1`.
    ///
    /// Nodes are the eigenvalues of the Jacobi matrix of the probabilists'
    /// recurrence, located by Sturm-sequence bisection; weights come from the
    /// Christoffel function `1 / sum_k h_k(x)^2`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let lim = 2.0 * (n as f64).sqrt() + 1.0;
        let below = |x: f64| -> usize {
            let mut q = -x;
            let mut count = usize::from(q < 0.0);
            for k in 1..n {
                if q == 0.0 {
                    q = f64::MIN_POSITIVE;
                }
                q = -x - k as f64 / q;
                count += usize::from(q < 0.0);
            }
            count
        };
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in n / 2..n {
            let (mut lo, mut hi) = (-lim, lim);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if below(mid) > i {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let x = if n % 2 == 1 && i == n / 2 {
                0.0
            } else {
                0.5 * (lo + hi)
            };
            let w = christoffel(n, x);
            nodes[i] = x;
            weights[i] = w;
            nodes[n - 1 - i] = -x;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// `E[f(z)]` for `z ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// `1 / sum_{k<n} h_k(x)^2` for the orthonormal probabilists' polynomials,
/// rescaling on the fly to stay in range.
fn christoffel(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 1.0;
    let mut log_scale = 0.0;
    for k in 0..n - 1 {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
        if sum > 1e200 {
            let f = 1e-100;
            prev *= f;
            cur *= f;
            sum *= f * f;
            log_scale += 200.0 * std::f64::consts::LN_10;
        }
    }
    (-(sum.ln() + log_scale)).exp()
}

/// `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            w[n - 1 - i] = w[i];
        }
        Self {
            nodes: x,
            weights: w,
        }
    }

    /// Composite rule over `[a, b]` split into `panels` equal pieces.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            let half = 0.5 * h;
            let mut s = 0.0;
            for (&x, &w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + half * x);
            }
            total += half * s;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_reproduces_gaussian_moments() {
        for n in [10, 200, 400] {
            let q = GaussHermite::new(n);
            assert!((q.expect(|_| 1.0) - 1.0).abs() < 1e-12, "n = {n}");
            assert!((q.expect(|z| z * z) - 1.0).abs() < 1e-12);
            assert!((q.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
            assert!((q.expect(|z| z.powi(8)) - 105.0).abs() < 1e-9);
            assert!(q.expect(|z| z.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let q = GaussLegendre::new(16);
        let v = q.integrate(0.0, 2.0, 3, |x| x.powi(7));
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }
}
