//! Karhunen–Loève expansions on the two graphs with explicit Kirchhoff
//! eigenpairs: an interval (Neumann cosines) and a circle (Fourier modes).
//! Any real smoothness `alpha > 1/2` is accepted here.

use rand::{RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PointOnEdge;
use crate::simulation::{stream_rng, FieldSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval(f64),
    Circle(f64),
}

impl Domain {
    pub fn length(&self) -> f64 {
        match *self {
            Domain::Interval(l) | Domain::Circle(l) => l,
        }
    }
}

/// Smoothness may be fractional for spectral work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub alpha: f64,
    pub kappa: f64,
    pub tau: f64,
}

impl SpectralParams {
    pub fn new(alpha: f64, kappa: f64, tau: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.5) {
            return Err(Error::InvalidParameter(format!(
                "alpha must exceed 1/2, got {alpha}"
            )));
        }
        if !(kappa.is_finite() && kappa > 0.0 && tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(
                "kappa and tau must be positive".into(),
            ));
        }
        Ok(Self { alpha, kappa, tau })
    }

    fn weight(&self, lambda: f64) -> f64 {
        (self.kappa * self.kappa + lambda).powf(-self.alpha)
    }
}

/// First `n` Kirchhoff-Laplacian eigenpairs of a domain, ordered by eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KLBasis {
    pub domain: Domain,
    pub n: usize,
}

impl KLBasis {
    pub fn new(domain: Domain, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("truncation n must be at least 1".into()));
        }
        if !(domain.length().is_finite() && domain.length() > 0.0) {
            return Err(Error::InvalidParameter("domain length must be positive".into()));
        }
        Ok(Self { domain, n })
    }

    /// Frequency index of eigenpair `j` (pairs share one on the circle).
    fn freq(&self, j: usize) -> usize {
        match self.domain {
            Domain::Interval(_) => j,
            Domain::Circle(_) => j.div_ceil(2),
        }
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        let k = self.freq(j) as f64;
        match self.domain {
            Domain::Interval(l) => (std::f64::consts::PI * k / l).powi(2),
            Domain::Circle(t) => (2.0 * std::f64::consts::PI * k / t).powi(2),
        }
    }

    pub fn eigenfunction(&self, j: usize, s: f64) -> f64 {
        let pi = std::f64::consts::PI;
        match self.domain {
            Domain::Interval(l) => {
                if j == 0 {
                    1.0 / l.sqrt()
                } else {
                    (2.0 / l).sqrt() * (pi * j as f64 * s / l).cos()
                }
            }
            Domain::Circle(t) => {
                if j == 0 {
                    return 1.0 / t.sqrt();
                }
                let arg = 2.0 * pi * self.freq(j) as f64 * s / t;
                if j % 2 == 1 {
                    (2.0 / t).sqrt() * arg.cos()
                } else {
                    (2.0 / t).sqrt() * arg.sin()
                }
            }
        }
    }

    /// `(min, max)` of `lambda_j / j^2` over `1 <= j < n`.
    pub fn weyl_constants(&self) -> (f64, f64) {
        (1..self.n.max(2))
            .map(|j| self.eigenvalue(j) / (j * j) as f64)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }
}

/// Truncated KL covariance `tau^-2 sum_j (kappa^2 + lambda_j)^-alpha e_j(s) e_j(s')`.
pub fn kl_covariance(basis: &KLBasis, params: &SpectralParams, s: f64, t: f64) -> f64 {
    let mut sum = 0.0;
    for j in 0..basis.n {
        sum += params.weight(basis.eigenvalue(j)) * (basis.eigenfunction(j, s) * basis.eigenfunction(j, t));
    }
    sum / (params.tau * params.tau)
}

/// Truncated KL draw at `sites` (positions along the domain).
pub fn kl_simulate(basis: &KLBasis, params: &SpectralParams, sites: &[f64], seed: u64) -> Result<FieldSample> {
    let len = basis.domain.length();
    for &s in sites {
        if !(s.is_finite() && (0.0..=len).contains(&s)) {
            return Err(Error::InvalidParameter(format!("site {s} outside [0, {len}]")));
        }
    }
    let mut rng = stream_rng(seed, 0);
    let coef: Vec<f64> = (0..basis.n)
        .map(|j| {
            let xi: f64 = rng.sample(StandardNormal);
            xi * params.weight(basis.eigenvalue(j)).sqrt() / params.tau
        })
        .collect();
    let values = sites
        .iter()
        .map(|&s| {
            coef.iter()
                .enumerate()
                .map(|(j, c)| c * basis.eigenfunction(j, s))
                .sum()
        })
        .collect();
    Ok(FieldSample {
        sites: sites.iter().map(|&s| PointOnEdge::new(0, s)).collect(),
        values,
        derivatives: None,
        seed,
    })
}

/// `sum_{k >= k0} (kappa^2 + c^2 k^2)^-alpha`.
fn tail_sum(params: &SpectralParams, c: f64, k0: usize) -> f64 {
    let a = params.alpha;
    let k2 = params.kappa * params.kappa;
    let f = |k: f64| (k2 + c * c * k * k).powf(-a);
    // explicit terms until the binomial series of the integral converges fast
    let switch = k0.max(1000).max((4.0 * params.kappa / c).ceil() as usize + 1);
    let mut sum = 0.0;
    for k in k0..switch {
        sum += f(k as f64);
    }
    let kk = switch as f64;
    // integral from kk to infinity via the binomial series in (kappa / (c x))^2
    let mut integral = 0.0;
    let mut binom = 1.0;
    let ratio = k2 / (c * c * kk * kk);
    let base = (c * kk).powf(-2.0 * a) * kk;
    let mut pow = 1.0;
    for m in 0..200 {
        let term = binom * pow * base / (2.0 * a + 2.0 * m as f64 - 1.0);
        integral += term;
        if term.abs() < 1e-17 * integral.abs() {
            break;
        }
        binom *= (-a - m as f64) / (m as f64 + 1.0);
        pow *= ratio;
    }
    // Euler–Maclaurin corrections
    let fp = -2.0 * a * c * c * kk * (k2 + c * c * kk * kk).powf(-a - 1.0);
    sum + integral + 0.5 * f(kk) - fp / 12.0
}

/// `L2(Omega; L2)` norm of the truncation remainder: `(tau^-2 sum_{j >= n} w_j)^{1/2}`.
pub fn kl_truncation_error(basis: &KLBasis, params: &SpectralParams, n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let rest = match basis.domain {
        Domain::Interval(l) => tail_sum(params, pi / l, n),
        Domain::Circle(t) => {
            let c = 2.0 * pi / t;
            if n == 0 {
                params.weight(0.0) + 2.0 * tail_sum(params, c, 1)
            } else if n % 2 == 1 {
                2.0 * tail_sum(params, c, n.div_ceil(2))
            } else {
                let m = n / 2;
                params.weight((c * m as f64).powi(2)) + 2.0 * tail_sum(params, c, m + 1)
            }
        }
    };
    rest.sqrt() / params.tau
}

/// Least-squares slope of `log(err)` against `log(n)`.
pub fn loglog_slope(ns: &[usize], errs: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        // composite Simpson
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn eigenfunctions_orthonormal_and_neumann() {
        for domain in [Domain::Interval(1.7), Domain::Circle(2.3)] {
            let b = KLBasis::new(domain, 7).unwrap();
            let l = domain.length();
            for i in 0..7 {
                for j in 0..7 {
                    let ip = quad(|s| b.eigenfunction(i, s) * b.eigenfunction(j, s), 0.0, l);
                    assert_relative_eq!(ip, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
                }
                let h = 1e-6;
                match domain {
                    Domain::Interval(_) => {
                        // zero derivative at both ends
                        let d0 = (b.eigenfunction(i, h) - b.eigenfunction(i, 0.0)) / h;
                        let d1 = (b.eigenfunction(i, l) - b.eigenfunction(i, l - h)) / h;
                        assert!(d0.abs() < 1e-4 && d1.abs() < 1e-4);
                    }
                    Domain::Circle(_) => {
                        // periodic value and derivative
                        assert!((b.eigenfunction(i, 0.0) - b.eigenfunction(i, l)).abs() < 1e-12);
                        let d0 = (b.eigenfunction(i, h) - b.eigenfunction(i, -h)) / (2.0 * h);
                        let d1 = (b.eigenfunction(i, l + h) - b.eigenfunction(i, l - h)) / (2.0 * h);
                        assert!((d0 - d1).abs() < 1e-6);
                    }
                }
                // -e'' = lambda e
                let s = 0.37;
                let h = 1e-4;
                let e2 = (b.eigenfunction(i, s + h) - 2.0 * b.eigenfunction(i, s) + b.eigenfunction(i, s - h)) / (h * h);
                assert!((-e2 - b.eigenvalue(i) * b.eigenfunction(i, s)).abs() < 1e-4 * (1.0 + b.eigenvalue(i)));
            }
        }
    }

    #[test]
    fn eigenvalues_nondecreasing_and_weyl() {
        let b = KLBasis::new(Domain::Circle(2.0), 200).unwrap();
        for j in 1..200 {
            assert!(b.eigenvalue(j) >= b.eigenvalue(j - 1));
        }
        let (lo, hi) = b.weyl_constants();
        assert!(lo > 0.0 && hi.is_finite());
        // Weyl: lambda_j ~ (pi j / L)^2
        let w = (std::f64::consts::PI / 2.0).powi(2);
        assert!(lo <= w * 1.0001 && hi >= w * 0.9999);
    }

    #[test]
    fn tail_matches_brute_force() {
        let params = SpectralParams::new(1.3, 2.0, 0.7).unwrap();
        let b = KLBasis::new(Domain::Circle(1.5), 10).unwrap();
        for n in [1usize, 2, 5, 10, 37] {
            let brute: f64 = (n..2_000_000)
                .map(|j| params.weight(b.eigenvalue(j)))
                .sum::<f64>();
            // remainder of the brute sum beyond 2e6 is below 1e-9 relative here
            let got = kl_truncation_error(&b, &params, n).powi(2) * params.tau * params.tau;
            assert_relative_eq!(got, brute, max_relative = 1e-6);
        }
    }

    #[test]
    fn seeded_kl_draws() {
        let params = SpectralParams::new(1.0, 1.0, 1.0).unwrap();
        let b = KLBasis::new(Domain::Interval(1.0), 50).unwrap();
        let a = kl_simulate(&b, &params, &[0.1, 0.5], 3).unwrap();
        let c = kl_simulate(&b, &params, &[0.1, 0.5], 3).unwrap();
        assert_eq!(a, c);
        assert!(kl_simulate(&b, &params, &[1.5], 3).is_err());
    }
}
