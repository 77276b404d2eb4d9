//! One-dimensional Matérn covariances for `nu = alpha - 1/2`, the
//! boundary-modified edge covariance and its endpoint precision, plus the
//! analytic covariances on an interval and on a circle.
//!
//! Process vectors are `(u, u')` for `alpha = 2`, with `u'` the derivative
//! in the direction of increasing edge coordinate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field parameters `(alpha, kappa, tau)` and measurement noise `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: u32,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl ModelParams {
    pub fn new(alpha: u32, kappa: f64, tau: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            alpha,
            kappa,
            tau,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.alpha == 0 {
            return Err(Error::UnsupportedAlpha(0));
        }
        Ok(())
    }

    /// Checks that the exact (Markov) constructions apply.
    pub fn require_exact(&self) -> Result<()> {
        self.validate()?;
        match self.alpha {
            1 | 2 => Ok(()),
            a => Err(Error::UnsupportedAlpha(a)),
        }
    }

    pub fn nu(&self) -> f64 {
        self.alpha as f64 - 0.5
    }

    /// Block size of the process vector: 1 for `alpha = 1`, 2 for `alpha = 2`.
    pub fn block_dim(&self) -> usize {
        self.alpha as usize
    }

    /// Marginal variance of the stationary process on the real line.
    pub fn stationary_variance(&self) -> f64 {
        match self.alpha {
            1 => 1.0 / (2.0 * self.kappa * self.tau * self.tau),
            _ => 1.0 / (4.0 * self.kappa.powi(3) * self.tau * self.tau),
        }
    }
}

/// Stationary Matérn covariance `Cov(u^(i)(s), u^(j)(t))` at lag `h = s - t`,
/// with `i = deriv_s` and `j = deriv_t`.
pub fn matern_cov(params: &ModelParams, h: f64, deriv_s: usize, deriv_t: usize) -> Result<f64> {
    params.require_exact()?;
    let k = params.kappa;
    let a = h.abs();
    let max = params.alpha as usize - 1;
    if deriv_s > max || deriv_t > max {
        return Err(Error::InvalidParameter(format!(
            "derivative orders ({deriv_s}, {deriv_t}) exceed alpha - 1 = {max}"
        )));
    }
    let c = params.stationary_variance();
    let e = (-k * a).exp();
    Ok(match (params.alpha, deriv_s, deriv_t) {
        (1, _, _) => c * e,
        (_, 0, 0) => c * (1.0 + k * a) * e,
        // dr/dh = -c k^2 h e^{-k|h|}; d/ds = dr/dh, d/dt = -dr/dh
        (_, 1, 0) => -c * k * k * h * e,
        (_, 0, 1) => c * k * k * h * e,
        // -d2r/dh2
        _ => c * k * k * (1.0 - k * a) * e,
    })
}

/// Stationary covariance between process vectors at `s` and `t` (a `d x d` block).
pub fn stationary_block(params: &ModelParams, s: f64, t: f64) -> Result<DMatrix<f64>> {
    let d = params.block_dim();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = matern_cov(params, s - t, i, j)?;
        }
    }
    Ok(m)
}

/// Stationary covariance between stacked process vectors at two point lists.
///
/// `da` and `db` are the number of derivative orders kept per point (1 keeps
/// values only, 2 keeps `(u, u')`).
pub fn stationary_cross(
    params: &ModelParams,
    a: &[f64],
    da: usize,
    b: &[f64],
    db: usize,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(a.len() * da, b.len() * db);
    for (i, &s) in a.iter().enumerate() {
        for (j, &t) in b.iter().enumerate() {
            for p in 0..da {
                for q in 0..db {
                    m[(i * da + p, j * db + q)] = matern_cov(params, s - t, p, q)?;
                }
            }
        }
    }
    Ok(m)
}

fn check_on_edge(length: f64, s: f64) -> Result<()> {
    if !(s.is_finite() && s >= 0.0 && s <= length) {
        return Err(Error::InvalidParameter(format!(
            "position {s} outside [0, {length}]"
        )));
    }
    Ok(())
}

/// Boundary-modified covariance on an edge of length `length`:
/// the stationary covariance plus the correction that makes the two edge
/// ends exchangeable and lets independent edges be glued together.
pub fn edge_conditional_cov(
    params: &ModelParams,
    length: f64,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    params.require_exact()?;
    check_on_edge(length, s)?;
    check_on_edge(length, t)?;
    if params.alpha == 1 {
        return Ok(DMatrix::from_element(
            1,
            1,
            exponential_edge_cov(params, length, s, t),
        ));
    }
    edge_conditional_cov_general(params, length, s, t)
}

/// The boundary correction evaluated through the block formula.
pub(crate) fn edge_conditional_cov_general(
    params: &ModelParams,
    length: f64,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let d = params.block_dim();
    let r00 = stationary_block(params, 0.0, 0.0)?;
    let r0t = stationary_block(params, 0.0, length)?;
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&r00);
    m.view_mut((d, d), (d, d)).copy_from(&r00);
    m.view_mut((0, d), (d, d)).copy_from(&(-&r0t));
    m.view_mut((d, 0), (d, d)).copy_from(&(-r0t.transpose()));
    let mut left = DMatrix::zeros(d, 2 * d);
    left.view_mut((0, 0), (d, d))
        .copy_from(&stationary_block(params, s, 0.0)?);
    left.view_mut((0, d), (d, d))
        .copy_from(&stationary_block(params, s, length)?);
    let mut right = DMatrix::zeros(2 * d, d);
    right
        .view_mut((0, 0), (d, d))
        .copy_from(&stationary_block(params, 0.0, t)?);
    right
        .view_mut((d, 0), (d, d))
        .copy_from(&stationary_block(params, length, t)?);
    let solved = m
        .lu()
        .solve(&right)
        .ok_or(Error::NearSingularEdge(params.kappa * length))?;
    Ok(stationary_block(params, s, t)? + left * solved)
}

/// Closed form of the `alpha = 1` edge covariance, written with decaying
/// exponentials only.
fn exponential_edge_cov(params: &ModelParams, length: f64, s: f64, t: f64) -> f64 {
    let k = params.kappa;
    let scale = 1.0 / (2.0 * k * params.tau * params.tau);
    // cosh(k(l - |s-t|)) + cosh(k(s+t-l)) over sinh(k l), scaled by e^{-k l}
    let a = (s - t).abs();
    let b = (s + t - length).abs();
    let num = (-k * a).exp() + (-k * (2.0 * length - a)).exp() + (-k * (length - b)).exp()
        + (-k * (length + b)).exp();
    scale * num / (-(-2.0 * k * length).exp_m1())
}

/// Precision of the endpoint vector `[u(0), u(T)]` (or `[u(0), u'(0), u(T), u'(T)]`)
/// under the boundary-modified edge covariance.
pub fn edge_precision(params: &ModelParams, length: f64) -> Result<DMatrix<f64>> {
    params.require_exact()?;
    let kt = params.kappa * length;
    if !(kt.is_finite() && kt >= 1e-8) {
        return Err(Error::NearSingularEdge(kt));
    }
    Ok(match params.alpha {
        1 => exponential_edge_precision(params, length),
        _ => matern2_edge_precision(params, length),
    })
}

fn exponential_edge_precision(params: &ModelParams, length: f64) -> DMatrix<f64> {
    let k = params.kappa;
    let x = (-k * length).exp();
    let denom = -(-2.0 * k * length).exp_m1();
    let scale = 2.0 * k * params.tau * params.tau;
    let diag = scale * (0.5 + x * x / denom);
    let off = -scale * x / denom;
    DMatrix::from_row_slice(2, 2, &[diag, off, off, diag])
}

/// `sinh(x) - x` without cancellation for small `x`.
fn sinh_minus_id(x: f64) -> f64 {
    if x.abs() > 0.5 {
        return x.sinh() - x;
    }
    let x2 = x * x;
    let mut term = x * x2 / 6.0;
    let mut sum = term;
    let mut k = 3.0;
    while term.abs() > 1e-18 * sum.abs() {
        term *= x2 / ((k + 1.0) * (k + 2.0));
        sum += term;
        k += 2.0;
    }
    sum
}

/// `x cosh(x) - sinh(x)` without cancellation for small `x`.
fn xcosh_minus_sinh(x: f64) -> f64 {
    if x.abs() > 0.5 {
        return x * x.cosh() - x.sinh();
    }
    // sum_{j>=1} x^{2j+1} 2j / (2j+1)!
    let x2 = x * x;
    let mut pow_fact = x * x2 / 6.0; // x^3 / 3!
    let mut sum = 2.0 * pow_fact;
    let mut j = 1.0;
    loop {
        pow_fact *= x2 / ((2.0 * j + 2.0) * (2.0 * j + 3.0));
        j += 1.0;
        let term = 2.0 * j * pow_fact;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Endpoint precision for `alpha = 2`, ordered `[u(0), u'(0), u(T), u'(T)]`.
///
/// With `x = kappa T` and `S = sinh(x)^2 - x^2`, the entries are `tau^2 / S`
/// times the coefficients below, scaled by `kappa^3`, `kappa^2` or `kappa`
/// for value-value, value-derivative and derivative-derivative pairs.
fn matern2_edge_precision(params: &ModelParams, length: f64) -> DMatrix<f64> {
    let k = params.kappa;
    let x = k * length;
    let (s, a00, a11, a01, a02, a03, a13) = if x <= 1.0 {
        let sh = x.sinh();
        (
            sinh_minus_id(x) * (sh + x),
            (2.0 * x).sinh() + 2.0 * x,
            sinh_minus_id(2.0 * x),
            2.0 * x * x,
            -2.0 * (x * x.cosh() + sh),
            2.0 * x * sh,
            2.0 * xcosh_minus_sinh(x),
        )
    } else {
        // everything divided by e^{2x}/4
        let e = (-x).exp();
        let e2 = e * e;
        let one_m = -(-2.0 * x).exp_m1();
        (
            one_m * one_m - 4.0 * x * x * e2,
            2.0 * (1.0 - e2 * e2) + 8.0 * x * e2,
            2.0 * (1.0 - e2 * e2) - 8.0 * x * e2,
            8.0 * x * x * e2,
            -4.0 * e * (x * (1.0 + e2) + one_m),
            4.0 * x * e * one_m,
            4.0 * e * (x * (1.0 + e2) - one_m),
        )
    };
    let f = params.tau * params.tau / s;
    let (k1, k2, k3) = (f * k, f * k * k, f * k * k * k);
    DMatrix::from_row_slice(
        4,
        4,
        &[
            k3 * a00, k2 * a01, k3 * a02, k2 * a03, //
            k2 * a01, k1 * a11, -k2 * a03, k1 * a13, //
            k3 * a02, -k2 * a03, k3 * a00, -k2 * a01, //
            k2 * a03, k1 * a13, -k2 * a01, k1 * a11,
        ],
    )
}

/// Boundary-modified Gaussian process on a single edge.
#[derive(Debug, Clone)]
pub struct EdgeGaussian {
    params: ModelParams,
    length: f64,
    precision: DMatrix<f64>,
}

impl EdgeGaussian {
    pub fn new(params: &ModelParams, length: f64) -> Result<Self> {
        Ok(Self {
            params: *params,
            length,
            precision: edge_precision(params, length)?,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn block_dim(&self) -> usize {
        self.params.block_dim()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn cov(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        edge_conditional_cov(&self.params, self.length, s, t)
    }
}

/// Covariance of the field on the interval `[0, length]` (Neumann ends).
pub fn closed_form_interval(params: &ModelParams, length: f64, s: f64, t: f64) -> Result<f64> {
    params.require_exact()?;
    check_on_edge(length, s)?;
    check_on_edge(length, t)?;
    if params.alpha == 1 {
        return Ok(exponential_edge_cov(params, length, s, t));
    }
    let k = params.kappa;
    let tau2 = params.tau * params.tau;
    let c = params.stationary_variance();
    let l = length;
    let h = s - t;
    let v = s + t;
    let one_m = -(-2.0 * k * l).exp_m1();
    let stationary = c * (1.0 + k * h.abs()) * (-k * h.abs()).exp();
    // (r(h) + r(-h) + e^{2kl} r(v) + r(-v)) / (2 e^{kl} sinh(kl)), r(x) = c (1 + kx) e^{-kx}
    let reflect = c
        * ((1.0 + k * h) * (-k * (h + 2.0 * l)).exp()
            + (1.0 - k * h) * (k * (h - 2.0 * l)).exp()
            + (1.0 + k * v) * (-k * v).exp()
            + (1.0 - k * v) * (k * (v - 2.0 * l)).exp())
        / one_m;
    let cs = (k * (s - l)).exp() + (-k * (s + l)).exp();
    let ct = (k * (t - l)).exp() + (-k * (t + l)).exp();
    let boundary = l * cs * ct / (2.0 * k * k * tau2 * one_m * one_m);
    Ok(stationary + reflect + boundary)
}

/// Covariance of the field on a circle of perimeter `perimeter`.
pub fn closed_form_circle(params: &ModelParams, perimeter: f64, s: f64, t: f64) -> Result<f64> {
    params.require_exact()?;
    let k = params.kappa;
    let p = perimeter;
    let mut d = (s - t).rem_euclid(p);
    d = d.min(p - d);
    let one_m = -(-k * p).exp_m1();
    let ch = ((k * (d - p)).exp() + (-k * d).exp()) / one_m; // cosh(v)/sinh(kp/2)
    if params.alpha == 1 {
        return Ok(ch / (2.0 * k * params.tau * params.tau));
    }
    let sh = ((k * (d - p)).exp() - (-k * d).exp()) / one_m; // sinh(v)/sinh(kp/2)
    let v = k * (d - 0.5 * p);
    let coth = (1.0 + (-k * p).exp()) / one_m;
    let c = params.stationary_variance();
    Ok(c * ((1.0 + 0.5 * k * p * coth) * ch - v * sh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(alpha: u32, kappa: f64, tau: f64) -> ModelParams {
        ModelParams::new(alpha, kappa, tau, 0.0).unwrap()
    }

    /// Variance from the spectral density 1 / (tau^2 (kappa^2 + w^2)^alpha),
    /// integrated with the substitution w = kappa tan(theta).
    fn spectral_variance(params: &ModelParams) -> f64 {
        let k = params.kappa;
        let n = 200_000;
        let h = std::f64::consts::PI / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            let th = -std::f64::consts::FRAC_PI_2 + (i as f64 + 0.5) * h;
            let w = k * th.tan();
            let jac = k / th.cos().powi(2);
            sum += jac / (params.tau.powi(2) * (k * k + w * w).powi(params.alpha as i32));
        }
        sum * h / (2.0 * std::f64::consts::PI)
    }

    #[test]
    fn matern_values_at_zero() {
        assert_relative_eq!(matern_cov(&p(1, 1.0, 1.0), 0.0, 0, 0).unwrap(), 0.5);
        assert_relative_eq!(matern_cov(&p(2, 1.0, 1.0), 0.0, 0, 0).unwrap(), 0.25);
        assert_relative_eq!(matern_cov(&p(2, 1.0, 1.0), 0.0, 1, 1).unwrap(), 0.25);
        for params in [p(1, 1.0, 1.0), p(2, 1.0, 1.0), p(2, 2.5, 0.7)] {
            assert_relative_eq!(
                matern_cov(&params, 0.0, 0, 0).unwrap(),
                spectral_variance(&params),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn matern_rejects_bad_orders() {
        assert!(matern_cov(&p(1, 1.0, 1.0), 0.3, 1, 0).is_err());
        assert!(matern_cov(&p(2, 1.0, 1.0), 0.3, 2, 0).is_err());
        assert!(matches!(
            matern_cov(&ModelParams { alpha: 3, ..p(1, 1.0, 1.0) }, 0.0, 0, 0),
            Err(Error::UnsupportedAlpha(3))
        ));
    }

    #[test]
    fn derivative_blocks_match_finite_differences() {
        let params = p(2, 1.7, 0.8);
        let step = 1e-5;
        for &(s, t) in &[(0.3, 1.1), (1.2, 0.4), (0.0, 0.9), (2.0, 2.6)] {
            let r = |a: f64, b: f64| matern_cov(&params, a - b, 0, 0).unwrap();
            let ds = (r(s + step, t) - r(s - step, t)) / (2.0 * step);
            let dt = (r(s, t + step) - r(s, t - step)) / (2.0 * step);
            let dst = (r(s + step, t + step) - r(s + step, t - step) - r(s - step, t + step)
                + r(s - step, t - step))
                / (4.0 * step * step);
            assert_relative_eq!(matern_cov(&params, s - t, 1, 0).unwrap(), ds, max_relative = 1e-5);
            assert_relative_eq!(matern_cov(&params, s - t, 0, 1).unwrap(), dt, max_relative = 1e-5);
            assert_relative_eq!(matern_cov(&params, s - t, 1, 1).unwrap(), dst, max_relative = 1e-5);
        }
    }

    #[test]
    fn exponential_edge_cov_examples() {
        let params = p(1, 1.0, 1.0);
        let c00 = edge_conditional_cov(&params, 1.0, 0.0, 0.0).unwrap()[(0, 0)];
        let c01 = edge_conditional_cov(&params, 1.0, 0.0, 1.0).unwrap()[(0, 0)];
        assert_relative_eq!(c00, 1.0 / 1.0f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(c00, 1.313035, epsilon = 1e-6);
        assert_relative_eq!(c01, 1.0 / 1.0f64.sinh(), epsilon = 1e-12);
        assert_relative_eq!(c01, 0.850918, epsilon = 1e-6);
    }

    #[test]
    fn exponential_closed_form_matches_block_formula() {
        for &(k, tau, l) in &[(0.5, 1.0, 1.0), (3.0, 0.5, 4.0), (1.0, 1.0, 0.5)] {
            let params = p(1, k, tau);
            for &(s, t) in &[(0.0, 0.0), (0.1, 0.4), (0.5, 0.2), (l, l), (0.0, l)] {
                let direct = edge_conditional_cov(&params, l, s, t).unwrap()[(0, 0)];
                let block = edge_conditional_cov_general(&params, l, s, t).unwrap()[(0, 0)];
                // printed form: (cosh(k(l-|s-t|)) + cosh(k(s+t-l))) / (2 k tau^2 sinh(k l))
                let printed = ((k * (l - (s - t).abs())).cosh() + (k * (s + t - l)).cosh())
                    / (2.0 * k * tau * tau * (k * l).sinh());
                assert_relative_eq!(direct, printed, epsilon = 1e-12);
                assert_relative_eq!(direct, block, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn long_edge_tends_to_stationary() {
        let params = p(1, 2.0, 1.0);
        let c = edge_conditional_cov(&params, 200.0, 100.0, 100.5).unwrap()[(0, 0)];
        assert_relative_eq!(c, matern_cov(&params, 0.5, 0, 0).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn ends_are_exchangeable() {
        for params in [p(1, 1.3, 0.6), p(2, 1.3, 0.6), p(2, 0.4, 2.0)] {
            let l = 1.7;
            let a = edge_conditional_cov(&params, l, 0.0, 0.0).unwrap();
            let mut b = edge_conditional_cov(&params, l, l, l).unwrap();
            // reversing the edge flips the sign of the derivative
            if params.alpha == 2 {
                b[(0, 1)] = -b[(0, 1)];
                b[(1, 0)] = -b[(1, 0)];
            }
            assert!((a - b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn positions_outside_edge_rejected() {
        assert!(edge_conditional_cov(&p(1, 1.0, 1.0), 1.0, -0.1, 0.5).is_err());
        assert!(edge_conditional_cov(&p(2, 1.0, 1.0), 1.0, 0.5, 1.2).is_err());
    }

    fn endpoint_cov(params: &ModelParams, l: f64) -> DMatrix<f64> {
        let d = params.block_dim();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        for (i, &s) in [0.0, l].iter().enumerate() {
            for (j, &t) in [0.0, l].iter().enumerate() {
                let b = edge_conditional_cov_general(params, l, s, t).unwrap();
                m.view_mut((i * d, j * d), (d, d)).copy_from(&b);
            }
        }
        m
    }

    #[test]
    fn edge_precision_inverts_endpoint_covariance() {
        for alpha in [1, 2] {
            for &k in &[0.5, 1.0, 3.0] {
                for &tau in &[0.5, 1.0] {
                    for &l in &[0.5, 1.0, 4.0] {
                        let params = p(alpha, k, tau);
                        let q = edge_precision(&params, l).unwrap();
                        let c = endpoint_cov(&params, l);
                        let eye = DMatrix::<f64>::identity(q.nrows(), q.nrows());
                        let err = (&q * &c - eye).abs().max();
                        assert!(err < 1e-9, "alpha {alpha} k {k} tau {tau} l {l}: {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn edge_precision_exponential_example() {
        let q = edge_precision(&p(1, 1.0, 1.0), 1.0).unwrap();
        assert_relative_eq!(q[(0, 0)], 1.0 / 1.0f64.tanh(), epsilon = 1e-12);
        assert_relative_eq!(q[(0, 1)], -1.0 / 1.0f64.sinh(), epsilon = 1e-12);
        let far = edge_precision(&p(1, 1.0, 1.0), 60.0).unwrap();
        assert_relative_eq!(far[(0, 0)], 1.0, epsilon = 1e-15);
        assert!(far[(0, 1)].abs() < 1e-25);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn matern2_precision_stable_across_regimes() {
        // reference values from a 60-digit inversion of the endpoint covariance
        let cases: [(f64, f64, [f64; 8]); 4] = [
            (1.0, 0.05, [
                96048.018285650683583, 2399.2001237999998936, -96047.993285650900572,
                2400.1999154840279295, 80.013333650687839048, 39.996666289783391469, 0.0, 0.0,
            ]),
            (1.0, 0.3, [
                452.55414416355014792, 65.871111461895405186, -452.40414584382351746,
                66.863633973552761385, 13.413401084247446682, 6.6465860201384415605, 0.0, 0.0,
            ]),
            (2.0, 0.49, [
                124.45109722674637555, 21.974202010482679384, -120.53589148716507363,
                25.664356023118181169, 8.690119193949165944, 3.9458544808543488477, 0.0, 0.0,
            ]),
            (1.0, 20.0, [
                2.0000000000000142915, 1.3594733616933177309e-14, -1.7313690428484003656e-7,
                1.6489228979508574777e-7, 2.000000000000012932, 1.5664767530533146178e-7, 0.0, 0.0,
            ]),
        ];
        for (k, l, r) in cases {
            let q = edge_precision(&p(2, k, 1.0), l).unwrap();
            let got = [q[(0, 0)], q[(0, 1)], q[(0, 2)], q[(0, 3)], q[(1, 1)], q[(1, 3)]];
            let scale = r[0].abs();
            for (g, want) in got.iter().zip(r.iter()) {
                assert!((g - want).abs() < 1e-11 * scale, "k {k} l {l}: {g} vs {want}");
            }
        }
        let huge = edge_precision(&p(2, 1.0, 1.0), 800.0).unwrap();
        assert!(huge.iter().all(|v| v.is_finite()));
        assert_relative_eq!(huge[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn edge_precision_near_singular() {
        assert!(matches!(
            edge_precision(&p(1, 1.0, 1.0), 1e-9),
            Err(Error::NearSingularEdge(_))
        ));
    }

    #[test]
    fn circle_examples() {
        let params = p(1, 1.0, 1.0);
        let same = closed_form_circle(&params, 2.0, 0.4, 0.4).unwrap();
        assert_relative_eq!(same, 1.0 / (2.0 * 1.0f64.tanh()), epsilon = 1e-12);
        assert_relative_eq!(same, 0.656518, epsilon = 1e-6);
        let anti = closed_form_circle(&params, 2.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(anti, 1.0 / (2.0 * 1.0f64.sinh()), epsilon = 1e-12);
        assert_relative_eq!(anti, 0.425459, epsilon = 1e-6);
        // wraps modulo the perimeter
        assert_relative_eq!(
            closed_form_circle(&params, 2.0, 0.1, 1.9).unwrap(),
            closed_form_circle(&params, 2.0, 0.0, 0.2).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn circle_alpha2_is_periodised_matern() {
        let params = p(2, 1.4, 0.9);
        let l: f64 = 2.3;
        let k = params.kappa;
        let c = params.stationary_variance();
        for &(s, t) in &[(0.0f64, 0.0f64), (0.2, 1.0), (0.1, 2.2), (0.3, 1.45)] {
            let images: f64 = (-60..=60)
                .map(|j| {
                    let h = (s - t + j as f64 * l).abs();
                    c * (1.0 + k * h) * (-k * h).exp()
                })
                .sum();
            assert_relative_eq!(closed_form_circle(&params, l, s, t).unwrap(), images, epsilon = 1e-13);
        }
    }
}
