//! Distribution of a positive definite quadratic form `Q = x^T A x`,
//! `x ~ N(mu, Sigma)`, evaluated through its power series in `y`.
//!
//! The series alternates in sign, so the f64 evaluator tracks its own
//! rounding error and hands over to an arbitrary-precision evaluator when
//! the cancellation would eat the requested tolerance. When `y / (2 min λ)`
//! is so large that even that becomes expensive, a positive chi-square
//! mixture expansion takes over.

mod bound;
mod mixture;
mod precise;
mod series;

use crate::error::{Error, Result};
use crate::gaussian::{sym_eig, sym_inv_sqrt, sym_sqrt, Matrix, Vector};

pub use bound::{log_m_rho, pdf_truncation_bound, truncation_bound, RhoPolicy};
use bound::{Certificate, Kind};

/// Ratio `y / (2 min λ)` above which [`Method::Mixture`] is used by default.
pub const SERIES_RATIO_MAX: f64 = 250.0;
/// Largest accepted `max λ / min λ`.
pub const MAX_SPREAD: f64 = 1e12;
/// Largest supported dimension.
pub const MAX_DIM: usize = 10;
/// Hard cap for [`terms_needed`].
pub const TERMS_CAP: usize = 500;
const GUARD_BITS: usize = 64;

/// Eigenvalues `λ` and standardized offsets `b` of `Q = Σ λ_i (u_i + b_i)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormCanonical {
    lambdas: Vec<f64>,
    offsets_b: Vec<f64>,
}

impl QuadFormCanonical {
    pub fn new(lambdas: Vec<f64>, offsets_b: Vec<f64>) -> Result<Self> {
        if lambdas.len() != offsets_b.len() {
            return Err(Error::Dimension { expected: lambdas.len(), got: offsets_b.len() });
        }
        if lambdas.is_empty() || lambdas.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension {} outside 1..={MAX_DIM}",
                lambdas.len()
            )));
        }
        if let Some(&l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!("eigenvalue {l} is not positive")));
        }
        if offsets_b.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("non-finite offset".into()));
        }
        let min = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = lambdas.iter().cloned().fold(0.0, f64::max);
        if max / min > MAX_SPREAD {
            return Err(Error::IllConditioned(format!("eigenvalue spread {:e}", max / min)));
        }
        Ok(Self { lambdas, offsets_b })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn offsets_b(&self) -> &[f64] {
        &self.offsets_b
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambdas.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn b_norm_sq(&self) -> f64 {
        self.offsets_b.iter().map(|b| b * b).sum()
    }

    /// `E[Q] = Σ λ_i (1 + b_i^2)`.
    pub fn mean(&self) -> f64 {
        self.lambdas.iter().zip(&self.offsets_b).map(|(l, b)| l * (1.0 + b * b)).sum()
    }

    /// `Var[Q] = Σ 2 λ_i^2 (1 + 2 b_i^2)`.
    pub fn variance(&self) -> f64 {
        self.lambdas.iter().zip(&self.offsets_b).map(|(l, b)| 2.0 * l * l * (1.0 + 2.0 * b * b)).sum()
    }

    /// `ln c_0 = -Σ b^2 / 2 - Σ ln(2 λ) / 2`.
    pub fn ln_c0(&self) -> f64 {
        -0.5 * self.b_norm_sq() - 0.5 * self.lambdas.iter().map(|l| (2.0 * l).ln()).sum::<f64>()
    }
}

/// Reduce `(x^T A x, x ~ N(mu, sigma))` to canonical form.
pub fn canonicalize(mu: &Vector, sigma: &Matrix, a: &Matrix) -> Result<QuadFormCanonical> {
    let n = mu.len();
    for m in [sigma, a] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension { expected: n, got: m.nrows() });
        }
    }
    let (va, _) = sym_eig(a)?;
    if !(va[0] > 0.0) {
        return Err(Error::Singular(va[0]));
    }
    let s_half = sym_sqrt(sigma)?;
    let s_inv_half = sym_inv_sqrt(sigma)?;
    let (lambdas, p) = sym_eig(&(&s_half * a * &s_half))?;
    let b = p.transpose() * (s_inv_half * mu);
    QuadFormCanonical::new(lambdas.iter().cloned().collect(), b.iter().cloned().collect())
}

/// Which evaluator produced a [`SeriesResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Value known without summation (for example `y = 0`).
    Trivial,
    /// Power series in double precision.
    Series,
    /// Power series in arbitrary precision.
    SeriesPrecise,
    /// Positive chi-square mixture expansion.
    Mixture,
    /// Chernoff tail bound was already below the tolerance.
    Tail,
    /// One-dimensional quadrature over the narrow direction of a planar form.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesResult {
    pub value: f64,
    pub terms_used: usize,
    pub bound_at_stop: f64,
    pub converged: bool,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub tol: f64,
    pub max_terms: usize,
    pub rho: RhoPolicy,
    /// Allow the mixture expansion for very large `y / (2 min λ)`.
    pub allow_mixture: bool,
}

impl SeriesOptions {
    pub fn new(tol: f64, max_terms: usize) -> Self {
        Self { tol, max_terms, rho: RhoPolicy::default(), allow_mixture: true }
    }
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self::new(1e-8, 4000)
    }
}

/// Raw coefficients `c_0..=c_K` and `d_1..=d_K` exactly as the recursion
/// defines them. Overflows for badly scaled forms; the evaluators use a
/// normalized variant instead.
pub fn series_coefficients(q: &QuadFormCanonical, k_max: usize) -> (Vec<f64>, Vec<f64>) {
    let d: Vec<f64> = (1..=k_max)
        .map(|k| {
            let kf = k as f64;
            0.5 * q
                .lambdas
                .iter()
                .zip(&q.offsets_b)
                .map(|(l, b)| (1.0 - kf * b * b) * (2.0 * l).powi(-(k as i32)))
                .sum::<f64>()
        })
        .collect();
    let mut c = vec![q.ln_c0().exp()];
    for k in 1..=k_max {
        let s: f64 = (0..k).map(|i| d[k - i - 1] * c[i]).sum();
        c.push(s / k as f64);
    }
    (c, d)
}

fn check_args(y: f64, opts: &SeriesOptions) -> Result<()> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::InvalidArgument(format!("y = {y} must be finite and >= 0")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {} must be > 0", opts.tol)));
    }
    if opts.max_terms == 0 {
        return Err(Error::InvalidArgument("max_terms must be >= 1".into()));
    }
    Ok(())
}

/// `P(Q <= y)` with default options and the given tolerance and term cap.
pub fn cdf(q: &QuadFormCanonical, y: f64, tol: f64, max_terms: usize) -> Result<SeriesResult> {
    cdf_with(q, y, &SeriesOptions::new(tol, max_terms))
}

/// Density of `Q` at `y`.
pub fn pdf(q: &QuadFormCanonical, y: f64, tol: f64, max_terms: usize) -> Result<SeriesResult> {
    pdf_with(q, y, &SeriesOptions::new(tol, max_terms))
}

pub fn cdf_with(q: &QuadFormCanonical, y: f64, opts: &SeriesOptions) -> Result<SeriesResult> {
    check_args(y, opts)?;
    if y == 0.0 {
        return Ok(SeriesResult {
            value: 0.0,
            terms_used: 1,
            bound_at_stop: 0.0,
            converged: true,
            method: Method::Trivial,
        });
    }
    evaluate(q, y, Kind::Cdf, opts)
}

pub fn pdf_with(q: &QuadFormCanonical, y: f64, opts: &SeriesOptions) -> Result<SeriesResult> {
    check_args(y, opts)?;
    if y == 0.0 {
        let value = match q.dim() {
            1 => f64::INFINITY,
            2 => q.ln_c0().exp(),
            _ => 0.0,
        };
        return Ok(SeriesResult {
            value,
            terms_used: 1,
            bound_at_stop: 0.0,
            converged: value.is_finite(),
            method: Method::Trivial,
        });
    }
    evaluate(q, y, Kind::Pdf, opts)
}

fn evaluate(q: &QuadFormCanonical, y: f64, kind: Kind, opts: &SeriesOptions) -> Result<SeriesResult> {
    let ratio = y / (2.0 * q.min_lambda());
    if ratio > SERIES_RATIO_MAX {
        if opts.allow_mixture {
            return match kind {
                Kind::Cdf => mixture::cdf(q, y, opts.tol),
                Kind::Pdf => mixture::pdf(q, y, opts.tol),
            };
        }
        return Err(Error::IllConditioned(format!(
            "y / (2 min lambda) = {ratio:.1} exceeds {SERIES_RATIO_MAX}"
        )));
    }
    let cert = Certificate::new(q, y, kind, opts.rho)?;
    let found = cert.first_below(0.5 * opts.tol, opts.max_terms - 1);
    let n_last = found.unwrap_or(opts.max_terms - 1);
    let (sum, err, method) = summed(q, y, kind, n_last, 0.25 * opts.tol, &cert)?;
    let bound = cert.bound(n_last) + err;
    let mut value = sum;
    if kind == Kind::Cdf {
        value = value.clamp(0.0, 1.0);
    } else {
        value = value.max(0.0);
    }
    Ok(SeriesResult {
        value,
        terms_used: n_last + 1,
        bound_at_stop: bound,
        converged: found.is_some() && bound <= opts.tol,
        method,
    })
}

/// Sum of terms `0..=n_last`, switching to arbitrary precision when the
/// estimated rounding error exceeds `abs_tol`.
fn summed(
    q: &QuadFormCanonical,
    y: f64,
    kind: Kind,
    n_last: usize,
    abs_tol: f64,
    cert: &Certificate,
) -> Result<(f64, f64, Method)> {
    let ln_pre = series::ln_prefactor(q, y, kind);
    let pass = series::evaluate_until(q, y, kind, n_last, abs_tol * (-ln_pre).exp());
    let pre = ln_pre.exp();
    let err = pre * pass.err;
    if !pass.aborted && err.is_finite() && err <= abs_tol {
        return Ok((pre * pass.sum, err, Method::Series));
    }
    if !ln_pre.is_finite() || !cert.log_total().is_finite() {
        return Err(Error::IllConditioned("term magnitudes are not finite".into()));
    }
    // Fixed point resolution of the normalized terms.
    let need = ((ln_pre - abs_tol.ln()) / std::f64::consts::LN_2).max(0.0);
    let frac = need.ceil() as usize + GUARD_BITS;
    let sum = precise::evaluate(q, y, kind, n_last, frac);
    let ulps = 8.0 * (n_last as f64 + 1.0) * (q.dim() as f64 + 2.0).powi(2);
    let err = pre * ulps * 2f64.powi(-(frac as i32)) + pre * sum.abs() * 1e-15;
    Ok((pre * sum, err, Method::SeriesPrecise))
}

/// `F_N(y)`: the series summed over terms `0..=n_last`, accurate to about
/// `abs_tol` regardless of cancellation.
pub fn partial_cdf(q: &QuadFormCanonical, y: f64, n_last: usize, abs_tol: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(0.0);
    }
    let cert = Certificate::new(q, y, Kind::Cdf, RhoPolicy::default())?;
    Ok(summed(q, y, Kind::Cdf, n_last, abs_tol, &cert)?.0)
}

/// Signed terms `(-1)^k c_k y^{n/2+k} / Γ(n/2+k+1)` for `k = 0..=n_last`.
pub fn cdf_terms(q: &QuadFormCanonical, y: f64, n_last: usize) -> Vec<f64> {
    let pass = series::evaluate(q, y, Kind::Cdf, n_last);
    let pre = pass.ln_prefactor;
    pass.terms.iter().map(|t| t.signum() * (t.abs().ln() + pre).exp()).collect()
}

/// Smallest `N` whose certificate with `rho = min λ / 2` is at most `tol`.
pub fn terms_needed(q: &QuadFormCanonical, y: f64, tol: f64) -> Result<usize> {
    terms_needed_with(q, y, tol, RhoPolicy::HalfMin)
}

pub fn terms_needed_with(q: &QuadFormCanonical, y: f64, tol: f64, rho: RhoPolicy) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be > 0")));
    }
    let cert = Certificate::new(q, y, Kind::Cdf, rho)?;
    cert.first_below(tol, TERMS_CAP)
        .ok_or_else(|| Error::IllConditioned(format!("more than {TERMS_CAP} terms needed")))
}

/// Number of terms summed when stopping at the first of three consecutive
/// terms with `|term| <= tol * |partial sum|`.
pub fn terms_relative_rule(q: &QuadFormCanonical, y: f64, tol: f64, max_terms: usize) -> Result<usize> {
    if y == 0.0 {
        return Ok(1);
    }
    let terms = cdf_terms(q, y, max_terms.max(1) - 1);
    let mut partial = 0.0;
    let mut run = 0;
    for (k, t) in terms.iter().enumerate() {
        partial += t;
        if t.abs() <= tol * partial.abs() {
            run += 1;
            if run == 3 {
                return Ok(k + 1);
            }
        } else {
            run = 0;
        }
    }
    Err(Error::IllConditioned(format!("relative rule not met within {max_terms} terms")))
}


#[cfg(test)]
mod tests {
    use super::*;

    fn form(l: &[f64], b: &[f64]) -> QuadFormCanonical {
        QuadFormCanonical::new(l.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn canonical_examples() {
        let i2 = Matrix::identity(2, 2);
        let q = canonicalize(&Vector::zeros(2), &(&i2 * 0.3), &i2).unwrap();
        assert!(q.lambdas().iter().all(|l| (l - 0.3).abs() < 1e-15));
        assert!(q.offsets_b().iter().all(|b| b.abs() < 1e-15));
        let q = canonicalize(&Vector::from_vec(vec![0.8, 0.0]), &(&i2 * 0.04), &i2).unwrap();
        assert!((q.b_norm_sq() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_reproduces_q_at_mean() {
        let mu = Vector::from_vec(vec![0.4, -1.1]);
        let s = Matrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let q = canonicalize(&mu, &s, &a).unwrap();
        let direct = (mu.transpose() * &a * &mu)[(0, 0)];
        let canon: f64 = q.lambdas().iter().zip(q.offsets_b()).map(|(l, b)| l * b * b).sum();
        assert!((direct - canon).abs() < 1e-9);
    }

    #[test]
    fn canonical_rejects_singular() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(canonicalize(&Vector::zeros(2), &s, &Matrix::identity(2, 2)).is_err());
    }

    #[test]
    fn new_rejects_bad_forms() {
        assert!(QuadFormCanonical::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(QuadFormCanonical::new(vec![1.0], vec![0.0, 0.0]).is_err());
        assert!(matches!(
            QuadFormCanonical::new(vec![1e-13, 1.0], vec![0.0, 0.0]),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn unit_scale_coefficients() {
        let q = form(&[0.5, 0.5], &[0.0, 0.0]);
        let (c, d) = series_coefficients(&q, 6);
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-15));
        for k in 1..=6 {
            let want: f64 = c[..k].iter().sum::<f64>() / k as f64;
            assert!((c[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn central_closed_form() {
        let q = form(&[1.0, 1.0], &[0.0, 0.0]);
        let r = cdf(&q, 2.0, 1e-12, 400).unwrap();
        assert!((r.value - (1.0 - (-1.0f64).exp())).abs() < 1e-12, "{r:?}");
        assert!(r.converged);
        let p = pdf(&q, 2.0, 1e-12, 400).unwrap();
        assert!((p.value - 0.5 * (-1.0f64).exp()).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn zero_y() {
        let q = form(&[0.3, 0.6], &[1.0, 0.2]);
        assert_eq!(cdf(&q, 0.0, 1e-9, 10).unwrap().value, 0.0);
        let p = pdf(&q, 0.0, 1e-9, 10).unwrap();
        assert!((p.value - q.ln_c0().exp()).abs() < 1e-15);
    }

    #[test]
    fn config_a_value() {
        // mpmath reference for the 0.8 m touching configuration.
        let q = form(&[0.04, 0.04], &[4.0, 0.0]);
        let r = cdf(&q, 0.64, 1e-12, 1000).unwrap();
        assert!((r.value - 0.449727936319374).abs() < 1e-11, "{r:?}");
    }

    #[test]
    fn unconverged_is_flagged() {
        let q = form(&[0.04, 0.04], &[4.0, 0.0]);
        let r = cdf(&q, 0.64, 1e-12, 5).unwrap();
        assert!(!r.converged);
        assert_eq!(r.terms_used, 5);
        assert!(r.bound_at_stop > 1e-12);
    }

    #[test]
    fn high_ratio_switches_evaluator() {
        let q = form(&[0.04, 0.04], &[0.0, 0.0]);
        let r = cdf(&q, 10.0, 1e-12, 2000).unwrap();
        assert_eq!(r.method, Method::SeriesPrecise);
        assert!((r.value - (1.0 - (-125.0f64).exp())).abs() < 1e-12);
    }
}
