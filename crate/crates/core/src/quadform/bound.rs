//! Truncation certificates for the power series and the choice of rho.

use statrs::function::gamma::ln_gamma;

use super::QuadFormCanonical;
use crate::error::{Error, Result};

/// How the Cauchy radius `rho` in the certificate is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoPolicy {
    /// `rho = min(lambda) / 2`.
    HalfMin,
    /// `rho = f * min(lambda)` with `0 < f < 1`.
    Fraction(f64),
    /// Smallest certificate over a fixed grid of fractions.
    Optimized,
}

impl Default for RhoPolicy {
    fn default() -> Self {
        RhoPolicy::Optimized
    }
}

const OPT_FRACTIONS: [f64; 14] =
    [0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.88, 0.9, 0.92, 0.94, 0.96, 0.98];

impl RhoPolicy {
    pub(crate) fn fractions(&self) -> Result<Vec<f64>> {
        match *self {
            RhoPolicy::HalfMin => Ok(vec![0.5]),
            RhoPolicy::Fraction(f) if f > 0.0 && f < 1.0 => Ok(vec![f]),
            RhoPolicy::Fraction(f) => {
                Err(Error::InvalidArgument(format!("rho fraction {f} outside (0, 1)")))
            }
            RhoPolicy::Optimized => Ok(OPT_FRACTIONS.to_vec()),
        }
    }
}

/// `ln m(rho)`; requires `0 < rho < min(lambda)`.
pub fn log_m_rho(q: &QuadFormCanonical, rho: f64) -> Result<f64> {
    let lmin = q.min_lambda();
    if !(rho > 0.0 && rho < lmin) {
        return Err(Error::InvalidArgument(format!("rho {rho} must lie in (0, {lmin})")));
    }
    let mut acc = 0.0;
    for (&l, &b) in q.lambdas().iter().zip(q.offsets_b()) {
        acc += -0.5 * l.ln() - 0.5 * b * b * l / (l + rho) - 0.5 * (-rho / l).ln_1p();
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Cdf,
    Pdf,
}

/// Precomputed pieces of `ln E(N)` (or `ln e(N)`) for a set of rho values.
pub(crate) struct Certificate {
    /// Per rho: (constant part, slope in N+1).
    lines: Vec<(f64, f64)>,
    kind: Kind,
    zero: bool,
}

impl Certificate {
    pub(crate) fn new(q: &QuadFormCanonical, y: f64, kind: Kind, policy: RhoPolicy) -> Result<Self> {
        let n = q.dim() as f64;
        let h = 0.5 * n;
        // Gamma(n/2) bounds Gamma(n/2 + k + 1) / k! from below only when n >= 2.
        let lg = if q.dim() >= 2 { ln_gamma(h) } else { ln_gamma(h + 1.0) };
        let lmin = q.min_lambda();
        if y == 0.0 {
            return Ok(Self { lines: vec![], kind, zero: true });
        }
        let ly2 = (0.5 * y).ln();
        let mut lines = Vec::new();
        for f in policy.fractions()? {
            let rho = f * lmin;
            let lm = log_m_rho(q, rho)?;
            let x = y / (2.0 * rho);
            let base = match kind {
                Kind::Cdf => lm - lg + h * ly2 + x,
                Kind::Pdf => lm - lg + (h - 1.0) * ly2 + x,
            };
            lines.push((base, x.ln()));
        }
        Ok(Self { lines, kind, zero: false })
    }

    /// Log of the certificate after summing terms `0..=n_last`.
    pub(crate) fn log_bound(&self, n_last: usize) -> f64 {
        if self.zero {
            return f64::NEG_INFINITY;
        }
        let np1 = (n_last + 1) as f64;
        let fact = match self.kind {
            Kind::Cdf => ln_gamma(np1 + 1.0),
            Kind::Pdf => ln_gamma(np1),
        };
        self.lines
            .iter()
            .map(|&(c, s)| c + np1 * s)
            .fold(f64::INFINITY, f64::min)
            - fact
    }

    /// Log of the bound on `Σ_k |term_k|` (the certificate before any term).
    pub(crate) fn log_total(&self) -> f64 {
        if self.zero {
            return f64::NEG_INFINITY;
        }
        self.lines.iter().map(|&(c, _)| c).fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn bound(&self, n_last: usize) -> f64 {
        self.log_bound(n_last).exp()
    }

    /// Smallest `N` whose certificate is at most `tol`, searched up to `cap`.
    pub(crate) fn first_below(&self, tol: f64, cap: usize) -> Option<usize> {
        let lt = tol.ln();
        (0..=cap).find(|&n| self.log_bound(n) <= lt)
    }
}

/// Certified bound on `|F(y) - F_N(y)|` where `F_N` sums terms `0..=n`.
pub fn truncation_bound(q: &QuadFormCanonical, rho: f64, y: f64, n: usize) -> Result<f64> {
    let lmin = q.min_lambda();
    if !(rho > 0.0 && rho < lmin) {
        return Err(Error::InvalidArgument(format!("rho {rho} must lie in (0, {lmin})")));
    }
    if y < 0.0 || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("y = {y} must be finite and >= 0")));
    }
    let cert = Certificate::new(q, y, Kind::Cdf, RhoPolicy::Fraction(rho / lmin))?;
    Ok(cert.bound(n))
}

/// Same as [`truncation_bound`] for the density series.
pub fn pdf_truncation_bound(q: &QuadFormCanonical, rho: f64, y: f64, n: usize) -> Result<f64> {
    let lmin = q.min_lambda();
    if !(rho > 0.0 && rho < lmin) {
        return Err(Error::InvalidArgument(format!("rho {rho} must lie in (0, {lmin})")));
    }
    let cert = Certificate::new(q, y, Kind::Pdf, RhoPolicy::Fraction(rho / lmin))?;
    Ok(cert.bound(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(l: &[f64], b: &[f64]) -> QuadFormCanonical {
        QuadFormCanonical::new(l.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn central_m_rho_closed_form() {
        let q = form(&[0.3, 0.7], &[0.0, 0.0]);
        let rho = 0.1;
        let want: f64 = [0.3f64, 0.7].iter().map(|l| l.powf(-0.5) * (1.0 - rho / l).powf(-0.5)).product();
        assert!((log_m_rho(&q, rho).unwrap().exp() - want).abs() < 1e-14 * want);
    }

    #[test]
    fn rejects_invalid_rho() {
        let q = form(&[0.3, 0.7], &[1.0, 0.0]);
        assert!(truncation_bound(&q, 0.3, 1.0, 3).is_err());
        assert!(truncation_bound(&q, 0.0, 1.0, 3).is_err());
    }

    #[test]
    fn bound_decreases_past_threshold() {
        let q = form(&[0.04, 0.04], &[4.0, 0.0]);
        let rho: f64 = 0.02;
        let y: f64 = 0.64;
        let start = (y / (2.0 * rho)).ceil() as usize + 1;
        for n in start..start + 40 {
            let a = truncation_bound(&q, rho, y, n).unwrap();
            let b = truncation_bound(&q, rho, y, n + 10).unwrap();
            assert!(b < a);
            assert!(a >= 0.0);
        }
        assert!(truncation_bound(&q, rho, y, 400).unwrap() < 1e-30);
    }

    #[test]
    fn bound_matches_direct_formula() {
        let q = form(&[0.5, 1.5], &[0.3, -0.2]);
        let (rho, y, n) = (0.2, 1.3, 6usize);
        let m = log_m_rho(&q, rho).unwrap().exp();
        let fact: f64 = (1..=n + 1).map(|k| k as f64).product();
        let want = m / fact * (y / 2.0) * (y / (2.0 * rho)).powi(n as i32 + 1) * (y / (2.0 * rho)).exp();
        let got = truncation_bound(&q, rho, y, n).unwrap();
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn zero_y_has_zero_bound() {
        let q = form(&[0.5, 1.5], &[0.3, -0.2]);
        assert_eq!(truncation_bound(&q, 0.2, 0.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn optimized_is_no_worse_than_half() {
        let q = form(&[0.04, 0.04], &[4.0, 0.0]);
        let half = Certificate::new(&q, 0.64, Kind::Cdf, RhoPolicy::HalfMin).unwrap();
        let opt = Certificate::new(&q, 0.64, Kind::Cdf, RhoPolicy::Optimized).unwrap();
        for n in 0..80 {
            assert!(opt.log_bound(n) <= half.log_bound(n) + 1e-12);
        }
    }
}
