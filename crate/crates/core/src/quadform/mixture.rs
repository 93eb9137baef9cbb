//! Positive chi-square mixture expansion and Chernoff tail certificates,
//! used when `y / (2 min λ)` is too large for the alternating series.
//!
//! With `β = min λ` and `θ_j = 1 - β / λ_j`,
//! `P(Q <= y) = Σ_k a_k P(χ²_{n+2k} <= y / β)` where every `a_k >= 0`,
//! `Σ a_k = 1`, `ln a_0 = ½ Σ ln(β/λ_j) - ½ Σ b_j^2` and
//! `a_k = (1/k) Σ_{m=1..k} G_m a_{k-m}`,
//! `G_m = ½ Σ_j (θ_j^m + m b_j^2 (1 - θ_j) θ_j^{m-1})`.

use statrs::function::gamma::ln_gamma;

use super::{Method, QuadFormCanonical, SeriesResult};
use crate::error::{Error, Result};

const MAX_TERMS: usize = 4_000_000;
/// Rough operation budget (terms times recursion length).
const MAX_WORK: f64 = 5e7;
const RESCALE: f64 = 1e200;

fn cgf_lower(q: &QuadFormCanonical, y: f64, s: f64) -> (f64, f64) {
    let mut val = s * y;
    let mut der = y;
    for (&l, &b) in q.lambdas().iter().zip(q.offsets_b()) {
        let d = 1.0 + 2.0 * l * s;
        val -= 0.5 * d.ln() + l * b * b * s / d;
        der -= l / d + l * b * b / (d * d);
    }
    (val, der)
}

fn cgf_upper(q: &QuadFormCanonical, y: f64, s: f64) -> (f64, f64) {
    let mut val = -s * y;
    let mut der = -y;
    for (&l, &b) in q.lambdas().iter().zip(q.offsets_b()) {
        let d = 1.0 - 2.0 * l * s;
        val += -0.5 * d.ln() + l * b * b * s / d;
        der += l / d + l * b * b / (d * d);
    }
    (val, der)
}

fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Chernoff bound on `P(Q <= y)`; returns 1 when `y >= E[Q]`.
pub(crate) fn lower_tail_bound(q: &QuadFormCanonical, y: f64) -> f64 {
    if y >= q.mean() {
        return 1.0;
    }
    if y <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0 / q.min_lambda();
    while cgf_lower(q, y, hi).1 < 0.0 && hi < 1e300 {
        hi *= 2.0;
    }
    let s = bisect_root(|s| cgf_lower(q, y, s).1, 0.0, hi);
    cgf_lower(q, y, s).0.exp().min(1.0)
}

/// Chernoff bound on `P(Q > y)`; returns 1 when `y <= E[Q]`.
pub(crate) fn upper_tail_bound(q: &QuadFormCanonical, y: f64) -> f64 {
    if y <= q.mean() {
        return 1.0;
    }
    let lmax = q.lambdas().iter().cloned().fold(0.0, f64::max);
    let cap = 0.5 / lmax;
    let s = bisect_root(|s| cgf_upper(q, y, s).1, 0.0, cap * (1.0 - 1e-12));
    cgf_upper(q, y, s).0.exp().min(1.0)
}

struct Weights {
    g: Vec<f64>,
    a: Vec<f64>,
    /// `ln` of the common scale of `a` and `cum`.
    scale: f64,
    cum: f64,
}

impl Weights {
    fn new(q: &QuadFormCanonical) -> (Self, f64) {
        let beta = q.min_lambda();
        let theta: Vec<f64> = q.lambdas().iter().map(|l| 1.0 - beta / l).collect();
        let b2: Vec<f64> = q.offsets_b().iter().map(|b| b * b).collect();
        let tmax = theta.iter().cloned().fold(0.0, f64::max);
        let mut g = Vec::new();
        for m in 1usize.. {
            let mf = m as f64;
            let gm: f64 = theta
                .iter()
                .zip(&b2)
                .map(|(&t, &bb)| 0.5 * (t.powi(m as i32) + mf * bb * (1.0 - t) * t.powi(m as i32 - 1)))
                .sum();
            g.push(gm);
            let rest = tmax.powi(m as i32) * (1.0 + mf * b2.iter().sum::<f64>());
            if m > 1 && (rest < 1e-20 * g[0] || rest == 0.0) {
                break;
            }
        }
        let scale = q
            .lambdas()
            .iter()
            .map(|l| 0.5 * (beta / l).ln())
            .sum::<f64>()
            - 0.5 * b2.iter().sum::<f64>();
        (Self { g, a: vec![1.0], scale, cum: 1.0 }, beta)
    }

    fn push_next(&mut self) {
        let k = self.a.len();
        let mut s = 0.0;
        for (m, gm) in self.g.iter().enumerate().take(k) {
            s += gm * self.a[k - 1 - m];
        }
        let v = s / k as f64;
        self.a.push(v);
        self.cum += v;
        if self.cum > RESCALE {
            let f = 1.0 / self.cum;
            let keep = self.g.len().min(self.a.len());
            let start = self.a.len() - keep;
            for x in &mut self.a[start..] {
                *x *= f;
            }
            self.scale -= f.ln();
            self.cum = 1.0;
        }
    }

    fn ln_a(&self, k: usize) -> f64 {
        self.a[k].ln() + self.scale
    }

    fn ln_cum(&self) -> f64 {
        self.cum.ln() + self.scale
    }
}

/// Terms times recursion length, estimated from `y / 2β` and the decay of `θ_max`.
fn work(q: &QuadFormCanonical, y: f64) -> f64 {
    let beta = q.min_lambda();
    let lmax = q.lambdas().iter().cloned().fold(0.0, f64::max);
    let half_x = y / (2.0 * beta);
    let terms = half_x + 10.0 * half_x.sqrt() + 50.0;
    let tmax = 1.0 - beta / lmax;
    let glen = if tmax <= 0.0 { 1.0 } else { (50.0 + 2.0 * (1.0 + q.b_norm_sq()).ln()) / -tmax.ln() };
    terms * glen.min(terms)
}

fn check_work(q: &QuadFormCanonical, y: f64) -> Result<()> {
    let w = work(q, y);
    if w > MAX_WORK {
        return Err(Error::IllConditioned(format!("mixture expansion needs about {w:.1e} operations")));
    }
    Ok(())
}

fn tail_result(value: f64, bound: f64) -> SeriesResult {
    SeriesResult { value, terms_used: 1, bound_at_stop: bound, converged: true, method: Method::Tail }
}

pub(crate) fn cdf(q: &QuadFormCanonical, y: f64, tol: f64) -> Result<SeriesResult> {
    let lo = lower_tail_bound(q, y);
    if lo <= 0.5 * tol {
        return Ok(tail_result(0.0, lo));
    }
    let hi = upper_tail_bound(q, y);
    if hi <= 0.5 * tol {
        return Ok(tail_result(1.0, hi));
    }
    check_work(q, y)?;
    let (mut w, beta) = Weights::new(q);
    let h = 0.5 * q.dim() as f64;
    let half_x = y / (2.0 * beta);
    let lx = half_x.ln();
    let ln_t = |m: usize| -half_x + (h + m as f64) * lx - ln_gamma(h + m as f64 + 1.0);
    let mut total = 0.0;
    let mut m = 0usize;
    loop {
        total += (ln_t(m) + w.ln_cum()).exp();
        let next = m + 1;
        let ratio = half_x / (h + next as f64 + 1.0);
        if ratio < 1.0 {
            let tail = ln_t(next).exp() / (1.0 - ratio);
            let round = 1e-14 * total + 1e-300;
            if tail + round <= 0.5 * tol {
                return Ok(SeriesResult {
                    value: total.clamp(0.0, 1.0),
                    terms_used: next,
                    bound_at_stop: tail + round,
                    converged: true,
                    method: Method::Mixture,
                });
            }
        }
        if next >= MAX_TERMS {
            return Ok(SeriesResult {
                value: total.clamp(0.0, 1.0),
                terms_used: next,
                bound_at_stop: 1.0,
                converged: false,
                method: Method::Mixture,
            });
        }
        w.push_next();
        m = next;
    }
}

pub(crate) fn pdf(q: &QuadFormCanonical, y: f64, tol: f64) -> Result<SeriesResult> {
    check_work(q, y)?;
    let (mut w, beta) = Weights::new(q);
    let h = 0.5 * q.dim() as f64;
    let half_x = y / (2.0 * beta);
    let lx = half_x.ln();
    let ln_u = |k: usize| -half_x + (h + k as f64 - 1.0) * lx - ln_gamma(h + k as f64);
    let norm = 1.0 / (2.0 * beta);
    let mut total = 0.0;
    let mut k = 0usize;
    loop {
        total += norm * (w.ln_a(k) + ln_u(k)).exp();
        let next = k + 1;
        if h + next as f64 - 1.0 >= half_x {
            let missing = (1.0 - w.ln_cum().exp()).max(1e-15 * next as f64);
            let tail = norm * ln_u(next).exp() * missing;
            let round = 1e-14 * total;
            if tail + round <= 0.5 * tol {
                return Ok(SeriesResult {
                    value: total,
                    terms_used: next,
                    bound_at_stop: tail + round,
                    converged: true,
                    method: Method::Mixture,
                });
            }
        }
        if next >= MAX_TERMS {
            return Ok(SeriesResult {
                value: total,
                terms_used: next,
                bound_at_stop: f64::INFINITY,
                converged: false,
                method: Method::Mixture,
            });
        }
        w.push_next();
        k = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(l: &[f64], b: &[f64]) -> QuadFormCanonical {
        QuadFormCanonical::new(l.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn weights_sum_to_one() {
        let q = form(&[0.2, 0.5, 0.7], &[1.0, -0.5, 0.3]);
        let (mut w, _) = Weights::new(&q);
        for _ in 0..400 {
            w.push_next();
        }
        assert!((w.ln_cum().exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn central_isotropic_closed_form() {
        let q = form(&[0.01, 0.01], &[0.0, 0.0]);
        let y = 0.05;
        let r = cdf(&q, y, 1e-12).unwrap();
        assert!((r.value - (1.0 - (-y / 0.02f64).exp())).abs() < 1e-12, "{r:?}");
        let p = pdf(&q, y, 1e-12).unwrap();
        assert!((p.value - (-y / 0.02f64).exp() / 0.02).abs() < 1e-10, "{p:?}");
    }

    #[test]
    fn matches_series_in_overlap_region() {
        let q = form(&[0.04, 0.09], &[3.0, -1.0]);
        let s = crate::quadform::cdf_with(
            &q,
            0.64,
            &crate::quadform::SeriesOptions { allow_mixture: false, ..crate::quadform::SeriesOptions::new(1e-12, 2000) },
        )
        .unwrap();
        let m = cdf(&q, 0.64, 1e-12).unwrap();
        assert!((s.value - m.value).abs() < 1e-11, "{s:?} {m:?}");
    }

    #[test]
    fn chernoff_bounds_are_bounds() {
        let q = form(&[0.04, 0.04], &[10.0, 0.0]);
        let lo = lower_tail_bound(&q, 0.64);
        assert!(lo < 1e-3 && lo > 0.0);
        assert_eq!(upper_tail_bound(&q, 0.64), 1.0);
        let hi = upper_tail_bound(&q, 20.0);
        assert!(hi < 1e-10);
    }
}
