//! Double precision evaluation of the power series with normalized terms.
//!
//! With `a = n/2` (cdf) or `a = n/2 - 1` (pdf) the k-th term is
//! `(-1)^k c_k y^{a+k} / Γ(a+k+1)`. Writing `c_k = c_0 γ_k` and
//! `τ_k = γ_k Π_{l=1..k} y / (a + l)` the terms become `F (-1)^k τ_k` with
//! `F = c_0 y^a / Γ(a+1)`, and the recursion for `γ_k` turns into
//!
//! `τ_k = (1/k) Σ_{i<k} τ_i · ½ Σ_j (1 - (k-i) b_j^2) Π_{l=i+1..k} r_j / (a+l)`
//!
//! with `r_j = y / (2 λ_j)`. Every quantity stays near the size of the
//! actual terms, so nothing overflows before the terms themselves would.

use statrs::function::gamma::ln_gamma;

use super::bound::Kind;
use super::QuadFormCanonical;

const U: f64 = f64::EPSILON * 0.5;

pub(crate) fn offset(q: &QuadFormCanonical, kind: Kind) -> f64 {
    let h = 0.5 * q.dim() as f64;
    match kind {
        Kind::Cdf => h,
        Kind::Pdf => h - 1.0,
    }
}

pub(crate) fn ln_prefactor(q: &QuadFormCanonical, y: f64, kind: Kind) -> f64 {
    let a = offset(q, kind);
    let pow = if a == 0.0 { 0.0 } else { a * y.ln() };
    q.ln_c0() + pow - ln_gamma(a + 1.0)
}

pub(crate) struct Pass {
    /// `Σ (-1)^k τ_k`.
    pub sum: f64,
    /// Estimated absolute rounding error of `sum`.
    pub err: f64,
    pub ln_prefactor: f64,
    /// `(-1)^k τ_k`.
    pub terms: Vec<f64>,
    /// Stopped early because `err` passed the abort threshold.
    pub aborted: bool,
}

pub(crate) fn evaluate(q: &QuadFormCanonical, y: f64, kind: Kind, n_last: usize) -> Pass {
    evaluate_until(q, y, kind, n_last, f64::INFINITY)
}

/// Like [`evaluate`] but gives up once the estimated error of the sum
/// exceeds `abort_err` (in units of the normalized terms).
pub(crate) fn evaluate_until(q: &QuadFormCanonical, y: f64, kind: Kind, n_last: usize, abort_err: f64) -> Pass {
    let n = q.dim();
    let a = offset(q, kind);
    let r: Vec<f64> = q.lambdas().iter().map(|l| y / (2.0 * l)).collect();
    let b2: Vec<f64> = q.offsets_b().iter().map(|b| b * b).collect();

    // prod[i * n + j] = Π_{l=i+1..k} r_j / (a + l)
    let mut prod: Vec<f64> = Vec::with_capacity((n_last + 1) * n);
    let mut tau = Vec::with_capacity(n_last + 1);
    let mut delta = Vec::with_capacity(n_last + 1);
    let mut terms = Vec::with_capacity(n_last + 1);
    tau.push(1.0);
    delta.push(0.0);
    terms.push(1.0);

    let mut sum = 1.0;
    let mut comp = 0.0;
    let mut abs_sum = 1.0;
    let mut err_sum = 0.0;
    let mut fac = vec![0.0; n];
    let mut aborted = false;

    for k in 1..=n_last {
        let kf = k as f64;
        for j in 0..n {
            fac[j] = r[j] / (a + kf);
        }
        for chunk in prod.chunks_exact_mut(n) {
            for j in 0..n {
                chunk[j] *= fac[j];
            }
        }
        prod.extend_from_slice(&fac);

        let mut s = 0.0;
        let mut s_abs = 0.0;
        let mut s_err = 0.0;
        for i in 0..k {
            let m = (k - i) as f64;
            let row = &prod[i * n..(i + 1) * n];
            let mut d = 0.0;
            let mut d_abs = 0.0;
            for j in 0..n {
                let t = (1.0 - m * b2[j]) * row[j];
                d += t;
                d_abs += t.abs();
            }
            d *= 0.5;
            d_abs *= 0.5;
            let ti = tau[i];
            s += d * ti;
            s_abs += d_abs * ti.abs();
            s_err += d_abs * (delta[i] + (m + n as f64 + 3.0) * U * ti.abs());
        }
        let t = s / kf;
        let alpha = s_abs / kf;
        let dk = s_err / kf + 2.0 * U * alpha;
        tau.push(t);
        delta.push(dk);

        let signed = if k % 2 == 1 { -t } else { t };
        terms.push(signed);
        let yk = signed - comp;
        let next = sum + yk;
        comp = (next - sum) - yk;
        sum = next;
        abs_sum += t.abs();
        err_sum += dk;
        if err_sum + 2.0 * U * abs_sum > abort_err {
            aborted = true;
            break;
        }
    }

    Pass {
        sum,
        err: err_sum + 2.0 * U * abs_sum,
        ln_prefactor: ln_prefactor(q, y, kind),
        terms,
        aborted,
    }
}
