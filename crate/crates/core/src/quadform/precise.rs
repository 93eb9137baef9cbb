//! Arbitrary precision evaluation of the normalized series sum.
//!
//! The generating function of `γ_k y^k` is
//! `Π_j (1 - r_j t)^{-1/2} exp(-½ Σ_j b_j^2 r_j t / (1 - r_j t))`, which is
//! holonomic: with `P(t) = Π_g (1 - r_g t)^2` over distinct `r` values,
//! `P g' = R g` for a polynomial `R`, giving a fixed-order recurrence.

use dashu_int::IBig;

use super::bound::Kind;
use super::series::offset;
use super::QuadFormCanonical;

/// Fixed point numbers `v * 2^frac` held in an `IBig`.
struct Fixed {
    frac: usize,
}

impl Fixed {
    fn from_f64(&self, x: f64) -> IBig {
        if x == 0.0 {
            return IBig::ZERO;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac_bits = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac_bits, -1074) } else { (frac_bits | (1u64 << 52), exp - 1075) };
        let m = if x < 0.0 { -IBig::from(mant) } else { IBig::from(mant) };
        let shift = self.frac as i64 + e;
        if shift >= 0 {
            m << shift as usize
        } else {
            m >> (-shift) as usize
        }
    }

    fn mul(&self, a: &IBig, b: &IBig) -> IBig {
        (a * b) >> self.frac
    }

    fn to_f64(&self, a: &IBig) -> f64 {
        let drop = self.frac.saturating_sub(960);
        let v = if drop > 0 { a >> drop } else { a.clone() };
        v.to_f64().value() * 2f64.powi(-((self.frac - drop) as i32))
    }

    fn poly_mul(&self, a: &[IBig], b: &[IBig]) -> Vec<IBig> {
        let mut out = vec![IBig::ZERO; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, z) in b.iter().enumerate() {
                out[i + j] += self.mul(x, z);
            }
        }
        out
    }
}

struct Group {
    r: f64,
    mult: f64,
    b2: f64,
}

fn groups(q: &QuadFormCanonical, y: f64) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for (&l, &b) in q.lambdas().iter().zip(q.offsets_b()) {
        let r = y / (2.0 * l);
        match out.iter_mut().find(|g| g.r == r) {
            Some(g) => {
                g.mult += 1.0;
                g.b2 += b * b;
            }
            None => out.push(Group { r, mult: 1.0, b2: b * b }),
        }
    }
    out
}

/// Divides by a product of small integers, batching them while they fit in a `u64`.
fn div_product(mut x: IBig, factors: impl Iterator<Item = u64>) -> IBig {
    let mut d: u64 = 1;
    for f in factors {
        match d.checked_mul(f) {
            Some(p) => d = p,
            None => {
                x = x / d;
                d = f;
            }
        }
    }
    if d > 1 {
        x = x / d;
    }
    x
}

/// `P` and `R` with `P g' = R g`. Groups without offset only need `(1 - r t)`
/// in the denominator.
fn recurrence(fx: &Fixed, gs: &[Group]) -> (Vec<IBig>, Vec<IBig>) {
    let den: Vec<Vec<IBig>> = gs
        .iter()
        .map(|g| {
            let lin = [fx.from_f64(1.0), fx.from_f64(-g.r)];
            if g.b2 == 0.0 {
                lin.to_vec()
            } else {
                fx.poly_mul(&lin, &lin)
            }
        })
        .collect();
    let mut p = vec![fx.from_f64(1.0)];
    for d in &den {
        p = fx.poly_mul(&p, d);
    }
    let mut rpoly: Vec<IBig> = vec![IBig::ZERO; p.len() - 1];
    for (gi, g) in gs.iter().enumerate() {
        let half_mr = fx.from_f64(0.5 * g.mult * g.r);
        let mut part = if g.b2 == 0.0 {
            vec![half_mr]
        } else {
            // ½ m r (1 - r t) - ½ B r
            let c0 = half_mr.clone() - fx.from_f64(0.5 * g.b2 * g.r);
            let c1 = -fx.mul(&half_mr, &fx.from_f64(g.r));
            vec![c0, c1]
        };
        for (hi, d) in den.iter().enumerate() {
            if hi != gi {
                part = fx.poly_mul(&part, d);
            }
        }
        for (i, c) in part.into_iter().enumerate() {
            rpoly[i] += c;
        }
    }
    (p, rpoly)
}

/// `Σ_{k=0..=n_last} (-1)^k τ_k` using the holonomic recurrence in fixed
/// point with `frac_bits` bits after the binary point. Each step adds an
/// error of a few units in the last place.
pub(crate) fn evaluate(q: &QuadFormCanonical, y: f64, kind: Kind, n_last: usize, frac_bits: usize) -> f64 {
    let fx = Fixed { frac: frac_bits };
    let gs = groups(q, y);
    let (p, rpoly) = recurrence(&fx, &gs);
    // 2a + 2l is a positive integer for every l >= 1.
    let two_a = (2.0 * offset(q, kind)).round() as i64;
    let twice = |l: usize| (two_a + 2 * l as i64) as u64;

    let mut tau: Vec<IBig> = Vec::with_capacity(n_last + 1);
    tau.push(fx.from_f64(1.0));
    let mut sum = tau[0].clone();
    // Longest run of denominator factors any single contribution carries.
    let span = rpoly.len().max(p.len().saturating_sub(1));
    for k in 0..n_last {
        let next = match common_step(&fx, &p, &rpoly, &tau, k, span, &twice) {
            Some(v) => v,
            None => separate_step(&fx, &p, &rpoly, &tau, k, &twice),
        };
        if (k + 1) % 2 == 1 {
            sum -= &next;
        } else {
            sum += &next;
        }
        tau.push(next);
    }
    fx.to_f64(&sum)
}

/// `a * b * 2^up` in fixed point.
fn mul_up(fx: &Fixed, a: &IBig, b: &IBig, up: usize) -> IBig {
    (a * b) >> (fx.frac - up)
}

/// Product of `twice(l)` over `lo..=hi`, or `None` when it leaves `u64`.
fn factor_product(lo: usize, hi: usize, twice: &impl Fn(usize) -> u64) -> Option<u64> {
    (lo..=hi).try_fold(1u64, |acc, l| acc.checked_mul(twice(l)))
}

/// Next term with every contribution over one shared denominator, so the
/// step needs a single division. `None` when that denominator overflows.
fn common_step(
    fx: &Fixed,
    p: &[IBig],
    rpoly: &[IBig],
    tau: &[IBig],
    k: usize,
    span: usize,
    twice: &impl Fn(usize) -> u64,
) -> Option<IBig> {
    let lo = (k + 2).saturating_sub(span).max(1);
    let den = factor_product(lo, k + 1, twice)?.checked_mul(k as u64 + 1)?;
    let mut acc = IBig::ZERO;
    for (m, rm) in rpoly.iter().enumerate().take(k + 1) {
        let c = factor_product(lo, k - m, twice)?;
        acc += mul_up(fx, rm, &tau[k - m], m + 1) * c;
    }
    for (m, pm) in p.iter().enumerate().skip(1).take(k) {
        let c = factor_product(lo, k + 1 - m, twice)?.checked_mul((k + 1 - m) as u64)?;
        acc -= mul_up(fx, pm, &tau[k + 1 - m], m) * c;
    }
    Some(acc / den)
}

fn separate_step(fx: &Fixed, p: &[IBig], rpoly: &[IBig], tau: &[IBig], k: usize, twice: &impl Fn(usize) -> u64) -> IBig {
    let mut acc = IBig::ZERO;
    for (m, rm) in rpoly.iter().enumerate().take(k + 1) {
        let x = mul_up(fx, rm, &tau[k - m], m + 1);
        acc += div_product(x, (k - m + 1..=k + 1).map(twice));
    }
    for (m, pm) in p.iter().enumerate().skip(1).take(k) {
        let x = mul_up(fx, pm, &tau[k + 1 - m], m) * (k + 1 - m);
        acc -= div_product(x, (k - m + 2..=k + 1).map(twice));
    }
    acc / (k as u64 + 1)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadform::series;

    #[test]
    fn recurrence_matches_convolution() {
        for (l, b, y) in [
            (vec![0.04, 0.04], vec![4.0, 0.0], 0.64),
            (vec![0.1, 0.35], vec![1.5, -2.0], 1.1),
            (vec![0.2, 0.5, 0.9], vec![0.3, 0.0, -1.0], 2.0),
        ] {
            let q = QuadFormCanonical::new(l, b).unwrap();
            for kind in [Kind::Cdf, Kind::Pdf] {
                let a = evaluate(&q, y, kind, 60, 256);
                let c = reference::evaluate_convolution(&q, y, kind, 60, 256);
                assert!((a - c).abs() <= 1e-14 * c.abs().max(1e-300), "{a} {c}");
            }
        }
    }

    #[test]
    fn agrees_with_double_precision_when_benign() {
        let q = QuadFormCanonical::new(vec![0.5, 0.9], vec![0.4, 0.7]).unwrap();
        let f = series::evaluate(&q, 0.8, Kind::Cdf, 40);
        let p = evaluate(&q, 0.8, Kind::Cdf, 40, 200);
        assert!((f.sum - p).abs() < 1e-14);
    }
}
