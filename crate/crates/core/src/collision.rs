//! Collision probability between two uncertain discs and ε-safety checks.
//!
//! With `w = x_robot - x_obstacle ~ N(μ_w, Σ_w)` the discs overlap iff
//! `‖w‖² <= (r₁ + s₁)²`, so the probability is the cdf of a quadratic form
//! with `A = I` evaluated at `(r₁ + s₁)²`.

use std::f64::consts::SQRT_2;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_difference, sym_eig, Gaussian, Vector};
use crate::quadform::{self, Method, QuadFormCanonical, SeriesOptions, SeriesResult};

/// Default tolerance for collision queries.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Largest accepted tolerance for a single query.
pub const MAX_TOL: f64 = 0.01;
/// Eigen-directions of `Σ_w` with variance below this fraction of the
/// largest are treated as certain.
const DEGENERATE_REL: f64 = 1e-12;
const MAX_TERMS: usize = 4000;
const GL_ORDER: usize = 8;
const MAX_PANELS: usize = 4096;
/// Half-width of the integration window in standard deviations.
const WINDOW_SIGMAS: f64 = 12.0;

/// Circular rigid body with an uncertain planar position.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub pose: Gaussian,
    pub radius: f64,
}

impl Body {
    pub fn new(pose: Gaussian, radius: f64) -> Result<Self> {
        if pose.dim() != 2 {
            return Err(Error::Dimension { expected: 2, got: pose.dim() });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius {radius} must be > 0")));
        }
        Ok(Self { pose, radius })
    }

    /// Body at a known position.
    pub fn certain(x: f64, y: f64, radius: f64) -> Result<Self> {
        Self::new(Gaussian::certain(Vector::from_vec(vec![x, y])), radius)
    }

    /// Uses the position block (first two components) of a pose belief.
    pub fn from_pose(belief: &Gaussian, radius: f64) -> Result<Self> {
        if belief.dim() < 2 {
            return Err(Error::Dimension { expected: 2, got: belief.dim() });
        }
        let pose = Gaussian {
            mean: belief.mean.rows(0, 2).into_owned(),
            cov: belief.cov.view((0, 0), (2, 2)).into_owned(),
        };
        Self::new(pose, radius)
    }

    pub fn center(&self) -> Vector {
        self.pose.mean.clone()
    }
}

/// Relative position `w` and the collision radius `r₁ + s₁`.
pub fn relative(robot: &Body, obstacle: &Body) -> Result<(Gaussian, f64)> {
    Ok((gaussian_difference(&robot.pose, &obstacle.pose)?, robot.radius + obstacle.radius))
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= MAX_TOL) {
        return Err(Error::InvalidArgument(format!("tol {tol} outside (0, {MAX_TOL}]")));
    }
    Ok(())
}

fn trivial(value: f64) -> SeriesResult {
    SeriesResult { value, terms_used: 0, bound_at_stop: 0.0, converged: true, method: Method::Trivial }
}

/// `P(‖w‖² <= radius²)` for `w ~ N(μ, Σ)` of any dimension. Directions with
/// (numerically) zero variance are folded into the threshold.
pub fn disc_probability(w: &Gaussian, radius: f64, tol: f64) -> Result<SeriesResult> {
    let y = radius * radius;
    let dist = w.mean.norm();
    if dist > radius {
        // ‖w‖ <= r implies uᵀw <= r along u = μ/‖μ‖
        let u = &w.mean / dist;
        let s = (u.transpose() * &w.cov * &u)[(0, 0)].max(0.0).sqrt();
        let bound = if s > 0.0 { 0.5 * erfc((dist - radius) / (s * SQRT_2)) } else { 0.0 };
        if bound <= 0.5 * tol {
            return Ok(SeriesResult { value: 0.0, terms_used: 0, bound_at_stop: bound, converged: true, method: Method::Tail });
        }
    }
    let (vals, vecs) = sym_eig(&w.cov)?;
    let z = vecs.transpose() * &w.mean;
    let vmax = vals.iter().cloned().fold(0.0, f64::max);
    let cut = DEGENERATE_REL * vmax;
    let mut lambdas = Vec::new();
    let mut offsets = Vec::new();
    let mut rest = y;
    for (i, &l) in vals.iter().enumerate() {
        if l > cut && l > 0.0 {
            lambdas.push(l);
            offsets.push(z[i] / l.sqrt());
        } else {
            rest -= z[i] * z[i];
        }
    }
    if lambdas.is_empty() {
        return Ok(trivial(if rest >= 0.0 { 1.0 } else { 0.0 }));
    }
    if rest <= 0.0 {
        return Ok(trivial(0.0));
    }
    let planar = lambdas.len() == 2;
    let eval = QuadFormCanonical::new(lambdas.clone(), offsets.clone())
        .and_then(|q| quadform::cdf_with(&q, rest, &SeriesOptions::new(tol, MAX_TERMS)));
    match eval {
        Err(Error::IllConditioned(_)) if planar => {
            let (n, wd) = if lambdas[0] <= lambdas[1] { (0, 1) } else { (1, 0) };
            let mean = |i: usize| offsets[i] * lambdas[i].sqrt();
            conditional_planar((mean(n), lambdas[n].sqrt()), (mean(wd), lambdas[wd].sqrt()), rest, tol)
        }
        other => other,
    }
}

fn normal_mass(lo: f64, hi: f64, m: f64, s: f64) -> f64 {
    let a = (lo - m) / (s * SQRT_2);
    let b = (hi - m) / (s * SQRT_2);
    if a > 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else {
        0.5 * (erfc(-b) - erfc(-a))
    }
}

/// `P(t² + s² <= y)` for independent `t ~ N(narrow)` and `s ~ N(wide)`,
/// integrating over `t = √y sin θ`. Panels double until the value settles.
fn conditional_planar(narrow: (f64, f64), wide: (f64, f64), y: f64, tol: f64) -> Result<SeriesResult> {
    let (mn, sn) = narrow;
    let (mw, sw) = wide;
    let r = y.sqrt();
    let lo = (mn - WINDOW_SIGMAS * sn).max(-r);
    let hi = (mn + WINDOW_SIGMAS * sn).min(r);
    if lo >= hi {
        return Ok(SeriesResult { value: 0.0, terms_used: 0, bound_at_stop: 0.0, converged: true, method: Method::Conditional });
    }
    let (a, b) = ((lo / r).clamp(-1.0, 1.0).asin(), (hi / r).clamp(-1.0, 1.0).asin());
    let norm = 1.0 / (sn * (2.0 * std::f64::consts::PI).sqrt());
    let f = |th: f64| {
        let (st, ct) = th.sin_cos();
        let t = r * st;
        let h = r * ct;
        let z = (t - mn) / sn;
        norm * (-0.5 * z * z).exp() * normal_mass(-h, h, mw, sw) * r * ct
    };
    let gl = GaussLegendre::new(NonZeroUsize::new(GL_ORDER).unwrap());
    let integrate = |panels: usize| -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels).map(|p| gl.integrate(a + p as f64 * h, a + (p + 1) as f64 * h, f)).sum()
    };
    let mut panels = 4;
    let mut prev = integrate(panels);
    while panels < MAX_PANELS {
        panels *= 2;
        let cur = integrate(panels);
        let change = (cur - prev).abs();
        if change < 0.25 * tol {
            return Ok(SeriesResult {
                value: cur.clamp(0.0, 1.0),
                terms_used: panels * GL_ORDER,
                bound_at_stop: change,
                converged: true,
                method: Method::Conditional,
            });
        }
        prev = cur;
    }
    Err(Error::IllConditioned(format!("conditional quadrature did not settle within {MAX_PANELS} panels")))
}

/// Probability that the two discs overlap.
pub fn collision_probability(robot: &Body, obstacle: &Body, tol: f64) -> Result<SeriesResult> {
    check_tol(tol)?;
    let (w, r) = relative(robot, obstacle)?;
    disc_probability(&w, r, tol)
}

/// Outcome of an ε-safety check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Safety {
    pub safe: bool,
    /// Largest collision probability over the obstacles.
    pub worst_prob: f64,
    /// Set when some evaluation could not decide against `1 - eps` and the
    /// configuration was declared unsafe.
    pub undecided: bool,
}

/// Safe iff every obstacle's collision probability, including its error
/// bound, is at most `1 - eps`.
pub fn is_eps_safe(robot: &Body, obstacles: &[Body], eps: f64, tol: f64) -> Result<Safety> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0, 1)")));
    }
    let thr = 1.0 - eps;
    if tol > thr / 10.0 {
        return Err(Error::InvalidArgument(format!("tol {tol} exceeds (1 - eps) / 10")));
    }
    let mut out = Safety { safe: true, worst_prob: 0.0, undecided: false };
    for ob in obstacles {
        let r = collision_probability(robot, ob, tol)?;
        out.worst_prob = out.worst_prob.max(r.value);
        let bound = if r.converged { r.bound_at_stop } else { f64::INFINITY };
        if r.value + bound > thr {
            out.safe = false;
            if r.value <= thr {
                out.undecided = true;
            }
        }
    }
    Ok(out)
}

/// Largest pairwise probability between any of the robot's circles and
/// the obstacle.
pub fn multi_circle_probability(circles: &[Body], obstacle: &Body, tol: f64) -> Result<f64> {
    if circles.is_empty() {
        return Err(Error::InvalidArgument("no circles given".into()));
    }
    let mut worst: f64 = 0.0;
    for c in circles {
        worst = worst.max(collision_probability(c, obstacle, tol)?.value);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(x: f64, y: f64, var: f64, r: f64) -> Body {
        Body::new(Gaussian::planar(x, y, var, 0.0, var).unwrap(), r).unwrap()
    }

    #[test]
    fn coincident_certain_bodies_collide() {
        let r = collision_probability(&body(1.0, 1.0, 0.0, 0.3), &body(1.0, 1.0, 0.0, 0.5), 1e-6).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.method, Method::Trivial);
    }

    #[test]
    fn tiny_covariance_coincident_is_near_one() {
        let r = collision_probability(&body(0.0, 0.0, 1e-9, 0.3), &body(0.0, 0.0, 1e-9, 0.5), 1e-6).unwrap();
        assert!(r.value > 1.0 - 1e-6);
    }

    #[test]
    fn far_apart_is_negligible() {
        let r = collision_probability(&body(0.0, 0.0, 0.02, 0.3), &body(10.0, 0.0, 0.02, 0.5), 1e-6).unwrap();
        assert!(r.value < 1e-12);
    }

    #[test]
    fn one_certain_direction_reduces_dimension() {
        // w = (N(0.5, 0.04), 0.3): P(w1² <= 0.64 - 0.09)
        let w = Gaussian::planar(0.5, 0.3, 0.04, 0.0, 0.0).unwrap();
        let got = disc_probability(&w, 0.8, 1e-10).unwrap().value;
        let h = 0.55f64.sqrt();
        let n = statrs::distribution::Normal::new(0.5, 0.2).unwrap();
        use statrs::distribution::ContinuousCDF;
        let want = n.cdf(h) - n.cdf(-h);
        assert!((got - want).abs() < 1e-9, "{got} {want}");
    }

    #[test]
    fn central_isotropic_closed_form() {
        let r = collision_probability(&body(0.0, 0.0, 0.02, 0.3), &body(0.0, 0.0, 0.02, 0.5), 1e-10).unwrap();
        let want = 1.0 - (-0.64f64 / 0.08).exp();
        assert!((r.value - want).abs() < 1e-10);
    }

    #[test]
    fn eps_safety_thresholds() {
        let robot = body(0.0, 0.0, 0.02, 0.3);
        let near = body(1.4, 0.0, 0.02, 0.5);
        let p = collision_probability(&robot, &near, 1e-6).unwrap().value;
        let s = is_eps_safe(&robot, &[near.clone()], 0.99, 1e-6).unwrap();
        assert_eq!(s.safe, p <= 0.01);
        assert_eq!(s.worst_prob, p);
        assert!(is_eps_safe(&robot, &[], 0.99, 1e-6).unwrap().safe);
        assert!(is_eps_safe(&robot, &[near], 0.99, 0.01).is_err());
    }

    #[test]
    fn multi_circle_takes_max() {
        let ob = body(1.0, 0.0, 0.04, 0.5);
        let near = body(0.2, 0.0, 0.01, 0.3);
        let far = body(-5.0, 0.0, 0.01, 0.3);
        let pn = collision_probability(&near, &ob, 1e-8).unwrap().value;
        assert_eq!(multi_circle_probability(&[far.clone(), near.clone()], &ob, 1e-8).unwrap(), pn);
        assert_eq!(multi_circle_probability(&[near.clone(), near.clone()], &ob, 1e-8).unwrap(), pn);
        assert!(multi_circle_probability(&[], &ob, 1e-8).is_err());
    }

    #[test]
    fn thin_covariance_uses_conditional_quadrature() {
        // narrow y variance; reference is the 1-D form with y fixed at its mean
        let w = Gaussian::planar(0.1, 0.05, 6.1e-4, 0.0, 1e-11).unwrap();
        let r = disc_probability(&w, 0.15, 1e-8).unwrap();
        assert_eq!(r.method, Method::Conditional);
        let h = (0.15f64 * 0.15 - 0.05 * 0.05).sqrt();
        let n = statrs::distribution::Normal::new(0.1, 6.1e-4f64.sqrt()).unwrap();
        use statrs::distribution::ContinuousCDF;
        let want = n.cdf(h) - n.cdf(-h);
        assert!((r.value - want).abs() < 1e-4, "{} {want}", r.value);
    }

    #[test]
    fn conditional_matches_series_on_moderate_form() {
        let w = Gaussian::planar(0.3, -0.2, 0.05, 0.01, 0.02).unwrap();
        let series = disc_probability(&w, 0.5, 1e-10).unwrap().value;
        let (vals, vecs) = sym_eig(&w.cov).unwrap();
        let z = vecs.transpose() * &w.mean;
        let (n, wd) = if vals[0] <= vals[1] { (0, 1) } else { (1, 0) };
        let c = conditional_planar((z[n], vals[n].sqrt()), (z[wd], vals[wd].sqrt()), 0.25, 1e-10).unwrap();
        assert!((c.value - series).abs() < 1e-9, "{} {series}", c.value);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Body::certain(0.0, 0.0, 0.0).is_err());
        assert!(Body::new(Gaussian::certain(Vector::zeros(3)), 1.0).is_err());
        let b = body(0.0, 0.0, 0.01, 0.3);
        assert!(collision_probability(&b, &b, 0.5).is_err());
    }
}
