//! Comparison estimators for the disc collision probability: density
//! approximation, maximum density upper bound, Monte Carlo and polar grid
//! integration.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::legendre::GaussLegendre;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::collision::{collision_probability, relative, Body};
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_pdf, sym_inv, sym_sqrt, Gaussian, Matrix, Vector};

/// Measure `V` multiplying the density in the approximate estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolumeConvention {
    /// `π (r₁ + s₁)²`.
    #[default]
    Combined,
    /// `π r₁²`.
    Robot,
}

impl VolumeConvention {
    pub fn volume(&self, robot: &Body, obstacle: &Body) -> f64 {
        match self {
            VolumeConvention::Combined => PI * (robot.radius + obstacle.radius).powi(2),
            VolumeConvention::Robot => PI * robot.radius * robot.radius,
        }
    }
}

impl FromStr for VolumeConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(Self::Combined),
            "robot" => Ok(Self::Robot),
            other => Err(Error::Config(format!("unknown volume convention '{other}'"))),
        }
    }
}

fn pd_relative(robot: &Body, obstacle: &Body) -> Result<(Gaussian, f64)> {
    let (w, r) = relative(robot, obstacle)?;
    sym_inv(&w.cov)?;
    Ok((w, r))
}

/// `V · N(μ_robot; μ_obstacle, Σ_robot + Σ_obstacle)`, clamped to `[0, 1]`.
pub fn dutoit_burdick(robot: &Body, obstacle: &Body, vol: VolumeConvention) -> Result<f64> {
    let (w, _) = pd_relative(robot, obstacle)?;
    let at_zero = Gaussian { mean: Vector::zeros(2), cov: w.cov.clone() };
    let p = gaussian_pdf(&w.mean, &at_zero)?;
    Ok((vol.volume(robot, obstacle) * p).clamp(0.0, 1.0))
}

/// Point of the disc `‖w‖ <= r` where the density of `N(μ, Σ)` is largest.
pub fn max_density_point(mu: &Vector, sigma: &Matrix, r: f64) -> Result<Vector> {
    let norm = mu.norm();
    if norm <= r {
        return Ok(mu.clone());
    }
    let n = mu.len();
    let eye = Matrix::identity(n, n);
    let at = |nu: f64| -> Result<Vector> {
        let m = &eye + sigma * nu;
        m.lu().solve(mu).ok_or(Error::Singular(nu))
    };
    let mut hi = 1.0 / sigma.diagonal().max().max(1e-300);
    let mut grow = 0;
    while at(hi)?.norm() > r {
        hi *= 2.0;
        grow += 1;
        if grow > 2000 {
            return Err(Error::RootFind("could not bracket the multiplier".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)?.norm() > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = at(0.5 * (lo + hi))?;
    if ((w.norm() - r) / r).abs() > 1e-8 {
        return Err(Error::RootFind(format!("multiplier search ended at |w| = {}", w.norm())));
    }
    Ok(w)
}

/// `V` times the largest density of `w` over the collision disc, clamped to `[0, 1]`.
pub fn park_upper_bound(robot: &Body, obstacle: &Body, vol: VolumeConvention) -> Result<f64> {
    let (w, r) = pd_relative(robot, obstacle)?;
    let at = max_density_point(&w.mean, &w.cov, r)?;
    let p = gaussian_pdf(&at, &w)?;
    Ok((vol.volume(robot, obstacle) * p).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Samples per independent generator stream.
pub const MC_CHUNK: u64 = 65_536;

/// Fraction of paired draws with overlapping discs. Chunk `i` uses stream
/// `i` of a ChaCha8 generator keyed by `seed`, so the result does not depend
/// on how chunks are spread over threads.
pub fn monte_carlo(robot: &Body, obstacle: &Body, samples: u64, seed: u64) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("samples {samples} < 1000")));
    }
    let lr = sym_sqrt(&robot.pose.cov)?;
    let lo = sym_sqrt(&obstacle.pose.cov)?;
    let mr = &robot.pose.mean;
    let mo = &obstacle.pose.mean;
    let r2 = (robot.radius + obstacle.radius).powi(2);
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut hits = 0u64;
            for _ in 0..count {
                let e: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let dx = mr[0] + lr[(0, 0)] * e[0] + lr[(0, 1)] * e[1]
                    - (mo[0] + lo[(0, 0)] * e[2] + lo[(0, 1)] * e[3]);
                let dy = mr[1] + lr[(1, 0)] * e[0] + lr[(1, 1)] * e[1]
                    - (mo[1] + lo[(1, 0)] * e[2] + lo[(1, 1)] * e[3]);
                if dx * dx + dy * dy <= r2 {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(McEstimate { estimate: p, stderr: (p * (1.0 - p) / samples as f64).sqrt(), samples })
}

/// Radial (Gauss-Legendre) by angular (trapezoid) node counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridResolution {
    pub radial: usize,
    pub angular: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self { radial: 64, angular: 128 }
    }
}

impl GridResolution {
    fn doubled(self) -> Self {
        Self { radial: 2 * self.radial, angular: 2 * self.angular }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub value: f64,
    /// Change from the previous (half) resolution.
    pub refinement_change: f64,
    pub resolution: GridResolution,
}

/// Nodes per radial Gauss-Legendre panel.
const GL_ORDER: usize = 8;
/// Refinement stops once a doubling changes the value by less than this.
pub const GRID_SELF_CHECK: f64 = 1e-5;
const GRID_MAX_DOUBLINGS: usize = 6;

fn polar_integral(w: &Gaussian, r: f64, res: GridResolution) -> Result<f64> {
    let inv = sym_inv(&w.cov)?;
    let det = w.cov.determinant();
    let norm = 1.0 / (2.0 * PI * det.sqrt());
    let gl = GaussLegendre::new(NonZeroUsize::new(GL_ORDER).unwrap());
    let panels = res.radial.div_ceil(GL_ORDER);
    let h = r / panels as f64;
    let (mx, my) = (w.mean[0], w.mean[1]);
    let (a, b, c) = (inv[(0, 0)], inv[(0, 1)], inv[(1, 1)]);
    let dphi = 2.0 * PI / res.angular as f64;
    let dirs: Vec<(f64, f64)> = (0..res.angular).map(|j| (j as f64 * dphi).sin_cos()).map(|(s, c)| (c, s)).collect();
    let ring = |rho: f64| -> f64 {
        let s: f64 = dirs
            .iter()
            .map(|&(cs, sn)| {
                let dx = rho * cs - mx;
                let dy = rho * sn - my;
                (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
            })
            .sum();
        s * dphi * rho
    };
    let total: f64 = (0..panels).map(|p| gl.integrate(p as f64 * h, (p + 1) as f64 * h, ring)).sum();
    Ok(norm * total)
}

/// Polar grid integral of the density of `w` over the collision disc.
/// Starting at `res`, the grid is doubled until the value changes by less
/// than [`GRID_SELF_CHECK`].
pub fn grid_integral(robot: &Body, obstacle: &Body, res: GridResolution) -> Result<GridResult> {
    if res.radial < 64 || res.angular < 128 {
        return Err(Error::InvalidArgument(format!("resolution {res:?} below 64 x 128")));
    }
    let (w, r) = pd_relative(robot, obstacle)?;
    let mut cur = res;
    let mut prev = polar_integral(&w, r, cur)?;
    for _ in 0..GRID_MAX_DOUBLINGS {
        let next = cur.doubled();
        let v = polar_integral(&w, r, next)?;
        let change = (v - prev).abs();
        cur = next;
        if change < GRID_SELF_CHECK {
            return Ok(GridResult { value: v, refinement_change: change, resolution: cur });
        }
        prev = v;
    }
    Err(Error::IllConditioned(format!("grid integral did not settle at {cur:?}")))
}

/// Collision probability estimators selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Series,
    DuToit,
    Park,
    MonteCarlo,
    Grid,
}

impl Estimator {
    pub const ALL: [Estimator; 5] =
        [Estimator::Series, Estimator::DuToit, Estimator::Park, Estimator::MonteCarlo, Estimator::Grid];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Series => "series",
            Estimator::DuToit => "dutoit",
            Estimator::Park => "park",
            Estimator::MonteCarlo => "monte_carlo",
            Estimator::Grid => "grid",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Settings for [`estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub tol: f64,
    pub volume: VolumeConvention,
    pub mc_samples: u64,
    pub seed: u64,
    pub grid: GridResolution,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            tol: crate::collision::DEFAULT_TOL,
            volume: VolumeConvention::Combined,
            mc_samples: 1_000_000,
            seed: 0,
            grid: GridResolution::default(),
        }
    }
}

/// Collision probability from the chosen estimator. Baselines that need a
/// positive definite combined covariance fall back to the exact indicator
/// when it is singular.
pub fn estimate(est: Estimator, robot: &Body, obstacle: &Body, opts: &EstimateOptions) -> Result<f64> {
    let exact = || collision_probability(robot, obstacle, opts.tol).map(|r| r.value);
    let singular = |e: &Error| matches!(e, Error::Singular(_) | Error::NotPsd(_));
    let v = match est {
        Estimator::Series => exact()?,
        Estimator::DuToit => match dutoit_burdick(robot, obstacle, opts.volume) {
            Err(e) if singular(&e) => exact()?,
            r => r?,
        },
        Estimator::Park => match park_upper_bound(robot, obstacle, opts.volume) {
            Err(e) if singular(&e) => exact()?,
            r => r?,
        },
        Estimator::MonteCarlo => monte_carlo(robot, obstacle, opts.mc_samples, opts.seed)?.estimate,
        Estimator::Grid => match grid_integral(robot, obstacle, opts.grid) {
            Err(e) if singular(&e) => exact()?,
            r => r?.value,
        },
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(x: f64, y: f64, cxx: f64, cxy: f64, cyy: f64, r: f64) -> Body {
        Body::new(Gaussian::planar(x, y, cxx, cxy, cyy).unwrap(), r).unwrap()
    }

    #[test]
    fn dutoit_far_is_zero() {
        let v = dutoit_burdick(&body(0.0, 0.0, 0.01, 0.0, 0.01, 0.3), &body(5.0, 0.0, 0.01, 0.0, 0.01, 0.5), VolumeConvention::Combined).unwrap();
        assert!(v < 1e-100);
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let a = Body::certain(0.0, 0.0, 0.3).unwrap();
        let b = Body::certain(1.0, 0.0, 0.3).unwrap();
        assert!(dutoit_burdick(&a, &b, VolumeConvention::Combined).is_err());
        assert!(park_upper_bound(&a, &b, VolumeConvention::Combined).is_err());
    }

    #[test]
    fn park_interior_uses_mode() {
        let a = body(0.1, 0.0, 0.02, 0.0, 0.02, 0.1);
        let b = body(0.0, 0.0, 0.02, 0.0, 0.02, 0.5);
        let v = park_upper_bound(&a, &b, VolumeConvention::Robot).unwrap();
        let want = PI * 0.01 / (2.0 * PI * 0.04);
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn park_isotropic_projects_radially() {
        let mu = Vector::from_vec(vec![3.0, 4.0]);
        let w = max_density_point(&mu, &(Matrix::identity(2, 2) * 0.3), 1.0).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-9 && (w[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn park_anisotropic_matches_boundary_scan() {
        let mu = Vector::from_vec(vec![1.2, -0.7]);
        let s = Matrix::from_row_slice(2, 2, &[0.3, 0.12, 0.12, 0.08]);
        let r = 0.6;
        let g = Gaussian::new(mu.clone(), s.clone()).unwrap();
        let w = max_density_point(&mu, &s, r).unwrap();
        let ours = gaussian_pdf(&w, &g).unwrap();
        let mut best: f64 = 0.0;
        for i in 0..10_000 {
            let t = 2.0 * PI * i as f64 / 10_000.0;
            let p = Vector::from_vec(vec![r * t.cos(), r * t.sin()]);
            best = best.max(gaussian_pdf(&p, &g).unwrap());
        }
        assert!(ours >= best - 1e-9);
        assert!((ours - best).abs() < 1e-6, "{ours} {best}");
    }

    #[test]
    fn monte_carlo_trivial_cases() {
        let a = Body::certain(0.0, 0.0, 0.3).unwrap();
        let far = Body::certain(5.0, 0.0, 0.3).unwrap();
        assert_eq!(monte_carlo(&a, &far, 10_000, 1).unwrap().estimate, 0.0);
        assert_eq!(monte_carlo(&a, &a, 10_000, 1).unwrap().estimate, 1.0);
        assert!(monte_carlo(&a, &a, 10, 1).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let a = body(0.0, 0.0, 0.05, 0.01, 0.04, 0.3);
        let b = body(0.7, 0.1, 0.02, 0.0, 0.03, 0.5);
        let x = monte_carlo(&a, &b, 200_000, 42).unwrap();
        let y = monte_carlo(&a, &b, 200_000, 42).unwrap();
        assert_eq!(x.estimate.to_bits(), y.estimate.to_bits());
        let z = monte_carlo(&a, &b, 200_000, 43).unwrap();
        assert_ne!(x.estimate, z.estimate);
    }

    #[test]
    fn grid_central_closed_form() {
        let a = body(0.0, 0.0, 0.02, 0.0, 0.02, 0.3);
        let b = body(0.0, 0.0, 0.02, 0.0, 0.02, 0.5);
        let g = grid_integral(&a, &b, GridResolution::default()).unwrap();
        let want = 1.0 - (-0.64f64 / 0.08).exp();
        assert!((g.value - want).abs() < 1e-6, "{g:?}");
        assert!(g.refinement_change < GRID_SELF_CHECK);
    }

    #[test]
    fn grid_rejects_coarse_resolution() {
        let a = body(0.0, 0.0, 0.02, 0.0, 0.02, 0.3);
        assert!(grid_integral(&a, &a, GridResolution { radial: 32, angular: 128 }).is_err());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("bogus".parse::<Estimator>().is_err());
    }
}
