//! Mobile robot with odometry motion, signal-strength beacons whose
//! positions may be uncertain, and circular obstacles.

use std::f64::consts::PI;

use crate::collision::Body;
use crate::error::{Error, Result};
use crate::filter::{self, Belief, MotionModel, ObjectPrior, ObservationModel};
use crate::gaussian::{Gaussian, Matrix, Vector};
use crate::roadmap::BeliefDomain;

/// Heading variance of a viewpoint prior lifted from a planar position.
pub const HEADING_VARIANCE: f64 = 1e6;
/// Beacon covariances with smaller trace are treated as certain.
pub const CERTAIN_TRACE: f64 = 1e-9;

/// Angle in `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * ((a - PI) / (2.0 * PI)).ceil();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// `R = diag(t2 δt² + t1 |δt| + c, same, r2 (δr1² + δr2²) + rt |δt| + c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryNoise {
    pub trans_sq: f64,
    pub trans_lin: f64,
    pub rot_sq: f64,
    pub rot_per_trans: f64,
    pub floor: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self { trans_sq: 0.01, trans_lin: 0.0, rot_sq: 0.01, rot_per_trans: 0.0, floor: 0.0 }
    }
}

/// Rotate, translate, rotate. Control `u = (δ_rot1, δ_trans, δ_rot2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Odometry {
    pub noise: OdometryNoise,
}

pub fn odometry_motion(x: &Vector, u: &Vector) -> (Vector, Matrix) {
    let a = x[2] + u[0];
    let (s, c) = a.sin_cos();
    let next = Vector::from_vec(vec![x[0] + u[1] * c, x[1] + u[1] * s, wrap_angle(a + u[2])]);
    let f = Matrix::from_row_slice(3, 3, &[1.0, 0.0, -u[1] * s, 0.0, 1.0, u[1] * c, 0.0, 0.0, 1.0]);
    (next, f)
}

impl MotionModel for Odometry {
    fn f(&self, x: &Vector, u: &Vector) -> Vector {
        odometry_motion(x, u).0
    }
    fn jacobian(&self, x: &Vector, u: &Vector) -> Matrix {
        odometry_motion(x, u).1
    }
    fn noise(&self, _: &Vector, u: &Vector) -> Matrix {
        let n = &self.noise;
        let t = u[1].abs();
        let pos = n.trans_sq * t * t + n.trans_lin * t + n.floor;
        let rot = n.rot_sq * (u[0] * u[0] + u[2] * u[2]) + n.rot_per_trans * t + n.floor;
        Matrix::from_diagonal(&Vector::from_vec(vec![pos, pos, rot]))
    }
}

/// `z_i = 1 / (‖p - b_i‖² + 1)` and its Jacobian with respect to the pose.
pub fn beacon_observation(x: &Vector, beacons: &[Vector]) -> (Vector, Matrix) {
    let mut z = Vector::zeros(beacons.len());
    let mut h = Matrix::zeros(beacons.len(), x.len());
    for (i, b) in beacons.iter().enumerate() {
        let dx = x[0] - b[0];
        let dy = x[1] - b[1];
        let v = 1.0 / (dx * dx + dy * dy + 1.0);
        z[i] = v;
        h[(i, 0)] = -2.0 * dx * v * v;
        h[(i, 1)] = -2.0 * dy * v * v;
    }
    (z, h)
}

/// Beacon sensor with independent noise of standard deviation `sigma` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BeaconSensor {
    pub beacons: Vec<Vector>,
    pub sigma: f64,
}

impl ObservationModel for BeaconSensor {
    fn h(&self, x: &Vector) -> Vector {
        beacon_observation(x, &self.beacons).0
    }
    fn jacobian(&self, x: &Vector) -> Matrix {
        beacon_observation(x, &self.beacons).1
    }
    fn noise(&self) -> Matrix {
        Matrix::identity(self.beacons.len(), self.beacons.len()) * (self.sigma * self.sigma)
    }
}

fn lift(pos_cov: &Matrix, dim: usize) -> Matrix {
    let mut cov = Matrix::identity(dim, dim) * HEADING_VARIANCE;
    cov.view_mut((0, 0), (2, 2)).copy_from(pos_cov);
    cov
}

/// Viewpoint prior for one beacon: centred on the predicted pose with the
/// beacon's position covariance. `None` for a certain beacon.
pub fn object_prior_for_beacon(beacon: &Gaussian, predicted: &Belief) -> Result<Option<ObjectPrior>> {
    if beacon.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: beacon.dim() });
    }
    if beacon.cov.trace() < CERTAIN_TRACE {
        return Ok(None);
    }
    Ok(Some(ObjectPrior { mean: predicted.mean.clone(), cov: lift(&beacon.cov, predicted.dim()) }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeaconWorld {
    pub width: f64,
    pub height: f64,
    /// Believed beacon positions with their uncertainty.
    pub beacons: Vec<Gaussian>,
    /// Actual beacon positions used when simulating execution.
    pub true_beacons: Vec<Vector>,
    pub obstacles: Vec<Body>,
    pub robot_radius: f64,
    pub start: Belief,
    pub goal: Vector,
    pub odometry: Odometry,
    pub sigma_z: f64,
}

impl BeaconWorld {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: &Vector| p[0] >= 0.0 && p[0] <= self.width && p[1] >= 0.0 && p[1] <= self.height;
        if self.beacons.iter().any(|b| !inside(&b.mean)) || self.obstacles.iter().any(|o| !inside(&o.pose.mean)) {
            return Err(Error::Config("beacons and obstacles must lie inside the bounds".into()));
        }
        if self.true_beacons.len() != self.beacons.len() {
            return Err(Error::Config("one true position per beacon required".into()));
        }
        if self.start.dim() != 3 || self.goal.len() != 2 {
            return Err(Error::Config("start must be a pose (x, y, theta) and goal a point".into()));
        }
        if !(self.robot_radius > 0.0) || !(self.sigma_z > 0.0) {
            return Err(Error::Config("robot_radius and sigma_z must be > 0".into()));
        }
        Ok(())
    }

    pub fn sensor(&self) -> BeaconSensor {
        BeaconSensor { beacons: self.beacons.iter().map(|b| b.mean.clone()).collect(), sigma: self.sigma_z }
    }

    pub fn true_sensor(&self) -> BeaconSensor {
        BeaconSensor { beacons: self.true_beacons.clone(), sigma: self.sigma_z }
    }

    /// Prior over the viewpoint for the whole beacon set: the beacons'
    /// position covariances weighted by their share of the measurement
    /// information at the predicted pose.
    pub fn viewpoint_prior(&self, predicted: &Belief) -> Result<Option<ObjectPrior>> {
        let (_, h) = beacon_observation(&predicted.mean, &self.sensor().beacons);
        let mut total = 0.0;
        let mut cov = Matrix::zeros(2, 2);
        for (i, b) in self.beacons.iter().enumerate() {
            let w = h[(i, 0)].powi(2) + h[(i, 1)].powi(2);
            total += w;
            cov += &b.cov * w;
        }
        if !(total > 0.0) {
            return Ok(None);
        }
        let pooled = Gaussian { mean: Vector::zeros(2), cov: cov / total };
        object_prior_for_beacon(&pooled, predicted)
    }

    /// Controls `(δ_rot1, δ_trans, 0)` driving the mean from `from` to `to`.
    pub fn steer(from: &Vector, to: &Vector) -> Vector {
        let dx = to[0] - from[0];
        let dy = to[1] - from[1];
        let d = dx.hypot(dy);
        let rot = if d > 0.0 { wrap_angle(dy.atan2(dx) - from[2]) } else { 0.0 };
        Vector::from_vec(vec![rot, d, 0.0])
    }
}

/// Planning view of a [`BeaconWorld`], with or without beacon uncertainty.
#[derive(Debug, Clone)]
pub struct BeaconDomain {
    pub world: BeaconWorld,
    pub object_uncertainty: bool,
    sensor: BeaconSensor,
}

impl BeaconDomain {
    pub fn new(world: BeaconWorld, object_uncertainty: bool) -> Result<Self> {
        world.validate()?;
        let sensor = world.sensor();
        Ok(Self { world, object_uncertainty, sensor })
    }

    fn prior(&self, b: &Belief) -> Result<Option<ObjectPrior>> {
        if self.object_uncertainty {
            self.world.viewpoint_prior(b)
        } else {
            Ok(None)
        }
    }

    /// Predict with `u`, then update on the measurement `z` (the predicted
    /// measurement when `None`).
    pub fn step(&self, b: &Belief, u: &Vector, z: Option<&Vector>) -> Result<Belief> {
        let pred = filter::predict(b, u, &self.world.odometry)?;
        let zhat;
        let z = match z {
            Some(z) => z,
            None => {
                zhat = self.sensor.h(&pred.mean);
                &zhat
            }
        };
        let prior = self.prior(&pred)?;
        let mut post = filter::update(&pred, z, &self.sensor, prior.as_ref())?;
        post.mean[2] = wrap_angle(post.mean[2]);
        Ok(post)
    }
}

impl BeliefDomain for BeaconDomain {
    fn position(&self, b: &Belief) -> Vector {
        b.mean.rows(0, 2).into_owned()
    }

    fn control_to(&self, b: &Belief, target: &Vector) -> Vector {
        BeaconWorld::steer(&b.mean, target)
    }

    fn propagate(&self, b: &Belief, u: &Vector) -> Result<Belief> {
        self.step(b, u, None)
    }

    /// The robot disc. With beacon uncertainty the viewpoint covariance is
    /// added to the position covariance, since the map frame itself is
    /// uncertain by that much.
    fn robot_body(&self, b: &Belief) -> Result<Body> {
        let mut body = Body::from_pose(b, self.world.robot_radius)?;
        if let Some(op) = self.prior(b)? {
            body.pose.cov += op.cov.view((0, 0), (2, 2));
        }
        Ok(body)
    }

    fn obstacles(&self) -> &[Body] {
        &self.world.obstacles
    }
}

/// One executed step of a plan against the true beacons.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedStep {
    pub true_position: Vector,
    pub belief: Belief,
    /// Largest collision probability of the robot at its true position with
    /// the filter's position covariance.
    pub p_collision: f64,
}

/// Follows the planned waypoint means in closed loop. Measurements come
/// noise free from the true beacons while the filter keeps using the
/// believed ones, so any beacon offset shows up as a localization bias.
pub fn execute_against_truth(
    domain: &BeaconDomain,
    waypoints: &[Vector],
    tol: f64,
) -> Result<Vec<ExecutedStep>> {
    let truth = domain.world.true_sensor();
    let mut belief = domain.world.start.clone();
    let mut x = belief.mean.clone();
    let mut out = Vec::with_capacity(waypoints.len());
    let record = |x: &Vector, b: &Belief| -> Result<ExecutedStep> {
        let pose = Gaussian { mean: x.clone(), cov: b.cov.clone() };
        let body = Body::from_pose(&pose, domain.world.robot_radius)?;
        let mut p: f64 = 0.0;
        for ob in &domain.world.obstacles {
            p = p.max(crate::collision::collision_probability(&body, ob, tol)?.value);
        }
        Ok(ExecutedStep { true_position: x.rows(0, 2).into_owned(), belief: b.clone(), p_collision: p })
    };
    out.push(record(&x, &belief)?);
    for target in waypoints.iter().skip(1) {
        let u = BeaconWorld::steer(&belief.mean, target);
        x = odometry_motion(&x, &u).0;
        let z = truth.h(&x);
        belief = domain.step(&belief, &u, Some(&z))?;
        out.push(record(&x, &belief)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{motion_jacobian_error, observation_jacobian_error};

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn odometry_examples() {
        let x = v(&[1.0, 2.0, 0.3]);
        assert_eq!(odometry_motion(&x, &v(&[0.0, 0.0, 0.0])).0, x);
        let y = odometry_motion(&v(&[0.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])).0;
        assert_eq!(y, v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn odometry_jacobian_matches_differences() {
        let m = Odometry::default();
        for (x, u) in [([0.3, -1.0, 0.4], [0.2, 1.3, -0.1]), ([5.0, 2.0, -2.9], [-0.7, 0.4, 0.3])] {
            assert!(motion_jacobian_error(&m, &v(&x), &v(&u)) < 1e-6);
        }
    }

    #[test]
    fn wrap_round_trip() {
        for a in [-3.0, -1.0, 0.0, 0.5, 3.1, PI, -PI] {
            let w = wrap_angle(wrap_angle(a + PI) + PI);
            assert!((wrap_angle(a) - w).abs() < 1e-12, "{a} {w}");
            assert!(w > -PI && w <= PI);
        }
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn beacon_signal_examples() {
        let b = vec![v(&[2.0, 3.0]), v(&[5.0, 3.0])];
        let (z, _) = beacon_observation(&v(&[2.0, 3.0, 0.0]), &b);
        assert_eq!(z[0], 1.0);
        assert!((z[1] - 0.1).abs() < 1e-15);
        let s = BeaconSensor { beacons: b, sigma: 0.01 };
        assert!(observation_jacobian_error(&s, &v(&[1.0, 0.5, 0.2])) < 1e-6);
    }

    #[test]
    fn beacon_prior_lifts_covariance() {
        let pred = Gaussian::new(v(&[1.0, 1.0, 0.0]), Matrix::identity(3, 3)).unwrap();
        let certain = Gaussian::certain(v(&[3.0, 3.0]));
        assert!(object_prior_for_beacon(&certain, &pred).unwrap().is_none());
        let unsure = Gaussian::planar(3.0, 3.0, 0.49, 0.0, 0.49).unwrap();
        let op = object_prior_for_beacon(&unsure, &pred).unwrap().unwrap();
        assert_eq!(op.mean, pred.mean);
        assert_eq!(op.cov[(0, 0)], 0.49);
        assert_eq!(op.cov[(1, 1)], 0.49);
        assert_eq!(op.cov[(2, 2)], HEADING_VARIANCE);
    }

    #[test]
    fn steer_reaches_target() {
        let from = v(&[1.0, 1.0, 2.0]);
        let to = v(&[4.0, 5.0]);
        let u = BeaconWorld::steer(&from, &to);
        let x = odometry_motion(&from, &u).0;
        assert!((x[0] - 4.0).abs() < 1e-12 && (x[1] - 5.0).abs() < 1e-12);
    }
}
