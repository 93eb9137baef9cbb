//! TOML scenario files. Every file carries `schema = 1`.

use std::path::Path;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::baselines::{EstimateOptions, GridResolution, VolumeConvention};
use crate::collision::Body;
use crate::domains::beacon::{BeaconWorld, Odometry, OdometryNoise};
use crate::domains::grasp::{AdditiveMotion, AidingObject, Ball, GraspWorld};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, Matrix, Vector};
use crate::roadmap::{CostWeights, ExtensionOptions};

pub const SCHEMA: u32 = 1;

#[derive(Deserialize)]
struct Versioned {
    schema: Option<u32>,
}

/// Parses `text`, checking the schema version first.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let v: Versioned = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    match v.schema {
        Some(SCHEMA) => {}
        Some(s) => return Err(Error::Config(format!("field `schema`: unsupported version {s}, expected {SCHEMA}"))),
        None => return Err(Error::Config("missing field `schema`".into())),
    }
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Config(format!("field `{field}`: {e}"))
}

fn mat2(m: [[f64; 2]; 2]) -> Matrix {
    Matrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn diag(v: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(v))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub mean: [f64; 2],
    #[serde(default)]
    pub cov: [[f64; 2]; 2],
    pub radius: f64,
}

impl BodySpec {
    pub fn to_body(&self, field: &str) -> Result<Body> {
        let g = Gaussian::new(Vector::from_column_slice(&self.mean), mat2(self.cov)).map_err(|e| field_err(field, e))?;
        Body::new(g, self.radius).map_err(|e| field_err(field, e))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    #[serde(default)]
    pub volume: Option<String>,
    #[serde(default)]
    pub mc_samples: Option<u64>,
    #[serde(default)]
    pub grid_radial: Option<usize>,
    #[serde(default)]
    pub grid_angular: Option<usize>,
}

impl EstimateSpec {
    pub fn options(&self, field: &str) -> Result<EstimateOptions> {
        let mut o = EstimateOptions::default();
        if let Some(v) = &self.volume {
            o.volume = v.parse::<VolumeConvention>().map_err(|e| field_err(&format!("{field}.volume"), e))?;
        }
        if let Some(n) = self.mc_samples {
            o.mc_samples = n;
        }
        let d = GridResolution::default();
        o.grid = GridResolution { radial: self.grid_radial.unwrap_or(d.radial), angular: self.grid_angular.unwrap_or(d.angular) };
        Ok(o)
    }
}

/// Two bodies compared by every estimator.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbConfig {
    pub schema: u32,
    pub robot: BodySpec,
    pub obstacle: BodySpec,
    pub estimate: Option<EstimateSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub robot: BodySpec,
    pub obstacle: BodySpec,
    pub estimate: Option<EstimateSpec>,
}

/// Several named cases compared side by side.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub schema: u32,
    #[serde(rename = "case")]
    pub cases: Vec<CaseSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub label: String,
    /// Centre distance between the bodies.
    pub distance: f64,
}

/// Term counts over placements and isotropic combined covariances.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub schema: u32,
    pub robot_radius: f64,
    pub obstacle_radius: f64,
    #[serde(rename = "placement")]
    pub placements: Vec<Placement>,
    /// Diagonal entries of the combined covariance.
    pub variances: Vec<f64>,
    #[serde(default)]
    pub repeats: Option<usize>,
}

impl ConvergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.robot_radius > 0.0) {
            return Err(Error::Config("field `robot_radius`: must be > 0".into()));
        }
        if !(self.obstacle_radius > 0.0) {
            return Err(Error::Config("field `obstacle_radius`: must be > 0".into()));
        }
        if self.variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("field `variances`: entries must be > 0".into()));
        }
        if self.placements.iter().any(|p| !(p.distance >= 0.0)) {
            return Err(Error::Config("field `placement.distance`: must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconSpec {
    pub mean: [f64; 2],
    #[serde(default)]
    pub cov: [[f64; 2]; 2],
    /// Actual position; the mean when absent.
    #[serde(default, rename = "true")]
    pub truth: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdometrySpec {
    pub trans_sq: f64,
    #[serde(default)]
    pub trans_lin: f64,
    pub rot_sq: f64,
    #[serde(default)]
    pub rot_per_trans: f64,
    #[serde(default)]
    pub floor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconWorldSpec {
    pub width: f64,
    pub height: f64,
    pub robot_radius: f64,
    pub sigma_z: f64,
    pub start: [f64; 3],
    pub start_var: [f64; 3],
    pub goal: [f64; 2],
    pub odometry: OdometrySpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadmapSpec {
    pub nodes: usize,
    pub k: usize,
    pub max_edge: f64,
    pub seed: u64,
    /// Nodes placed after start and goal, before the random ones.
    #[serde(default)]
    pub fixed: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub m_u: Vec<f64>,
    pub m_g: [f64; 2],
    pub m_sigma: [f64; 2],
    pub m_c: f64,
}

impl WeightsSpec {
    pub fn to_weights(&self) -> Result<CostWeights> {
        let w = CostWeights { m_u: diag(&self.m_u), m_g: diag(&self.m_g), m_sigma: diag(&self.m_sigma), m_c: self.m_c };
        w.validate().map_err(|e| field_err("weights", e))?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    pub max_samples: usize,
    pub time_budget_s: f64,
    pub max_rounds: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSpec {
    pub eps: f64,
    pub tol: f64,
    pub step: f64,
    pub max_expansions: usize,
    pub weights: WeightsSpec,
    pub extension: Option<ExtensionSpec>,
    pub estimate: Option<EstimateSpec>,
}

impl PlannerSpec {
    pub fn extension(&self) -> ExtensionOptions {
        match &self.extension {
            Some(e) => ExtensionOptions {
                max_samples: e.max_samples,
                time_budget: Duration::from_secs_f64(e.time_budget_s.max(0.0)),
                max_rounds: e.max_rounds,
            },
            None => ExtensionOptions::default(),
        }
    }
}

/// Beacon world scenario for `plan`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconConfig {
    pub schema: u32,
    pub world: BeaconWorldSpec,
    #[serde(rename = "beacon")]
    pub beacons: Vec<BeaconSpec>,
    #[serde(rename = "obstacle", default)]
    pub obstacles: Vec<BodySpec>,
    pub roadmap: RoadmapSpec,
    pub planner: PlannerSpec,
}

impl BeaconConfig {
    pub fn world(&self) -> Result<BeaconWorld> {
        let w = &self.world;
        let mut beacons = Vec::new();
        let mut truth = Vec::new();
        for (i, b) in self.beacons.iter().enumerate() {
            let g = Gaussian::new(Vector::from_column_slice(&b.mean), mat2(b.cov))
                .map_err(|e| field_err(&format!("beacon[{i}].cov"), e))?;
            beacons.push(g);
            truth.push(Vector::from_column_slice(&b.truth.unwrap_or(b.mean)));
        }
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| o.to_body(&format!("obstacle[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let start = Gaussian::new(Vector::from_column_slice(&w.start), diag(&w.start_var))
            .map_err(|e| field_err("world.start_var", e))?;
        let o = &w.odometry;
        let world = BeaconWorld {
            width: w.width,
            height: w.height,
            beacons,
            true_beacons: truth,
            obstacles,
            robot_radius: w.robot_radius,
            start,
            goal: Vector::from_column_slice(&w.goal),
            odometry: Odometry {
                noise: OdometryNoise {
                    trans_sq: o.trans_sq,
                    trans_lin: o.trans_lin,
                    rot_sq: o.rot_sq,
                    rot_per_trans: o.rot_per_trans,
                    floor: o.floor,
                },
            },
            sigma_z: w.sigma_z,
        };
        world.validate()?;
        Ok(world)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AidingSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    #[serde(rename = "true")]
    pub truth: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub radius: f64,
    pub velocity: [f64; 2],
    pub velocity_cov: [[f64; 2]; 2],
    pub observed_cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspSpec {
    pub start: [f64; 2],
    pub start_cov: [[f64; 2]; 2],
    pub effector_radius: f64,
    pub puck: BodySpec,
    pub motion_floor: [f64; 2],
    #[serde(default)]
    pub motion_prop: f64,
    pub laser_sigma: f64,
    pub step: f64,
    pub horizon: usize,
    pub x_cells: [i64; 2],
    pub y_cells: [i64; 2],
    pub eps: f64,
    pub tol: f64,
    #[serde(default = "one")]
    pub replan_every: usize,
    pub weights: WeightsSpec,
}

fn one() -> usize {
    1
}

/// Laser-grasp scenario for `grasp`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspConfig {
    pub schema: u32,
    pub grasp: GraspSpec,
    pub aiding: Option<AidingSpec>,
    pub ball: Option<BallSpec>,
}

impl GraspConfig {
    pub fn world(&self) -> Result<GraspWorld> {
        let g = &self.grasp;
        let start = Gaussian::new(Vector::from_column_slice(&g.start), mat2(g.start_cov))
            .map_err(|e| field_err("grasp.start_cov", e))?;
        let aiding = match &self.aiding {
            Some(a) => {
                let belief = Gaussian::new(Vector::from_column_slice(&a.mean), mat2(a.cov)).map_err(|e| field_err("aiding.cov", e))?;
                if !(a.radius > 0.0) {
                    return Err(Error::Config("field `aiding.radius`: must be > 0".into()));
                }
                Some(AidingObject { belief, truth: Vector::from_column_slice(&a.truth), radius: a.radius })
            }
            None => None,
        };
        let (ball, observed) = match &self.ball {
            Some(b) => {
                let body = BodySpec { mean: b.mean, cov: b.cov, radius: b.radius }.to_body("ball")?;
                let vc = mat2(b.velocity_cov);
                Gaussian::new(Vector::zeros(2), vc.clone()).map_err(|e| field_err("ball.velocity_cov", e))?;
                Gaussian::new(Vector::zeros(2), mat2(b.observed_cov)).map_err(|e| field_err("ball.observed_cov", e))?;
                (
                    Some(Ball { body, velocity: Vector::from_column_slice(&b.velocity), velocity_cov: vc }),
                    mat2(b.observed_cov),
                )
            }
            None => (None, Matrix::zeros(2, 2)),
        };
        let world = GraspWorld {
            start,
            effector_radius: g.effector_radius,
            puck: g.puck.to_body("grasp.puck")?,
            aiding,
            ball,
            ball_observed_cov: observed,
            motion: AdditiveMotion { floor: g.motion_floor, prop: g.motion_prop },
            laser_sigma: g.laser_sigma,
            step: g.step,
            horizon: g.horizon,
            x_cells: g.x_cells,
            y_cells: g.y_cells,
            weights: g.weights.to_weights()?,
            eps: g.eps,
            tol: g.tol,
            replan_every: g.replan_every,
        };
        world.validate()?;
        Ok(world)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_radius_is_named() {
        let text = "schema = 1\n[robot]\nmean = [0.0, 0.0]\n[obstacle]\nmean = [1.0, 0.0]\nradius = 0.5\n";
        let err = parse::<ProbConfig>(text).unwrap_err().to_string();
        assert!(err.contains("radius"), "{err}");
    }

    #[test]
    fn schema_is_required() {
        assert!(parse::<ProbConfig>("[robot]\nmean=[0.0,0.0]\nradius=0.3\n").is_err());
        let err = parse::<ProbConfig>("schema = 2\n").unwrap_err().to_string();
        assert!(err.contains("schema"), "{err}");
    }

    #[test]
    fn body_defaults_to_certain() {
        let text = "schema = 1\n[robot]\nmean = [0.0, 0.0]\nradius = 0.3\n[obstacle]\nmean = [1.0, 0.0]\nradius = 0.5\n";
        let c = parse::<ProbConfig>(text).unwrap();
        assert_eq!(c.robot.to_body("robot").unwrap().pose.cov, Matrix::zeros(2, 2));
    }
}
