//! Planar end-effector approaching a grasp point in front of a puck, with a
//! horizontal laser, an optional localization aid and an optional rolling
//! ball. Coordinates are relative to the grasp point.

use crate::collision::{is_eps_safe, Body};
use crate::error::{Error, Result};
use crate::filter::{self, Belief, MotionModel, ObjectPrior, ObservationModel};
use crate::gaussian::{Gaussian, Matrix, Vector};
use crate::roadmap::{stage_cost, CostWeights};

/// `f(x, u) = x + u` with noise `diag(floor + prop * u²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveMotion {
    pub floor: [f64; 2],
    pub prop: f64,
}

impl MotionModel for AdditiveMotion {
    fn f(&self, x: &Vector, u: &Vector) -> Vector {
        x + u
    }
    fn jacobian(&self, x: &Vector, _u: &Vector) -> Matrix {
        Matrix::identity(x.len(), x.len())
    }
    fn noise(&self, _x: &Vector, u: &Vector) -> Matrix {
        Matrix::from_diagonal(&Vector::from_vec(vec![
            self.floor[0] + self.prop * u[0] * u[0],
            self.floor[1] + self.prop * u[1] * u[1],
        ]))
    }
}

/// Returns closer to the rim than this fraction of the radius are dropped.
const GRAZING: f64 = 0.9;

/// Range along the ray `x - t e₁` to a disc, linearized in the end-effector
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserRay {
    pub center: Vector,
    pub radius: f64,
    pub sigma: f64,
}

impl LaserRay {
    /// Distance to the disc surface, or `None` if the ray misses it.
    pub fn range(&self, x: &Vector) -> Option<f64> {
        let dy = x[1] - self.center[1];
        if dy.abs() >= GRAZING * self.radius {
            return None;
        }
        let d = x[0] - self.center[0] - (self.radius * self.radius - dy * dy).sqrt();
        (d > 0.0).then_some(d)
    }
}

impl ObservationModel for LaserRay {
    fn h(&self, x: &Vector) -> Vector {
        let dy = x[1] - self.center[1];
        let s = (self.radius * self.radius - dy * dy).max(0.0).sqrt();
        Vector::from_element(1, x[0] - self.center[0] - s)
    }
    fn jacobian(&self, x: &Vector) -> Matrix {
        let dy = x[1] - self.center[1];
        let s = (self.radius * self.radius - dy * dy).max(1e-12).sqrt();
        Matrix::from_row_slice(1, 2, &[1.0, dy / s])
    }
    fn noise(&self) -> Matrix {
        Matrix::from_element(1, 1, self.sigma * self.sigma)
    }
}

/// Static object that can be seen by the laser but whose position is uncertain.
#[derive(Debug, Clone, PartialEq)]
pub struct AidingObject {
    pub belief: Gaussian,
    pub truth: Vector,
    pub radius: f64,
}

/// Ball with a Gaussian per-step velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub body: Body,
    pub velocity: Vector,
    pub velocity_cov: Matrix,
}

/// Predicted ball positions for `t = 0..=steps`.
pub fn propagate_ball(ball: &Ball, steps: usize) -> Vec<Body> {
    (0..=steps)
        .map(|t| {
            let t = t as f64;
            Body {
                pose: Gaussian {
                    mean: &ball.body.pose.mean + &ball.velocity * t,
                    cov: &ball.body.pose.cov + &ball.velocity_cov * t,
                },
                radius: ball.body.radius,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspWorld {
    pub start: Belief,
    pub effector_radius: f64,
    /// Puck in the relative frame (known exactly there).
    pub puck: Body,
    pub aiding: Option<AidingObject>,
    pub ball: Option<Ball>,
    /// Ball covariance right after it is observed during online runs.
    pub ball_observed_cov: Matrix,
    pub motion: AdditiveMotion,
    pub laser_sigma: f64,
    /// Lattice spacing, also the length of one move.
    pub step: f64,
    pub horizon: usize,
    /// Lattice extent as offsets `[lo, hi]` from the start, in steps.
    pub x_cells: [i64; 2],
    pub y_cells: [i64; 2],
    pub weights: CostWeights,
    pub eps: f64,
    pub tol: f64,
    pub replan_every: usize,
}

impl GraspWorld {
    pub fn validate(&self) -> Result<()> {
        if self.start.dim() != 2 {
            return Err(Error::Config("grasp start must be 2D".into()));
        }
        if !(self.step > 0.0) || self.horizon == 0 || self.replan_every == 0 {
            return Err(Error::Config("step, horizon and replan_every must be > 0".into()));
        }
        if self.x_cells[0] > 0 || self.x_cells[1] < 0 || self.y_cells[0] > 0 || self.y_cells[1] < 0 {
            return Err(Error::Config("lattice must contain the start".into()));
        }
        if !(self.effector_radius > 0.0) || !(self.laser_sigma > 0.0) {
            return Err(Error::Config("effector_radius and laser_sigma must be > 0".into()));
        }
        self.weights.validate()
    }

    fn cell_count(&self) -> (usize, usize) {
        ((self.x_cells[1] - self.x_cells[0] + 1) as usize, (self.y_cells[1] - self.y_cells[0] + 1) as usize)
    }
}

#[derive(Debug, Clone)]
pub struct GraspDomain {
    pub world: GraspWorld,
    pub object_uncertainty: bool,
}

/// One time step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspStep {
    pub t: usize,
    pub belief: Belief,
    pub control: Vector,
    pub true_position: Vector,
    pub p_collision: f64,
    pub safe: bool,
    pub cost_so_far: f64,
    pub ball: Option<Body>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRun {
    pub steps: Vec<GraspStep>,
    pub replans: usize,
    /// Steps where no safe action existed and the end-effector stayed put.
    pub stalled: usize,
}

impl GraspRun {
    /// Index of the first move toward the goal that follows a retreat.
    pub fn first_advance_after_retreat(&self) -> Option<usize> {
        let ys: Vec<f64> = self.steps.iter().map(|s| s.belief.mean[1]).collect();
        let retreat = ys.windows(2).position(|w| w[1] > w[0] + 1e-12)?;
        (retreat..ys.len() - 1).find(|&i| ys[i + 1] < ys[i] - 1e-12)
    }

    /// Index of the first move toward the goal.
    pub fn first_advance(&self) -> Option<usize> {
        self.steps.windows(2).position(|w| w[1].belief.mean[1] < w[0].belief.mean[1] - 1e-12)
    }

    /// Moves toward the goal, then away, then toward it again.
    pub fn retreats_then_advances(&self) -> bool {
        match (self.first_advance(), self.first_advance_after_retreat()) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        }
    }
}

impl GraspDomain {
    pub fn new(world: GraspWorld, object_uncertainty: bool) -> Result<Self> {
        world.validate()?;
        Ok(Self { world, object_uncertainty })
    }

    fn rays(&self, truth: bool) -> Vec<(LaserRay, bool)> {
        let w = &self.world;
        let mut out = vec![(LaserRay { center: w.puck.pose.mean.clone(), radius: w.puck.radius, sigma: w.laser_sigma }, false)];
        if let Some(a) = &w.aiding {
            let center = if truth { a.truth.clone() } else { a.belief.mean.clone() };
            out.push((LaserRay { center, radius: a.radius, sigma: w.laser_sigma }, true));
        }
        out
    }

    /// First disc hit by the laser from `x`.
    fn first_hit(&self, x: &Vector, truth: bool) -> Option<(LaserRay, bool, f64)> {
        self.rays(truth)
            .into_iter()
            .filter_map(|(r, aid)| r.range(x).map(|d| (r, aid, d)))
            .min_by(|a, b| a.2.total_cmp(&b.2))
    }

    /// Predict with `u`, then update on the laser. `truth` gives the true
    /// end-effector position whose reading is used; otherwise the predicted
    /// reading is assumed. No update when the ray misses.
    pub fn step(&self, b: &Belief, u: &Vector, truth: Option<&Vector>) -> Result<Belief> {
        let pred = filter::predict(b, u, &self.world.motion)?;
        let Some((ray, aid, _)) = self.first_hit(&pred.mean, false) else {
            return Ok(pred);
        };
        let z = match truth {
            Some(x) => match self.first_hit(x, true) {
                Some((_, _, d)) => Vector::from_element(1, d),
                None => return Ok(pred),
            },
            None => ray.h(&pred.mean),
        };
        let prior = match (&self.world.aiding, aid && self.object_uncertainty) {
            (Some(a), true) => Some(ObjectPrior { mean: pred.mean.clone(), cov: a.belief.cov.clone() }),
            _ => None,
        };
        filter::update(&pred, &z, &ray, prior.as_ref())
    }

    /// Static obstacles as seen by the planner.
    pub fn static_obstacles(&self) -> Vec<Body> {
        let mut out = vec![self.world.puck.clone()];
        if let Some(a) = &self.world.aiding {
            let cov = if self.object_uncertainty { a.belief.cov.clone() } else { Matrix::zeros(2, 2) };
            out.push(Body { pose: Gaussian { mean: a.belief.mean.clone(), cov }, radius: a.radius });
        }
        out
    }

    fn true_obstacles(&self) -> Vec<Body> {
        let mut out = vec![self.world.puck.clone()];
        if let Some(a) = &self.world.aiding {
            out.push(Body { pose: Gaussian::certain(a.truth.clone()), radius: a.radius });
        }
        out
    }

    fn check(&self, b: &Belief, obstacles: &[Body], ball: Option<&Body>) -> Result<(f64, bool)> {
        let body = Body::new(b.clone(), self.world.effector_radius)?;
        let mut all = obstacles.to_vec();
        all.extend(ball.cloned());
        let s = is_eps_safe(&body, &all, self.world.eps, self.world.tol)?;
        Ok((s.worst_prob, s.safe))
    }

    fn cost(&self, b: &Belief, u: &Vector, p: f64) -> f64 {
        stage_cost(&b.cov, &b.mean, u, p, &Vector::zeros(2), &self.world.weights)
    }

    /// Lowest-cost safe lattice trajectory starting at `start` that ends on
    /// the goal cell within `horizon` steps. Without such a trajectory the
    /// cheapest one of full length is returned. `ball[k]` is the predicted
    /// ball `k` steps ahead. Returns the waypoints after the start.
    pub fn plan(&self, start: &Belief, horizon: usize, ball: Option<&[Body]>) -> Result<Vec<(Belief, Vector, f64, f64)>> {
        let w = &self.world;
        let (nx, ny) = w.cell_count();
        let origin = &w.start.mean;
        let cell_of = |p: &Vector| -> Option<usize> {
            let i = ((p[0] - origin[0]) / w.step).round() as i64 - w.x_cells[0];
            let j = ((p[1] - origin[1]) / w.step).round() as i64 - w.y_cells[0];
            (i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny).then(|| j as usize * nx + i as usize)
        };
        let pos = |c: usize| -> Vector {
            let i = (c % nx) as i64 + w.x_cells[0];
            let j = (c / nx) as i64 + w.y_cells[0];
            Vector::from_vec(vec![origin[0] + i as f64 * w.step, origin[1] + j as f64 * w.step])
        };
        let c0 = cell_of(&start.mean).ok_or_else(|| Error::Planning("start is off the lattice".into()))?;
        let goal = cell_of(&Vector::zeros(2));
        if goal == Some(c0) {
            return Ok(Vec::new());
        }
        let actions: Vec<Vector> = [(0.0, 0.0), (0.0, -1.0), (0.0, 1.0), (-1.0, 0.0), (1.0, 0.0)]
            .iter()
            .filter(|(dx, _)| *dx == 0.0 || nx > 1)
            .map(|&(dx, dy)| Vector::from_vec(vec![dx * w.step, dy * w.step]))
            .collect();
        let statics = self.static_obstacles();

        struct Label {
            cost: f64,
            belief: Belief,
            parent: usize,
            control: Vector,
            p: f64,
            stage: f64,
        }
        let mut layers: Vec<Vec<Option<Label>>> = Vec::with_capacity(horizon + 1);
        let mut first: Vec<Option<Label>> = (0..nx * ny).map(|_| None).collect();
        first[c0] = Some(Label { cost: 0.0, belief: start.clone(), parent: c0, control: Vector::zeros(2), p: 0.0, stage: 0.0 });
        layers.push(first);
        for t in 0..horizon {
            let ball_next = ball.and_then(|bs| bs.get(t + 1).or(bs.last()));
            let mut next: Vec<Option<Label>> = (0..nx * ny).map(|_| None).collect();
            for c in 0..nx * ny {
                if t > 0 && Some(c) == goal {
                    continue;
                }
                let Some(l) = &layers[t][c] else { continue };
                for u in &actions {
                    let target = pos(c) + u;
                    let Some(cn) = cell_of(&target) else { continue };
                    let mut u = target - &l.belief.mean;
                    u.iter_mut().for_each(|v| {
                        if v.abs() < 1e-12 {
                            *v = 0.0
                        }
                    });
                    let b = self.step(&l.belief, &u, None)?;
                    let (p, safe) = self.check(&b, &statics, ball_next)?;
                    if !safe {
                        continue;
                    }
                    let stage = self.cost(&b, &u, p);
                    let cost = l.cost + stage;
                    if next[cn].as_ref().map_or(true, |o| cost < o.cost) {
                        next[cn] = Some(Label { cost, belief: b, parent: c, control: u, p, stage });
                    }
                }
            }
            if next.iter().all(Option::is_none) {
                return Err(Error::Planning(format!("no safe action at step {}", t + 1)));
            }
            layers.push(next);
        }
        let label_cost = |t: usize, c: usize| layers[t][c].as_ref().map(|l| l.cost);
        let arrival = goal.and_then(|g| {
            (1..=horizon)
                .filter_map(|t| label_cost(t, g).map(|k| (t, k)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(t, _)| (t, g))
        });
        let (end, mut c) = arrival.unwrap_or_else(|| {
            let c = (0..nx * ny)
                .filter_map(|c| label_cost(horizon, c).map(|k| (c, k)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(c, _)| c)
                .expect("last layer is non-empty");
            (horizon, c)
        });
        let mut out = Vec::with_capacity(end);
        for t in (1..=end).rev() {
            let l = layers[t][c].as_ref().unwrap();
            out.push((l.belief.clone(), l.control.clone(), l.p, l.stage));
            c = l.parent;
        }
        out.reverse();
        Ok(out)
    }

    /// Whether `p` lies on the goal cell.
    pub fn at_goal(&self, p: &Vector) -> bool {
        p.amax() < 0.5 * self.world.step
    }

        fn ball_at(&self, t: usize) -> Option<Body> {
        self.world.ball.as_ref().map(|b| propagate_ball(b, t).pop().unwrap())
    }

    /// Ball as observed at time `t`: true mean with the observation covariance.
    fn observed_ball(&self, t: usize) -> Option<Ball> {
        self.world.ball.as_ref().map(|b| {
            let mut seen = b.clone();
            seen.body.pose.mean = &b.body.pose.mean + &b.velocity * t as f64;
            seen.body.pose.cov = self.world.ball_observed_cov.clone();
            seen
        })
    }

    /// Executes `u` from `(x, belief)` against the true world.
    fn execute(&self, x: &Vector, belief: &Belief, u: &Vector) -> Result<(Vector, Belief)> {
        let x_next = x + u;
        let b = self.step(belief, u, Some(&x_next))?;
        Ok((x_next, b))
    }

    fn start_step(&self) -> Result<GraspStep> {
        let ball = self.ball_at(0);
        let (p, safe) = self.check(&self.world.start, &self.static_obstacles(), ball.as_ref())?;
        Ok(GraspStep {
            t: 0,
            belief: self.world.start.clone(),
            control: Vector::zeros(2),
            true_position: self.world.start.mean.clone(),
            p_collision: p,
            safe,
            cost_so_far: 0.0,
            ball,
        })
    }

    /// Plans once from the start with the ball predicted over the whole
    /// horizon, then follows the plan in closed loop against the true world.
    pub fn run_offline(&self) -> Result<GraspRun> {
        let w = &self.world;
        let track = w.ball.as_ref().map(|b| propagate_ball(b, w.horizon));
        let plan = self.plan(&w.start, w.horizon, track.as_deref())?;
        let mut steps = vec![self.start_step()?];
        let mut x = w.start.mean.clone();
        let mut belief = w.start.clone();
        let mut cost = 0.0;
        let truths = self.true_obstacles();
        for (k, (planned, _, _, _)) in plan.iter().enumerate() {
            let u = &planned.mean - &belief.mean;
            (x, belief) = self.execute(&x, &belief, &u)?;
            let ball = track.as_ref().map(|t| t[k + 1].clone());
            let (p_plan, safe) = self.check(&belief, &self.static_obstacles(), ball.as_ref())?;
            let truth_belief = Gaussian { mean: x.clone(), cov: belief.cov.clone() };
            let (p_true, _) = self.check(&truth_belief, &truths, ball.as_ref())?;
            cost += self.cost(&belief, &u, p_plan);
            steps.push(GraspStep {
                t: k + 1,
                belief: belief.clone(),
                control: u,
                true_position: x.clone(),
                p_collision: p_true.max(p_plan),
                safe,
                cost_so_far: cost,
                ball,
            });
        }
        Ok(GraspRun { steps, replans: 1, stalled: 0 })
    }

    /// Replans every `replan_every` steps, and whenever the current plan
    /// becomes unsafe, with the ball re-observed. When no safe action exists
    /// the end-effector stays in place.
    pub fn online_replan_loop(&self) -> Result<GraspRun> {
        let w = &self.world;
        let mut steps = vec![self.start_step()?];
        let mut x = w.start.mean.clone();
        let mut belief = w.start.clone();
        let mut cost = 0.0;
        let mut plan: Vec<(Belief, Vector, f64, f64)> = Vec::new();
        let mut cursor = 0usize;
        let (mut replans, mut stalled) = (0usize, 0usize);
        let statics = self.static_obstacles();
        for t in 0..w.horizon {
            if self.at_goal(&belief.mean) {
                break;
            }
            let seen = self.observed_ball(t);
            let track = seen.as_ref().map(|b| propagate_ball(b, w.horizon - t));
            let stale = cursor >= plan.len()
                || plan[cursor..].iter().enumerate().any(|(k, (b, _, _, _))| {
                    let ball = track.as_ref().map(|tr| tr[k + 1].clone());
                    !matches!(self.check(b, &statics, ball.as_ref()), Ok((_, true)))
                });
            if t % w.replan_every == 0 || stale {
                replans += 1;
                cursor = 0;
                plan = self.plan(&belief, w.horizon - t, track.as_deref()).unwrap_or_default();
            }
            let u = match plan.get(cursor) {
                Some((b, _, _, _)) => &b.mean - &belief.mean,
                None => {
                    stalled += 1;
                    Vector::zeros(2)
                }
            };
            cursor += 1;
            (x, belief) = self.execute(&x, &belief, &u)?;
            let ball = self.observed_ball(t + 1).map(|b| b.body);
            let (p, safe) = self.check(&belief, &statics, ball.as_ref())?;
            cost += self.cost(&belief, &u, p);
            steps.push(GraspStep {
                t: t + 1,
                belief: belief.clone(),
                control: u,
                true_position: x.clone(),
                p_collision: p,
                safe,
                cost_so_far: cost,
                ball,
            });
        }
        Ok(GraspRun { steps, replans, stalled })
    }
}
