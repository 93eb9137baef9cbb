//! Probabilistic roadmap searched in belief space with per-waypoint
//! ε-safety checks, plus local roadmap extension when no safe route exists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{estimate, EstimateOptions, Estimator};
use crate::collision::{is_eps_safe, Body};
use crate::error::{Error, Result};
use crate::filter::Belief;
use crate::gaussian::{Matrix, Vector};

/// What the planner needs from a domain.
pub trait BeliefDomain: Sync {
    /// Planar position of the belief mean.
    fn position(&self, b: &Belief) -> Vector;
    /// Control moving the mean from `b` to `target`.
    fn control_to(&self, b: &Belief, target: &Vector) -> Vector;
    /// Prediction followed by the maximum likelihood measurement update.
    fn propagate(&self, b: &Belief, u: &Vector) -> Result<Belief>;
    /// Robot disc used for collision checks.
    fn robot_body(&self, b: &Belief) -> Result<Body>;
    fn obstacles(&self) -> &[Body];
}

/// Rectangle `[0, width] x [0, height]` with mean obstacle discs, used to
/// place roadmap nodes and edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub width: f64,
    pub height: f64,
    /// Obstacle centres and radii.
    pub discs: Vec<(Vector, f64)>,
    /// Robot radius added to every disc.
    pub clearance: f64,
}

impl Environment {
    pub fn from_obstacles(width: f64, height: f64, obstacles: &[Body], robot_radius: f64) -> Self {
        Self {
            width,
            height,
            discs: obstacles.iter().map(|o| (o.pose.mean.clone(), o.radius)).collect(),
            clearance: robot_radius,
        }
    }

    pub fn point_free(&self, p: &Vector) -> bool {
        p[0] >= 0.0
            && p[0] <= self.width
            && p[1] >= 0.0
            && p[1] <= self.height
            && self.discs.iter().all(|(c, r)| (p - c).norm() > r + self.clearance)
    }

    pub fn segment_free(&self, a: &Vector, b: &Vector) -> bool {
        let d = b - a;
        let len2 = d.norm_squared();
        self.discs.iter().all(|(c, r)| {
            let t = if len2 > 0.0 { ((c - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (a + &d * t - c).norm() > r + self.clearance
        })
    }
}

/// Undirected graph over planar configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub nodes: Vec<Vector>,
    adjacency: Vec<Vec<(usize, f64)>>,
    pub max_edge_length: f64,
    pub k_neighbors: usize,
}

impl Roadmap {
    /// Connects every node to its `k` nearest neighbours within
    /// `max_edge_length` whose segment avoids the environment's discs.
    pub fn from_nodes(nodes: Vec<Vector>, k_neighbors: usize, max_edge_length: f64, env: &Environment) -> Self {
        let mut map = Self { adjacency: vec![Vec::new(); nodes.len()], nodes, max_edge_length, k_neighbors };
        for i in 0..map.nodes.len() {
            map.connect(i, env);
        }
        map
    }

    fn nearest(&self, i: usize) -> Vec<(usize, f64)> {
        let mut d: Vec<(usize, f64)> = (0..self.nodes.len())
            .filter(|&j| j != i)
            .map(|j| (j, (&self.nodes[j] - &self.nodes[i]).norm()))
            .filter(|&(_, l)| l <= self.max_edge_length && l > 0.0)
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d
    }

    fn connect(&mut self, i: usize, env: &Environment) {
        let mut added = 0;
        for (j, l) in self.nearest(i) {
            if added == self.k_neighbors {
                break;
            }
            if !env.segment_free(&self.nodes[i], &self.nodes[j]) {
                continue;
            }
            added += 1;
            if !self.adjacency[i].iter().any(|&(n, _)| n == j) {
                self.adjacency[i].push((j, l));
                self.adjacency[j].push((i, l));
            }
        }
    }

    /// Adds a node and connects it to its nearest neighbours.
    pub fn add_node(&mut self, p: Vector, env: &Environment) -> usize {
        self.nodes.push(p);
        self.adjacency.push(Vec::new());
        let i = self.nodes.len() - 1;
        self.connect(i, env);
        i
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(i) = stack.pop() {
            if i == b {
                return true;
            }
            for &(j, _) in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    }
}

/// Samples `node_count` free configurations (after the given fixed nodes,
/// typically start and goal) and connects them.
pub fn build_prm(
    env: &Environment,
    fixed: &[Vector],
    node_count: usize,
    k_neighbors: usize,
    max_edge_length: f64,
    seed: u64,
) -> Result<Roadmap> {
    for p in fixed {
        if !env.point_free(p) {
            return Err(Error::Planning(format!("node ({:.3}, {:.3}) is inside an obstacle", p[0], p[1])));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = fixed.to_vec();
    let mut tries = 0usize;
    while nodes.len() < node_count.max(fixed.len()) {
        tries += 1;
        if tries > 1000 * node_count.max(1) {
            return Err(Error::Planning("free space too small to place roadmap nodes".into()));
        }
        let p = Vector::from_vec(vec![rng.random::<f64>() * env.width, rng.random::<f64>() * env.height]);
        if env.point_free(&p) {
            nodes.push(p);
        }
    }
    let map = Roadmap::from_nodes(nodes, k_neighbors, max_edge_length, env);
    if fixed.len() >= 2 && !map.connected(0, 1) {
        return Err(Error::Planning("start and goal are not connected; extend the roadmap".into()));
    }
    Ok(map)
}

/// Points from `a` to `b` inclusive, evenly spaced at most `step` apart.
pub fn edge_waypoints(a: &Vector, b: &Vector, step: f64) -> Vec<Vector> {
    assert!(step > 0.0, "step must be positive");
    let len = (b - a).norm();
    let n = (len / step).ceil() as usize;
    if n == 0 {
        return vec![a.clone()];
    }
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

/// Weights of the stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub m_u: Matrix,
    pub m_g: Matrix,
    pub m_sigma: Matrix,
    pub m_c: f64,
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let neg = |m: &Matrix| m.iter().any(|v| *v < 0.0 || !v.is_finite());
        if neg(&self.m_u) || neg(&self.m_g) || neg(&self.m_sigma) || !(self.m_c >= 0.0) {
            return Err(Error::Config("cost weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// `‖u‖²_{M_u} + ‖x - x_g‖²_{M_g} + tr(M_Σᵀ Σ M_Σ) + M_C P`, with `Σ` the
/// position block of the covariance.
pub fn stage_cost(belief_position_cov: &Matrix, position: &Vector, u: &Vector, p_collision: f64, goal: &Vector, w: &CostWeights) -> f64 {
    let du = (u.transpose() * &w.m_u * u)[(0, 0)];
    let dx = position - goal;
    let dg = (dx.transpose() * &w.m_g * &dx)[(0, 0)];
    let ds = (w.m_sigma.transpose() * belief_position_cov * &w.m_sigma).trace();
    du + dg + ds + w.m_c * p_collision
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionOptions {
    pub max_samples: usize,
    pub time_budget: Duration,
    /// Extension rounds before planning gives up.
    pub max_rounds: usize,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self { max_samples: 50, time_budget: Duration::from_secs(5), max_rounds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub eps: f64,
    pub tol: f64,
    /// Spacing of the belief waypoints along an edge.
    pub step: f64,
    pub weights: CostWeights,
    pub estimator: Estimator,
    pub estimate: EstimateOptions,
    pub extension: ExtensionOptions,
    pub seed: u64,
    pub max_expansions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub belief: Belief,
    /// Control that led here (zero for the start).
    pub control: Vector,
    pub p_collision: f64,
    pub safe: bool,
    pub stage_cost: f64,
    /// Roadmap node when the waypoint is one.
    pub node: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub waypoints: Vec<Waypoint>,
    pub total_cost: f64,
    /// Every waypoint passed the ε-safety check.
    pub certified: bool,
    pub nodes_added: usize,
    pub node_path: Vec<usize>,
    pub roadmap: Roadmap,
    pub expansions: usize,
}

impl PlanResult {
    pub fn max_collision_probability(&self) -> f64 {
        self.waypoints.iter().map(|w| w.p_collision).fold(0.0, f64::max)
    }

    pub fn length(&self) -> f64 {
        self.node_path.windows(2).map(|p| (&self.roadmap.nodes[p[1]] - &self.roadmap.nodes[p[0]]).norm()).sum()
    }
}

/// Worst collision probability over the obstacles and whether the belief is ε-safe.
pub fn check_belief<D: BeliefDomain + ?Sized>(domain: &D, b: &Belief, opts: &PlanOptions) -> Result<(f64, bool)> {
    let body = domain.robot_body(b)?;
    if opts.estimator == Estimator::Series {
        let s = is_eps_safe(&body, domain.obstacles(), opts.eps, opts.tol)?;
        return Ok((s.worst_prob, s.safe));
    }
    let mut worst: f64 = 0.0;
    let eo = EstimateOptions { tol: opts.tol, ..opts.estimate };
    for ob in domain.obstacles() {
        worst = worst.max(estimate(opts.estimator, &body, ob, &eo)?);
    }
    Ok((worst, worst <= 1.0 - opts.eps))
}

/// Waypoints of one edge traversal, or `None` when some waypoint is unsafe.
fn traverse<D: BeliefDomain + ?Sized>(
    domain: &D,
    start: &Belief,
    target: &Vector,
    goal: &Vector,
    opts: &PlanOptions,
) -> Result<Option<Vec<Waypoint>>> {
    let from = domain.position(start);
    let pts = edge_waypoints(&from, target, opts.step);
    let mut b = start.clone();
    let mut out = Vec::with_capacity(pts.len());
    for p in pts.iter().skip(1) {
        let u = domain.control_to(&b, p);
        b = domain.propagate(&b, &u)?;
        let (prob, safe) = check_belief(domain, &b, opts)?;
        if !safe {
            return Ok(None);
        }
        let pos = domain.position(&b);
        let cov = b.cov.view((0, 0), (2, 2)).into_owned();
        let c = stage_cost(&cov, &pos, &u, prob, goal, &opts.weights);
        out.push(Waypoint { belief: b.clone(), control: u, p_collision: prob, safe, stage_cost: c, node: None });
    }
    Ok(Some(out))
}

struct Record {
    node: usize,
    belief: Belief,
    cost: f64,
    parent: Option<usize>,
    segment: Vec<Waypoint>,
}

#[derive(PartialEq)]
struct Queued {
    cost: f64,
    id: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const DOMINANCE_MEAN_TOL: f64 = 1e-6;

enum SearchOutcome {
    Found(PlanResult),
    /// Node closest to the goal among those with an unsafe edge, with its
    /// belief, and the nodes the search reached.
    Blocked { frontier: Option<(usize, Belief)>, reached: Vec<bool>, expansions: usize },
}

fn search<D: BeliefDomain + ?Sized>(
    map: &Roadmap,
    domain: &D,
    start: &Belief,
    goal: usize,
    opts: &PlanOptions,
) -> Result<SearchOutcome> {
    let goal_pos = map.nodes[goal].clone();
    let start_prob = check_belief(domain, start, opts)?;
    let mut records = vec![Record { node: 0, belief: start.clone(), cost: 0.0, parent: None, segment: vec![] }];
    let mut heap = BinaryHeap::new();
    heap.push(Queued { cost: 0.0, id: 0 });
    let mut expanded: Vec<Vec<(Vector, f64)>> = vec![Vec::new(); map.nodes.len()];
    let mut frontier: Option<(usize, Belief, f64)> = None;
    let mut expansions = 0usize;
    if !start_prob.1 {
        return Err(Error::Planning(format!("start belief is not safe (p = {:.4})", start_prob.0)));
    }

    while let Some(Queued { id, .. }) = heap.pop() {
        let (node, belief, cost) = {
            let r = &records[id];
            (r.node, r.belief.clone(), r.cost)
        };
        let trace = belief.cov.trace();
        if expanded[node]
            .iter()
            .any(|(m, t)| (m - &belief.mean).amax() <= DOMINANCE_MEAN_TOL && *t <= trace)
        {
            continue;
        }
        expanded[node].push((belief.mean.clone(), trace));
        if node == goal {
            return Ok(SearchOutcome::Found(assemble(map, &records, id, start, start_prob.0, expansions)));
        }
        expansions += 1;
        if expansions > opts.max_expansions {
            return Err(Error::Planning(format!("search exceeded {} expansions", opts.max_expansions)));
        }
        let results: Vec<Result<Option<Vec<Waypoint>>>> = map
            .neighbors(node)
            .par_iter()
            .map(|&(j, _)| traverse(domain, &belief, &map.nodes[j], &goal_pos, opts))
            .collect();
        let mut blocked = false;
        for (&(j, _), res) in map.neighbors(node).iter().zip(results) {
            match res? {
                Some(mut seg) => {
                    if let Some(last) = seg.last_mut() {
                        last.node = Some(j);
                    }
                    let add: f64 = seg.iter().map(|w| w.stage_cost).sum();
                    let b = seg.last().map(|w| w.belief.clone()).unwrap_or_else(|| belief.clone());
                    records.push(Record { node: j, belief: b, cost: cost + add, parent: Some(id), segment: seg });
                    heap.push(Queued { cost: cost + add, id: records.len() - 1 });
                }
                None => blocked = true,
            }
        }
        if blocked {
            let d = (&map.nodes[node] - &goal_pos).norm();
            if frontier.as_ref().map_or(true, |f| d < f.2) {
                frontier = Some((node, belief.clone(), d));
            }
        }
    }
    let reached = expanded.iter().map(|e| !e.is_empty()).collect();
    Ok(SearchOutcome::Blocked { frontier: frontier.map(|(n, b, _)| (n, b)), reached, expansions })
}

fn assemble(map: &Roadmap, records: &[Record], last: usize, start: &Belief, p0: f64, expansions: usize) -> PlanResult {
    let mut chain = vec![last];
    while let Some(p) = records[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();
    let mut waypoints = vec![Waypoint {
        belief: start.clone(),
        control: Vector::zeros(0),
        p_collision: p0,
        safe: true,
        stage_cost: 0.0,
        node: Some(0),
    }];
    let mut node_path = vec![records[chain[0]].node];
    for &id in &chain[1..] {
        waypoints.extend(records[id].segment.iter().cloned());
        node_path.push(records[id].node);
    }
    let total_cost = waypoints.iter().map(|w| w.stage_cost).sum();
    PlanResult {
        certified: waypoints.iter().all(|w| w.safe),
        waypoints,
        total_cost,
        nodes_added: 0,
        node_path,
        roadmap: map.clone(),
        expansions,
    }
}

/// Adds samples inside the disc of radius `max_edge_length / 2` around
/// `frontier` until one is reachable from `belief` through ε-safe waypoints
/// and continues safely to a node outside `reached`. Returns the number of
/// nodes added; zero when the frontier already has such a continuation.
#[allow(clippy::too_many_arguments)]
pub fn extend_roadmap<D: BeliefDomain + ?Sized>(
    map: &mut Roadmap,
    env: &Environment,
    frontier: usize,
    belief: &Belief,
    reached: &[bool],
    domain: &D,
    opts: &PlanOptions,
    seed: u64,
) -> Result<usize> {
    let goal = map.nodes[1.min(map.nodes.len() - 1)].clone();
    let open = |j: usize| !reached.get(j).copied().unwrap_or(false);
    let leads_on = |map: &Roadmap, from: usize, b: &Belief, skip: usize| -> Result<bool> {
        for &(j, _) in map.neighbors(from) {
            if j != skip && open(j) && traverse(domain, b, &map.nodes[j], &goal, opts)?.is_some() {
                return Ok(true);
            }
        }
        Ok(false)
    };
    if leads_on(map, frontier, belief, usize::MAX)? {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.5 * map.max_edge_length;
    let centre = map.nodes[frontier].clone();
    let started = Instant::now();
    let mut added = 0usize;
    let mut attempts = 0usize;
    while attempts < opts.extension.max_samples && started.elapsed() <= opts.extension.time_budget {
        attempts += 1;
        let r = radius * rng.random::<f64>().sqrt();
        let t = std::f64::consts::TAU * rng.random::<f64>();
        let p = Vector::from_vec(vec![centre[0] + r * t.cos(), centre[1] + r * t.sin()]);
        if !env.point_free(&p) || !env.segment_free(&centre, &p) {
            continue;
        }
        let i = map.add_node(p, env);
        added += 1;
        if !map.neighbors(i).iter().any(|&(j, _)| j == frontier) {
            continue;
        }
        if let Some(seg) = traverse(domain, belief, &map.nodes[i], &goal, opts)? {
            let b = seg.last().map_or_else(|| belief.clone(), |w| w.belief.clone());
            if leads_on(map, i, &b, frontier)? {
                return Ok(added);
            }
        }
    }
    Err(Error::Planning(format!(
        "roadmap extension around node {frontier} found no safe continuation after {attempts} samples ({added} nodes added)"
    )))
}

/// Lowest-cost ε-safe route from node 0 (holding `start`) to `goal`,
/// extending the roadmap when the search is blocked.
pub fn plan<D: BeliefDomain + ?Sized>(
    roadmap: &Roadmap,
    env: &Environment,
    domain: &D,
    start: &Belief,
    goal: usize,
    opts: &PlanOptions,
) -> Result<PlanResult> {
    opts.weights.validate()?;
    if (domain.position(start) - &roadmap.nodes[0]).norm() > 1e-9 {
        return Err(Error::Planning("node 0 must be the start position".into()));
    }
    if goal >= roadmap.nodes.len() {
        return Err(Error::Planning(format!("goal node {goal} does not exist")));
    }
    let mut map = roadmap.clone();
    let mut added = 0usize;
    let mut total_expansions = 0usize;
    for round in 0..=opts.extension.max_rounds {
        match search(&map, domain, start, goal, opts)? {
            SearchOutcome::Found(mut res) => {
                res.nodes_added = added;
                res.expansions += total_expansions;
                return Ok(res);
            }
            SearchOutcome::Blocked { frontier, reached, expansions } => {
                total_expansions += expansions;
                if round == opts.extension.max_rounds {
                    break;
                }
                let Some((node, belief)) = frontier else {
                    return Err(Error::Planning(format!(
                        "no safe route: goal unreachable in the roadmap after {total_expansions} expansions"
                    )));
                };
                let n = extend_roadmap(
                    &mut map,
                    env,
                    node,
                    &belief,
                    &reached,
                    domain,
                    opts,
                    opts.seed.wrapping_add(round as u64 + 1),
                )?;
                if n == 0 {
                    return Err(Error::Planning(format!("no safe route and node {node} cannot be extended")));
                }
                added += n;
            }
        }
    }
    Err(Error::Planning(format!(
        "no safe route after {} extension rounds ({added} nodes added)",
        opts.extension.max_rounds
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    fn empty() -> Environment {
        Environment { width: 10.0, height: 10.0, discs: vec![], clearance: 0.0 }
    }

    #[test]
    fn line_of_nodes_is_a_path() {
        let map = Roadmap::from_nodes(vec![v(&[1.0, 1.0]), v(&[2.0, 1.0]), v(&[3.0, 1.0])], 2, 1.5, &empty());
        assert_eq!(map.edge_count(), 2);
        assert!(map.connected(0, 2));
        assert_eq!(map.neighbors(1).len(), 2);
    }

    #[test]
    fn blocked_goal_is_an_error() {
        let env = Environment { discs: vec![(v(&[5.0, 5.0]), 1.0)], ..empty() };
        assert!(build_prm(&env, &[v(&[1.0, 1.0]), v(&[5.0, 5.2])], 20, 5, 4.0, 1).is_err());
    }

    #[test]
    fn prm_is_deterministic() {
        let env = Environment { discs: vec![(v(&[5.0, 5.0]), 1.0)], ..empty() };
        let a = build_prm(&env, &[v(&[1.0, 1.0]), v(&[9.0, 9.0])], 40, 6, 4.0, 7).unwrap();
        let b = build_prm(&env, &[v(&[1.0, 1.0]), v(&[9.0, 9.0])], 40, 6, 4.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.nodes.iter().all(|p| env.point_free(p)));
    }

    #[test]
    fn waypoint_examples() {
        let a = v(&[0.0, 0.0]);
        assert_eq!(edge_waypoints(&a, &a, 0.5), vec![a.clone()]);
        let pts = edge_waypoints(&a, &v(&[1.0, 0.0]), 0.5);
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2], v(&[1.0, 0.0]));
    }

    #[test]
    fn stage_cost_at_goal_is_zero() {
        let w = CostWeights {
            m_u: Matrix::identity(2, 2) * 0.3,
            m_g: Matrix::identity(2, 2) * 0.8,
            m_sigma: Matrix::identity(2, 2),
            m_c: 10.0,
        };
        let g = v(&[3.0, 4.0]);
        assert_eq!(stage_cost(&Matrix::zeros(2, 2), &g, &v(&[0.0, 0.0]), 0.0, &g, &w), 0.0);
        let c = stage_cost(&(Matrix::identity(2, 2) * 0.1), &v(&[4.0, 4.0]), &v(&[1.0, 0.0]), 0.01, &g, &w);
        assert!((c - (0.3 + 0.8 + 0.2 + 0.1)).abs() < 1e-12);
    }
}
