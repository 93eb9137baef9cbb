//! Command-line front end. Every command writes one CSV table, optionally
//! followed by `#`-prefixed JSON footer lines.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::baselines::{self, EstimateOptions, Estimator};
use crate::collision::{collision_probability, Body};
use crate::config::{self, BeaconConfig, CompareConfig, ConvergeConfig, GraspConfig, ProbConfig};
use crate::domains::beacon::BeaconDomain;
use crate::domains::grasp::{GraspDomain, GraspRun};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, Matrix, Vector};
use crate::quadform::{self, SeriesOptions};
use crate::roadmap::{self, Environment, PlanOptions, PlanResult};

#[derive(Debug, Parser)]
#[command(name = "beliefspace", version, about = "Collision probabilities and belief space planning under Gaussian uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub object_uncertainty: Option<Toggle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Every estimator on one pair of bodies.
    Prob,
    /// Series term counts and timings over placements and covariances.
    Converge,
    /// Every estimator on several named cases.
    Compare,
    /// Beacon world roadmap planning.
    Plan,
    /// Laser-grasp run.
    Grasp {
        #[arg(long, value_enum, default_value = "offline")]
        mode: Mode,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Planning(_) => 3,
        _ => 1,
    }
}

/// Rendered command output.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<serde_json::Value>,
}

impl Report {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), footer: Vec::new() }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidArgument(format!("write failed: {e}"));
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("write failed: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        let mut out = w.into_inner().map_err(|e| Error::InvalidArgument(format!("write failed: {e}")))?;
        for f in &self.footer {
            writeln!(out, "# {f}").map_err(io)?;
        }
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn need_config(cli: &Cli) -> Result<&PathBuf> {
    cli.config.as_ref().ok_or_else(|| Error::Config("missing option `--config`".into()))
}

fn estimator(cli: &Cli) -> Result<Option<Estimator>> {
    cli.estimator
        .as_deref()
        .map(|s| s.parse::<Estimator>().map_err(|e| Error::Config(format!("option `--estimator`: {e}"))))
        .transpose()
}

fn tol(cli: &Cli, default: f64) -> Result<f64> {
    let t = cli.tol.unwrap_or(default);
    if !(t > 0.0 && t <= crate::collision::MAX_TOL) {
        return Err(Error::Config(format!("option `--tol`: {t} outside (0, {}]", crate::collision::MAX_TOL)));
    }
    Ok(t)
}

fn eps(cli: &Cli, default: f64) -> Result<f64> {
    let e = cli.eps.unwrap_or(default);
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Config(format!("option `--eps`: {e} outside (0, 1)")));
    }
    Ok(e)
}

struct EstimateRow {
    value: f64,
    count: u64,
    stderr: f64,
}

fn run_estimator(est: Estimator, robot: &Body, obstacle: &Body, opts: &EstimateOptions) -> Result<EstimateRow> {
    let singular = |e: &Error| matches!(e, Error::Singular(_) | Error::NotPsd(_));
    let fallback = |count| -> Result<EstimateRow> {
        Ok(EstimateRow { value: baselines::estimate(est, robot, obstacle, opts)?, count, stderr: 0.0 })
    };
    match est {
        Estimator::Series => {
            let r = collision_probability(robot, obstacle, opts.tol)?;
            Ok(EstimateRow { value: r.value, count: r.terms_used as u64, stderr: 0.0 })
        }
        Estimator::MonteCarlo => {
            let r = baselines::monte_carlo(robot, obstacle, opts.mc_samples, opts.seed)?;
            Ok(EstimateRow { value: r.estimate, count: r.samples, stderr: r.stderr })
        }
        Estimator::Grid => match baselines::grid_integral(robot, obstacle, opts.grid) {
            Ok(g) => Ok(EstimateRow {
                value: g.value,
                count: (g.resolution.radial * g.resolution.angular) as u64,
                stderr: g.refinement_change,
            }),
            Err(e) if singular(&e) => fallback(0),
            Err(e) => Err(e),
        },
        Estimator::DuToit | Estimator::Park => fallback(1),
    }
}

fn estimator_rows(
    report: &mut Report,
    prefix: &[String],
    robot: &Body,
    obstacle: &Body,
    opts: &EstimateOptions,
    only: Option<Estimator>,
) -> Result<()> {
    for est in Estimator::ALL {
        if only.is_some_and(|o| o != est) {
            continue;
        }
        let t0 = Instant::now();
        let r = run_estimator(est, robot, obstacle, opts)?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let mut row = prefix.to_vec();
        row.extend([est.name().to_string(), num(r.value), r.count.to_string(), num(r.stderr), num(ms)]);
        report.rows.push(row);
    }
    Ok(())
}

pub fn cmd_prob(cli: &Cli) -> Result<Report> {
    let c: ProbConfig = config::load(need_config(cli)?)?;
    let robot = c.robot.to_body("robot")?;
    let obstacle = c.obstacle.to_body("obstacle")?;
    let mut opts = match &c.estimate {
        Some(e) => e.options("estimate")?,
        None => EstimateOptions::default(),
    };
    opts.tol = tol(cli, opts.tol)?;
    opts.seed = cli.seed.unwrap_or(opts.seed);
    let mut report = Report::new(&["estimator", "value", "count", "stderr", "time_ms"]);
    estimator_rows(&mut report, &[], &robot, &obstacle, &opts, estimator(cli)?)?;
    Ok(report)
}

pub fn cmd_compare(cli: &Cli) -> Result<Report> {
    let c: CompareConfig = config::load(need_config(cli)?)?;
    let only = estimator(cli)?;
    let mut report = Report::new(&["case", "estimator", "value", "count", "stderr", "time_ms"]);
    for (i, case) in c.cases.iter().enumerate() {
        let robot = case.robot.to_body(&format!("case[{i}].robot"))?;
        let obstacle = case.obstacle.to_body(&format!("case[{i}].obstacle"))?;
        let mut opts = match &case.estimate {
            Some(e) => e.options(&format!("case[{i}].estimate"))?,
            None => EstimateOptions::default(),
        };
        opts.tol = tol(cli, opts.tol)?;
        opts.seed = cli.seed.unwrap_or(opts.seed);
        estimator_rows(&mut report, &[case.name.clone()], &robot, &obstacle, &opts, only)?;
    }
    Ok(report)
}

/// One cell of the convergence sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeCell {
    pub label: String,
    pub distance: f64,
    pub variance: f64,
    /// Terms summed under the relative stopping rule.
    pub terms_used: usize,
    /// Terms for the certified truncation bound with `ρ = min λ / 2`.
    pub terms_bound: usize,
    pub value: f64,
    pub time_ms: f64,
}

pub fn converge_cells(c: &ConvergeConfig, tol: f64) -> Result<Vec<ConvergeCell>> {
    c.validate()?;
    let r = c.robot_radius + c.obstacle_radius;
    let repeats = c.repeats.unwrap_or(1).max(1);
    let mut out = Vec::new();
    for p in &c.placements {
        for &v in &c.variances {
            let w = Gaussian { mean: Vector::from_vec(vec![p.distance, 0.0]), cov: Matrix::identity(2, 2) * v };
            let q = quadform::canonicalize(&w.mean, &w.cov, &Matrix::identity(2, 2))?;
            let y = r * r;
            let opts = SeriesOptions::new(tol, 4000);
            let mut best = f64::INFINITY;
            let mut value = 0.0;
            for _ in 0..repeats {
                let t0 = Instant::now();
                value = quadform::cdf_with(&q, y, &opts)?.value;
                best = best.min(t0.elapsed().as_secs_f64() * 1e3);
            }
            out.push(ConvergeCell {
                label: p.label.clone(),
                distance: p.distance,
                variance: v,
                terms_used: quadform::terms_relative_rule(&q, y, tol, quadform::TERMS_CAP)?,
                terms_bound: quadform::terms_needed(&q, y, tol)?,
                value,
                time_ms: best,
            });
        }
    }
    Ok(out)
}

pub fn cmd_converge(cli: &Cli) -> Result<Report> {
    let c: ConvergeConfig = config::load(need_config(cli)?)?;
    let cells = converge_cells(&c, tol(cli, 1e-6)?)?;
    let mut report = Report::new(&["label", "distance", "variance", "terms_used", "terms_bound", "value", "time_ms"]);
    for cell in cells {
        report.rows.push(vec![
            cell.label,
            num(cell.distance),
            num(cell.variance),
            cell.terms_used.to_string(),
            cell.terms_bound.to_string(),
            num(cell.value),
            num(cell.time_ms),
        ]);
    }
    Ok(report)
}

/// Domain, environment, roadmap and options for a beacon scenario.
pub struct BeaconSetup {
    pub domain: BeaconDomain,
    pub env: Environment,
    pub roadmap: roadmap::Roadmap,
    pub options: PlanOptions,
}

pub fn beacon_setup(
    c: &BeaconConfig,
    object_uncertainty: bool,
    seed: Option<u64>,
    eps: Option<f64>,
    tol: Option<f64>,
    estimator: Option<Estimator>,
) -> Result<BeaconSetup> {
    let world = c.world()?;
    let env = Environment::from_obstacles(world.width, world.height, &world.obstacles, world.robot_radius);
    let start = world.start.mean.rows(0, 2).into_owned();
    let mut fixed = vec![start, world.goal.clone()];
    fixed.extend(c.roadmap.fixed.iter().map(|p| Vector::from_column_slice(p)));
    let seed = seed.unwrap_or(c.roadmap.seed);
    let map = roadmap::build_prm(&env, &fixed, c.roadmap.nodes, c.roadmap.k, c.roadmap.max_edge, seed)?;
    let p = &c.planner;
    let mut estimate = match &p.estimate {
        Some(e) => e.options("planner.estimate")?,
        None => EstimateOptions::default(),
    };
    estimate.seed = seed;
    let options = PlanOptions {
        eps: eps.unwrap_or(p.eps),
        tol: tol.unwrap_or(p.tol),
        step: p.step,
        weights: p.weights.to_weights()?,
        estimator: estimator.unwrap_or(Estimator::Series),
        estimate,
        extension: p.extension(),
        seed,
        max_expansions: p.max_expansions,
    };
    if !(options.eps > 0.0 && options.eps < 1.0) || !(options.tol > 0.0 && options.tol <= (1.0 - options.eps) / 10.0) {
        return Err(Error::Config("fields `planner.eps`/`planner.tol`: need 0 < eps < 1 and tol <= (1 - eps) / 10".into()));
    }
    if !(options.step > 0.0) {
        return Err(Error::Config("field `planner.step`: must be > 0".into()));
    }
    Ok(BeaconSetup { domain: BeaconDomain::new(world, object_uncertainty)?, env, roadmap: map, options })
}

pub fn plan_report(res: &PlanResult, seconds: f64) -> Report {
    let mut report = Report::new(&[
        "step", "mean_x", "mean_y", "mean_theta", "cov_xx", "cov_xy", "cov_yy", "p_collision_max", "safe_flag", "cost_so_far",
    ]);
    let mut cost = 0.0;
    for (i, w) in res.waypoints.iter().enumerate() {
        cost += w.stage_cost;
        let b = &w.belief;
        report.rows.push(vec![
            i.to_string(),
            num(b.mean[0]),
            num(b.mean[1]),
            num(b.mean[2]),
            num(b.cov[(0, 0)]),
            num(b.cov[(0, 1)]),
            num(b.cov[(1, 1)]),
            num(w.p_collision),
            (w.safe as u8).to_string(),
            num(cost),
        ]);
    }
    report.footer.push(json!({
        "total_cost": res.total_cost,
        "planning_time_s": seconds,
        "nodes_added": res.nodes_added,
        "expansions": res.expansions,
        "certified": res.certified,
        "path_length": res.length(),
        "node_path": res.node_path,
    }));
    report
}

pub fn cmd_plan(cli: &Cli) -> Result<Report> {
    let c: BeaconConfig = config::load(need_config(cli)?)?;
    let eps = eps(cli, c.planner.eps)?;
    let tol = tol(cli, c.planner.tol)?;
    let est = estimator(cli)?;
    if matches!(est, Some(Estimator::MonteCarlo | Estimator::Grid)) {
        return Err(Error::Config("option `--estimator`: plan accepts series, dutoit or park".into()));
    }
    let ou = cli.object_uncertainty == Some(Toggle::On);
    let s = beacon_setup(&c, ou, cli.seed, Some(eps), Some(tol), est)?;
    let t0 = Instant::now();
    let start = s.domain.world.start.clone();
    let res = roadmap::plan(&s.roadmap, &s.env, &s.domain, &start, 1, &s.options)?;
    Ok(plan_report(&res, t0.elapsed().as_secs_f64()))
}

pub fn grasp_report(run: &GraspRun, seconds: f64) -> Report {
    let mut report = Report::new(&[
        "step", "mean_x", "mean_y", "mean_theta", "cov_xx", "cov_xy", "cov_yy", "p_collision_max", "safe_flag", "cost_so_far",
        "ball_x", "ball_y", "ball_cov_xx", "ball_cov_xy", "ball_cov_yy",
    ]);
    for s in &run.steps {
        let b = &s.belief;
        let mut row = vec![
            s.t.to_string(),
            num(b.mean[0]),
            num(b.mean[1]),
            num(0.0),
            num(b.cov[(0, 0)]),
            num(b.cov[(0, 1)]),
            num(b.cov[(1, 1)]),
            num(s.p_collision),
            (s.safe as u8).to_string(),
            num(s.cost_so_far),
        ];
        match &s.ball {
            Some(ball) => {
                let g = &ball.pose;
                row.extend([num(g.mean[0]), num(g.mean[1]), num(g.cov[(0, 0)]), num(g.cov[(0, 1)]), num(g.cov[(1, 1)])]);
            }
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        report.rows.push(row);
    }
    report.footer.push(json!({
        "total_cost": run.steps.last().map_or(0.0, |s| s.cost_so_far),
        "planning_time_s": seconds,
        "replans": run.replans,
        "stalled_steps": run.stalled,
        "first_advance_after_retreat": run.first_advance_after_retreat(),
    }));
    report
}

pub fn cmd_grasp(cli: &Cli, mode: Mode) -> Result<Report> {
    let c: GraspConfig = config::load(need_config(cli)?)?;
    let mut world = c.world()?;
    world.eps = eps(cli, world.eps)?;
    world.tol = tol(cli, world.tol)?;
    let domain = GraspDomain::new(world, cli.object_uncertainty == Some(Toggle::On))?;
    let t0 = Instant::now();
    let run = match mode {
        Mode::Offline => domain.run_offline()?,
        Mode::Online => domain.online_replan_loop()?,
    };
    Ok(grasp_report(&run, t0.elapsed().as_secs_f64()))
}

pub fn run(cli: &Cli) -> Result<Report> {
    if let Some(e) = cli.eps {
        eps(cli, e)?;
    }
    match &cli.command {
        Command::Prob => cmd_prob(cli),
        Command::Converge => cmd_converge(cli),
        Command::Compare => cmd_compare(cli),
        Command::Plan => cmd_plan(cli),
        Command::Grasp { mode } => cmd_grasp(cli, *mode),
    }
}

/// Runs the parsed command and writes its output; returns the exit code.
pub fn main_with(cli: &Cli) -> i32 {
    let result = run(cli).and_then(|r| match &cli.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Error::Config(format!("option `--out`: {}: {e}", p.display())))?;
            r.write_to(std::io::BufWriter::new(f))
        }
        None => r.write_to(std::io::stdout().lock()),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
