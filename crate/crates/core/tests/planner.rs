use std::path::Path;

use beliefspace::cli::{beacon_setup, BeaconSetup};
use beliefspace::config::{self, BeaconConfig};
use beliefspace::roadmap::{self, PlanResult};

fn setup(name: &str, seed: Option<u64>) -> BeaconSetup {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    let c: BeaconConfig = config::load(&path).unwrap();
    beacon_setup(&c, false, seed, None, None, None).unwrap()
}

fn plan(s: &BeaconSetup) -> PlanResult {
    let start = s.domain.world.start.clone();
    roadmap::plan(&s.roadmap, &s.env, &s.domain, &start, 1, &s.options).unwrap()
}

#[test]
fn same_seed_gives_identical_plan() {
    let a = plan(&setup("beacon_certain.toml", Some(7)));
    let b = plan(&setup("beacon_certain.toml", Some(7)));
    assert_eq!(a, b);
}

#[test]
fn total_cost_is_sum_of_stage_costs() {
    let r = plan(&setup("beacon_certain.toml", None));
    let sum: f64 = r.waypoints.iter().map(|w| w.stage_cost).sum();
    assert!((sum - r.total_cost).abs() <= 1e-9 * r.total_cost.max(1.0), "{sum} vs {}", r.total_cost);
}

#[test]
fn raising_collision_weight_never_raises_peak_probability() {
    let mut prev = f64::INFINITY;
    for m_c in [1.0, 10.0, 100.0] {
        let mut s = setup("beacon_uncertain_obstacle.toml", None);
        s.options.weights.m_c = m_c;
        let p = plan(&s).max_collision_probability();
        assert!(p <= prev + 1e-12, "m_c {m_c}: {p} > {prev}");
        prev = p;
    }
}
