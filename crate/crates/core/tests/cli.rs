use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beliefspace")).args(args).output().unwrap()
}

fn run_fixture(cmd: &[&str], name: &str, extra: &[&str]) -> Output {
    let cfg = fixture(name);
    let mut args = cmd.to_vec();
    args.extend(["--config", cfg.to_str().unwrap()]);
    args.extend(extra);
    run(&args)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    footer: Vec<serde_json::Value>,
}

fn parse(out: &Output) -> Table {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::str::from_utf8(&out.stdout).expect("utf-8");
    assert!(!text.contains('\r'), "CR in output");
    assert!(text.ends_with('\n'));
    let (body, footer): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| !l.starts_with('#'));
    let footer = footer.iter().map(|l| serde_json::from_str(l[1..].trim()).unwrap()).collect();
    let csv_text = body.join("\n");
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect::<Vec<_>>();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect::<Vec<_>>()).collect::<Vec<_>>();
    for row in &rows {
        assert_eq!(row.len(), header.len());
        for cell in row {
            assert!(!cell.contains(','), "{cell}");
        }
    }
    Table { header, rows, footer }
}

fn column(t: &Table, name: &str) -> Vec<f64> {
    let i = t.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    t.rows.iter().map(|r| r[i].parse::<f64>().unwrap()).collect()
}

fn temp_config(name: &str, text: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("beliefspace-cli-{}-{name}", std::process::id()));
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn prob_reports_every_estimator() {
    let t = parse(&run_fixture(&["prob"], "prob_placement_a.toml", &["--seed", "3"]));
    assert_eq!(t.header, ["estimator", "value", "count", "stderr", "time_ms"]);
    let names: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["series", "dutoit", "park", "monte_carlo", "grid"]);
    let v = column(&t, "value");
    assert!((v[0] - v[4]).abs() < 1e-9);
    assert!((v[0] - v[3]).abs() < 5.0 * column(&t, "stderr")[3]);
}

#[test]
fn prob_single_estimator_and_tolerance() {
    let t = parse(&run_fixture(&["prob"], "prob_placement_a.toml", &["--estimator", "series", "--tol", "1e-12"]));
    assert_eq!(t.rows.len(), 1);
    assert!((column(&t, "value")[0] - 0.44972793631937).abs() < 1e-12);
}

#[test]
fn seeded_output_is_reproducible() {
    let a = run_fixture(&["prob"], "prob_placement_a.toml", &["--seed", "11", "--estimator", "monte_carlo"]);
    let b = run_fixture(&["prob"], "prob_placement_a.toml", &["--seed", "11", "--estimator", "monte_carlo"]);
    let c = run_fixture(&["prob"], "prob_placement_a.toml", &["--seed", "12", "--estimator", "monte_carlo"]);
    let value = |o: &Output| column(&parse(o), "value")[0];
    assert_eq!(value(&a).to_bits(), value(&b).to_bits());
    assert_ne!(value(&a).to_bits(), value(&c).to_bits());
}

#[test]
fn certain_bodies_give_indicator() {
    let t = parse(&run_fixture(&["prob"], "prob_certain.toml", &["--estimator", "series"]));
    assert_eq!(column(&t, "value")[0], 1.0);
}

#[test]
fn compare_and_converge_parse() {
    let t = parse(&run_fixture(&["compare"], "compare_cases.toml", &["--seed", "1"]));
    assert!(t.header.contains(&"case".to_string()));
    assert!(!t.rows.is_empty());
    let t = parse(&run_fixture(&["converge"], "converge_sweep.toml", &["--seed", "1"]));
    assert!(!t.rows.is_empty());
}

#[test]
fn plan_writes_waypoints_and_summary() {
    let out_path = std::env::temp_dir().join(format!("beliefspace-cli-{}-plan.csv", std::process::id()));
    let o = run_fixture(&["plan"], "beacon_certain.toml", &["--out", out_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let file = Output { status: o.status, stdout: std::fs::read(&out_path).unwrap(), stderr: Vec::new() };
    std::fs::remove_file(&out_path).ok();
    let t = parse(&file);
    assert!(t.rows.len() > 2);
    assert!(!t.footer.is_empty());
    for p in column(&t, "p_collision_max") {
        assert!((0.0..=0.01).contains(&p));
    }
}

#[test]
fn grasp_offline_runs() {
    let t = parse(&run_fixture(&["grasp"], "grasp_ball.toml", &["--object-uncertainty", "on"]));
    assert!(!t.rows.is_empty());
    assert!(!t.footer.is_empty());
}

#[test]
fn missing_radius_is_config_error() {
    let o = run_fixture(&["prob"], "prob_missing_radius.toml", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radius"));
}

#[test]
fn bad_schema_and_unknown_fields_are_config_errors() {
    let base = std::fs::read_to_string(fixture("prob_placement_a.toml")).unwrap();
    let v2 = temp_config("v2.toml", &base.replace("schema = 1", "schema = 2"));
    let unknown = temp_config("unknown.toml", &format!("{base}\nbogus = 1\n"));
    let garbage = temp_config("garbage.toml", "schema = 1\n[[[");
    for p in [&v2, &unknown, &garbage] {
        let o = run(&["prob", "--config", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", p.display());
        std::fs::remove_file(p).ok();
    }
    assert_eq!(run(&["prob"]).status.code(), Some(2));
    assert_eq!(run(&["prob", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
}

#[test]
fn out_of_range_flags_are_config_errors() {
    for extra in [["--eps", "1.5"], ["--tol", "-1"], ["--estimator", "bogus"]] {
        let o = run_fixture(&["prob"], "prob_placement_a.toml", &extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn disconnected_roadmap_is_planning_failure() {
    let base = std::fs::read_to_string(fixture("beacon_blocked_gap.toml")).unwrap();
    let wall: String = [8.25, 9.15, 10.05, 10.95]
        .iter()
        .map(|y| format!("\n[[obstacle]]\nmean = [15.0, {y}]\nradius = 0.5\n"))
        .collect();
    let text = base
        .replace("mean = [15.0, 8.25]\ncov = [[0.36, 0.0], [0.0, 0.36]]", "mean = [15.0, 7.35]")
        .replace("\n[roadmap]", &format!("{wall}\n[roadmap]"))
        .replace("max_rounds = 10", "max_rounds = 1");
    let p = temp_config("closed.toml", &text);
    let o = run(&["plan", "--config", p.to_str().unwrap()]);
    std::fs::remove_file(&p).ok();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
