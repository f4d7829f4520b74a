use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fairway(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairway")).args(args).output().expect("binary runs")
}

fn scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn vec_of(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn allocate_linear_preset() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "s.json", r#"{"network": {"preset": "linear", "C": [2, 1]}}"#);
    let v = json_out(&fairway(&["allocate", "--scenario", sc.to_str().unwrap(), "--n", "1,1"]));
    let q = vec_of(&v["q"]);
    assert!((q[0] - 1.0).abs() < 1e-9 && q[1].abs() < 1e-9, "{q:?}");
    let lambda = vec_of(&v["lambda"]);
    assert!((lambda[0] - 1.0).abs() < 1e-9 && (lambda[1] - 1.0).abs() < 1e-9);
}

#[test]
fn allocate_without_counts_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "s.json", r#"{"network": {"preset": "linear", "C": [2, 1]}}"#);
    let out = fairway(&["allocate", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--n"));
    let flag = fairway(&["allocate", "--scenario", sc.to_str().unwrap(), "--bogus"]);
    assert_eq!(flag.status.code(), Some(1));
    assert!(fairway(&["--help"]).status.success());
}

#[test]
fn malformed_incidence_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "s.json", r#"{"network": {"A": [[1, 1], [1, 1]], "C": [1, 1]}, "n": [1, 1]}"#);
    let out = fairway(&["allocate", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));
    let bad = scenario(dir.path(), "bad.json", r#"{"network": {"preset": "linear"}"#);
    assert_eq!(fairway(&["allocate", "--scenario", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stationary_laws() {
    let dir = tempfile::tempdir().unwrap();
    let lin = scenario(
        dir.path(),
        "lin.json",
        r#"{"network": {"preset": "linear", "C": [2, 1]}, "traffic": {"rho": [0.5, 0.5], "sigma2": 1}}"#,
    );
    let v = json_out(&fairway(&["stationary", "--scenario", lin.to_str().unwrap(), "--format", "json"]));
    assert_eq!(vec_of(&v["zeta"]), vec![2.0, 1.0]);

    let text = fairway(&["stationary", "--scenario", lin.to_str().unwrap()]);
    assert!(text.status.success());
    assert!(String::from_utf8_lossy(&text.stdout).starts_with("index,zeta,mean_delay,var_delay,mean_line,var_line,"));

    let par = scenario(
        dir.path(),
        "par.json",
        r#"{"network": {"preset": "parallel4", "C": [2, 1, 1, 6]}, "traffic": {"rho": [1, 1.5, 0.5, 1]}}"#,
    );
    let v = json_out(&fairway(&["stationary", "--scenario", par.to_str().unwrap(), "--format", "json"]));
    assert_eq!(vec_of(&v["zeta"]), vec![2.0, 1.0, 2.0, 4.0]);

    let unstable = scenario(
        dir.path(),
        "unstable.json",
        r#"{"network": {"preset": "linear", "C": [2, 1]}, "traffic": {"rho": [1.5, 0.6]}}"#,
    );
    let out = fairway(&["stationary", "--scenario", unstable.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not stable"));
}

#[test]
fn simulate_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"preset": "linear", "C": [3, 2, 1]}, "traffic": {"rho": [0.8, 0.8, 0.8]},
            "sim": {"T": 200, "h": 0.01, "seed": 5, "replications": 2}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        json_out(&fairway(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    }
    for name in ["simulate_rep0.csv", "simulate_rep1.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
    assert_ne!(std::fs::read(a.join("simulate_rep0.csv")).unwrap(), std::fs::read(a.join("simulate_rep1.csv")).unwrap());
    assert_eq!(
        header(&a.join("simulate_rep0.csv")),
        "time,m_1,m_2,m_3,lambda_1,lambda_2,lambda_3,q_1,q_2,q_3,d_1,d_2,d_3,u_1,u_2,u_3"
    );
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("simulate_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["sim"]["seed"], 5);

    // --seed overrides the file and changes the output
    let c = dir.path().join("c");
    json_out(&fairway(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "6"]));
    assert_ne!(std::fs::read(a.join("simulate_rep0.csv")).unwrap(), std::fs::read(c.join("simulate_rep0.csv")).unwrap());
}

#[test]
fn simulation_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"preset": "linear", "C": [1]}, "traffic": {"rho": [0.5]}, "sim": {"T": 10}}"#,
    );
    let out = fairway(&["simulate", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn compare_shows_downstream_instability() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"preset": "linear", "C": [1, 0.6]}, "traffic": {"rho": [0.55, 0.3]},
            "policies": ["pf", "downstream"], "mode": "jobs", "sim": {"T": 20000, "h": 0.01, "seed": 3}}"#,
    );
    let out_dir = dir.path().join("out");
    let v = json_out(&fairway(&["compare", "--scenario", sc.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    let policies = v["replications"][0]["policies"].as_array().unwrap();
    let t = |k: usize| policies[k]["trend_last_half"]["t_stat"].as_f64().unwrap();
    assert!(t(1) > 5.0, "downstream t = {}", t(1));
    assert!(t(0) < 5.0, "pf t = {}", t(0));
    assert_eq!(header(&out_dir.join("compare.csv")), "time,sum_m_pf,sum_m_downstream");
    assert_eq!(header(&out_dir.join("compare_arrivals.csv")), "arrival,sum_m_pf,sum_m_downstream");
}

#[test]
fn queue_mm1_mean_matches_geometric_law() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"preset": "linear", "C": [1]}, "queue": {"kind": "mm1", "rho": 0.8},
            "sim": {"T_events": 1000000, "seed": 11}}"#,
    );
    let v = json_out(&fairway(&["queue", "--scenario", sc.to_str().unwrap()]));
    let z = v["replications"][0]["z_score"].as_f64().unwrap();
    assert!(z.abs() <= 3.0, "z = {z}");

    let out_dir = dir.path().join("out");
    let small = scenario(
        dir.path(),
        "small.json",
        r#"{"network": {"preset": "linear", "C": [1]}, "queue": {"kind": "ps", "rho": 0.5},
            "sim": {"T_events": 1000, "seed": 1}}"#,
    );
    json_out(&fairway(&["queue", "--scenario", small.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    assert_eq!(header(&out_dir.join("queue.csv")), "time,W,N,U");
}

#[test]
fn ctmc_and_fluid_headers() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"A": [[1, 0, 1], [0, 1, 1]], "C": [1, 1]}, "traffic": {"rho": [0.3, 0.3, 0.3]},
            "n": [1, 2, 3], "sim": {"T_events": 2000, "T": 2, "h": 0.01, "seed": 2}}"#,
    );
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    let v = json_out(&fairway(&["ctmc", "--scenario", sc.to_str().unwrap(), "--out", o]));
    assert!(v["approx_stationary"]["mean_n"].is_array());
    assert_eq!(header(&out_dir.join("ctmc.csv")), "time,n_1,n_2,n_3,w_1,w_2,lambda_1,lambda_2,lambda_3");
    let v = json_out(&fairway(&["fluid", "--scenario", sc.to_str().unwrap(), "--out", o]));
    assert_eq!(v["steps"], 200);
    assert!(v["final_gap"].as_f64().unwrap() >= 0.0);
    assert!(v["max_gap_increase"].is_number());
    assert_eq!(
        header(&out_dir.join("fluid.csv")),
        "time,n_1,n_2,n_3,w_1,w_2,lambda_1,lambda_2,lambda_3,lyapunov_gap,manifold_distance"
    );
    json_out(&fairway(&["fluid", "--scenario", sc.to_str().unwrap(), "--out", o, "--format", "json"]));
    let traj: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("fluid.json")).unwrap()).unwrap();
    assert_eq!(traj["columns"][0], "time");
}

#[test]
fn route_choice_logs_chosen_lines() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(
        dir.path(),
        "s.json",
        r#"{"network": {"preset": "parallel4", "C": [2, 1, 1, 6]}, "traffic": {"rho": [1, 1.5, 0.5, 1]},
            "mode": "jobs", "sim": {"T": 200, "h": 0.01, "seed": 4}}"#,
    );
    let out_dir = dir.path().join("out");
    let v = json_out(&fairway(&["route-choice", "--scenario", sc.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]));
    assert_eq!(v["virtual_law"]["zeta"].as_array().unwrap().len(), 4);
    let log = std::fs::read_to_string(out_dir.join("route_choice_arrivals.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("time,source,line"));
    // source 1 only has line 1; source 3 may use lines 1–3
    for row in lines {
        let f: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        match f[1] as usize {
            1 => assert_eq!(f[2], 1.0),
            2 => assert!(f[2] <= 2.0),
            3 => assert!(f[2] <= 3.0),
            _ => assert_eq!(f[2], 4.0),
        }
    }
    let wrong = scenario(
        dir.path(),
        "wrong.json",
        r#"{"network": {"preset": "linear", "C": [2, 1]}, "traffic": {"rho": [0.5, 0.5]}, "sim": {"T": 1, "seed": 1}}"#,
    );
    assert_eq!(fairway(&["route-choice", "--scenario", wrong.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn shipped_scenarios_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for (file, cmd) in [
        ("linear3.json", "stationary"),
        ("linear3.json", "allocate"),
        ("instability.json", "stationary"),
        ("parallel4.json", "stationary"),
        ("two_link.json", "stationary"),
        ("two_link.json", "allocate"),
        ("ps_queue.json", "queue"),
    ] {
        let out = fairway(&[cmd, "--scenario", dir.join(file).to_str().unwrap()]);
        assert!(out.status.success(), "{cmd} {file}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
