//! End-to-end tests of the `hcgl` binary: exit codes, bundle schema,
//! CSV layout, and run-to-run reproducibility.

use serde_json::Value;
use std::process::{Command, Output};

fn hcgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcgl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn load(path: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("bundle written"))
        .expect("bundle is valid JSON")
}

#[test]
fn analyze_bundle_has_landscape_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("an.json");
    let out = hcgl(&[
        "--mode", "analyze", "--L", "4", "--sigma", "10",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let bundle = load(&out_path);
    assert_eq!(bundle["schema_version"], "1");
    assert_eq!(bundle["mode"], "analyze");
    assert_eq!(bundle["config"]["l"], 4);
    assert_eq!(bundle["config"]["sigma"], 10.0);
    let lans = &bundle["report"]["landscape"];
    assert_eq!(lans["gamma"], 5);
    assert_eq!(lans["set_s"].as_array().unwrap().len(), 203);
    assert_eq!(lans["inner_boundary"].as_array().unwrap().len(), 102);
    assert_eq!(lans["outer_boundary"].as_array().unwrap().len(), 104);
    assert_eq!(lans["bottom_gap"], 5);
    // Conductance defined for sigma > 1 and within its upper bound.
    let phi = lans["conductance"].as_f64().unwrap();
    let bound = lans["conductance_bound"].as_f64().unwrap();
    assert!(phi > 0.0 && phi <= bound);

    // Human summary goes to stdout when --out is given.
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gamma = 5"), "summary: {text}");
}

#[test]
fn analyze_grid_reports_hitting_growth() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("an.json");
    let out = hcgl(&[
        "--mode", "analyze", "--L", "4", "--sigma", "10",
        "--sigma-grid", "5,10,20",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let bundle = load(&out_path);
    let grid = bundle["report"]["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 3);
    let times: Vec<f64> =
        grid.iter().map(|r| r["mean_hit_time"].as_f64().unwrap()).collect();
    assert!(times[0] < times[1] && times[1] < times[2], "{times:?}");
    // Transition times grow polynomially in sigma; on this moderate
    // grid every pairwise log-log slope already exceeds 2 (the
    // asymptotic power is reached only at larger sigma).
    let min_slope = bundle["report"]["min_hitting_slope"].as_f64().unwrap();
    assert!(min_slope > 2.0, "min slope {min_slope}");
}

#[test]
fn odd_side_is_a_config_error_naming_the_parity_rule() {
    let out = hcgl(&["--mode", "analyze", "--L", "5"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("even"), "message must explain the parity rule: {msg}");
}

#[test]
fn inconsistent_rate_flags_are_config_errors() {
    let out = hcgl(&["--mode", "analyze", "--L", "4", "--sigma", "10", "--nu", "3"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    let out = hcgl(&["--mode", "simulate", "--L", "4", "--lambda", "0.4", "--rho", "0.5"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn enum_cap_env_is_validated_and_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("an.json");
    let out = Command::new(env!("CARGO_BIN_EXE_hcgl"))
        .args(["--mode", "analyze", "--L", "4", "--out", out_path.to_str().unwrap()])
        .env("HCGL_ENUM_CAP", "notanumber")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_hcgl"))
        .args(["--mode", "analyze", "--L", "4", "--out", out_path.to_str().unwrap()])
        .env("HCGL_ENUM_CAP", "8")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cap"), "stderr: {}", stderr(&out));
}

#[test]
fn audit_reports_class_counts_and_flags_the_false_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("audit.json");
    let out = hcgl(&["--mode", "audit", "--L", "4", "--out", out_path.to_str().unwrap()]);
    // The claimed critical-cross contour bound fails on real states at
    // L = 4, so a faithful audit must exit with the violation code --
    // after writing the full bundle.
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));

    let bundle = load(&out_path);
    let r = &bundle["report"];
    assert_eq!(r["n_states"], 743);
    assert_eq!(r["exhaustive"], true);
    assert_eq!(r["n_states_checked"], 743);
    assert_eq!(r["n_cluster"], 464);
    assert_eq!(r["n_cross"], 208);
    assert_eq!(r["n_stripe"], 71);
    assert_eq!(
        r["n_cluster"].as_u64().unwrap()
            + r["n_cross"].as_u64().unwrap()
            + r["n_stripe"].as_u64().unwrap(),
        743,
        "classes must partition the nonempty states"
    );
    assert_eq!(r["n_critical_cross"], 82);
    // Structural identities all hold; only the contour lower bound for
    // critical crosses fails.
    assert_eq!(r["n_identity_violations"], 0);
    assert_eq!(r["n_disjointness_violations"], 0);
    assert_eq!(r["n_stripe_bound_violations"], 0);
    assert_eq!(r["n_critical_cross_bound_violations"], 55);
    assert_eq!(r["passed"], false);
    // Violation messages carry the offending configuration as hex.
    let first = r["violations"][0].as_str().unwrap();
    assert!(first.contains("0x"), "violation lacks hex dump: {first}");
}

#[test]
fn simulate_is_reproducible_and_checks_the_delay_bound() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("s1.json");
    let p2 = dir.path().join("s2.json");
    let args = |p: &std::path::Path| {
        vec![
            "--mode".into(), "simulate".into(), "--L".into(), "4".into(),
            "--sigma".into(), "5".into(), "--rho".into(), "0.5".into(),
            "--horizon".into(), "4000".into(), "--replicas".into(), "2".into(),
            "--seed".into(), "42".into(),
            "--out".into(), p.to_str().unwrap().to_string(),
        ]
    };
    let out1 = Command::new(env!("CARGO_BIN_EXE_hcgl")).args(args(&p1)).output().unwrap();
    let out2 = Command::new(env!("CARGO_BIN_EXE_hcgl")).args(args(&p2)).output().unwrap();
    assert_eq!(out1.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out1.stderr));
    assert_eq!(out2.status.code(), Some(0));
    assert_eq!(
        std::fs::read(&p1).unwrap(),
        std::fs::read(&p2).unwrap(),
        "same seed must give byte-identical bundles"
    );

    let bundle = load(&p1);
    let delay_bound = &bundle["report"]["delay_bound"];
    assert!((delay_bound["bound"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!(delay_bound["ratio"]["value"].as_f64().unwrap() > 0.0);
    assert_eq!(bundle["report"]["stability"], "stable");
}

#[test]
fn overloaded_simulation_refuses_with_exit_3() {
    let out = hcgl(&["--mode", "simulate", "--L", "4", "--sigma", "5", "--rho", "1.2"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("rho"), "stderr: {}", stderr(&out));

    // Activity too sluggish for the load: also a refused precondition.
    let out = hcgl(&[
        "--mode", "simulate", "--L", "4", "--sigma", "0.3", "--rho", "0.9",
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

#[test]
fn params_file_excludes_rate_flags_and_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let pf = dir.path().join("params.json");
    std::fs::write(
        &pf,
        r#"{"base":{"lambda":0.25,"mu":1.0,"nu":5.0,"p":1.0}}"#,
    )
    .unwrap();

    let out = hcgl(&[
        "--mode", "simulate", "--params-file", pf.to_str().unwrap(), "--sigma", "5",
    ]);
    assert_eq!(code(&out), 2, "rate flags must conflict with --params-file");

    let out_path = dir.path().join("sim.json");
    let out = hcgl(&[
        "--mode", "simulate", "--params-file", pf.to_str().unwrap(),
        "--L", "4", "--horizon", "3000", "--replicas", "2",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let bundle = load(&out_path);
    assert_eq!(bundle["config"]["sigma"], 5.0);
    assert_eq!(bundle["config"]["rho"], 0.5);
}

#[test]
fn sweep_requires_exactly_one_grid() {
    let out = hcgl(&["--mode", "sweep", "--L", "4"]);
    assert_eq!(code(&out), 2);
    let out = hcgl(&[
        "--mode", "sweep", "--L", "4", "--sigma-grid", "2,5", "--rho-grid", "0.3,0.5",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_csv_layout_is_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let out_path = dir.path().join("sweep.json");
    let out = hcgl(&[
        "--mode", "sweep", "--L", "4", "--rho", "0.5",
        "--sigma-grid", "2,5", "--horizon", "2500", "--replicas", "2",
        "--seed", "11",
        "--trace", csv_path.to_str().unwrap(),
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sigma,rho,lambda,theta_mean,dominant_mass,e_t_eo,e_w,conductance_bound,\
         delay_ratio_lower_bound,status,message"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 11, "row: {row}");
        let delay_bound: f64 = fields[8].parse().unwrap();
        assert!((delay_bound - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(fields[9], "ok");
    }

    let bundle = load(&out_path);
    assert_eq!(bundle["report"]["varying"], "sigma");
    let rows = bundle["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    // Exact mean activity rises with sigma; exact transition time too.
    assert!(
        rows[0]["theta_mean"].as_f64().unwrap() < rows[1]["theta_mean"].as_f64().unwrap()
    );
    assert!(rows[0]["e_t_eo"].as_f64().unwrap() < rows[1]["e_t_eo"].as_f64().unwrap());
}

#[test]
fn simulate_trace_writes_event_csv() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("trace.csv");
    let out_path = dir.path().join("sim.json");
    let out = hcgl(&[
        "--mode", "simulate", "--L", "4", "--sigma", "5", "--rho", "0.5",
        "--horizon", "200", "--replicas", "2",
        "--trace", trace_path.to_str().unwrap(),
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,node,event,queue_change");
    let mut prev_t = 0.0f64;
    let mut n = 0usize;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4, "line: {line}");
        let t: f64 = fields[0].parse().unwrap();
        assert!(t >= prev_t, "event times must be nondecreasing");
        prev_t = t;
        let node: usize = fields[1].parse().unwrap();
        assert!(node < 16);
        assert!(
            ["arrival", "activation", "completion_back_off", "completion_continue"]
                .contains(&fields[2]),
            "unknown event {}",
            fields[2]
        );
        n += 1;
    }
    assert!(n > 100, "expected a substantial trace, got {n} events");
}

#[test]
fn bundle_goes_to_stdout_without_out_flag() {
    let out = hcgl(&["--mode", "analyze", "--L", "4", "--sigma", "5"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let bundle: Value = serde_json::from_slice(&out.stdout).expect("stdout is the JSON bundle");
    assert_eq!(bundle["schema_version"], "1");
    assert_eq!(bundle["report"]["landscape"]["gamma"], 5);
}
