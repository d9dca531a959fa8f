use std::path::{Path, PathBuf};
use std::process::Command;

use bank_dynamics::cli::{emit_curves, run_pipeline, CurveSpec, RunConfig};
use bank_dynamics::node_state;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn first_example_fails_at_the_worst_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&config_path("example1.toml")).unwrap();
    let out = run_pipeline(&cfg, dir.path()).unwrap();

    assert!(out.stage0.is_some());
    assert_eq!(out.nodes.len(), 3);
    assert!(out.nodes[0].outcome.solution().is_some());
    assert!(out.nodes[2].outcome.is_bankrupt());
    let report = std::fs::read_to_string(dir.path().join("node3.txt")).unwrap();
    assert!(report.contains("BANKRUPT") && report.contains("0.0791"), "{report}");
    for name in ["config_echo.toml", "stage0.txt", "stage0.csv", "node1.csv", "bounds_node3.csv", "curves_node2.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    for node in &out.nodes {
        assert!(node.bounds.iter().all(|c| c.check.passed()));
    }
    let echo = RunConfig::load(&dir.path().join("config_echo.toml")).unwrap();
    assert_eq!(echo, cfg);
}

#[test]
fn second_example_survives_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&config_path("example2.toml")).unwrap();
    cfg.run.t0 = false;
    let out = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(out.nodes.len(), 3);
    for node in &out.nodes {
        let sol = node.outcome.solution().expect("node survives");
        assert!(sol.feasibility.feasible());
    }
    let stage0 = dir.path().join("stage0.txt");
    assert!(!stage0.exists());
}

#[test]
fn curves_have_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&config_path("example2.toml")).unwrap();
    let model = cfg.model().unwrap();
    let ns = node_state(&model, &cfg.initial_decision.unwrap(), 1).unwrap();
    let p = model.params;

    let path = dir.path().join("curves.csv");
    emit_curves(&model, &ns, &cfg.curves, &path).unwrap();
    let (header, rows) = read_table(&path);
    assert_eq!(header, ["v", "v_equity_debt", "v_equity_equity", "leverage_equity", "leverage_debt"]);
    assert_eq!(rows.len(), cfg.curves.points);

    // equity value in new debt is affine with the closed-form slope
    let slope = (1.0 - p.phi_d - 1.0 / (1.0 + p.r)) / ns.initial.e;
    let (v0, y0) = (rows[0][0], rows[0][1]);
    let residual = rows.iter().map(|r| (r[1] - y0 - slope * (r[0] - v0)).abs()).fold(0.0, f64::max);
    assert!(residual < 1e-10, "{residual}");
    // leverage falls with new debt at a surviving node
    assert!(rows.windows(2).all(|w| w[1][4] < w[0][4]));

    let single = dir.path().join("single.csv");
    emit_curves(&model, &ns, &CurveSpec { v_max: 0.3, points: 1 }, &single).unwrap();
    assert_eq!(read_table(&single).1.len(), 1);
}

fn bankdyn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bankdyn")).args(args).output().unwrap()
}

#[test]
fn cli_subcommands_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ex1 = config_path("example1.toml");
    let ex1 = ex1.to_str().unwrap();

    let run = bankdyn(&["--config", ex1, "--out", out, "solve-t1", "--node", "3"]);
    assert_eq!(run.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&run.stdout).contains("BANKRUPT"));
    for sub in [&["bounds", "--node", "2"][..], &["curves", "--node", "1"], &["solve-t0"]] {
        let mut args = vec!["--config", ex1, "--out", out];
        args.extend_from_slice(sub);
        assert_eq!(bankdyn(&args).status.code(), Some(0), "{sub:?}");
    }
    assert!(dir.path().join("bounds_node2.csv").exists());
    assert!(dir.path().join("curves_node1.csv").exists());

    // usage and configuration errors
    assert_eq!(bankdyn(&["--config", ex1, "solve-t1", "--node", "4"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[market]\nbeta_st = 2.0\n").unwrap();
    assert_eq!(bankdyn(&["--config", bad.to_str().unwrap(), "solve-t0"]).status.code(), Some(1));

    // a negative risk cap leaves no feasible t=0 allocation
    let mut cfg = RunConfig::load(&config_path("example1.toml")).unwrap();
    cfg.market.theta1 = -0.01;
    cfg.optimizer.generations = 20;
    cfg.optimizer.grid.simplex = 0.05;
    cfg.optimizer.grid.equity = 0.05;
    let infeasible = dir.path().join("infeasible.toml");
    std::fs::write(&infeasible, cfg.to_toml().unwrap()).unwrap();
    let run = bankdyn(&["--config", infeasible.to_str().unwrap(), "--out", out, "solve-t0"]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
}
