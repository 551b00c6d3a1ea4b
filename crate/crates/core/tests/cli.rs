use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levy-mmm"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("levy-mmm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn solve_pure_diffusion() {
    let cfg = config("bs.toml");
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("solution.beta = [-0.5]"), "{text}");
    for key in ["schema_version = 1", "config_sha256 = ", "seed = 1", "tool_version = ", "generator = "] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn existence_violation_exits_3() {
    let cfg = config("existence_violation.toml");
    let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "existence_violation");
    assert_eq!(v["existence"]["violated_condition"], "y_positive");
}

#[test]
fn malformed_matrix_row_exits_1() {
    let p = scratch(
        "bad_row.toml",
        "schema_version = 1\n[model]\nb = [0.0, 0.0]\nc = [[1.0, 0.0], [0.0]]\n[divergence]\npreset = \"entropy\"\n",
    );
    let out = run(&["solve", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("line 4") && text.contains("model.c[1]"), "{text}");
}

#[test]
fn syntax_error_and_bad_usage_exit_1() {
    let p = scratch("syntax.toml", "schema_version = 1\n[model\n");
    assert_eq!(run(&["solve", "--config", p.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["solve"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_drift_is_an_existence_failure() {
    // c = 0 and every jump is upward with positive drift: the drift can only
    // be cancelled in the limit Y -> 0.
    let p = scratch(
        "no_emm.toml",
        "schema_version = 1\n[model]\nb = [1.0]\nc = [[0.0]]\ntruncation = \"zero\"\n\
         [model.nu]\nkind = \"atomic\"\natoms = [{ y = [0.5], mass = 1.0 }, { y = [0.2], mass = 1.0 }]\n\
         [divergence]\npreset = \"entropy\"\n",
    );
    assert_eq!(run(&["solve", "--config", p.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn iteration_budget_exhausted_exits_2() {
    let text = std::fs::read_to_string(config("example_6_1.toml")).unwrap()
        + "\n[solver]\nmax_iter = 1\nmax_restarts = 0\n";
    let p = scratch("budget.toml", &text);
    let out = run(&["solve", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains("status = \"no_solution\""));
}

#[test]
fn verify_worked_example_and_forced_v() {
    let cfg = config("example_6_1.toml");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--paths", "20000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let text = std::fs::read_to_string(&cfg).unwrap() + "\n[solver]\nforce_v_zero = true\n";
    let p = scratch("forced_v.toml", &text);
    let out = run(&["verify", "--config", p.to_str().unwrap(), "--paths", "20000", "--json"]);
    assert_eq!(out.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fund = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "fundamental_equation")
        .unwrap();
    assert_eq!(fund["passed"], false);
}

#[test]
fn verify_pure_diffusion_reports_whole_line() {
    let cfg = config("bs.toml");
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--paths", "20000", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let support = v["checks"].as_array().unwrap().iter().find(|c| c["name"] == "support").unwrap();
    assert_eq!(support["detail"], "WholePositiveLine");
}

#[test]
fn verify_reports_are_byte_identical() {
    let cfg = config("minimality.toml");
    let args = ["verify", "--config", cfg.to_str().unwrap(), "--paths", "50000", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8(a.stdout).unwrap().contains("seed = 3"));
}

#[test]
fn example_command_and_out_flag() {
    let out_path = std::env::temp_dir().join(format!("levy-mmm-example-{}.json", std::process::id()));
    let out = run(&["example-6-1", "--json", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["status"], "matches_closed_forms");
    assert!((v["consistency"]["beta1_plus_2beta2"].as_f64().unwrap() + 0.40547).abs() < 1e-5);
}

#[test]
fn simulate_dump_and_divergence() {
    let cfg = config("minimality.toml");
    let dump = std::env::temp_dir().join(format!("levy-mmm-dump-{}.csv", std::process::id()));
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--paths",
        "500",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(rows.lines().count(), 502);

    let out = run(&["divergence", "--config", config("bs.toml").to_str().unwrap(), "--paths", "50000"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("divergence_value.closed_form = 0.125"));

    let out = run(&["simulate", "--config", config("tempered_stable.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
