use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rsde(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rsde"));
    cmd.args(args).env_remove("RSDE_SEED");
    if let Some(s) = env_seed {
        cmd.env("RSDE_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn run(dir: &TempDir, text: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = write_config(dir.path(), &format!("{out}.toml"), text);
    let out_dir = dir.path().join(out).display().to_string();
    let mut args = vec!["run", "--config", &cfg, "--out-dir", &out_dir];
    args.extend_from_slice(extra);
    rsde(&args, None)
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn summary(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path.join("summary.json")).unwrap()).unwrap()
}

const PENALIZE: &str = r#"
experiment = "penalize-rate"
seed = 5
[domain]
kind = "disk"
r0 = 0.5
[coefficients]
sigma = [0.5]
[grid]
T = 0.5
n_steps = 100
[monte-carlo]
paths = 20
[penalization]
levels = [4.0, 16.0, 64.0]
[query]
x0 = [0.5, 0.0]
"#;

#[test]
fn identical_config_and_seed_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    assert!(run(&dir, PENALIZE, "a", &[]).status.code().is_some());
    run(&dir, PENALIZE, "b", &[]);
    let a = std::fs::read(dir.path().join("a/penalize-rate.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/penalize-rate.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(header(&dir.path().join("a/penalize-rate.csv")), "n,mean_sup_dist,std_err,p_norm");
    let s = summary(&dir.path().join("a"));
    assert_eq!(s["seed"], 5);
    assert!(s["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(s["config"]["penalization"]["levels"][2], 64.0);
    assert!(s["stages"].as_array().unwrap().iter().any(|st| st["name"] == "simulate"));
}

#[test]
fn seed_flag_beats_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", PENALIZE);
    let out = dir.path().join("o").display().to_string();
    rsde(&["run", "--config", &cfg, "--out-dir", &out], Some("77"));
    assert_eq!(summary(&dir.path().join("o"))["seed"], 77);
    rsde(&["run", "--config", &cfg, "--out-dir", &out, "--seed", "8", "--threads", "1"], Some("77"));
    assert_eq!(summary(&dir.path().join("o"))["seed"], 8);
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, "experiment = \"frobnicate\"\n[domain]\nkind = \"disk\"\n", "x", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`experiment`") && err.contains("frobnicate"), "{err}");
}

#[test]
fn lshape_simulation_is_rejected_with_witness() {
    let dir = TempDir::new().unwrap();
    let text = PENALIZE.replace("kind = \"disk\"\nr0 = 0.5", "kind = \"lshape\"\nr0 = 0.1");
    let out = run(&dir, &text, "l", &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("domain rejected") && err.contains("exterior-sphere") && err.contains("at x="), "{err}");
}

#[test]
fn verify_reports_condition_failures_through_the_exit_code() {
    let dir = TempDir::new().unwrap();
    let disk = write_config(dir.path(), "d.toml", "experiment = \"verify-domain\"\n[domain]\nkind = \"disk\"\nr0 = 0.5\n");
    assert_eq!(rsde(&["verify", "--config", &disk], None).status.code(), Some(0));
    let l = write_config(dir.path(), "l.toml", "experiment = \"verify-domain\"\n[domain]\nkind = \"lshape\"\nr0 = 0.1\n");
    let out = rsde(&["verify", "--config", &l], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("exterior-sphere      FAIL"));
}

#[test]
fn failed_verdict_gives_exit_code_one() {
    let dir = TempDir::new().unwrap();
    let text = r#"
experiment = "submartingale"
[domain]
kind = "disk"
r0 = 0.5
[grid]
T = 0.1
n_steps = 50
[monte-carlo]
paths = 200
[query]
function = "neg-norm-squared"
branches = 10
"#;
    let out = run(&dir, text, "s", &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&dir.path().join("s/submartingale.csv")), "s,t,mean_diff,std_err,verdict");
    let out = run(&dir, &text.replace("branches = 10", "branches = 10\nexpect = \"fail\""), "s2", &[]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn control_experiments_write_their_schemas() {
    let dir = TempDir::new().unwrap();
    let problem = r#"
[domain]
kind = "disk"
r0 = 0.5
[coefficients]
sigma = [0.5]
drifts = [0.0, 0.0, 0.5, 0.0]
[cost]
running = "x1-squared"
terminal = "last-coordinate"
[grid]
T = 0.25
dx = 0.2
[monte-carlo]
paths = 200
[query]
x0 = [0.2, 0.0]
"#;
    for (kind, files, head) in [
        ("value", vec!["value.csv"], "t,x_1,x_2,value,argmin"),
        ("hjb-check", vec!["hjb-check-sub.csv", "hjb-check-super.csv"], "t,x_1,x_2,residual,n_minus,n_plus,verdict"),
        ("dpp", vec!["dpp.csv"], "policy_id,lhs,rhs,std_err,verdict"),
    ] {
        let out = run(&dir, &format!("experiment = \"{kind}\"\n{problem}"), kind, &[]);
        // Verdicts may go either way on this coarse problem; errors may not.
        assert!(matches!(out.status.code(), Some(0 | 1)), "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert_eq!(header(&dir.path().join(kind).join(f)), head);
        }
    }
}

#[test]
fn support_and_converge_schemas() {
    let dir = TempDir::new().unwrap();
    let support = r#"
experiment = "support"
[domain]
kind = "disk"
r0 = 0.5
[query]
t1 = 1.0
n_controls = 20
"#;
    assert_eq!(run(&dir, support, "sup", &[]).status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("sup/support.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x_1,x_2,t1,control_id");
    assert!(text.lines().count() > 20);

    let converge = PENALIZE.replace("penalize-rate", "converge").replace("[query]", "[query]\ntrajectories = 1");
    assert_eq!(run(&dir, &converge, "conv", &[]).status.code(), Some(0));
    assert_eq!(header(&dir.path().join("conv/converge.csv")), "n,mean_sup_gap,std_err");
    assert_eq!(header(&dir.path().join("conv/trajectories/path_00000.csv")), "t,x_1,x_2,dxi_1,dxi_2,xi_tv");
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = rsde_cli::ExperimentConfig::load(&path).unwrap();
            cfg.resolve(None, None, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 8);
}
