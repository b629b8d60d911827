use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ncs_cli::config::ToolkitConfig;
use ncs_cli::pipeline::{run_pipeline, ControllerArtifact};
use ncs_core::sdp::dump::parse_system;
use ncs_core::sdp::FeasibilityStatus;
use tempfile::TempDir;

const SERVO: &str = r#"
[plant]
preset = "rotary_servo"
td = 0.02

[network]
d_bar = 4
tau_sc = { kind = "uniform", lo = 0.0, hi = 0.04 }
tau_ca = { kind = "uniform", lo = 0.0, hi = 0.04 }

[synthesis]
theorem = 1
gamma = { mode = "fixed", value = 0.05 }

[simulation]
steps = 125
seeds = [3, 4]
"#;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn ncs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncs"))
        .args(args)
        .env("NCS_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn baseline_file(dir: &Path) -> PathBuf {
    let c = ControllerArtifact::baseline("reference", nalgebra::DMatrix::from_row_slice(1, 2, &[2.62, 0.04]), 4);
    write(dir, "reference.json", &serde_json::to_string(&c).unwrap())
}

#[test]
fn shipped_configs_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(repo_root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ToolkitConfig::load(&path).unwrap();
            let again = ToolkitConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn discretize_writes_the_servo_matrices() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "servo.toml", SERVO);
    let out = tmp.path().join("out");
    let o = ncs(&["discretize", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("discretization.json")).unwrap()).unwrap();
    let a = &d["a_d"];
    assert!((a[0][1].as_f64().unwrap() - 0.0106).abs() < 5e-4);
    assert!((a[1][1].as_f64().unwrap() - 0.2347).abs() < 5e-4);
    assert_eq!(d["delta_bar"], 4);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let bad = write(tmp.path(), "bad.toml", &SERVO.replace("d_bar = 4", "d_bar = 0"));
    let o = ncs(&["discretize", bad.to_str().unwrap()], &out);
    assert_eq!(code(&o), 2);
    let record: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(record["kind"], "config");
    assert_eq!(record["stage"], "discretize");
    let missing = tmp.path().join("missing.toml");
    assert_eq!(code(&ncs(&["discretize", missing.to_str().unwrap()], &out)), 2);
    let good = write(tmp.path(), "good.toml", SERVO);
    let o = ncs(&["synthesize", good.to_str().unwrap(), "--per-mode-gamma", "0.1,0.1"], &out);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn infeasible_synthesis_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "servo.toml", SERVO);
    let out = tmp.path().join("out");
    let o = ncs(&["synthesize", cfg.to_str().unwrap(), "--gamma", "0.35"], &out);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("synthesis.json")).unwrap()).unwrap();
    assert_eq!(rec["synthesis"]["status"], "infeasible");
    assert!(!out.join("controller.json").exists());
    assert!(out.join("error.json").exists());
}

#[test]
fn delay_bound_violation_exits_with_four() {
    let tmp = TempDir::new().unwrap();
    let text = SERVO.replace(
        r#"tau_ca = { kind = "uniform", lo = 0.0, hi = 0.04 }"#,
        r#"tau_ca = { kind = "constant", value = 0.05 }"#,
    );
    let cfg = write(tmp.path(), "late.toml", &text);
    let ctrl = baseline_file(tmp.path());
    let out = tmp.path().join("out");
    let o = ncs(&["simulate", cfg.to_str().unwrap(), "--controller", ctrl.to_str().unwrap()], &out);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let record: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(record["kind"], "assumption_violation");
}

#[test]
fn synthesize_then_simulate_from_the_controller_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "servo.toml", SERVO);
    let out = tmp.path().join("out");
    let o = ncs(&["synthesize", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("variables     186"), "{text}");
    let ctrl = ControllerArtifact::load(&out.join("controller.json")).unwrap();
    assert_eq!(ctrl.lyapunov.len(), 4);
    let o = ncs(
        &["simulate", cfg.to_str().unwrap(), "--controller", out.join("controller.json").to_str().unwrap()],
        &out,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("traces/t1_seed3.csv")).unwrap();
    let second = csv.lines().nth(1).unwrap();
    assert!(second.split(',').nth(7).unwrap().parse::<f64>().unwrap() > 0.0);
    assert!(out.join("simulation.json").exists());
}

#[test]
fn repeated_runs_write_identical_traces() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "servo.toml", SERVO);
    let ctrl = baseline_file(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = ncs(&["simulate", cfg.to_str().unwrap(), "--controller", ctrl.to_str().unwrap()], out);
        assert_eq!(code(&o), 0);
    }
    for seed in [3, 4] {
        let name = format!("traces/reference_seed{seed}.csv");
        let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn dump_lmi_writes_a_parsable_system() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "servo.toml", SERVO);
    let out = tmp.path().join("out");
    let o = ncs(&["dump-lmi", cfg.to_str().unwrap(), "--theorem", "2"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = parse_system(&std::fs::read_to_string(out.join("lmi.txt")).unwrap()).unwrap();
    assert_eq!(parsed.constraints.len(), 16);
    assert_eq!(parsed.names.len(), 204);
}

#[test]
fn compare_writes_plot_data_and_charts() {
    let tmp = TempDir::new().unwrap();
    let ctrl = baseline_file(tmp.path());
    let text = format!(
        "{SERVO}\n[[compare]]\nname = \"t1\"\nsource = \"synthesize\"\ntheorem = 1\n\n\
         [[compare]]\nname = \"ref\"\nsource = \"file\"\npath = {:?}\n\n\
         [[compare]]\nname = \"ref_inline\"\nsource = \"baseline\"\nkx = [[2.62, 0.04]]\n\n\
         [[compare]]\nname = \"ref_raw\"\nsource = \"baseline\"\nkx = [[2.62, 0.04]]\nmode = \"unbuffered\"\n",
        ctrl.to_str().unwrap()
    );
    let cfg = write(tmp.path(), "cmp.toml", &text);
    let out = tmp.path().join("out");
    let o = ncs(&["compare", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("compare_x1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,t1,ref,ref_inline,ref_raw");
    assert_eq!(csv.lines().count(), 126);
    let svg = std::fs::read_to_string(out.join("compare_x2.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(rep["pairs"].as_array().unwrap().len(), 6);
    // a file controller and the same gain inline see the same realization
    let same = |name: &str| std::fs::read_to_string(out.join(format!("traces/{name}_seed3.csv"))).unwrap();
    assert_eq!(same("ref"), same("ref_inline"));
    assert_ne!(same("ref"), same("ref_raw"));
}

#[test]
fn pipeline_reports_counts_and_converging_traces() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = ToolkitConfig::parse(SERVO).unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let rep = run_pipeline(&cfg).unwrap();
    assert_eq!((rep.synthesis.variables, rep.synthesis.lmis), (186, 16));
    assert_eq!(rep.synthesis.baseline.count, Some(65536));
    assert!(rep.verification.passed);
    assert!(rep.simulation.iter().all(|s| s.summary.final_norm_inf < 1e-2 && s.protocol.passed()));
    for name in ["report.json", "report.txt", "controller.json", "discretization.json", "traces/t1_seed4.csv"] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
}

#[test]
fn one_period_lossless_network_is_feasible_at_zero_rate() {
    let tmp = TempDir::new().unwrap();
    let plants = [
        "preset = \"rotary_servo\"",
        "a = [[0.0, 1.0], [2.0, -1.0]]\nb = [[0.0], [1.0]]",
    ];
    for plant in plants {
        let text =
            format!("[plant]\n{plant}\ntd = 0.02\n[network]\nd_bar = 1\n[synthesis]\ngamma = {{ mode = \"fixed\", value = 0.0 }}\n");
        let mut cfg = ToolkitConfig::parse(&text).unwrap();
        cfg.output_dir = tmp.path().to_path_buf();
        let rep = run_pipeline(&cfg).unwrap();
        assert_eq!(rep.synthesis.status, FeasibilityStatus::Feasible);
        assert_eq!(rep.synthesis.lmis, 1);
        assert!(rep.verification.certificate.spectral_radii[0] < 1.0);
    }
}
