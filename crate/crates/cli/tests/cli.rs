use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn seqnpa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqnpa"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEQNPA_WORKERS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_chsh_level_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["solve", "--functional", "chsh", "--level", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["status"], "optimal");
    assert!((v["value"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-5);
    assert!(v["verified_bound"].as_f64().unwrap() >= 2.0 * 2f64.sqrt() - 1e-7);
    assert!(v["fingerprint"].as_str().is_some());
}

#[test]
fn solve_gallego_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["solve", "--functional", "gallego_I", "--level", "1+AB", "--sequential"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert!((v["verified_bound"].as_f64().unwrap() - 2.828427).abs() < 1e-3);
}

#[test]
fn malformed_level_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["solve", "--functional", "chsh", "--level", "1+BA"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("relaxation.level"), "{}", stderr(&out));
}

#[test]
fn unknown_functional_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["solve", "--functional", "mermin"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("functional.name"), "{}", stderr(&out));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[functional]\nname = \"chsh\"\n\n[relaxation]\nlevel = \"1+BA\"\n\n[solver]\ngap_tol = 1e-7\n\n[output]\npath = \"out/result.json\"\n",
    )
    .unwrap();
    let bad = seqnpa(&["--config", "run.toml", "solve"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    let out = seqnpa(&["--config", "run.toml", "solve", "--level", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let written: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    assert_eq!(written["level"], "2");
    assert!((written["value"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-5);
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[solver]\ngap_tolerance = 1e-9\n").unwrap();
    let out = seqnpa(&["--config", "run.toml", "solve", "--functional", "chsh"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gap_tolerance"), "{}", stderr(&out));
}

#[test]
fn functional_file_matches_named_functional() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("offset = 0.0\n");
    for x in 0..2 {
        for y in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let sign = if (a + b + x * y) % 2 == 0 { 1.0 } else { -1.0 };
                    text += &format!("[[terms]]\nx = [{x}]\ny = [{y}]\na = [{a}]\nb = [{b}]\ncoefficient = {sign:.1}\n");
                }
            }
        }
    }
    std::fs::write(dir.path().join("chsh.toml"), text).unwrap();
    let out = seqnpa(&["solve", "--scenario", "chsh", "--functional-file", "chsh.toml", "--level", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!((json(&out)["value"].as_f64().unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-5);
}

#[test]
fn export_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["export", "--functional", "chsh", "--level", "1", "--output", "chsh.dat-s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let got = std::fs::read_to_string(dir.path().join("chsh.dat-s")).unwrap();
    let want = include_str!("golden/chsh_level1.dat-s");
    assert_eq!(got, want);
}

#[test]
fn export_needs_an_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["export", "--functional", "chsh"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("output.path"));
}

#[test]
fn simulate_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["simulate", "--strategy", "weak", "--eta", "0", "--output", "b.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ok = seqnpa(&["check", "b.txt"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    // move weight between two outcomes of Bob₁ for one setting only
    let text = std::fs::read_to_string(dir.path().join("b.txt")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let find = |prefix: &str| lines.iter().position(|l| l.starts_with(prefix)).unwrap();
    let (i, j) = (find("0 ; 0,1 ; 0 ; 0,0 ;"), find("0 ; 0,1 ; 0 ; 1,0 ;"));
    let p = |l: &str| l.rsplit(';').next().unwrap().trim().parse::<f64>().unwrap();
    let (pi, pj) = (p(&lines[i]), p(&lines[j]));
    let shift = pj.min(0.05);
    lines[i] = format!("0 ; 0,1 ; 0 ; 0,0 ; {}", pi + shift);
    lines[j] = format!("0 ; 0,1 ; 0 ; 1,0 ; {}", pj - shift);
    std::fs::write(dir.path().join("bad.txt"), lines.join("\n") + "\n").unwrap();
    let bad = seqnpa(&["check", "bad.txt"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("no-signalling"), "{}", stderr(&bad));
}

#[test]
fn simulate_needs_a_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["simulate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("strategy"));
}

#[test]
fn strategy_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.toml"),
        r#"
[state]
kind = "isotropic"
eta = 0.0

[[alice]]
inputs = [{ kind = "pauli", axis = [0.0, 0.0, 1.0] }, { kind = "pauli", axis = [1.0, 0.0, 0.0] }]

[[bob]]
inputs = [{ kind = "pauli", axis = [0.7071067811865476, 0.0, 0.7071067811865476] }, { kind = "pauli", axis = [0.7071067811865476, 0.0, -0.7071067811865476] }]
"#,
    )
    .unwrap();
    let out = seqnpa(&["simulate", "--strategy", "s.toml", "--output", "b.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ok = seqnpa(&["check", "b.txt"], dir.path());
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn guessing_program_from_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(
        &["solve", "--strategy", "chsh", "--eta", "0.1", "--guess", "0", "--level", "2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["task"], "guessing");
    let g = v["guessing_probability"].as_f64().unwrap();
    assert!(g > 0.5 && g < 1.0, "{g}");
    assert!((v["min_entropy"].as_f64().unwrap() + g.log2()).abs() < 1e-12);
}

#[test]
fn signalling_behavior_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let sim = seqnpa(&["simulate", "--strategy", "chsh", "--output", "b.txt"], dir.path());
    assert_eq!(sim.status.code(), Some(0));
    // make Alice's marginal depend on Bob's input
    let text = std::fs::read_to_string(dir.path().join("b.txt")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let i = lines.iter().position(|l| l.starts_with("0 ; 0 ; 0 ; 0 ;")).unwrap();
    let j = lines.iter().position(|l| l.starts_with("0 ; 0 ; 1 ; 0 ;")).unwrap();
    let p = |l: &str| l.rsplit(';').next().unwrap().trim().parse::<f64>().unwrap();
    let (pi, pj) = (p(&lines[i]), p(&lines[j]));
    lines[i] = format!("0 ; 0 ; 0 ; 0 ; {}", pi + 0.1);
    lines[j] = format!("0 ; 0 ; 1 ; 0 ; {}", pj - 0.1);
    std::fs::write(dir.path().join("bad.txt"), lines.join("\n") + "\n").unwrap();
    let out = seqnpa(&["solve", "--behavior", "bad.txt", "--guess", "0", "--level", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(json(&out)["status"], "infeasible");
}

#[test]
fn workers_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_seqnpa"))
        .args(["solve", "--functional", "chsh"])
        .current_dir(dir.path())
        .env("SEQNPA_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bad = Command::new(env!("CARGO_BIN_EXE_seqnpa"))
        .args(["solve", "--functional", "chsh"])
        .current_dir(dir.path())
        .env("SEQNPA_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn reproduce_gallego() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["reproduce", "gallego", "--out-dir", "g"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = std::fs::read_to_string(dir.path().join("g/gallego_summary.txt")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{summary}");
    assert!(!summary.contains("FAIL"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g/gallego.json")).unwrap()).unwrap();
    assert_eq!(report["local"].as_f64(), Some(2.0));
}

#[test]
fn reproduce_rejects_unknown_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqnpa(&["reproduce", "fig-4"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
