use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn martspline(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_martspline"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn passing_run_writes_three_files_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "decay.toml", "experiment = \"decay\"\n[decay]\nseeds = 2\norders = [1, 2]\n");
    let out = martspline(&["decay", "--config", &cfg, "--depth", "5", "--out", "res", "--seed", "7"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS biorthogonality"));
    for f in ["decay.csv", "decay.summary.json", "decay.meta.json"] {
        assert!(dir.path().join("res").join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("res/decay.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "decay");
    assert_eq!(summary["seeds"][0], 7);
    assert_eq!(summary["params"]["depth"], 5);
    assert_eq!(summary["pass"], true);
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // piecewise constants cannot reach 1e-12 at depth 3
    let cfg = write(
        dir.path(),
        "c.toml",
        "[converge]\ndims = [1]\norders = [1]\ndepth = 3\nprobes = 20\ntol = 1e-12\n",
    );
    let out = martspline(&["converge", "--config", &cfg, "--quiet"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let summary = fs::read_to_string(dir.path().join("out/converge.summary.json")).unwrap();
    assert!(summary.contains("\"pass\": false"));
}

#[test]
fn malformed_config_reports_line_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "seed = 3\n[covering]\nqs = [0.3, oops]\n");
    let out = martspline(&["covering", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_field_and_invalid_value_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.toml", "[weaktype]\nspikez = 3\n");
    let out = martspline(&["weaktype", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spikez"));

    let cfg = write(dir.path(), "v.toml", "[covering]\ndims = [3]\n");
    let out = martspline(&["covering", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dims"));
}

#[test]
fn run_follows_the_config_and_rejects_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", "experiment = \"weaktype\"\n[weaktype]\nspikes = 3\ndims = [1]\n");
    let out = martspline(&["run", "--config", &cfg, "--depth", "3", "--quiet"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/weaktype.csv").is_file());

    let out = martspline(&["decay", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weaktype"));

    let none = write(dir.path(), "none.toml", "seed = 1\n");
    let out = martspline(&["run", "--config", &none], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
