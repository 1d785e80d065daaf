use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
[source]
alpha = 0.5
n_states = 16

[channel]
p_e = 0.8
c = 0.5
r_max = 2

[sim]
horizon = 20000
seed = 11
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{BASE}\n{extra}")).unwrap();
    path
}

fn aoii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoii")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn solve_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[budget]\nrate = 1.0\n");
    let out = aoii(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("regime = \"pure-threshold\""));
}

#[test]
fn malformed_numeric_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, BASE.replace("p_e = 0.8", "p_e = \"high\"")).unwrap();
    let out = aoii(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("p_e"), "{err}");
}

#[test]
fn out_of_range_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, format!("{}\n[budget]\nrate = 0.3\n", BASE.replace("c = 0.5", "c = 1.5"))).unwrap();
    let out = aoii(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("channel.c"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = aoii(&["solve", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncation_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[budget]\nrate = 0.3\n\n[solver]\nh_ceiling = 2\n");
    let out = aoii(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validation_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[validate]\ngrid = \"config\"\nlambdas = [0.0, 5.0]\ndelta_max = 200\nperturb_p_e = -0.6\n",
    );
    let out = aoii(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains(",fail,"));

    let cfg = write_config(dir.path(), "[validate]\ngrid = \"config\"\nlambdas = [0.0, 5.0]\ndelta_max = 200\n");
    let out = aoii(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[budget]\ngrid = [0.2, 0.4, 0.6]\n");
    let path = dir.path().join("sweep.csv");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = aoii(&["sweep", "--config", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
        runs.push(std::fs::read_to_string(&path).unwrap());
    }
    assert!(runs[0] == runs[1], "outputs differ");
    let text = &runs[0];
    assert!(text.starts_with("# [source]"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn seed_and_reps_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[policy]\nkind = \"threshold\"\nn0 = 3\n");
    let path = cfg.to_str().unwrap();
    let base = stdout(&aoii(&["simulate", "--config", path]));
    let other = stdout(&aoii(&["simulate", "--config", path, "--seed", "12", "--reps", "2"]));
    assert!(base.contains("seed = 11"));
    assert!(other.contains("# seed = 12"));
    assert!(other.contains("n_reps = 2"));
    assert_ne!(base, other);
}

#[test]
fn wait_aoii_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wait.toml");
    std::fs::write(&path, BASE.replace("n_states = 16", "mu = 0.5")).unwrap();
    let out = aoii(&["wait-aoii", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("g_wait = 1\n"));
}
