use std::path::Path;
use std::process::Command;

fn hxtopo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hxtopo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn one_iteration_writes_history_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.toml",
        "configuration = \"counter\"\npe = 1e3\nresolution = [16, 16]\n",
    );
    let out = dir.path().join("out");
    let o = hxtopo(&[
        "run",
        &config,
        "--output-dir",
        out.to_str().unwrap(),
        "--max-iters",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 2, "{history}");
    assert_eq!(lines[0], "iter,J,G1,G2,merit,t_hat,theta_max,tau,reinit,Da");
    assert!(lines[1].starts_with("1,"));

    let vtk = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "vtk")
        })
        .count();
    assert!(vtk >= 1);
    // the effective configuration is kept next to the results
    let snapshot = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(snapshot.contains("max_iter = 1"), "{snapshot}");
}

#[test]
fn solve_reports_the_functionals() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.toml", "pe = 1e3\nresolution = [12, 12]\n");
    let out = dir.path().join("out");
    let o = hxtopo(&["solve", &config, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("G2 ="));
    assert!(out.join("solution.vtk").exists());
}

#[test]
fn missing_configuration_is_a_usage_error() {
    let o = hxtopo(&["run", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("here.toml"));
}

#[test]
fn malformed_configuration_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.toml", "re = 10\nda = -1.0\n");
    let o = hxtopo(&["solve", &config]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml") && err.contains('2'), "{err}");

    let config = write(dir.path(), "syntax.toml", "re = = 10\n");
    assert_eq!(hxtopo(&["solve", &config]).status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(hxtopo(&["optimise"]).status.code(), Some(2));
    assert_eq!(hxtopo(&["--help"]).status.code(), Some(0));
}
