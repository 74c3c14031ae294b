use std::path::Path;
use std::process::{Command, Output};

fn flchain(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flchain"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("FLCHAIN_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).envs(envs.iter().copied()).output().unwrap()
}

fn scenario(dir: &Path, body: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(flchain(&[], &[]).status.code(), Some(1));
    assert_eq!(flchain(&["no-such-command"], &[]).status.code(), Some(1));
    assert_eq!(flchain(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn invalid_scenarios_exit_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").display().to_string();
    for (body, needle) in [
        ("[blockchain]\nminers = 3\nlambda = -1\n", "line 3"),
        ("[blockchain]\nlamda = 1\n", "unknown field"),
        ("[fl\n", "line 1"),
        ("[fl]\nblock_fraction = 2.0\n", "fl.block_fraction"),
    ] {
        let path = scenario(dir.path(), body);
        let o = flchain(&["queue-analyze", "--scenario", &path, "--out", &out], &[]);
        assert_eq!(o.status.code(), Some(1), "{body}");
        assert!(stderr(&o).contains(needle), "{body}: {}", stderr(&o));
    }
}

#[test]
fn bad_environment_override_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = flchain(&["model-delays", "--out", &out], &[("FLCHAIN_BLOCKCHAIN_NU", "abc")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FLCHAIN_BLOCKCHAIN_NU"));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("taken");
    std::fs::write(&file, "").unwrap();
    let o = flchain(&["model-delays", "--out", &file.display().to_string()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn environment_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario(dir.path(), "[blockchain]\nlambda = 0.5\n[[sweep]]\npath = \"blockchain.block_size\"\nvalues = [5]\n");
    let read = |envs: &[(&str, &str)]| {
        let out = dir.path().join("out");
        let o = flchain(&["queue-analyze", "--scenario", &path, "--out", &out.display().to_string()], envs);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut r = csv::Reader::from_path(out.join("queue_analysis.csv")).unwrap();
        let headers = r.headers().unwrap().clone();
        let col = headers.iter().position(|h| h == "lambda").unwrap();
        r.records().map(|rec| rec.unwrap()[col].parse::<f64>().unwrap()).collect::<Vec<_>>()
    };
    assert!(read(&[]).iter().all(|&l| l == 0.5));
    assert!(read(&[("FLCHAIN_BLOCKCHAIN_LAMBDA", "2")]).iter().all(|&l| l == 2.0));
}

#[test]
fn simulate_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario(
        dir.path(),
        "[des]\narrivals = 20000\nadaptive = false\n[[sweep]]\npath = \"blockchain.block_size\"\nvalues = [10]\n",
    );
    let out = dir.path().join("out");
    let o = flchain(&["queue-simulate", "--scenario", &path, "--out", &out.display().to_string(), "--trace", "500"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(out.join("des_trace.csv")).unwrap();
    assert!(trace.starts_with("time,event_kind,queue_len\n"));
    assert!(trace.lines().count() > 500);
    let sim = std::fs::read_to_string(out.join("queue_simulation.csv")).unwrap();
    assert_eq!(sim.lines().count(), 2);
}
