//! End-to-end runs of the `floquet` binary.

use std::path::Path;
use std::process::{Command, Output};

fn floquet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floquet"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FLOQUET_CACHE")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).expect("artifact exists")
}

/// Fast stage search: weak scattering closes each stage in a few steps.
const QUICK_BETA: [&str; 4] = ["--set", "model.t=0.99", "--set", "beta.stages=3"];

#[test]
fn unknown_key_is_a_config_error_listing_valid_keys() {
    let d = tempfile::tempdir().unwrap();
    let o = floquet(d.path(), &["--set", "model.foo=1", "operator", "check"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("foo") && e.contains("`alpha`") && e.contains("`lambda`"), "{e}");

    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "[evolve]\nnmax = 3\n").unwrap();
    let o = floquet(d.path(), &["--config", bad.to_str().unwrap(), "evolve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_max"));
}

#[test]
fn invalid_values_exit_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    for set in ["model.t=1.5", "model.beta_mode=bogus", "verify.window_arc=[1.0]", "average.functions=[\"sin\"]"] {
        let o = floquet(d.path(), &["--set", set, "average"]);
        assert_eq!(o.status.code(), Some(2), "{set}: {}", stderr(&o));
    }
}

#[test]
fn evolve_picks_the_light_cone_dimension() {
    let d = tempfile::tempdir().unwrap();
    let o = floquet(d.path(), &["--no-cache", "--set", "evolve.n_max=100", "evolve"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(d.path().join("evolve.csv"));
    assert!(csv.lines().nth(1).unwrap().starts_with("# n_dim 204 "), "{csv}");
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 101);
    for r in rows {
        let norm: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn seed_and_overrides_reach_the_provenance_line() {
    let d = tempfile::tempdir().unwrap();
    let o = floquet(d.path(), &["--no-cache", "--seed", "17", "--threads", "2", "--set", "lyapunov.n_energies=3", "lyapunov"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(d.path().join("lyapunov.csv"));
    assert!(csv.lines().next().unwrap().ends_with("seed=17"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn thread_count_does_not_change_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, threads) in [(&a, "1"), (&b, "4")] {
        let o = floquet(d.path(), &["--no-cache", "--threads", threads, "--set", "lyapunov.n_energies=8", "lyapunov"]);
        assert!(o.status.success());
    }
    assert_eq!(read(a.path().join("lyapunov.csv")), read(b.path().join("lyapunov.csv")));
}

#[test]
fn exhausted_budget_is_partial() {
    let d = tempfile::tempdir().unwrap();
    let o = floquet(d.path(), &["--no-cache", "--set", "beta.max_t=100", "beta", "search"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let last = read(d.path().join("beta_stages.jsonl"));
    let outcome: serde_json::Value = serde_json::from_str(last.lines().last().unwrap()).unwrap();
    assert_eq!(outcome["record"], "outcome");
    assert_eq!(outcome["status"], "partial");
}

#[test]
fn resumed_search_matches_a_fresh_one() {
    let (fresh, resumed) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(floquet(fresh.path(), &[&QUICK_BETA[..], &["beta", "search"]].concat()).status.success());

    let one = ["--set", "model.t=0.99", "--set", "beta.stages=1", "beta", "search"];
    assert!(floquet(resumed.path(), &one).status.success());
    // Simulate an interrupted write after the completed stage.
    let path = resumed.path().join("beta_stages.jsonl");
    let text: String = read(&path).lines().take(2).map(|l| format!("{l}\n")).collect::<String>() + "{\"record\":\"sta";
    std::fs::write(&path, text).unwrap();
    let o = floquet(resumed.path(), &[&QUICK_BETA[..], &["beta", "search"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(fresh.path().join("beta_stages.jsonl")), read(&path));
}

#[test]
fn tampered_history_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    assert!(floquet(d.path(), &[&QUICK_BETA[..], &["beta", "search"]].concat()).status.success());
    let path = d.path().join("beta_stages.jsonl");
    let text = read(&path).replacen("\"t\":4", "\"t\":5", 1);
    std::fs::write(&path, text).unwrap();
    let o = floquet(d.path(), &[&QUICK_BETA[..], &["beta", "search"]].concat());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn other_settings_start_from_scratch() {
    let d = tempfile::tempdir().unwrap();
    assert!(floquet(d.path(), &[&QUICK_BETA[..], &["beta", "search"]].concat()).status.success());
    let o = floquet(d.path(), &["--set", "model.t=0.95", "--set", "beta.stages=2", "beta", "search"]);
    assert!(o.status.success());
    let fresh = tempfile::tempdir().unwrap();
    assert!(floquet(fresh.path(), &["--set", "model.t=0.95", "--set", "beta.stages=2", "beta", "search"]).status.success());
    assert_eq!(read(d.path().join("beta_stages.jsonl")), read(fresh.path().join("beta_stages.jsonl")));
}

#[test]
fn cache_hit_reproduces_the_fresh_bytes() {
    let d = tempfile::tempdir().unwrap();
    let cache = d.path().join("cache");
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_floquet"))
            .args(["--out", d.path().join(out).to_str().unwrap(), "clark"])
            .env("FLOQUET_CACHE", &cache)
            .output()
            .unwrap()
    };
    assert!(run("a").status.success());
    let entries = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(entries, 1);
    assert!(run("b").status.success());
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), entries);
    assert_eq!(read(d.path().join("a/clark.csv")), read(d.path().join("b/clark.csv")));

    // A different setting must miss.
    let o = Command::new(env!("CARGO_BIN_EXE_floquet"))
        .args(["--out", d.path().join("c").to_str().unwrap(), "--set", "clark.n_dim=32", "clark"])
        .env("FLOQUET_CACHE", &cache)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), entries + 1);
    assert_ne!(read(d.path().join("a/clark.csv")), read(d.path().join("c/clark.csv")));
}

#[test]
fn operator_export_and_report() {
    let d = tempfile::tempdir().unwrap();
    let o = floquet(d.path(), &["--no-cache", "--set", "operator.n_dim=16", "operator", "export"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(d.path().join("operator.csv"));
    assert!(csv.lines().any(|l| l == "row_site,col_site,re,im"));
    let o = floquet(d.path(), &["report"]);
    assert!(o.status.success());
    assert!(read(d.path().join("report.txt")).contains("operator.csv"));
}
