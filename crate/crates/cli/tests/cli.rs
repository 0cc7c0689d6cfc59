use std::path::Path;
use std::process::{Command, Output};

fn citerec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citerec"))
        .current_dir(dir)
        .env_remove("CITEREC_WORKDIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) {
    let out = citerec(dir, &["fixture", "gen", "--out", ".", "--size", "500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("config.toml").exists());
}

#[test]
fn pipeline_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = citerec(dir.path(), &["pipeline", "-c", "config.toml", "--set", "davinci.epochs=2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("profiler") && stdout.contains("reranker"), "{stdout}");
    for name in ["report_retrieval.json", "report_rerank.json", "report.txt", "timings.json", "manifest.json"] {
        assert!(dir.path().join("work").join(name).exists(), "{name}");
    }
}

#[test]
fn workdir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_citerec"))
        .current_dir(dir.path())
        .env("CITEREC_WORKDIR", "elsewhere")
        .args(["split", "-c", "config.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/split.json").exists());
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cases: [&[&str]; 4] = [
        &["split", "-c", "missing.toml"],
        &["split", "-c", "config.toml", "--set", "prior.lambda_decay=1.5"],
        &["split", "-c", "config.toml", "--set", "no.such.field=1"],
        &["davinci", "ablate", "-c", "config.toml", "--variant", "A9"],
    ];
    for args in cases {
        let out = citerec(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // a changed config may not reuse a workdir
    assert!(citerec(dir.path(), &["split", "-c", "config.toml"]).status.success());
    let out = citerec(dir.path(), &["split", "-c", "config.toml", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_a_validation_error_and_missing_one_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    std::fs::write(dir.path().join("documents.jsonl"), "{not json").unwrap();
    let out = citerec(dir.path(), &["ingest", "-c", "config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_file(dir.path().join("documents.jsonl")).unwrap();
    let out = citerec(dir.path(), &["ingest", "-c", "config.toml"]);
    assert_eq!(out.status.code(), Some(3));
}
