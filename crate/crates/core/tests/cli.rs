//! End-to-end checks of the `kappabench` binary.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use kappabench::corpus::load_manifest;
use kappabench::results::{read_log, FailureKind};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kappabench"));
    for var in [
        "KAPPABENCH_ENDPOINT",
        "KAPPABENCH_API_KEY",
        "KAPPABENCH_CONCURRENCY",
        "KAPPABENCH_RETRIES",
        "KAPPABENCH_TIMEOUT_S",
        "KAPPABENCH_CONFIG",
    ] {
        c.env_remove(var);
    }
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn write_source(dir: &Path) {
    let mut rows = String::from("case_id,label,text\n");
    for i in 0..120 {
        let label = if i % 3 == 0 { "1" } else { "0" };
        rows.push_str(&format!("s{i:03},{label},\"Summary {i}: caseworker notes.\"\n"));
    }
    std::fs::write(dir.join("source.csv"), rows).unwrap();
    std::fs::write(dir.join("definition.txt"), "Any documented instance of the construct.\n").unwrap();
    std::fs::write(
        dir.join("provenance.toml"),
        "validation_method = \"manual_coding\"\nreliability_kappa = 0.84\nvalidation_period = { from = 2015, to = 2019 }\ndescription = \"double-coded sample\"\n",
    )
    .unwrap();
}

fn balance(dir: &Path, out: &str, name: &str) -> (i32, String, String) {
    run(bin().current_dir(dir).args([
        "balance",
        "--input",
        "source.csv",
        "--per-class",
        "30",
        "--seed",
        "7",
        "--name",
        name,
        "--definition-file",
        "definition.txt",
        "--provenance",
        "provenance.toml",
        "--out",
        out,
    ]))
}

fn mock_plan(dir: &Path, endpoint_line: &str) {
    write_source(dir);
    assert_eq!(balance(dir, "a.kb", "alpha").0, 0);
    assert_eq!(balance(dir, "b.kb", "beta").0, 0);
    std::fs::write(
        dir.join("plan.kb"),
        format!(
            r#"plan_id = "cli"
seed = 3

[mock]
flip_probability = 0.1
seed = 2

[[benchmarks]]
manifest = "a.kb"
template = "shipped:opioids"

[[benchmarks]]
manifest = "b.kb"
template = "shipped:firearms"

[[configs]]
config_id = "m-0.6b-s"
{endpoint_line}
model_id = "m-0.6b"
processing_mode = "standard"

[[configs]]
config_id = "m-0.6b-r"
{endpoint_line}
model_id = "m-0.6b"
processing_mode = "reasoning"
mode_adapter = "think-toggle"
"#
        ),
    )
    .unwrap();
}

#[test]
fn balance_writes_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    write_source(dir.path());
    let (code, _, err) = balance(dir.path(), "one.kb", "demo");
    assert_eq!(code, 0, "{err}");
    assert_eq!(balance(dir.path(), "two.kb", "demo").0, 0);
    let one = std::fs::read(dir.path().join("one.kb")).unwrap();
    assert_eq!(one, std::fs::read(dir.path().join("two.kb")).unwrap());
    let m = load_manifest(&dir.path().join("one.kb")).unwrap();
    assert_eq!(m.class_counts(), (30, 30));
}

#[test]
fn missing_flag_is_a_usage_error() {
    let (code, _, err) = run(bin().args(["balance", "--per-class", "250", "--seed", "7"]));
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(run(bin().args(["no-such-command"])).0, 2);
}

#[test]
fn weak_provenance_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    write_source(dir.path());
    std::fs::write(
        dir.path().join("provenance.toml"),
        "validation_method = \"manual_coding\"\nreliability_kappa = 0.79\nvalidation_period = { from = 2015, to = 2019 }\n",
    )
    .unwrap();
    let (code, _, err) = balance(dir.path(), "x.kb", "demo");
    assert_eq!(code, 1);
    assert!(err.contains("below"), "{err}");
    assert!(!dir.path().join("x.kb").exists());
}

#[test]
fn template_validate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, shipped, _) = run(bin().args(["template", "shipped", "firearms"]));
    assert_eq!(code, 0);
    std::fs::write(dir.path().join("ok.toml"), &shipped).unwrap();
    let (code, out, _) = run(bin().arg("template").arg("validate").arg(dir.path().join("ok.toml")));
    assert_eq!(code, 0);
    assert!(out.starts_with("ok: firearms"));
    std::fs::write(dir.path().join("bad.toml"), shipped.replace("{{case_text}}", "")).unwrap();
    let (code, _, err) = run(bin().arg("template").arg("validate").arg(dir.path().join("bad.toml")));
    assert_eq!(code, 1);
    assert!(err.contains("case_text"), "{err}");
}

#[test]
fn run_report_resume_on_mock() {
    let dir = tempfile::tempdir().unwrap();
    mock_plan(dir.path(), r#"endpoint_url = "mock://""#);
    let (code, out, err) = run(bin().current_dir(dir.path()).args(["run", "--plan", "plan.kb", "--out", "run"]));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 4, "{out}");
    let log = read_log(&dir.path().join("run/results.log")).unwrap();
    assert_eq!(log.len(), 2 * 120);
    for f in ["plan.snapshot", "report.md", "heatmap.csv", "heatmap.svg", "metrics.m-0.6b-r.beta"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("run/lock").exists());

    let (code, csv, _) = run(bin().current_dir(dir.path()).args(["report", "--run", "run", "--format", "csv"]));
    assert_eq!(code, 0);
    assert!(csv.starts_with("benchmark,configuration,config_id,kappa"));
    assert_eq!(csv.lines().count(), 5);
    let (code, svg, _) = run(bin().current_dir(dir.path()).args(["report", "--run", "run", "--format", "svg"]));
    assert_eq!(code, 0);
    assert!(svg.starts_with("<svg"));
    let (code, md, _) = run(bin().current_dir(dir.path()).args(["report", "--run", "run", "--records", "1000"]));
    assert_eq!(code, 0);
    assert!(md.contains("1000 records"));

    let (code, _, err) = run(bin().current_dir(dir.path()).args(["resume", "--plan", "plan.kb", "--run", "run"]));
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("0 new records"), "{err}");

    let (code, _, err) = run(bin().current_dir(dir.path()).args(["run", "--plan", "plan.kb", "--out", "run"]));
    assert_eq!(code, 1);
    assert!(err.contains("--resume"), "{err}");
}

#[test]
fn dry_run_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    mock_plan(dir.path(), "");
    let (code, out, err) = run(bin().current_dir(dir.path()).env("KAPPABENCH_ENDPOINT", "http://env-host:1").args([
        "run",
        "--plan",
        "plan.kb",
        "--out",
        "run",
        "--dry-run",
        "--warmup",
        "2",
    ]));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("requests: 240"), "{out}");
    assert!(out.contains("plus 4 warm-up"), "{out}");
    assert!(out.contains("http://env-host:1"), "{out}");
    assert!(!dir.path().join("run").exists());

    // a flag beats the environment
    let (_, out, _) = run(bin().current_dir(dir.path()).env("KAPPABENCH_ENDPOINT", "http://env-host:1").args([
        "run",
        "--plan",
        "plan.kb",
        "--out",
        "run",
        "--dry-run",
        "--endpoint",
        "http://flag-host:2",
    ]));
    assert!(out.contains("http://flag-host:2") && !out.contains("env-host"), "{out}");
}

#[test]
fn dead_endpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    mock_plan(dir.path(), &format!(r#"endpoint_url = "http://127.0.0.1:{port}""#));
    let (code, _, err) = run(bin().current_dir(dir.path()).args([
        "run", "--plan", "plan.kb", "--out", "run", "--retries", "1", "--timeout", "2",
    ]));
    assert_eq!(code, 1, "{err}");
    let log = read_log(&dir.path().join("run/results.log")).unwrap();
    assert_eq!(log.len(), 240);
    assert!(log.iter().all(|r| r.error_kind.is_some_and(FailureKind::is_transport)));
    assert!(log.iter().any(|r| r.error_kind == Some(FailureKind::EndpointDown)));
    assert!(log.iter().filter(|r| r.attempt_count == 2).count() >= 3);
}

#[test]
fn mock_serve_answers_http_runs() {
    let dir = tempfile::tempdir().unwrap();
    mock_plan(dir.path(), "");
    let mut server = bin()
        .current_dir(dir.path())
        .args(["mock-serve", "--manifest", "a.kb", "--manifest", "b.kb", "--port", "0", "--seed", "2"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.split_whitespace().find(|w| w.starts_with("http://")).unwrap().to_string();
    let (code, out, err) = run(bin()
        .current_dir(dir.path())
        .args(["run", "--plan", "plan.kb", "--out", "run", "--endpoint", &url, "--concurrency", "4"]));
    let _ = server.kill();
    let _ = server.wait();
    assert_eq!(code, 0, "{err}");
    // flip 0 on the served mock: every cell agrees perfectly
    assert_eq!(out.matches("kappa=1.0000").count(), 4, "{out}");
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.m-0.6b-s.alpha")).unwrap();
    assert!(metrics.contains("timing_note"));
}
