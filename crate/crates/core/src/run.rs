//! Executes a [`RunPlan`] case by case into a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! plan.snapshot                 hashed plan content + environment (JSON)
//! results.log                   one CaseResult per line, append-only
//! metrics.<config>.<benchmark>  MetricsSummary per cell (JSON)
//! report.md, heatmap.csv, heatmap.svg
//! lock                          present while an orchestrator owns the dir
//! ```
//!
//! The log is the only record of progress. Resuming reads it, skips every
//! `(config, benchmark, case_id)` already present and continues in the same
//! deterministic order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use thiserror::Error;

use crate::corpus::LabeledCase;
use crate::gateway::{classify_case, Backend, HttpBackend, ModelConfig};
use crate::metrics::MetricsSummary;
use crate::mock::MockBackend;
use crate::parser::{parse_response, strip_reasoning};
use crate::plan::{PlanError, PlanSnapshot, PlannedBenchmark, RunPlan, MOCK_SCHEME};
use crate::prompt::{render, TemplateError};
use crate::results::{read_log, CaseKey, CaseResult, FailureKind, LogError, ResultLog};
use crate::rng::{derive_seed, fisher_yates, seeded_rng};

pub const SNAPSHOT_FILE: &str = "plan.snapshot";
pub const LOG_FILE: &str = "results.log";
pub const LOCK_FILE: &str = "lock";
/// Consecutive unreachable-endpoint failures after which a config's
/// remaining cases are written off without further requests.
pub const ENDPOINT_DOWN_AFTER: u32 = 3;
pub const CONCURRENCY_TIMING_NOTE: &str =
    "requests overlapped (concurrency > 1); latencies are not comparable with sequential runs";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is locked by another run (remove the lock file if no run is active)")]
    Locked(String),
    #[error("{0} already holds a run; pass --resume to continue it")]
    AlreadyExists(String),
    #[error("{0} is not a run directory (no {SNAPSHOT_FILE})")]
    NotARun(String),
    #[error("plan does not match the run's snapshot (stored {stored}, current {current}); refusing to mix runs")]
    HashMismatch { stored: String, current: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn snapshot_path(run_dir: &Path) -> PathBuf {
    run_dir.join(SNAPSHOT_FILE)
}

pub fn log_path(run_dir: &Path) -> PathBuf {
    run_dir.join(LOG_FILE)
}

pub fn metrics_path(run_dir: &Path, config_id: &str, benchmark: &str) -> PathBuf {
    run_dir.join(format!("metrics.{config_id}.{benchmark}"))
}

/// Advisory lock held for the lifetime of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock, RunError> {
        let path = run_dir.join(LOCK_FILE);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if holder_is_gone(&path) {
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    return Err(RunError::Locked(run_dir.display().to_string()));
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        Err(RunError::Locked(run_dir.display().to_string()))
    }

    /// Fails if an orchestrator currently owns `run_dir`.
    pub fn check_unlocked(run_dir: &Path) -> Result<(), RunError> {
        let path = run_dir.join(LOCK_FILE);
        if path.exists() && !holder_is_gone(&path) {
            return Err(RunError::Locked(run_dir.display().to_string()));
        }
        Ok(())
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A lock whose recorded process no longer exists was left by a killed run.
/// Only decidable where `/proc` exists; elsewhere the lock is respected.
fn holder_is_gone(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc_root = Path::new("/proc");
    proc_root.join("self").exists() && !proc_root.join(pid.to_string()).exists()
}

/// Progress reconstructed from a run directory alone.
#[derive(Debug, Clone)]
pub struct RunState {
    pub snapshot: PlanSnapshot,
    pub records: Vec<CaseResult>,
    pub completed: HashSet<CaseKey>,
}

impl RunState {
    pub fn load(run_dir: &Path) -> Result<RunState, RunError> {
        let snap = snapshot_path(run_dir);
        if !snap.exists() {
            return Err(RunError::NotARun(run_dir.display().to_string()));
        }
        let snapshot = PlanSnapshot::load(&snap)?;
        let log = log_path(run_dir);
        let records = if log.exists() { read_log(&log)? } else { Vec::new() };
        let completed = records.iter().map(CaseResult::key).collect();
        Ok(RunState {
            snapshot,
            records,
            completed,
        })
    }
}

/// Presentation order of a cell: manifest order shuffled by a seed derived
/// from the plan seed, config id and benchmark name.
pub fn case_order(plan_seed: u64, config_id: &str, benchmark: &PlannedBenchmark) -> Vec<usize> {
    let mut order: Vec<usize> = (0..benchmark.manifest.len()).collect();
    let mut rng = seeded_rng(derive_seed(plan_seed, &[config_id, benchmark.name()]));
    fisher_yates(&mut order, &mut rng);
    order
}

#[derive(Clone, Default)]
pub struct ExecuteOptions {
    /// Continue an existing run directory instead of refusing it.
    pub resume: bool,
    /// Stop after this many new log lines, leaving metrics and report
    /// unwritten, as if the process had been killed.
    pub stop_after: Option<usize>,
    /// Use this backend for every config instead of resolving endpoints.
    pub backend: Option<Arc<dyn Backend>>,
    /// Skip writing report.md and the heatmap files.
    pub skip_report: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub plan_hash: String,
    pub new_records: usize,
    pub skipped: usize,
    pub total_records: usize,
    pub transport_failures: usize,
    pub parse_failures: usize,
    /// `stop_after` cut the run short.
    pub interrupted: bool,
    pub summaries: Vec<MetricsSummary>,
}

/// One backend per config: the in-process mock for `mock://` endpoints,
/// otherwise an HTTP client shared between configs on the same endpoint.
pub fn resolve_backends(plan: &RunPlan) -> Vec<Arc<dyn Backend>> {
    let mut mock: Option<Arc<dyn Backend>> = None;
    let mut http: HashMap<String, Arc<dyn Backend>> = HashMap::new();
    plan.configs
        .iter()
        .map(|c| {
            if c.endpoint_url.starts_with(MOCK_SCHEME) {
                mock.get_or_insert_with(|| {
                    let spec = plan.mock.clone().unwrap_or_default();
                    Arc::new(MockBackend::with_manifests(spec, plan.benchmarks.iter().map(|b| &b.manifest)))
                })
                .clone()
            } else {
                http.entry(c.endpoint_url.clone())
                    .or_insert_with(|| Arc::new(HttpBackend::new(&c.endpoint_url, plan.api_key.clone())))
                    .clone()
            }
        })
        .collect()
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Render, classify and parse one case into its log record.
fn run_case(
    plan: &RunPlan,
    backend: &dyn Backend,
    config: &ModelConfig,
    bench: &PlannedBenchmark,
    case: &LabeledCase,
) -> Result<CaseResult, RunError> {
    let prompt = render(&bench.template, &case.text)?;
    let mut record = CaseResult {
        plan_id: plan.plan_id.clone(),
        config_id: config.config_id.clone(),
        benchmark: bench.name().to_string(),
        case_id: case.case_id.clone(),
        gold_label: case.gold_label,
        parsed_label: None,
        error_kind: None,
        error_detail: None,
        raw_output: String::new(),
        reasoning_trace: None,
        latency_seconds: 0.0,
        attempt_count: 0,
        truncated: false,
        timestamp: String::new(),
    };
    match classify_case(backend, config, &prompt, &plan.retry) {
        Ok(resp) => {
            record.latency_seconds = resp.latency_seconds;
            record.attempt_count = resp.attempt_count;
            record.truncated = resp.truncated;
            match parse_response(&resp.raw_text, &config.parser_options(), resp.truncated) {
                Ok(parsed) => {
                    record.parsed_label = Some(parsed.label);
                    record.reasoning_trace = parsed.reasoning_trace;
                }
                Err(e) => {
                    record.error_kind = Some(e.kind.into());
                    record.error_detail = Some(e.detail);
                    record.reasoning_trace = strip_reasoning(&resp.raw_text, &config.delimiters).trace;
                }
            }
            record.raw_output = resp.raw_text;
        }
        Err(failure) => {
            record.latency_seconds = failure.latency_seconds;
            record.attempt_count = failure.attempt_count;
            record.error_kind = Some(failure.error.kind());
            record.error_detail = Some(failure.error.to_string());
        }
    }
    record.timestamp = now();
    Ok(record)
}

fn endpoint_down_record(plan: &RunPlan, config: &ModelConfig, bench: &PlannedBenchmark, case: &LabeledCase) -> CaseResult {
    CaseResult {
        plan_id: plan.plan_id.clone(),
        config_id: config.config_id.clone(),
        benchmark: bench.name().to_string(),
        case_id: case.case_id.clone(),
        gold_label: case.gold_label,
        parsed_label: None,
        error_kind: Some(FailureKind::EndpointDown),
        error_detail: Some(format!(
            "not sent: {ENDPOINT_DOWN_AFTER} consecutive unreachable-endpoint failures"
        )),
        raw_output: String::new(),
        reasoning_trace: None,
        latency_seconds: 0.0,
        attempt_count: 0,
        truncated: false,
        timestamp: now(),
    }
}

fn is_unreachable(r: &CaseResult) -> bool {
    matches!(r.error_kind, Some(FailureKind::TransportUnreachable | FailureKind::EndpointDown))
}

/// Untimed requests whose responses are discarded.
fn warm_up(plan: &RunPlan, backend: &dyn Backend, config: &ModelConfig) {
    let cases = plan
        .benchmarks
        .iter()
        .flat_map(|b| b.manifest.cases.iter().map(move |c| (b, c)))
        .take(plan.warmup);
    for (bench, case) in cases {
        if let Ok(prompt) = render(&bench.template, &case.text) {
            let _ = classify_case(backend, config, &prompt, &plan.retry);
        }
    }
}

struct Writer {
    log: ResultLog,
    new_records: usize,
    stop_after: Option<usize>,
    transport_failures: usize,
    parse_failures: usize,
}

impl Writer {
    fn full(&self) -> bool {
        self.stop_after.is_some_and(|n| self.new_records >= n)
    }

    fn append(&mut self, record: &CaseResult) -> Result<(), RunError> {
        record.check().map_err(|message| LogError::Corrupt {
            path: LOG_FILE.to_string(),
            line: 0,
            message,
        })?;
        self.log.append(record)?;
        self.new_records += 1;
        match record.error_kind {
            Some(k) if k.is_transport() => self.transport_failures += 1,
            Some(_) => self.parse_failures += 1,
            None => {}
        }
        Ok(())
    }
}

/// Prepares `run_dir`: writes the snapshot for a new run, or checks the
/// stored one when resuming.
fn prepare_dir(plan: &RunPlan, run_dir: &Path, resume: bool) -> Result<String, RunError> {
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let snap_path = snapshot_path(run_dir);
    let current = plan.content().hash();
    if snap_path.exists() {
        if !resume {
            return Err(RunError::AlreadyExists(run_dir.display().to_string()));
        }
        let stored = PlanSnapshot::load(&snap_path)?;
        if stored.plan_hash != current {
            return Err(RunError::HashMismatch {
                stored: stored.plan_hash,
                current,
            });
        }
        return Ok(current);
    }
    if resume && log_path(run_dir).exists() {
        return Err(RunError::NotARun(run_dir.display().to_string()));
    }
    let tmp = run_dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    fs::write(&tmp, plan.snapshot().to_string_pretty()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &snap_path).map_err(io_err(&snap_path))?;
    Ok(current)
}

/// Runs (or continues) the full matrix.
pub fn execute(plan: &RunPlan, run_dir: &Path, options: &ExecuteOptions) -> Result<RunOutcome, RunError> {
    plan.validate()?;
    let plan_hash = prepare_dir(plan, run_dir, options.resume)?;
    let _lock = RunLock::acquire(run_dir)?;

    let (log, existing) = ResultLog::open(&log_path(run_dir))?;
    let done: HashSet<CaseKey> = existing.iter().map(CaseResult::key).collect();
    let backends: Vec<Arc<dyn Backend>> = match &options.backend {
        Some(b) => vec![b.clone(); plan.configs.len()],
        None => resolve_backends(plan),
    };
    let mut writer = Writer {
        log,
        new_records: 0,
        stop_after: options.stop_after,
        transport_failures: 0,
        parse_failures: 0,
    };
    let mut skipped = 0usize;

    'configs: for (config, backend) in plan.configs.iter().zip(&backends) {
        // consecutive unreachable results, carried over from the log tail
        let mut down_streak = 0u32;
        let mut warmed = false;
        for bench in &plan.benchmarks {
            let mut pending = Vec::new();
            for idx in case_order(plan.seed, &config.config_id, bench) {
                let case = &bench.manifest.cases[idx];
                let key = (config.config_id.clone(), bench.name().to_string(), case.case_id.clone());
                if done.contains(&key) {
                    skipped += 1;
                } else {
                    pending.push(case);
                }
            }
            if pending.is_empty() {
                continue;
            }
            if !warmed && plan.warmup > 0 {
                warm_up(plan, backend.as_ref(), config);
                warmed = true;
            }
            if plan.concurrency <= 1 {
                for case in pending {
                    if writer.full() {
                        break 'configs;
                    }
                    let record = if down_streak >= ENDPOINT_DOWN_AFTER {
                        endpoint_down_record(plan, config, bench, case)
                    } else {
                        run_case(plan, backend.as_ref(), config, bench, case)?
                    };
                    down_streak = if is_unreachable(&record) { down_streak + 1 } else { 0 };
                    writer.append(&record)?;
                }
            } else {
                down_streak = run_cell_concurrent(plan, backend.clone(), config, bench, &pending, &mut writer, down_streak)?;
            }
            if writer.full() {
                break 'configs;
            }
        }
    }

    let interrupted = writer.full();
    let new_records = writer.new_records;
    let (transport_failures, parse_failures) = (writer.transport_failures, writer.parse_failures);
    drop(writer);

    let mut summaries = Vec::new();
    let mut total_records = existing.len() + new_records;
    if !interrupted {
        let records = read_log(&log_path(run_dir))?;
        total_records = records.len();
        summaries = write_metrics(plan, run_dir, &records)?;
        if !options.skip_report {
            crate::report::write_report_files(run_dir).map_err(|e| RunError::Io {
                path: run_dir.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
    }
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        plan_hash,
        new_records,
        skipped,
        total_records,
        transport_failures,
        parse_failures,
        interrupted,
        summaries,
    })
}

/// Continues the run stored in `run_dir`; refuses if `plan` differs from it.
pub fn resume(plan: &RunPlan, run_dir: &Path, options: &ExecuteOptions) -> Result<RunOutcome, RunError> {
    if !snapshot_path(run_dir).exists() {
        return Err(RunError::NotARun(run_dir.display().to_string()));
    }
    let options = ExecuteOptions {
        resume: true,
        ..options.clone()
    };
    execute(plan, run_dir, &options)
}

/// W > 1: workers pull cases in order and send finished records to this
/// thread, the only one that writes the log.
fn run_cell_concurrent(
    plan: &RunPlan,
    backend: Arc<dyn Backend>,
    config: &ModelConfig,
    bench: &PlannedBenchmark,
    pending: &[&LabeledCase],
    writer: &mut Writer,
    streak: u32,
) -> Result<u32, RunError> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let down_streak = AtomicU32::new(streak);
    let (tx, rx) = mpsc::channel::<Result<CaseResult, RunError>>();
    let mut failure = None;
    thread::scope(|scope| {
        for _ in 0..plan.concurrency.min(pending.len()) {
            let tx = tx.clone();
            let (next, stop, down_streak, backend) = (&next, &stop, &down_streak, backend.clone());
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = pending.get(i) else { break };
                let result = if down_streak.load(Ordering::SeqCst) >= ENDPOINT_DOWN_AFTER {
                    Ok(endpoint_down_record(plan, config, bench, case))
                } else {
                    run_case(plan, backend.as_ref(), config, bench, case)
                };
                if let Ok(r) = &result {
                    if is_unreachable(r) {
                        down_streak.fetch_add(1, Ordering::SeqCst);
                    } else {
                        down_streak.store(0, Ordering::SeqCst);
                    }
                }
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            if failure.is_some() || writer.full() {
                stop.store(true, Ordering::SeqCst);
                continue;
            }
            match result.and_then(|r| writer.append(&r)) {
                Ok(()) => {
                    if writer.full() {
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    failure = Some(e);
                }
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(down_streak.load(Ordering::SeqCst)),
    }
}

/// Summarizes every cell of the plan from `records` and writes one
/// metrics file per cell.
pub fn write_metrics(plan: &RunPlan, run_dir: &Path, records: &[CaseResult]) -> Result<Vec<MetricsSummary>, RunError> {
    let summaries = summarize_cells(plan, records);
    for s in &summaries {
        let path = metrics_path(run_dir, &s.config_id, &s.benchmark);
        let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(summaries)
}

/// One summary per (config, benchmark) in plan order.
pub fn summarize_cells(plan: &RunPlan, records: &[CaseResult]) -> Vec<MetricsSummary> {
    let mut by_cell: BTreeMap<(&str, &str), Vec<&CaseResult>> = BTreeMap::new();
    for r in records {
        by_cell.entry((&r.config_id, &r.benchmark)).or_default().push(r);
    }
    let mut out = Vec::new();
    for config in &plan.configs {
        for bench in &plan.benchmarks {
            let cell = by_cell
                .get(&(config.config_id.as_str(), bench.name()))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let acc = crate::metrics::accumulate(cell.iter().copied()).expect("grouped by cell");
            let mut s = MetricsSummary::from_accumulation(&config.config_id, bench.name(), &acc);
            if plan.concurrency > 1 {
                s.timing_note = Some(CONCURRENCY_TIMING_NOTE.to_string());
            }
            if let Some(reps) = plan.bootstrap_replicates {
                let seed = derive_seed(plan.seed, &["bootstrap", &config.config_id, bench.name()]);
                s.kappa_bootstrap_ci = crate::metrics::bootstrap_kappa_ci(&acc.pairs, reps, seed);
            }
            out.push(s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_balanced_benchmark, BalanceRequest, Label, ProvenanceRecord};
    use crate::gateway::{ModeAdapter, ProcessingMode};
    use crate::mock::MockSpec;
    use crate::prompt::{PromptTemplate, ShippedConstruct};

    fn bench(name: &str, per_class: usize) -> PlannedBenchmark {
        let cases: Vec<_> = (0..per_class * 2)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                LabeledCase::new(format!("{name}-{i:04}"), format!("Summary {i} for {name}."), label)
            })
            .collect();
        let manifest = build_balanced_benchmark(
            &cases,
            &BalanceRequest {
                name: name.into(),
                construct_definition: "def".into(),
                per_class,
                seed: 11,
                provenance: ProvenanceRecord::manual_coding(0.9, 2015, 2016),
            },
        )
        .unwrap();
        PlannedBenchmark {
            manifest,
            template: PromptTemplate::shipped(ShippedConstruct::Firearms),
        }
    }

    fn plan(flip: f64) -> RunPlan {
        let mut p = RunPlan::new("t", 5);
        p.configs = vec![
            ModelConfig::new("a-4b-s", "mock://", "a-4b", ProcessingMode::Standard, ModeAdapter::ThinkToggle),
            ModelConfig::new("a-4b-r", "mock://", "a-4b", ProcessingMode::Reasoning, ModeAdapter::ThinkToggle),
        ];
        p.benchmarks = vec![bench("x", 10), bench("y", 10)];
        p.mock = Some(MockSpec {
            flip_probability: flip,
            ..MockSpec::default()
        });
        p
    }

    #[test]
    fn full_matrix_cardinality() {
        let dir = tempfile::tempdir().unwrap();
        let out = execute(&plan(0.0), dir.path(), &ExecuteOptions::default()).unwrap();
        assert_eq!(out.new_records, 2 * 2 * 20);
        assert_eq!(out.summaries.len(), 4);
        assert!(out.summaries.iter().all(|s| s.kappa == Some(1.0)));
        assert!(metrics_path(dir.path(), "a-4b-s", "y").exists());
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn existing_run_needs_resume_and_same_plan() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(0.1);
        execute(&p, dir.path(), &ExecuteOptions::default()).unwrap();
        assert!(matches!(
            execute(&p, dir.path(), &ExecuteOptions::default()),
            Err(RunError::AlreadyExists(_))
        ));
        let again = resume(&p, dir.path(), &ExecuteOptions::default()).unwrap();
        assert_eq!((again.new_records, again.skipped), (0, 80));
        let mut changed = p.clone();
        changed.benchmarks[0].template.task_instruction.push_str(" Answer quickly.");
        assert!(matches!(
            resume(&changed, dir.path(), &ExecuteOptions::default()),
            Err(RunError::HashMismatch { .. })
        ));
    }

    #[test]
    fn interrupted_run_resumes_to_same_log() {
        let p = plan(0.2);
        let whole = tempfile::tempdir().unwrap();
        execute(&p, whole.path(), &ExecuteOptions::default()).unwrap();
        let split = tempfile::tempdir().unwrap();
        let first = execute(
            &p,
            split.path(),
            &ExecuteOptions {
                stop_after: Some(33),
                ..ExecuteOptions::default()
            },
        )
        .unwrap();
        assert!(first.interrupted);
        let second = resume(&p, split.path(), &ExecuteOptions::default()).unwrap();
        assert_eq!(second.new_records, 80 - 33);
        let strip = |dir: &Path| -> Vec<(CaseKey, Option<Label>)> {
            let mut v: Vec<_> = read_log(&log_path(dir))
                .unwrap()
                .into_iter()
                .map(|r| (r.key(), r.parsed_label))
                .collect();
            v.sort();
            v
        };
        assert_eq!(strip(whole.path()), strip(split.path()));
    }

    #[test]
    fn sequential_log_follows_case_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(0.0);
        execute(&p, dir.path(), &ExecuteOptions::default()).unwrap();
        let log = read_log(&log_path(dir.path())).unwrap();
        let expected: Vec<String> = case_order(p.seed, "a-4b-s", &p.benchmarks[0])
            .into_iter()
            .map(|i| p.benchmarks[0].manifest.cases[i].case_id.clone())
            .collect();
        let got: Vec<String> = log.iter().take(20).map(|r| r.case_id.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn concurrent_run_matches_sequential_labels() {
        let p = plan(0.3);
        let seq = tempfile::tempdir().unwrap();
        let a = execute(&p, seq.path(), &ExecuteOptions::default()).unwrap();
        let mut pc = p.clone();
        pc.concurrency = 4;
        let par = tempfile::tempdir().unwrap();
        let b = execute(&pc, par.path(), &ExecuteOptions::default()).unwrap();
        for (x, y) in a.summaries.iter().zip(&b.summaries) {
            assert_eq!(x.matrix, y.matrix);
            assert!(y.timing_note.is_some());
        }
    }

    #[test]
    fn dead_endpoint_trips_breaker() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = plan(0.0);
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        for c in &mut p.configs {
            c.endpoint_url = format!("http://127.0.0.1:{port}");
        }
        p.retry.max_retries = 0;
        p.retry.timeout_s = 2.0;
        let out = execute(&p, dir.path(), &ExecuteOptions::default()).unwrap();
        assert_eq!(out.transport_failures, 80);
        let log = read_log(&log_path(dir.path())).unwrap();
        let down = log.iter().filter(|r| r.error_kind == Some(FailureKind::EndpointDown)).count();
        assert_eq!(down, 80 - 2 * ENDPOINT_DOWN_AFTER as usize);
        assert!(out.summaries.iter().all(|s| s.kappa.is_none()));
    }

    #[test]
    fn lock_blocks_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let _held = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(RunError::Locked(_))));
        assert!(RunLock::check_unlocked(dir.path()).is_err());
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOCK_FILE), "4294967295\n").unwrap();
        if Path::new("/proc/self").exists() {
            assert!(RunLock::acquire(dir.path()).is_ok());
        }
    }
}
