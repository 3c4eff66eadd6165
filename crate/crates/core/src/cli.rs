//! Command-line entry point. Exit codes: 0 success, 1 validation or domain
//! error (including runs with transport failures), 2 usage error.
//! Diagnostics go to standard error; data goes to standard output or files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigLayer, GlobalConfig, ENV_CONFIG};
use crate::corpus::{
    build_balanced_benchmark, read_source, save_manifest, validate_provenance, BalanceRequest, ProvenanceRecord,
    ProvenanceVerdict, QualityPolicy,
};
use crate::mock::{LatencyModel, MockBackend, MockServer, MockSpec};
use crate::plan::{load_plan, resolve_template, RunPlan};
use crate::prompt::{render, validate_template, PromptTemplate};
use crate::report::{
    render_heatmap_svg, render_report_md, render_table_csv, write_report_files_with, ReportOptions,
    DEFAULT_PROJECTION_RECORDS,
};
use crate::run::{execute, resume, ExecuteOptions, RunLock, RunOutcome};

#[derive(Debug, Parser)]
#[command(name = "kappabench", version, about = "Benchmark local language models on balanced binary classification tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a class-balanced benchmark manifest from a labeled source file.
    Balance(BalanceArgs),
    /// Check or render prompt templates.
    #[command(subcommand)]
    Template(TemplateCommand),
    /// Execute a plan into a run directory.
    Run(RunArgs),
    /// Continue an interrupted run.
    Resume(ResumeArgs),
    /// Render tables, heatmap and throughput projections for a run.
    Report(ReportArgs),
    /// Serve the deterministic mock backend on a loopback port.
    MockServe(MockServeArgs),
}

#[derive(Debug, Args)]
struct BalanceArgs {
    /// Source dataset (.csv, .tsv or .jsonl).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    name: String,
    /// File holding the operational definition of the construct.
    #[arg(long)]
    definition_file: PathBuf,
    /// Provenance record of the gold standard (.toml or .json).
    #[arg(long)]
    provenance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.80)]
    min_kappa: f64,
    #[arg(long, default_value_t = 0.95)]
    min_precision: f64,
}

#[derive(Debug, Subcommand)]
enum TemplateCommand {
    /// Validate a template file.
    Validate { file: PathBuf },
    /// Print a shipped template as TOML.
    Shipped { name: String },
    /// Render a template against one case text.
    Render {
        /// Template file or `shipped:<name>`.
        #[arg(long)]
        template: String,
        /// File with the case narrative; standard input if omitted.
        #[arg(long)]
        case_file: Option<PathBuf>,
    },
}

/// Settings layered over the config file and environment.
#[derive(Debug, Args, Clone, Default)]
struct GlobalFlags {
    /// Config file (TOML); defaults to $KAPPABENCH_CONFIG when set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Endpoint for configs that do not name one.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Untimed requests per config before measurement.
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue the run already in --out.
    #[arg(long)]
    resume: bool,
    /// Print the matrix and request count without sending anything.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    global: GlobalFlags,
}

#[derive(Debug, Args)]
struct ResumeArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, alias = "out")]
    run: PathBuf,
    #[command(flatten)]
    global: GlobalFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Md,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Record count for throughput projections.
    #[arg(long, default_value_t = DEFAULT_PROJECTION_RECORDS)]
    records: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Md)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct MockServeArgs {
    /// Manifests whose cases the mock should recognise.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    flip: f64,
    #[arg(long, default_value_t = 0.0)]
    malformed: f64,
    /// Mean latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    latency_mean: f64,
    /// Latency standard deviation; 0 gives a fixed delay.
    #[arg(long, default_value_t = 0.0)]
    latency_sd: f64,
    /// Prefix answers with a reasoning trace.
    #[arg(long)]
    reasoning_trace: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8089)]
    port: u16,
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> i32 {
    dispatch(std::env::args_os())
}

pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Balance(a) => balance(a),
        Command::Template(t) => template(t),
        Command::Run(a) => run(a),
        Command::Resume(a) => resume_cmd(a),
        Command::Report(a) => report(a),
        Command::MockServe(a) => mock_serve(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load_provenance(path: &Path) -> Result<ProvenanceRecord, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn balance(a: BalanceArgs) -> Result<i32, Failure> {
    let provenance = load_provenance(&a.provenance)?;
    let policy = QualityPolicy {
        min_kappa: a.min_kappa,
        min_precision: a.min_precision,
    };
    match validate_provenance(&provenance, &policy) {
        ProvenanceVerdict::Pass => {}
        ProvenanceVerdict::BelowThreshold(r) => return Err(Failure(format!("provenance below policy: {}", r.join("; ")))),
        ProvenanceVerdict::Malformed(r) => return Err(Failure(format!("provenance malformed: {}", r.join("; ")))),
    }
    let definition = std::fs::read_to_string(&a.definition_file)
        .map_err(|e| Failure(format!("{}: {e}", a.definition_file.display())))?;
    let source = read_source(&a.input)?;
    let manifest = build_balanced_benchmark(
        &source,
        &BalanceRequest {
            name: a.name,
            construct_definition: definition.trim_end().to_string(),
            per_class: a.per_class,
            seed: a.seed,
            provenance,
        },
    )?;
    save_manifest(&manifest, &a.out)?;
    eprintln!(
        "wrote {} ({} positive + {} negative cases from {} source rows)",
        a.out.display(),
        manifest.per_class_count,
        manifest.per_class_count,
        source.len()
    );
    Ok(0)
}

fn template(cmd: TemplateCommand) -> Result<i32, Failure> {
    match cmd {
        TemplateCommand::Validate { file } => {
            let t = PromptTemplate::load(&file)?;
            validate_template(&t)?;
            println!("ok: {} ({})", t.name, file.display());
            if t.reconstructed {
                eprintln!("note: template is marked reconstructed; it approximates, not reproduces, the original wording");
            }
        }
        TemplateCommand::Shipped { name } => {
            let t = resolve_template(&format!("shipped:{name}"), Path::new("."))?;
            print!("{}", t.to_toml());
        }
        TemplateCommand::Render { template, case_file } => {
            let t = resolve_template(&template, Path::new("."))?;
            let text = match case_file {
                Some(p) => std::fs::read_to_string(&p).map_err(|e| Failure(format!("{}: {e}", p.display())))?,
                None => std::io::read_to_string(std::io::stdin())?,
            };
            let r = render(&t, &text)?;
            println!("--- system ---\n{}\n--- user ---\n{}", r.system_text, r.user_text);
        }
    }
    Ok(0)
}

fn global_config(flags: &GlobalFlags) -> Result<GlobalConfig, Failure> {
    let file_path = flags
        .config
        .clone()
        .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
    let file = match file_path {
        Some(p) => ConfigLayer::from_file(&p).map_err(Failure)?,
        None => ConfigLayer::default(),
    };
    let env = ConfigLayer::from_env().map_err(Failure)?;
    let cli = ConfigLayer {
        endpoint: flags.endpoint.clone(),
        concurrency: flags.concurrency,
        warmup: flags.warmup,
        max_retries: flags.retries,
        timeout_s: flags.timeout,
        ..ConfigLayer::default()
    };
    GlobalConfig::layered([&file, &env, &cli]).map_err(Failure)
}

fn print_dry_run(plan: &RunPlan) {
    println!("plan {} (seed {}), hash {}", plan.plan_id, plan.seed, plan.content().hash());
    println!("{:<28} {:<14} {:<40} endpoint", "config", "mode", "model");
    for c in &plan.configs {
        println!(
            "{:<28} {:<14} {:<40} {}",
            c.config_id,
            c.processing_mode.to_string(),
            c.model_id,
            c.endpoint_url
        );
    }
    println!("benchmarks:");
    for b in &plan.benchmarks {
        println!("  {} ({} cases, template {})", b.name(), b.manifest.len(), b.template.name);
    }
    let warm = plan.warmup * plan.configs.len();
    println!(
        "requests: {} ({} configs x {} cases){}",
        plan.request_count(),
        plan.configs.len(),
        plan.benchmarks.iter().map(|b| b.manifest.len()).sum::<usize>(),
        if warm > 0 { format!(" plus {warm} warm-up") } else { String::new() }
    );
    println!(
        "effective config: {}",
        serde_json::to_string(&plan.effective_config).unwrap_or_default()
    );
}

fn finish(outcome: RunOutcome) -> i32 {
    for s in &outcome.summaries {
        let k = s.kappa.map_or("—".to_string(), |k| format!("{k:.4}"));
        println!(
            "{}\t{}\tkappa={}\tvalid={}\tfailed={}",
            s.config_id, s.benchmark, k, s.n_valid, s.n_failed
        );
    }
    eprintln!(
        "{}: {} new records, {} already present, {} transport failures, {} parse failures",
        outcome.run_dir.display(),
        outcome.new_records,
        outcome.skipped,
        outcome.transport_failures,
        outcome.parse_failures
    );
    if outcome.transport_failures > 0 {
        eprintln!("error: some cases could not be sent; see error_kind in results.log");
        1
    } else {
        0
    }
}

fn run(a: RunArgs) -> Result<i32, Failure> {
    let global = global_config(&a.global)?;
    let plan = load_plan(&a.plan, &global)?;
    if a.dry_run {
        print_dry_run(&plan);
        return Ok(0);
    }
    let options = ExecuteOptions {
        resume: a.resume,
        ..ExecuteOptions::default()
    };
    Ok(finish(execute(&plan, &a.out, &options)?))
}

fn resume_cmd(a: ResumeArgs) -> Result<i32, Failure> {
    let global = global_config(&a.global)?;
    let plan = load_plan(&a.plan, &global)?;
    Ok(finish(resume(&plan, &a.run, &ExecuteOptions::default())?))
}

fn report(a: ReportArgs) -> Result<i32, Failure> {
    RunLock::check_unlocked(&a.run)?;
    let opts = ReportOptions {
        records: a.records,
        ..ReportOptions::default()
    };
    let bundle = write_report_files_with(&a.run, &opts)?;
    let text = match a.format {
        ReportFormat::Md => render_report_md(&bundle, &opts),
        ReportFormat::Csv => render_table_csv(&bundle, &opts),
        ReportFormat::Svg => render_heatmap_svg(&bundle, &opts),
    };
    print!("{text}");
    Ok(0)
}

fn mock_serve(a: MockServeArgs) -> Result<i32, Failure> {
    let latency = if a.latency_sd > 0.0 {
        LatencyModel::Normal {
            mean_s: a.latency_mean,
            sd_s: a.latency_sd,
        }
    } else {
        LatencyModel::Fixed { seconds: a.latency_mean }
    };
    let spec = MockSpec {
        flip_probability: a.flip,
        malformed_probability: a.malformed,
        latency,
        reasoning_trace: a.reasoning_trace,
        seed: a.seed,
    };
    spec.validate().map_err(Failure)?;
    let manifests = a
        .manifests
        .iter()
        .map(|p| crate::corpus::load_manifest(p))
        .collect::<Result<Vec<_>, _>>()?;
    let backend = MockBackend::with_manifests(spec, &manifests);
    let server = MockServer::start(&format!("{}:{}", a.host, a.port), backend)?;
    eprintln!(
        "mock backend listening on {} ({} manifests)",
        server.base_url(),
        manifests.len()
    );
    server.join();
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["kappabench", "balance", "--seed", "1"]), 2);
        assert_eq!(dispatch(["kappabench", "frobnicate"]), 2);
        assert_eq!(dispatch(["kappabench", "report", "--run", "x", "--format", "pdf"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(dispatch(["kappabench", "--help"]), 0);
    }

    #[test]
    fn domain_errors_exit_1() {
        assert_eq!(dispatch(["kappabench", "report", "--run", "/nonexistent/run"]), 1);
        assert_eq!(dispatch(["kappabench", "template", "validate", "/nonexistent.toml"]), 1);
    }
}
