//! Run a small matrix on the mock and render the report: per-benchmark
//! tables, the kappa heatmap (CSV and SVG) and throughput projections.
//!
//! cargo run --example report_heatmap [output-dir]

use kappabench::corpus::{build_balanced_benchmark, BalanceRequest, Label, LabeledCase, ProvenanceRecord};
use kappabench::gateway::{ModeAdapter, ModelConfig, ProcessingMode};
use kappabench::mock::{LatencyModel, MockSpec};
use kappabench::plan::{PlannedBenchmark, RunPlan};
use kappabench::prompt::{PromptTemplate, ShippedConstruct};
use kappabench::report::{render_heatmap_csv, write_report_files_with, ReportOptions};
use kappabench::run::{execute, ExecuteOptions};

fn benchmark(construct: ShippedConstruct, name: &str) -> PlannedBenchmark {
    let cases: Vec<_> = (0..120)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            LabeledCase::new(format!("{name}-{i}"), format!("{name}: narrative {i}."), label)
        })
        .collect();
    let manifest = build_balanced_benchmark(
        &cases,
        &BalanceRequest {
            name: name.into(),
            construct_definition: name.into(),
            per_class: 50,
            seed: 1,
            provenance: ProvenanceRecord::manual_coding(0.82, 2017, 2019),
        },
    )
    .unwrap();
    PlannedBenchmark {
        manifest,
        template: PromptTemplate::shipped(construct),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut plan = RunPlan::new("report-demo", 9);
    for (id, mode) in [
        ("demo-1.7b-s", ProcessingMode::Standard),
        ("demo-1.7b-r", ProcessingMode::Reasoning),
        ("demo-8b-s", ProcessingMode::Standard),
    ] {
        plan.configs.push(ModelConfig::new(id, "mock://", id, mode, ModeAdapter::ThinkToggle));
    }
    let mut effort = ModelConfig::new("oss-20b-high", "mock://", "oss-20b", ProcessingMode::EffortHigh, ModeAdapter::EffortField);
    effort.label = Some("oss-20b High".into());
    plan.configs.push(effort);
    plan.benchmarks = vec![
        benchmark(ShippedConstruct::SubstanceRelatedProblems, "SRP"),
        benchmark(ShippedConstruct::DomesticViolence, "DV"),
    ];
    plan.mock = Some(MockSpec {
        flip_probability: 0.1,
        latency: LatencyModel::Fixed { seconds: 0.002 },
        seed: 4,
        ..MockSpec::default()
    });

    let out_dir = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => tempfile::tempdir()?.keep(),
    };
    execute(&plan, &out_dir, &ExecuteOptions { skip_report: true, ..ExecuteOptions::default() })?;
    let opts = ReportOptions {
        records: 10_000,
        ..ReportOptions::default()
    };
    let bundle = write_report_files_with(&out_dir, &opts)?;
    print!("{}", render_heatmap_csv(&bundle, &opts));
    println!("report.md, heatmap.csv and heatmap.svg written to {}", out_dir.display());
    Ok(())
}
