//! Interrupt a run part-way, resume it, and check the result matches an
//! uninterrupted run.
//!
//! cargo run --example resume_run

use kappabench::corpus::{build_balanced_benchmark, BalanceRequest, Label, LabeledCase, ProvenanceRecord};
use kappabench::gateway::{ModeAdapter, ModelConfig, ProcessingMode};
use kappabench::mock::MockSpec;
use kappabench::plan::{PlannedBenchmark, RunPlan};
use kappabench::prompt::{PromptTemplate, ShippedConstruct};
use kappabench::run::{execute, resume, ExecuteOptions, RunError, RunState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: Vec<_> = (0..500)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            LabeledCase::new(format!("case-{i:03}"), format!("Summary {i}."), label)
        })
        .collect();
    let manifest = build_balanced_benchmark(
        &cases,
        &BalanceRequest {
            name: "opioids".into(),
            construct_definition: "opioid use".into(),
            per_class: 250,
            seed: 3,
            provenance: ProvenanceRecord::rule_based(0.96, 2015, 2020),
        },
    )?;
    let mut plan = RunPlan::new("resume-demo", 11);
    plan.configs = vec![ModelConfig::new("m-8b-s", "mock://", "m-8b", ProcessingMode::Standard, ModeAdapter::None)];
    plan.benchmarks = vec![PlannedBenchmark {
        manifest,
        template: PromptTemplate::shipped(ShippedConstruct::Opioids),
    }];
    plan.mock = Some(MockSpec {
        flip_probability: 0.1,
        seed: 5,
        ..MockSpec::default()
    });

    let dir = tempfile::tempdir()?;
    let interrupted = execute(
        &plan,
        dir.path(),
        &ExecuteOptions {
            stop_after: Some(300),
            ..ExecuteOptions::default()
        },
    )?;
    println!("first pass wrote {} records (interrupted: {})", interrupted.new_records, interrupted.interrupted);
    println!("log holds {} completed cases", RunState::load(dir.path())?.completed.len());

    // starting over in the same directory is refused
    match execute(&plan, dir.path(), &ExecuteOptions::default()) {
        Err(e @ RunError::AlreadyExists(_)) => println!("refused: {e}"),
        other => println!("unexpected: {other:?}"),
    }

    let resumed = resume(&plan, dir.path(), &ExecuteOptions::default())?;
    println!("resume wrote {} more, skipped {}", resumed.new_records, resumed.skipped);

    let reference = tempfile::tempdir()?;
    let whole = execute(&plan, reference.path(), &ExecuteOptions::default())?;
    println!(
        "kappa after resume {:?}, uninterrupted {:?}",
        resumed.summaries[0].kappa, whole.summaries[0].kappa
    );
    assert_eq!(resumed.summaries[0].matrix, whole.summaries[0].matrix);

    let mut changed = plan.clone();
    changed.benchmarks[0].template.task_instruction.push_str(" Be concise.");
    if let Err(e) = resume(&changed, dir.path(), &ExecuteOptions::default()) {
        println!("edited template: {e}");
    }
    Ok(())
}
