//! Run a two-config, two-benchmark plan against the in-process mock
//! backend, loaded from a TOML plan file.
//!
//! cargo run --example mock_run

use kappabench::config::GlobalConfig;
use kappabench::corpus::{build_balanced_benchmark, save_manifest, BalanceRequest, Label, LabeledCase, ProvenanceRecord};
use kappabench::plan::load_plan;
use kappabench::run::{execute, ExecuteOptions};

const PLAN: &str = r#"
plan_id = "mock-demo"
seed = 2024

[mock]
flip_probability = 0.08
malformed_probability = 0.01
reasoning_trace = true
seed = 1

[[benchmarks]]
manifest = "srp.kb"
template = "shipped:substance_related_problems"

[[benchmarks]]
manifest = "fw.kb"
template = "shipped:firearms"

[[configs]]
config_id = "demo-4b-s"
label = "Demo-4B (S)"
endpoint_url = "mock://"
model_id = "demo-4b"
processing_mode = "standard"
mode_adapter = "think-toggle"

[[configs]]
config_id = "demo-4b-r"
label = "Demo-4B (R)"
endpoint_url = "mock://"
model_id = "demo-4b"
processing_mode = "reasoning"
mode_adapter = "think-toggle"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    for name in ["srp", "fw"] {
        let cases: Vec<_> = (0..300)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Positive } else { Label::Negative };
                LabeledCase::new(format!("{name}-{i}"), format!("{name} summary number {i}."), label)
            })
            .collect();
        let manifest = build_balanced_benchmark(
            &cases,
            &BalanceRequest {
                name: name.into(),
                construct_definition: format!("{name} construct"),
                per_class: 100,
                seed: 7,
                provenance: ProvenanceRecord::manual_coding(0.85, 2018, 2020),
            },
        )?;
        save_manifest(&manifest, &dir.path().join(format!("{name}.kb")))?;
    }
    let plan_path = dir.path().join("plan.kb");
    std::fs::write(&plan_path, PLAN)?;

    let plan = load_plan(&plan_path, &GlobalConfig::default())?;
    println!("{} requests planned", plan.request_count());
    let run_dir = dir.path().join("run");
    let outcome = execute(&plan, &run_dir, &ExecuteOptions::default())?;
    for s in &outcome.summaries {
        println!(
            "{:<10} {:<4} kappa {:.3} ({}) valid {} failed {} {:?}",
            s.config_id,
            s.benchmark,
            s.kappa.unwrap_or(f64::NAN),
            s.band.map(|b| b.as_str()).unwrap_or("-"),
            s.n_valid,
            s.n_failed,
            s.failures_by_kind
        );
    }
    println!("run directory: {:?}", std::fs::read_dir(&run_dir)?.map(|e| e.unwrap().file_name()).collect::<Vec<_>>());
    Ok(())
}
