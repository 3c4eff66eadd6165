//! Gate a gold standard on its provenance, then draw a seeded,
//! class-balanced benchmark from a labeled source file.
//!
//! cargo run --example balance_benchmark

use kappabench::corpus::{
    build_balanced_benchmark, load_manifest, read_source, save_manifest, validate_provenance, BalanceRequest,
    ProvenanceRecord, QualityPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let source = dir.path().join("cases.csv");
    let mut rows = String::from("case_id,label,text,group.county\n");
    for i in 0..400 {
        let label = if i % 5 == 0 { "positive" } else { "negative" };
        rows.push_str(&format!("c{i:04},{label},\"Narrative {i}: home visit completed.\",county-{}\n", i % 3));
    }
    std::fs::write(&source, rows)?;

    let provenance = ProvenanceRecord::manual_coding(0.84, 2016, 2019);
    let verdict = validate_provenance(&provenance, &QualityPolicy::default());
    println!("provenance verdict: {verdict:?}");

    let cases = read_source(&source)?;
    let manifest = build_balanced_benchmark(
        &cases,
        &BalanceRequest {
            name: "demo".into(),
            construct_definition: "Any mention of the construct in the narrative.".into(),
            per_class: 50,
            seed: 42,
            provenance,
        },
    )?;
    let path = dir.path().join("demo.kb");
    save_manifest(&manifest, &path)?;
    let reloaded = load_manifest(&path)?;
    assert_eq!(reloaded, manifest);
    println!(
        "{} source rows -> {} cases {:?}; first three: {:?}",
        cases.len(),
        manifest.len(),
        manifest.class_counts(),
        manifest.cases.iter().take(3).map(|c| &c.case_id).collect::<Vec<_>>()
    );

    // too few positives for the request: the error names the class and counts
    let err = build_balanced_benchmark(
        &cases,
        &BalanceRequest {
            name: "too-big".into(),
            construct_definition: String::new(),
            per_class: 100,
            seed: 42,
            provenance: ProvenanceRecord::rule_based(0.96, 2010, 2020),
        },
    )
    .unwrap_err();
    println!("shortfall: {err}");
    Ok(())
}
