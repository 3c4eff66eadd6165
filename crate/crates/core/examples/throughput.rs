//! Project per-case latency onto large record volumes and compare configs.
//!
//! cargo run --example throughput

use kappabench::metrics::{project_throughput, ThroughputProjection};
use kappabench::report::{render_efficiency, ReportOptions};

fn main() {
    println!("4.2 s x 250000 records = {:.1} h", project_throughput(4.2, 250_000));
    println!("4.0 s x 1000 records = {:.2} h", project_throughput(4.0, 1_000));
    let p = ThroughputProjection::new("small-reasoning", 3.2, 250_000, "measured mean");
    println!("{p:?}");
    let latencies = vec![
        ("small standard".to_string(), 0.3),
        ("small reasoning".to_string(), 3.2),
        ("large reasoning".to_string(), 12.2),
    ];
    print!("{}", render_efficiency(&latencies, 250_000, &ReportOptions::default()));
}
