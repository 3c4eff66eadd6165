//! Tables, heatmap and throughput projections rendered from the metrics
//! files of a run directory.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::gateway::{ModelConfig, ProcessingMode};
use crate::metrics::{project_throughput, MetricsSummary, SummaryStatus};
use crate::plan::PlanSnapshot;
use crate::run::{metrics_path, snapshot_path, RunError};

/// Record count used for projections when none is given.
pub const DEFAULT_PROJECTION_RECORDS: u64 = 250_000;
pub const UNDEFINED: &str = "—";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {message}")]
    Metrics { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub decimals: usize,
    /// Rows with κ at or above this are emphasized.
    pub bold_threshold: f64,
    /// Record count for the throughput projection.
    pub records: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            decimals: 2,
            bold_threshold: 0.80,
            records: DEFAULT_PROJECTION_RECORDS,
        }
    }
}

/// Rounds half away from zero on the shortest decimal representation of
/// `x`, so 0.125 gives "0.13" and 2.675 gives "2.68" (not the binary
/// neighbours' answers).
pub fn round_half_away(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return UNDEFINED.to_string();
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let int_len = int_part.len();
    let mut frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    frac.resize(frac.len().max(decimals), 0);
    digits.truncate(int_len);
    digits.extend_from_slice(&frac[..decimals]);
    let round_up = frac.get(decimals).is_some_and(|d| *d >= 5);
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - decimals;
    let mut out = String::new();
    if x < 0.0 && digits.iter().any(|d| *d != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if decimals > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    out
}

fn fmt_opt(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), |v| round_half_away(v, decimals))
}

/// Everything the report needs: configs and benchmarks from the snapshot
/// and the metrics files present in the run directory.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub plan_id: String,
    pub plan_hash: String,
    pub configs: Vec<ModelConfig>,
    pub benchmarks: Vec<String>,
    pub grid: BTreeMap<(String, String), MetricsSummary>,
}

impl ReportBundle {
    pub fn load(run_dir: &Path) -> Result<ReportBundle, ReportError> {
        let snap_path = snapshot_path(run_dir);
        if !snap_path.exists() {
            return Err(RunError::NotARun(run_dir.display().to_string()).into());
        }
        let snapshot = PlanSnapshot::load(&snap_path).map_err(RunError::from)?;
        let mut bundle = ReportBundle::from_snapshot(&snapshot);
        for c in &snapshot.content.configs {
            for b in &snapshot.content.benchmarks {
                let path = metrics_path(run_dir, &c.config_id, &b.name);
                if !path.exists() {
                    continue;
                }
                let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let summary: MetricsSummary = serde_json::from_str(&text).map_err(|e| ReportError::Metrics {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                bundle.grid.insert((c.config_id.clone(), b.name.clone()), summary);
            }
        }
        Ok(bundle)
    }

    pub fn from_snapshot(snapshot: &PlanSnapshot) -> ReportBundle {
        ReportBundle {
            plan_id: snapshot.content.plan_id.clone(),
            plan_hash: snapshot.plan_hash.clone(),
            configs: snapshot.content.configs.clone(),
            benchmarks: snapshot.content.benchmarks.iter().map(|b| b.name.clone()).collect(),
            grid: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, summary: MetricsSummary) {
        self.grid
            .insert((summary.config_id.clone(), summary.benchmark.clone()), summary);
    }

    pub fn get(&self, config_id: &str, benchmark: &str) -> Option<&MetricsSummary> {
        self.grid.get(&(config_id.to_string(), benchmark.to_string()))
    }

    /// Configs in heatmap order: size, then mode, then id.
    pub fn ordered_configs(&self) -> Vec<&ModelConfig> {
        let mut v: Vec<&ModelConfig> = self.configs.iter().collect();
        v.sort_by(|a, b| config_order(a, b));
        v
    }
}

fn mode_rank(mode: ProcessingMode) -> u8 {
    match mode {
        ProcessingMode::Standard => 0,
        ProcessingMode::Reasoning => 1,
        ProcessingMode::EffortLow => 2,
        ProcessingMode::EffortMedium => 3,
        ProcessingMode::EffortHigh => 4,
    }
}

/// Smaller models first (unknown size last), standard before reasoning.
pub fn config_order(a: &ModelConfig, b: &ModelConfig) -> Ordering {
    let size = |c: &ModelConfig| c.size_billions().unwrap_or(f64::INFINITY);
    size(a)
        .total_cmp(&size(b))
        .then(mode_rank(a.processing_mode).cmp(&mode_rank(b.processing_mode)))
        .then_with(|| a.config_id.cmp(&b.config_id))
}

/// One line of a per-benchmark table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub configuration: String,
    pub summary: MetricsSummary,
}

fn time_cell(s: &MetricsSummary, d: usize) -> String {
    match (s.time_mean_s, s.time_sd_s) {
        (Some(m), Some(sd)) => format!("{} ({})", round_half_away(m, d), round_half_away(sd, d)),
        (Some(m), None) => format!("{} ({UNDEFINED})", round_half_away(m, d)),
        _ => UNDEFINED.to_string(),
    }
}

pub fn is_emphasized(s: &MetricsSummary, opts: &ReportOptions) -> bool {
    s.kappa.is_some_and(|k| k >= opts.bold_threshold)
}

/// Markdown table: configuration, κ, sensitivity, specificity, mean time (SD).
pub fn render_table(benchmark: &str, rows: &[TableRow], opts: &ReportOptions) -> String {
    let d = opts.decimals;
    let mut out = format!("### {benchmark}\n\n");
    out.push_str("| Configuration | κ | Sensitivity | Specificity | Mean time, s (SD) |\n");
    out.push_str("|---|---:|---:|---:|---:|\n");
    for row in rows {
        let s = &row.summary;
        let mut cells = [
            row.configuration.clone(),
            fmt_opt(s.kappa, d),
            fmt_opt(s.sensitivity, d),
            fmt_opt(s.specificity, d),
            time_cell(s, d),
        ];
        if is_emphasized(s, opts) {
            for c in &mut cells {
                *c = format!("**{c}**");
            }
        }
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    let flagged: Vec<&TableRow> = rows.iter().filter(|r| r.summary.status != SummaryStatus::Ok).collect();
    if !flagged.is_empty() {
        out.push('\n');
        for r in flagged {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "- {}: {} ({} valid, {} failed)",
                r.configuration,
                status_str(s.status),
                s.n_valid,
                s.n_failed
            );
        }
    }
    out.push_str(&format!(
        "\nBold rows: κ ≥ {}. {UNDEFINED} marks a value that is undefined for the cell.\n",
        round_half_away(opts.bold_threshold, d)
    ));
    out
}

fn status_str(s: SummaryStatus) -> &'static str {
    match s {
        SummaryStatus::Ok => "ok",
        SummaryStatus::Degraded => "degraded (more than 2% of cases failed)",
        SummaryStatus::NoValidResults => "no valid results",
    }
}

/// Delimited form of the per-benchmark tables, one row per cell. Undefined
/// values are empty fields.
pub fn render_table_csv(bundle: &ReportBundle, opts: &ReportOptions) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "benchmark",
        "configuration",
        "config_id",
        "kappa",
        "sensitivity",
        "specificity",
        "time_mean_s",
        "time_sd_s",
        "band",
        "n_valid",
        "n_failed",
        "status",
    ])
    .expect("in-memory write");
    let blank = |x: Option<f64>| x.map(|v| round_half_away(v, opts.decimals)).unwrap_or_default();
    for b in &bundle.benchmarks {
        for c in bundle.ordered_configs() {
            let Some(s) = bundle.get(&c.config_id, b) else { continue };
            w.write_record([
                b.clone(),
                c.display_name().to_string(),
                c.config_id.clone(),
                blank(s.kappa),
                blank(s.sensitivity),
                blank(s.specificity),
                blank(s.time_mean_s),
                blank(s.time_sd_s),
                s.band.map(|x| x.as_str().to_string()).unwrap_or_default(),
                s.n_valid.to_string(),
                s.n_failed.to_string(),
                serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// The κ grid: rows in [`config_order`], columns in benchmark order,
/// `None` where the cell is missing or κ is undefined.
pub fn heatmap_grid(bundle: &ReportBundle) -> Vec<(String, Vec<Option<f64>>)> {
    bundle
        .ordered_configs()
        .into_iter()
        .map(|c| {
            let row = bundle
                .benchmarks
                .iter()
                .map(|b| bundle.get(&c.config_id, b).and_then(|s| s.kappa))
                .collect();
            (c.display_name().to_string(), row)
        })
        .collect()
}

pub fn render_heatmap_csv(bundle: &ReportBundle, opts: &ReportOptions) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["configuration".to_string()];
    header.extend(bundle.benchmarks.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (name, row) in heatmap_grid(bundle) {
        let mut rec = vec![name];
        rec.extend(row.into_iter().map(|k| k.map(|v| round_half_away(v, opts.decimals)).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Grey level for a κ value: 245 (light) at κ ≤ 0 down to 30 (dark) at κ = 1.
pub fn shade(kappa: f64) -> u8 {
    let k = if kappa.is_nan() { 0.0 } else { kappa.clamp(0.0, 1.0) };
    (245.0 - 215.0 * k).round() as u8
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG heatmap; blank cells are drawn as dashed outlines.
pub fn render_heatmap_svg(bundle: &ReportBundle, opts: &ReportOptions) -> String {
    let grid = heatmap_grid(bundle);
    let (cell_w, cell_h) = (110.0, 28.0);
    let label_w = 12.0 * grid.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(10).max(10) as f64 * 0.6 + 16.0;
    let top = 40.0;
    let width = label_w + cell_w * bundle.benchmarks.len().max(1) as f64 + 10.0;
    let has_blank = grid.iter().any(|(_, r)| r.iter().any(Option::is_none));
    let height = top + cell_h * grid.len() as f64 + if has_blank { 40.0 } else { 16.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (j, b) in bundle.benchmarks.iter().enumerate() {
        let x = label_w + cell_w * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, top - 12.0, xml_escape(b));
    }
    for (i, (name, row)) in grid.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            label_w - 8.0,
            y + cell_h * 0.65,
            xml_escape(name)
        );
        for (j, k) in row.iter().enumerate() {
            let x = label_w + cell_w * j as f64;
            match k {
                Some(k) => {
                    let g = shade(*k);
                    let fg = if g < 128 { "white" } else { "black" };
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w:.1}" height="{cell_h:.1}" fill="rgb({g},{g},{g})" stroke="white"/>"#
                    );
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{fg}">{}</text>"#,
                        x + cell_w / 2.0,
                        y + cell_h * 0.65,
                        round_half_away(*k, opts.decimals)
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="rgb(160,160,160)" stroke-dasharray="4 3"/>"#,
                        x + 1.0,
                        y + 1.0,
                        cell_w - 2.0,
                        cell_h - 2.0
                    );
                }
            }
        }
    }
    if has_blank {
        let _ = writeln!(
            s,
            r#"<text x="8" y="{:.1}" font-size="11">Blank cells: no metrics, or κ undefined for the cell.</text>"#,
            height - 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Markdown form of the heatmap matrix.
fn render_heatmap_md(bundle: &ReportBundle, opts: &ReportOptions) -> String {
    let grid = heatmap_grid(bundle);
    let mut out = String::from("| Configuration |");
    for b in &bundle.benchmarks {
        let _ = write!(out, " {b} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(bundle.benchmarks.len()));
    out.push('\n');
    for (name, row) in &grid {
        let _ = write!(out, "| {name} |");
        for k in row {
            match k {
                Some(k) => {
                    let _ = write!(out, " {} |", round_half_away(*k, opts.decimals));
                }
                None => out.push_str("  |"),
            }
        }
        out.push('\n');
    }
    if grid.iter().any(|(_, r)| r.iter().any(Option::is_none)) {
        out.push_str("\nBlank cells: no metrics, or κ undefined for the cell.\n");
    }
    out
}

/// Mean latency per config and its projection to `records` cases.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub configuration: String,
    pub mean_latency_s: f64,
    pub projected_hours: f64,
}

/// Per-config mean latency pooled over benchmarks, weighted by valid cases.
pub fn pooled_latencies(bundle: &ReportBundle) -> Vec<(String, f64)> {
    bundle
        .ordered_configs()
        .into_iter()
        .filter_map(|c| {
            let (mut total, mut n) = (0.0, 0u64);
            for b in &bundle.benchmarks {
                if let Some(s) = bundle.get(&c.config_id, b) {
                    if let Some(m) = s.time_mean_s {
                        total += m * s.n_valid as f64;
                        n += s.n_valid;
                    }
                }
            }
            (n > 0).then(|| (c.display_name().to_string(), total / n as f64))
        })
        .collect()
}

pub fn efficiency_rows(latencies: &[(String, f64)], records: u64) -> Vec<EfficiencyRow> {
    latencies
        .iter()
        .map(|(name, mean)| EfficiencyRow {
            configuration: name.clone(),
            mean_latency_s: *mean,
            projected_hours: project_throughput(*mean, records),
        })
        .collect()
}

/// Projection table followed by the pairwise differences in hours.
pub fn render_efficiency(latencies: &[(String, f64)], records: u64, opts: &ReportOptions) -> String {
    let d = opts.decimals;
    let rows = efficiency_rows(latencies, records);
    let mut out = format!("Projected processing time for {records} records at the measured mean latency.\n\n");
    out.push_str("| Configuration | Mean s/case | Projected hours |\n|---|---:|---:|\n");
    for r in &rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            r.configuration,
            round_half_away(r.mean_latency_s, d),
            round_half_away(r.projected_hours, 1)
        );
    }
    if rows.len() > 1 {
        out.push_str("\n| Configuration A | Configuration B | Hours saved by A |\n|---|---|---:|\n");
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} |",
                    a.configuration,
                    b.configuration,
                    round_half_away(b.projected_hours - a.projected_hours, 1)
                );
            }
        }
    }
    out
}

pub fn render_report_md(bundle: &ReportBundle, opts: &ReportOptions) -> String {
    let mut out = format!("# Run report: {}\n\nPlan hash `{}`.\n\n## Results by benchmark\n\n", bundle.plan_id, bundle.plan_hash);
    for b in &bundle.benchmarks {
        let rows: Vec<TableRow> = bundle
            .ordered_configs()
            .into_iter()
            .filter_map(|c| {
                bundle.get(&c.config_id, b).map(|s| TableRow {
                    configuration: c.display_name().to_string(),
                    summary: s.clone(),
                })
            })
            .collect();
        if rows.is_empty() {
            let _ = writeln!(out, "### {b}\n\nNo metrics yet.\n");
            continue;
        }
        out.push_str(&render_table(b, &rows, opts));
        out.push('\n');
    }
    out.push_str("## κ by configuration and benchmark\n\n");
    out.push_str(&render_heatmap_md(bundle, opts));
    out.push_str("\n## Throughput\n\n");
    let lat = pooled_latencies(bundle);
    if lat.is_empty() {
        out.push_str("No timing data.\n");
    } else {
        out.push_str(&render_efficiency(&lat, opts.records, opts));
    }
    let notes: Vec<&String> = bundle.grid.values().filter_map(|s| s.timing_note.as_ref()).collect();
    if let Some(n) = notes.first() {
        let _ = writeln!(out, "\nTiming note: {n}.");
    }
    out
}

/// Writes report.md, heatmap.csv and heatmap.svg into `run_dir`.
pub fn write_report_files(run_dir: &Path) -> Result<ReportBundle, ReportError> {
    write_report_files_with(run_dir, &ReportOptions::default())
}

pub fn write_report_files_with(run_dir: &Path, opts: &ReportOptions) -> Result<ReportBundle, ReportError> {
    let bundle = ReportBundle::load(run_dir)?;
    let files = [
        ("report.md", render_report_md(&bundle, opts)),
        ("heatmap.csv", render_heatmap_csv(&bundle, opts)),
        ("heatmap.svg", render_heatmap_svg(&bundle, opts)),
    ];
    for (name, text) in files {
        let path = run_dir.join(name);
        fs::write(&path, text).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(bundle)
}
