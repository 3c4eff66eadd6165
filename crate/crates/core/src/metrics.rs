//! Agreement and error statistics over per-case results.
//!
//! Undefined quantities (zero denominators, empty timing lists) are `None`
//! and render as "—"; they are never reported as 0 or NaN.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::results::CaseResult;
use crate::rng::{seeded_rng, uniform_below};

/// A run whose failure rate exceeds this fraction is marked degraded.
pub const DEGRADED_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
        }
    }

    /// Swaps which class is called positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.n())
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
///
/// Evaluated in exact integer arithmetic as
/// `(n·(tp+tn) − S) / (n² − S)` with `S = (tp+fn)(tp+fp) + (tn+fp)(tn+fn)`,
/// so the only rounding is the final division. `None` for an empty matrix,
/// and for `p_e = 1` unless agreement is also perfect.
pub fn cohen_kappa(m: &ConfusionMatrix) -> Option<f64> {
    let n = m.n() as i128;
    if n == 0 {
        return None;
    }
    let (tp, fp, tn, fn_) = (m.tp as i128, m.fp as i128, m.tn as i128, m.fn_ as i128);
    let chance = (tp + fn_) * (tp + fp) + (tn + fp) * (tn + fn_);
    let observed = n * (tp + tn);
    let denominator = n * n - chance;
    if denominator == 0 {
        return (observed == n * n).then_some(1.0);
    }
    Some((observed - chance) as f64 / denominator as f64)
}

/// TP / (TP + FN).
pub fn sensitivity(m: &ConfusionMatrix) -> Option<f64> {
    ratio(m.tp, m.tp + m.fn_)
}

/// TN / (TN + FP).
pub fn specificity(m: &ConfusionMatrix) -> Option<f64> {
    ratio(m.tn, m.tn + m.fp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    Poor,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl AgreementBand {
    pub fn as_str(self) -> &'static str {
        match self {
            AgreementBand::Poor => "poor",
            AgreementBand::Moderate => "moderate",
            AgreementBand::Substantial => "substantial",
            AgreementBand::AlmostPerfect => "almost_perfect",
        }
    }
}

impl fmt::Display for AgreementBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open bands: `< 0.41` poor, `[0.41, 0.61)` moderate,
/// `[0.61, 0.80)` substantial, `>= 0.80` almost perfect. NaN is poor.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn band(kappa: f64) -> AgreementBand {
    if !(kappa >= 0.41) {
        AgreementBand::Poor
    } else if kappa < 0.61 {
        AgreementBand::Moderate
    } else if kappa < 0.80 {
        AgreementBand::Substantial
    } else {
        AgreementBand::AlmostPerfect
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: Option<f64>,
}

pub fn timing_stats(durations: &[f64]) -> TimingStats {
    let n = durations.len();
    if n == 0 {
        return TimingStats::default();
    }
    let mean = durations.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| {
        let ss: f64 = durations.iter().map(|d| (d - mean) * (d - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    TimingStats { mean: Some(mean), sd }
}

/// Sequential processing time in hours for `n_records` at `mean_latency_s` each.
pub fn project_throughput(mean_latency_s: f64, n_records: u64) -> f64 {
    mean_latency_s * n_records as f64 / 3600.0
}

/// A throughput projection together with the run its latency came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputProjection {
    pub config_id: String,
    pub mean_latency_s: f64,
    pub n_records: u64,
    pub hours: f64,
    pub latency_source: String,
}

impl ThroughputProjection {
    pub fn new(config_id: &str, mean_latency_s: f64, n_records: u64, latency_source: impl Into<String>) -> Self {
        Self {
            config_id: config_id.to_string(),
            mean_latency_s,
            n_records,
            hours: project_throughput(mean_latency_s, n_records),
            latency_source: latency_source.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("results mix cells: expected {expected:?}, found {found:?}")]
    MixedCells {
        expected: (String, String),
        found: (String, String),
    },
}

/// Counts folded from one (config, benchmark) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulation {
    pub cell: Option<(String, String)>,
    pub matrix: ConfusionMatrix,
    /// Latencies of valid cases, sorted ascending (order independent).
    pub durations: Vec<f64>,
    pub n_failed: u64,
    pub failures_by_kind: BTreeMap<String, u64>,
    /// `(gold, predicted)` of valid cases, sorted; used for resampling.
    pub pairs: Vec<(Label, Label)>,
}

impl Accumulation {
    pub fn n_valid(&self) -> u64 {
        self.matrix.n()
    }
}

/// Folds results of a single (config, benchmark) cell. Failed cases only
/// add to the failure tally.
pub fn accumulate<'a>(results: impl IntoIterator<Item = &'a CaseResult>) -> Result<Accumulation, MetricsError> {
    let mut acc = Accumulation::default();
    for r in results {
        let cell = (r.config_id.clone(), r.benchmark.clone());
        match &acc.cell {
            None => acc.cell = Some(cell),
            Some(expected) if *expected != cell => {
                return Err(MetricsError::MixedCells {
                    expected: expected.clone(),
                    found: cell,
                })
            }
            Some(_) => {}
        }
        match (r.parsed_label, r.error_kind) {
            (Some(predicted), _) => {
                acc.matrix.record(r.gold_label, predicted);
                acc.durations.push(r.latency_seconds);
                acc.pairs.push((r.gold_label, predicted));
            }
            (None, kind) => {
                acc.n_failed += 1;
                let key = kind.map(|k| k.as_str()).unwrap_or("unknown");
                *acc.failures_by_kind.entry(key.to_string()).or_default() += 1;
            }
        }
    }
    acc.durations.sort_by(f64::total_cmp);
    acc.pairs.sort();
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStatus {
    Ok,
    /// More than 2% of cases failed.
    Degraded,
    NoValidResults,
}

/// Percentile bootstrap interval for kappa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Resamples cases with replacement `replicates` times and returns the
/// 2.5th / 97.5th percentiles of kappa. Replicates with undefined kappa
/// are skipped; `None` if none remain.
pub fn bootstrap_kappa_ci(pairs: &[(Label, Label)], replicates: usize, seed: u64) -> Option<BootstrapCi> {
    if pairs.is_empty() || replicates == 0 {
        return None;
    }
    let mut rng = seeded_rng(seed);
    let mut kappas = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut m = ConfusionMatrix::default();
        for _ in 0..pairs.len() {
            let (gold, predicted) = pairs[uniform_below(&mut rng, pairs.len() as u64) as usize];
            m.record(gold, predicted);
        }
        if let Some(k) = cohen_kappa(&m) {
            kappas.push(k);
        }
    }
    if kappas.is_empty() {
        return None;
    }
    kappas.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let idx = (q * (kappas.len() - 1) as f64).round() as usize;
        kappas[idx]
    };
    Some(BootstrapCi {
        lower: at(0.025),
        upper: at(0.975),
        level: 0.95,
        replicates,
        seed,
    })
}

/// Everything reported for one (config, benchmark) cell. Serialized as
/// the `metrics.<config>.<benchmark>` file in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub config_id: String,
    pub benchmark: String,
    pub kappa: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub band: Option<AgreementBand>,
    pub time_mean_s: Option<f64>,
    pub time_sd_s: Option<f64>,
    pub n_valid: u64,
    pub n_failed: u64,
    pub failure_rate: Option<f64>,
    pub status: SummaryStatus,
    pub matrix: ConfusionMatrix,
    #[serde(default)]
    pub failures_by_kind: BTreeMap<String, u64>,
    /// Set when requests overlapped (concurrency > 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_note: Option<String>,
    /// Optional extension, not part of the standard column set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_bootstrap_ci: Option<BootstrapCi>,
}

impl MetricsSummary {
    pub fn from_accumulation(config_id: &str, benchmark: &str, acc: &Accumulation) -> Self {
        let m = &acc.matrix;
        let kappa = cohen_kappa(m);
        let timing = timing_stats(&acc.durations);
        let total = acc.n_valid() + acc.n_failed;
        let failure_rate = ratio(acc.n_failed, total);
        let status = if acc.n_valid() == 0 {
            SummaryStatus::NoValidResults
        } else if failure_rate.is_some_and(|r| r > DEGRADED_FAILURE_RATE) {
            SummaryStatus::Degraded
        } else {
            SummaryStatus::Ok
        };
        Self {
            config_id: config_id.to_string(),
            benchmark: benchmark.to_string(),
            kappa,
            sensitivity: sensitivity(m),
            specificity: specificity(m),
            accuracy: m.accuracy(),
            band: kappa.map(band),
            time_mean_s: timing.mean,
            time_sd_s: timing.sd,
            n_valid: acc.n_valid(),
            n_failed: acc.n_failed,
            failure_rate,
            status,
            matrix: *m,
            failures_by_kind: acc.failures_by_kind.clone(),
            timing_note: None,
            kappa_bootstrap_ci: None,
        }
    }

    pub fn summarize<'a>(
        config_id: &str,
        benchmark: &str,
        results: impl IntoIterator<Item = &'a CaseResult>,
    ) -> Result<Self, MetricsError> {
        let acc = accumulate(results)?;
        if let Some((c, b)) = &acc.cell {
            if c != config_id || b != benchmark {
                return Err(MetricsError::MixedCells {
                    expected: (config_id.to_string(), benchmark.to_string()),
                    found: (c.clone(), b.clone()),
                });
            }
        }
        Ok(Self::from_accumulation(config_id, benchmark, &acc))
    }
}
