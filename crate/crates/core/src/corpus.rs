//! Benchmark corpus: source ingestion, provenance gating and seeded
//! class-balanced manifest construction.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{fisher_yates, seeded_rng};

pub const MANIFEST_SCHEMA_VERSION: &str = "kappabench.manifest/1";

/// Binary gold or predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// Normalizes the accepted source tokens: positive/negative, 1/0, true/false.
    pub fn from_token(token: &str) -> Option<Label> {
        match token.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" | "true" => Some(Label::Positive),
            "negative" | "0" | "false" => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub case_id: String,
    /// Stored verbatim, never normalized.
    pub text: String,
    pub gold_label: Label,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_tags: BTreeMap<String, String>,
}

impl LabeledCase {
    pub fn new(case_id: impl Into<String>, text: impl Into<String>, gold_label: Label) -> Self {
        Self {
            case_id: case_id.into(),
            text: text.into(),
            gold_label,
            group_tags: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMethod {
    ManualCoding,
    RuleBased,
}

/// Inclusive range of years during which the gold labels were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub from: u16,
    pub to: u16,
}

/// How the gold standard behind a benchmark was validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub validation_method: ValidationMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability_kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documented_precision: Option<f64>,
    pub validation_period: YearRange,
    #[serde(default)]
    pub description: String,
}

impl ProvenanceRecord {
    pub fn manual_coding(kappa: f64, from: u16, to: u16) -> Self {
        Self {
            validation_method: ValidationMethod::ManualCoding,
            reliability_kappa: Some(kappa),
            documented_precision: None,
            validation_period: YearRange { from, to },
            description: String::new(),
        }
    }

    pub fn rule_based(precision: f64, from: u16, to: u16) -> Self {
        Self {
            validation_method: ValidationMethod::RuleBased,
            reliability_kappa: None,
            documented_precision: Some(precision),
            validation_period: YearRange { from, to },
            description: String::new(),
        }
    }

    /// Structural problems: missing method-specific fields or out-of-range values.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self.validation_method {
            ValidationMethod::ManualCoding if self.reliability_kappa.is_none() => {
                problems.push("manual_coding requires reliability_kappa".to_string())
            }
            ValidationMethod::RuleBased if self.documented_precision.is_none() => {
                problems.push("rule_based requires documented_precision".to_string())
            }
            _ => {}
        }
        if let Some(k) = self.reliability_kappa {
            if !(-1.0..=1.0).contains(&k) {
                problems.push(format!("reliability_kappa {k} outside [-1, 1]"));
            }
        }
        if let Some(p) = self.documented_precision {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("documented_precision {p} outside [0, 1]"));
            }
        }
        if self.validation_period.from > self.validation_period.to {
            problems.push(format!(
                "validation_period {}-{} is reversed",
                self.validation_period.from, self.validation_period.to
            ));
        }
        problems
    }
}

/// Thresholds a gold standard has to clear before it may back a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityPolicy {
    pub min_kappa: f64,
    pub min_precision: f64,
}

impl Default for QualityPolicy {
    fn default() -> Self {
        Self {
            min_kappa: 0.80,
            min_precision: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProvenanceVerdict {
    Pass,
    /// Well-formed, but reliability or precision is below policy.
    BelowThreshold(Vec<String>),
    /// Missing or invalid fields for the declared validation method.
    Malformed(Vec<String>),
}

impl ProvenanceVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, ProvenanceVerdict::Pass)
    }
}

pub fn validate_provenance(record: &ProvenanceRecord, policy: &QualityPolicy) -> ProvenanceVerdict {
    let problems = record.structural_problems();
    if !problems.is_empty() {
        return ProvenanceVerdict::Malformed(problems);
    }
    let reason = match record.validation_method {
        ValidationMethod::ManualCoding => {
            let k = record.reliability_kappa.unwrap_or_default();
            (k < policy.min_kappa)
                .then(|| format!("reliability_kappa {k} below minimum {}", policy.min_kappa))
        }
        ValidationMethod::RuleBased => {
            let p = record.documented_precision.unwrap_or_default();
            (p < policy.min_precision)
                .then(|| format!("documented_precision {p} below minimum {}", policy.min_precision))
        }
    };
    match reason {
        Some(r) => ProvenanceVerdict::BelowThreshold(vec![r]),
        None => ProvenanceVerdict::Pass,
    }
}

/// A class-balanced evaluation instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub schema_version: String,
    pub name: String,
    pub construct_definition: String,
    pub per_class_count: usize,
    pub seed: u64,
    pub provenance: ProvenanceRecord,
    pub cases: Vec<LabeledCase>,
}

impl BenchmarkManifest {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        count_labels(&self.cases)
    }

    /// Checks every manifest invariant.
    pub fn check(&self) -> Result<(), CorpusError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CorpusError::SchemaVersion {
                found: self.schema_version.clone(),
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        if self.per_class_count == 0 {
            return Err(CorpusError::Invalid("per_class_count must be positive".into()));
        }
        check_cases(&self.cases)?;
        let (positives, negatives) = self.class_counts();
        if positives != self.per_class_count || negatives != self.per_class_count {
            return Err(CorpusError::Unbalanced {
                positives,
                negatives,
                per_class: self.per_class_count,
            });
        }
        let problems = self.provenance.structural_problems();
        if !problems.is_empty() {
            return Err(CorpusError::Invalid(format!("provenance: {}", problems.join("; "))));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Source {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate case_id {0:?}")]
    DuplicateCaseId(String),
    #[error("case {0:?} has empty text")]
    EmptyText(String),
    #[error("insufficient {class} cases: have {have}, need {need}")]
    Shortfall { class: Label, have: usize, need: usize },
    #[error("unbalanced manifest: {positives} positive / {negatives} negative, expected {per_class} each")]
    Unbalanced {
        positives: usize,
        negatives: usize,
        per_class: usize,
    },
    #[error("unsupported manifest schema_version {found:?} (expected {expected:?})")]
    SchemaVersion { found: String, expected: &'static str },
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn count_labels(cases: &[LabeledCase]) -> (usize, usize) {
    let positives = cases.iter().filter(|c| c.gold_label == Label::Positive).count();
    (positives, cases.len() - positives)
}

fn check_cases(cases: &[LabeledCase]) -> Result<(), CorpusError> {
    let mut seen = HashSet::with_capacity(cases.len());
    for case in cases {
        if !seen.insert(case.case_id.as_str()) {
            return Err(CorpusError::DuplicateCaseId(case.case_id.clone()));
        }
        if case.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(case.case_id.clone()));
        }
    }
    Ok(())
}

/// Inputs to [`build_balanced_benchmark`] other than the source cases.
#[derive(Debug, Clone)]
pub struct BalanceRequest {
    pub name: String,
    pub construct_definition: String,
    pub per_class: usize,
    pub seed: u64,
    pub provenance: ProvenanceRecord,
}

/// Samples `per_class` cases of each label without replacement.
///
/// Each label partition is put in case_id order, shuffled with Fisher-Yates
/// and truncated; the selected positives followed by the selected negatives
/// are then shuffled once more to fix presentation order. All three shuffles
/// draw from one generator seeded with `request.seed`, so the result depends
/// only on the set of source cases, `per_class` and the seed.
pub fn build_balanced_benchmark(
    source: &[LabeledCase],
    request: &BalanceRequest,
) -> Result<BenchmarkManifest, CorpusError> {
    if request.per_class == 0 {
        return Err(CorpusError::Invalid("per_class must be positive".into()));
    }
    check_cases(source)?;

    let mut positives: Vec<&LabeledCase> = Vec::new();
    let mut negatives: Vec<&LabeledCase> = Vec::new();
    for case in source {
        match case.gold_label {
            Label::Positive => positives.push(case),
            Label::Negative => negatives.push(case),
        }
    }
    for (class, pool) in [(Label::Positive, &positives), (Label::Negative, &negatives)] {
        if pool.len() < request.per_class {
            return Err(CorpusError::Shortfall {
                class,
                have: pool.len(),
                need: request.per_class,
            });
        }
    }

    let mut rng = seeded_rng(request.seed);
    let mut selected = Vec::with_capacity(2 * request.per_class);
    for pool in [&mut positives, &mut negatives] {
        pool.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        fisher_yates(pool, &mut rng);
        selected.extend(pool[..request.per_class].iter().map(|c| (*c).clone()));
    }
    fisher_yates(&mut selected, &mut rng);

    Ok(BenchmarkManifest {
        schema_version: MANIFEST_SCHEMA_VERSION.to_string(),
        name: request.name.clone(),
        construct_definition: request.construct_definition.clone(),
        per_class_count: request.per_class,
        seed: request.seed,
        provenance: request.provenance.clone(),
        cases: selected,
    })
}

/// Serializes a manifest to its on-disk text form (pretty JSON, trailing newline).
pub fn manifest_to_string(manifest: &BenchmarkManifest) -> String {
    let mut out = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    out.push('\n');
    out
}

pub fn manifest_from_str(text: &str) -> Result<BenchmarkManifest, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        None => return Err(CorpusError::Malformed("missing schema_version".into())),
        Some(v) if v != MANIFEST_SCHEMA_VERSION => {
            return Err(CorpusError::SchemaVersion {
                found: v.to_string(),
                expected: MANIFEST_SCHEMA_VERSION,
            })
        }
        Some(_) => {}
    }
    let manifest: BenchmarkManifest =
        serde_json::from_value(value).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    manifest.check()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &BenchmarkManifest, path: &Path) -> Result<(), CorpusError> {
    manifest.check()?;
    fs::write(path, manifest_to_string(manifest)).map_err(|e| io_err(path, e))
}

pub fn load_manifest(path: &Path) -> Result<BenchmarkManifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    manifest_from_str(&text).map_err(|e| match e {
        CorpusError::Malformed(m) => CorpusError::Malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads a labeled source dataset.
///
/// `.jsonl` / `.ndjson` files (or any file whose first non-blank byte is
/// `{`) are read as one record per line; everything else as delimited rows
/// with a `case_id,label,text[,group.*]` header (tab-delimited for `.tsv`).
/// Duplicate case ids are an error.
pub fn read_source(path: &Path) -> Result<Vec<LabeledCase>, CorpusError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let cases = match ext.as_str() {
        "jsonl" | "ndjson" => read_jsonl(path)?,
        "csv" => read_delimited(path, b',')?,
        "tsv" => read_delimited(path, b'\t')?,
        _ => {
            let head = fs::read(path).map_err(|e| io_err(path, e))?;
            match head.iter().find(|b| !b.is_ascii_whitespace()) {
                Some(b'{') => read_jsonl(path)?,
                _ => read_delimited(path, b',')?,
            }
        }
    };
    check_cases(&cases)?;
    Ok(cases)
}

fn read_delimited(path: &Path, delimiter: u8) -> Result<Vec<LabeledCase>, CorpusError> {
    let src = |line: usize, message: String| CorpusError::Source {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| src(1, e.to_string()))?;
    let headers = reader.headers().map_err(|e| src(1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(label_col), Some(text_col)) =
        (column("case_id"), column("label"), column("text"))
    else {
        return Err(src(1, "header must contain case_id, label and text".into()));
    };
    let group_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix("group.").map(|g| (i, g.to_string())))
        .collect();

    let mut cases = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| src(line, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let label_token = field(label_col);
        let gold_label = Label::from_token(label_token)
            .ok_or_else(|| src(line, format!("unrecognized label {label_token:?}")))?;
        let mut case = LabeledCase::new(field(id_col).trim(), field(text_col), gold_label);
        for (i, name) in &group_cols {
            if let Some(v) = record.get(*i) {
                if !v.is_empty() {
                    case.group_tags.insert(name.clone(), v.to_string());
                }
            }
        }
        validate_row(&case).map_err(|m| src(line, m))?;
        cases.push(case);
    }
    Ok(cases)
}

fn read_jsonl(path: &Path) -> Result<Vec<LabeledCase>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let src = |line: usize, message: String| CorpusError::Source {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut cases = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| src(lineno, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| src(lineno, "record is not an object".into()))?;
        let scalar = |key: &str| -> Option<String> {
            match obj.get(key)? {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                serde_json::Value::Bool(b) => Some(b.to_string()),
                _ => None,
            }
        };
        let case_id = scalar("case_id").ok_or_else(|| src(lineno, "missing case_id".into()))?;
        let label_token = scalar("label").ok_or_else(|| src(lineno, "missing label".into()))?;
        let gold_label = Label::from_token(&label_token)
            .ok_or_else(|| src(lineno, format!("unrecognized label {label_token:?}")))?;
        let text = match obj.get("text") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => return Err(src(lineno, "missing text".into())),
        };
        let mut case = LabeledCase::new(case_id.trim(), text, gold_label);
        for (key, v) in obj {
            if let Some(group) = key.strip_prefix("group.") {
                if let Some(s) = v.as_str() {
                    case.group_tags.insert(group.to_string(), s.to_string());
                } else if !v.is_null() {
                    case.group_tags.insert(group.to_string(), v.to_string());
                }
            }
        }
        if let Some(serde_json::Value::Object(tags)) = obj.get("group_tags") {
            for (k, v) in tags {
                let s = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                case.group_tags.insert(k.clone(), s);
            }
        }
        validate_row(&case).map_err(|m| src(lineno, m))?;
        cases.push(case);
    }
    Ok(cases)
}

fn validate_row(case: &LabeledCase) -> Result<(), String> {
    if case.case_id.is_empty() {
        return Err("empty case_id".into());
    }
    if case.text.trim().is_empty() {
        return Err(format!("case {:?} has empty text", case.case_id));
    }
    Ok(())
}
