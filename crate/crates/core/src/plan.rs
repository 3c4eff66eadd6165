//! Run plans: the configs × benchmarks matrix, how it is read from a plan
//! file, and the hashed snapshot stored in every run directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{EffectiveConfig, GlobalConfig};
use crate::corpus::{load_manifest, BenchmarkManifest, CorpusError};
use crate::gateway::{
    check_identifier, ModeAdapter, ModelConfig, ProcessingMode, RetryPolicy, DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::mock::MockSpec;
use crate::parser::ReasoningDelimiters;
use crate::prompt::{validate_template, PromptTemplate, ShippedConstruct, TemplateError};

pub const SNAPSHOT_SCHEMA_VERSION: &str = "kappabench.snapshot/1";
/// Endpoint URL scheme that selects the in-process mock backend.
pub const MOCK_SCHEME: &str = "mock://";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("nothing to execute: {0}")]
    NothingToExecute(&'static str),
    #[error("cannot read plan {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// One benchmark of a plan with the template used to prompt it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedBenchmark {
    pub manifest: BenchmarkManifest,
    pub template: PromptTemplate,
}

impl PlannedBenchmark {
    pub fn name(&self) -> &str {
        &self.manifest.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub plan_id: String,
    pub seed: u64,
    pub configs: Vec<ModelConfig>,
    pub benchmarks: Vec<PlannedBenchmark>,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub warmup: usize,
    pub api_key: Option<String>,
    pub mock: Option<MockSpec>,
    pub bootstrap_replicates: Option<usize>,
    /// Printable execution settings (API key redacted).
    pub effective_config: EffectiveConfig,
}

impl RunPlan {
    pub fn new(plan_id: impl Into<String>, seed: u64) -> Self {
        let global = GlobalConfig::default();
        Self {
            plan_id: plan_id.into(),
            seed,
            configs: Vec::new(),
            benchmarks: Vec::new(),
            retry: global.retry,
            concurrency: global.concurrency,
            warmup: global.warmup,
            api_key: None,
            mock: None,
            bootstrap_replicates: None,
            effective_config: global.effective(),
        }
    }

    pub fn with_global(mut self, global: &GlobalConfig) -> Self {
        self.retry = global.retry;
        self.concurrency = global.concurrency;
        self.warmup = global.warmup;
        self.api_key = global.api_key.clone();
        self.effective_config = global.effective();
        for c in &mut self.configs {
            if c.endpoint_url.is_empty() {
                if let Some(e) = &global.endpoint {
                    c.endpoint_url = e.clone();
                }
            }
        }
        self
    }

    /// Number of model requests a full run issues (excluding warm-up and retries).
    pub fn request_count(&self) -> usize {
        self.configs.len() * self.benchmarks.iter().map(|b| b.manifest.len()).sum::<usize>()
    }

    pub fn uses_mock(&self) -> bool {
        self.configs.iter().any(|c| c.endpoint_url.starts_with(MOCK_SCHEME))
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.configs.is_empty() {
            return Err(PlanError::NothingToExecute("plan has no model configs"));
        }
        if self.benchmarks.is_empty() {
            return Err(PlanError::NothingToExecute("plan has no benchmarks"));
        }
        check_identifier(&self.plan_id).map_err(|e| PlanError::Invalid(format!("plan_id: {e}")))?;
        let mut ids = HashSet::new();
        for c in &self.configs {
            c.validate().map_err(|e| PlanError::Invalid(e.0))?;
            if !ids.insert(c.config_id.as_str()) {
                return Err(PlanError::Invalid(format!("duplicate config_id {:?}", c.config_id)));
            }
        }
        let mut names = HashSet::new();
        for b in &self.benchmarks {
            check_identifier(b.name()).map_err(|e| PlanError::Invalid(format!("benchmark name: {e}")))?;
            if !names.insert(b.name()) {
                return Err(PlanError::Invalid(format!("duplicate benchmark {:?}", b.name())));
            }
            b.manifest.check()?;
            validate_template(&b.template)
                .map_err(|e| PlanError::Invalid(format!("template for {}: {e}", b.name())))?;
        }
        if self.concurrency == 0 {
            return Err(PlanError::Invalid("concurrency must be at least 1".into()));
        }
        if self.uses_mock() {
            let spec = self
                .mock
                .as_ref()
                .ok_or_else(|| PlanError::Invalid("a config uses mock:// but the plan has no [mock] section".into()))?;
            spec.validate().map_err(PlanError::Invalid)?;
        }
        Ok(())
    }

    /// The hashed part of the snapshot: what is evaluated, not where.
    pub fn content(&self) -> SnapshotContent {
        SnapshotContent {
            plan_id: self.plan_id.clone(),
            seed: self.seed,
            configs: self
                .configs
                .iter()
                .map(|c| ModelConfig {
                    endpoint_url: String::new(),
                    ..c.clone()
                })
                .collect(),
            benchmarks: self
                .benchmarks
                .iter()
                .map(|b| SnapshotBenchmark {
                    name: b.name().to_string(),
                    n_cases: b.manifest.len(),
                    manifest_sha256: sha256_hex(crate::corpus::manifest_to_string(&b.manifest).as_bytes()),
                    template: b.template.clone(),
                })
                .collect(),
            mock: self.mock.clone(),
            bootstrap_replicates: self.bootstrap_replicates,
        }
    }

    pub fn snapshot(&self) -> PlanSnapshot {
        let content = self.content();
        PlanSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION.to_string(),
            plan_hash: content.hash(),
            content,
            environment: SnapshotEnvironment {
                harness_version: env!("CARGO_PKG_VERSION").to_string(),
                endpoints: self
                    .configs
                    .iter()
                    .map(|c| (c.config_id.clone(), c.endpoint_url.clone()))
                    .collect(),
                hardware_notes: self
                    .configs
                    .iter()
                    .filter_map(|c| c.hardware_note.clone().map(|h| (c.config_id.clone(), h)))
                    .collect(),
                effective_config: self.effective_config.clone(),
                created_at: chrono::Utc::now().to_rfc3339(),
            },
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBenchmark {
    pub name: String,
    pub n_cases: usize,
    pub manifest_sha256: String,
    pub template: PromptTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotContent {
    pub plan_id: String,
    pub seed: u64,
    pub configs: Vec<ModelConfig>,
    pub benchmarks: Vec<SnapshotBenchmark>,
    #[serde(default)]
    pub mock: Option<MockSpec>,
    #[serde(default)]
    pub bootstrap_replicates: Option<usize>,
}

impl SnapshotContent {
    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("snapshot serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEnvironment {
    pub harness_version: String,
    pub endpoints: Vec<(String, String)>,
    pub hardware_notes: Vec<(String, String)>,
    pub effective_config: EffectiveConfig,
    pub created_at: String,
}

/// Contents of `plan.snapshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub schema_version: String,
    pub plan_hash: String,
    pub content: SnapshotContent,
    pub environment: SnapshotEnvironment,
}

impl PlanSnapshot {
    pub fn load(path: &Path) -> Result<PlanSnapshot, PlanError> {
        let read_err = |message: String| PlanError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let snap: PlanSnapshot = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        if snap.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(read_err(format!("unsupported schema_version {:?}", snap.schema_version)));
        }
        Ok(snap)
    }

    pub fn to_string_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("snapshot serializes");
        s.push('\n');
        s
    }
}

// ---- plan file ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    plan_id: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    bootstrap_replicates: Option<usize>,
    #[serde(default)]
    mock: Option<MockSpec>,
    #[serde(default)]
    benchmarks: Vec<BenchmarkEntry>,
    #[serde(default)]
    configs: Vec<ConfigEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkEntry {
    manifest: PathBuf,
    /// Path to a template file, or `shipped:<name>`.
    template: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEntry {
    config_id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    endpoint_url: Option<String>,
    model_id: String,
    processing_mode: ProcessingMode,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    top_p: Option<f64>,
    #[serde(default)]
    max_output_tokens: Option<u32>,
    #[serde(default)]
    mode_adapter: Option<ModeAdapter>,
    #[serde(default)]
    hardware_note: Option<String>,
    #[serde(default)]
    param_billions: Option<f64>,
    #[serde(default)]
    delimiters: Option<ReasoningDelimiters>,
    #[serde(default)]
    lenient_labels: bool,
}

impl ConfigEntry {
    fn resolve(self) -> ModelConfig {
        let adapter = self.mode_adapter.unwrap_or(if self.processing_mode.is_effort() {
            ModeAdapter::EffortField
        } else {
            ModeAdapter::None
        });
        let mut c = ModelConfig::new(
            self.config_id,
            self.endpoint_url.unwrap_or_default(),
            self.model_id,
            self.processing_mode,
            adapter,
        );
        if let Some(t) = self.temperature {
            c.temperature = t;
        }
        if self.top_p.is_some() {
            c.top_p = self.top_p;
        }
        c.max_output_tokens = self.max_output_tokens.unwrap_or(DEFAULT_MAX_OUTPUT_TOKENS);
        c.label = self.label;
        c.hardware_note = self.hardware_note;
        c.param_billions = self.param_billions;
        if let Some(d) = self.delimiters {
            c.delimiters = d;
        }
        c.lenient_labels = self.lenient_labels;
        c
    }
}

/// Resolves `shipped:<name>` or a path relative to `base`.
pub fn resolve_template(spec: &str, base: &Path) -> Result<PromptTemplate, PlanError> {
    if let Some(name) = spec.strip_prefix("shipped:") {
        let construct = ShippedConstruct::ALL
            .into_iter()
            .find(|c| PromptTemplate::shipped(*c).name == name)
            .ok_or_else(|| PlanError::Invalid(format!("no shipped template named {name:?}")))?;
        return Ok(PromptTemplate::shipped(construct));
    }
    Ok(PromptTemplate::load(&base.join(spec))?)
}

/// Reads a TOML plan file; relative paths resolve against its directory.
pub fn load_plan(path: &Path, global: &GlobalConfig) -> Result<RunPlan, PlanError> {
    let text = fs::read_to_string(path).map_err(|e| PlanError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    plan_from_str(&text, base, global)
}

pub fn plan_from_str(text: &str, base: &Path, global: &GlobalConfig) -> Result<RunPlan, PlanError> {
    let file: PlanFile = toml::from_str(text).map_err(|e| PlanError::Invalid(e.to_string()))?;
    let mut plan = RunPlan::new(file.plan_id, file.seed);
    plan.bootstrap_replicates = file.bootstrap_replicates;
    plan.mock = file.mock;
    for b in file.benchmarks {
        plan.benchmarks.push(PlannedBenchmark {
            manifest: load_manifest(&base.join(&b.manifest))?,
            template: resolve_template(&b.template, base)?,
        });
    }
    plan.configs = file.configs.into_iter().map(ConfigEntry::resolve).collect();
    let plan = plan.with_global(global);
    for c in &plan.configs {
        if c.endpoint_url.is_empty() {
            return Err(PlanError::Invalid(format!(
                "config {:?} has no endpoint_url and no default endpoint is configured",
                c.config_id
            )));
        }
    }
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_balanced_benchmark, save_manifest, BalanceRequest, Label, LabeledCase, ProvenanceRecord};

    fn write_manifest(dir: &Path, name: &str) {
        let cases: Vec<_> = (0..20)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                LabeledCase::new(format!("{name}-{i}"), format!("{name} narrative {i}"), label)
            })
            .collect();
        let m = build_balanced_benchmark(
            &cases,
            &BalanceRequest {
                name: name.into(),
                construct_definition: "def".into(),
                per_class: 5,
                seed: 1,
                provenance: ProvenanceRecord::rule_based(0.97, 2018, 2019),
            },
        )
        .unwrap();
        save_manifest(&m, &dir.join(format!("{name}.kb"))).unwrap();
    }

    const PLAN: &str = r#"
plan_id = "demo"
seed = 7

[mock]
flip_probability = 0.1
seed = 3

[[benchmarks]]
manifest = "srp.kb"
template = "shipped:substance_related_problems"

[[benchmarks]]
manifest = "fw.kb"
template = "shipped:firearms"

[[configs]]
config_id = "qwen3-4b-s"
model_id = "Qwen3-4B"
processing_mode = "standard"
mode_adapter = "think-toggle"

[[configs]]
config_id = "gpt-oss-20b-high"
endpoint_url = "mock://"
model_id = "gpt-oss-20b"
processing_mode = "effort_high"
"#;

    #[test]
    fn loads_plan_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "srp");
        write_manifest(dir.path(), "fw");
        let global = GlobalConfig {
            endpoint: Some("http://127.0.0.1:8080".into()),
            ..GlobalConfig::default()
        };
        let plan = plan_from_str(PLAN, dir.path(), &global).unwrap();
        assert_eq!(plan.request_count(), 2 * 20);
        assert_eq!(plan.configs[0].endpoint_url, "http://127.0.0.1:8080");
        assert_eq!(plan.configs[0].top_p, Some(0.8));
        assert_eq!(plan.configs[1].mode_adapter, ModeAdapter::EffortField);
        assert!(plan.uses_mock());
    }

    #[test]
    fn missing_endpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "srp");
        write_manifest(dir.path(), "fw");
        let err = plan_from_str(PLAN, dir.path(), &GlobalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("no endpoint_url"), "{err}");
    }

    #[test]
    fn empty_plan_has_nothing_to_execute() {
        let plan = RunPlan::new("p", 0);
        assert!(matches!(plan.validate(), Err(PlanError::NothingToExecute(_))));
    }

    #[test]
    fn hash_ignores_endpoint_but_not_template() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "srp");
        write_manifest(dir.path(), "fw");
        let global = GlobalConfig {
            endpoint: Some("http://a".into()),
            ..GlobalConfig::default()
        };
        let a = plan_from_str(PLAN, dir.path(), &global).unwrap();
        let mut b = a.clone();
        b.configs[0].endpoint_url = "http://b".into();
        assert_eq!(a.content().hash(), b.content().hash());
        b.benchmarks[0].template.task_instruction.push_str(" Be brief.");
        assert_ne!(a.content().hash(), b.content().hash());
    }
}
