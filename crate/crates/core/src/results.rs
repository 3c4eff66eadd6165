//! Per-case result records and the append-only results log.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::parser::ParseErrorKind;

/// Why a case produced no usable label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    NoPayloadFound,
    MalformedPayload,
    MissingLabelField,
    InvalidLabelValue,
    TruncatedOutput,
    /// Connection refused or DNS failure after all retries.
    TransportUnreachable,
    HttpStatus,
    Timeout,
    /// The server answered 2xx with a body that is not a chat completion.
    BadResponse,
    /// Not dispatched: the endpoint was already declared down for this config.
    EndpointDown,
}

impl FailureKind {
    pub fn is_transport(self) -> bool {
        matches!(
            self,
            FailureKind::TransportUnreachable
                | FailureKind::HttpStatus
                | FailureKind::Timeout
                | FailureKind::BadResponse
                | FailureKind::EndpointDown
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::NoPayloadFound => "no_payload_found",
            FailureKind::MalformedPayload => "malformed_payload",
            FailureKind::MissingLabelField => "missing_label_field",
            FailureKind::InvalidLabelValue => "invalid_label_value",
            FailureKind::TruncatedOutput => "truncated_output",
            FailureKind::TransportUnreachable => "transport_unreachable",
            FailureKind::HttpStatus => "http_status",
            FailureKind::Timeout => "timeout",
            FailureKind::BadResponse => "bad_response",
            FailureKind::EndpointDown => "endpoint_down",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<ParseErrorKind> for FailureKind {
    fn from(kind: ParseErrorKind) -> Self {
        match kind {
            ParseErrorKind::NoPayloadFound => FailureKind::NoPayloadFound,
            ParseErrorKind::MalformedPayload => FailureKind::MalformedPayload,
            ParseErrorKind::MissingLabelField => FailureKind::MissingLabelField,
            ParseErrorKind::InvalidLabelValue => FailureKind::InvalidLabelValue,
            ParseErrorKind::TruncatedOutput => FailureKind::TruncatedOutput,
        }
    }
}

/// One line of `results.log`. Exactly one of `parsed_label` and
/// `error_kind` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub plan_id: String,
    pub config_id: String,
    pub benchmark: String,
    pub case_id: String,
    pub gold_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_trace: Option<String>,
    /// Client wall clock of the last attempt (the successful one when there is one).
    pub latency_seconds: f64,
    pub attempt_count: u32,
    #[serde(default)]
    pub truncated: bool,
    pub timestamp: String,
}

pub type CaseKey = (String, String, String);

impl CaseResult {
    pub fn key(&self) -> CaseKey {
        (self.config_id.clone(), self.benchmark.clone(), self.case_id.clone())
    }

    pub fn is_valid(&self) -> bool {
        self.parsed_label.is_some()
    }

    pub fn check(&self) -> Result<(), String> {
        match (self.parsed_label, self.error_kind) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err(format!("case {} has both a label and an error", self.case_id)),
            (None, None) => Err(format!("case {} has neither a label nor an error", self.case_id)),
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate result for {0:?}")]
    Duplicate(CaseKey),
}

/// Append-only JSON-lines log, one [`CaseResult`] per line, flushed and
/// synced after every append.
pub struct ResultLog {
    path: PathBuf,
    writer: BufWriter<File>,
    keys: HashSet<CaseKey>,
}

impl ResultLog {
    /// Opens (creating if needed) and returns the records already present.
    ///
    /// A final line without a trailing newline that does not parse is a
    /// torn write from an interrupted run; it is cut off. Any other
    /// unparseable line is corruption and an error.
    pub fn open(path: &Path) -> Result<(ResultLog, Vec<CaseResult>), LogError> {
        let io = |source| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        let records = if path.exists() {
            let (records, good_len) = scan(path)?;
            let len = fs::metadata(path).map_err(io)?.len();
            if good_len < len {
                let f = OpenOptions::new().write(true).open(path).map_err(io)?;
                f.set_len(good_len).map_err(io)?;
                f.sync_all().map_err(io)?;
            }
            records
        } else {
            Vec::new()
        };
        let mut keys = HashSet::with_capacity(records.len());
        for r in &records {
            if !keys.insert(r.key()) {
                return Err(LogError::Duplicate(r.key()));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((
            ResultLog {
                path: path.to_path_buf(),
                writer: BufWriter::new(file),
                keys,
            },
            records,
        ))
    }

    pub fn contains(&self, key: &CaseKey) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn append(&mut self, record: &CaseResult) -> Result<(), LogError> {
        let key = record.key();
        if self.keys.contains(&key) {
            return Err(LogError::Duplicate(key));
        }
        let io = |source| LogError::Io {
            path: self.path.display().to_string(),
            source,
        };
        let line = serde_json::to_string(record).expect("case result serializes");
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)?;
        self.writer.get_ref().sync_data().map_err(io)?;
        self.keys.insert(key);
        Ok(())
    }
}

/// Reads every record; errors on corruption anywhere except a torn tail.
pub fn read_log(path: &Path) -> Result<Vec<CaseResult>, LogError> {
    Ok(scan(path)?.0)
}

fn scan(path: &Path) -> Result<(Vec<CaseResult>, u64), LogError> {
    let bytes = fs::read(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let (line, next, complete) = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
            None => (&bytes[offset..], bytes.len(), false),
        };
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            offset = next;
            continue;
        }
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<CaseResult>(s).map_err(|e| e.to_string()))
            .and_then(|r| r.check().map(|_| r));
        match parsed {
            Ok(r) if complete => records.push(r),
            // unterminated tail: drop even if it happens to parse, the write never finished
            _ if !complete => return Ok((records, offset as u64)),
            Err(message) => {
                return Err(LogError::Corrupt {
                    path: path.display().to_string(),
                    line: line_no,
                    message,
                })
            }
            Ok(_) => unreachable!(),
        }
        offset = next;
    }
    Ok((records, offset as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(case_id: &str, label: Option<Label>) -> CaseResult {
        CaseResult {
            plan_id: "p".into(),
            config_id: "c".into(),
            benchmark: "b".into(),
            case_id: case_id.into(),
            gold_label: Label::Positive,
            parsed_label: label,
            error_kind: label.is_none().then_some(FailureKind::NoPayloadFound),
            error_detail: None,
            raw_output: "{\"label\":\"present\"}".into(),
            reasoning_trace: None,
            latency_seconds: 0.25,
            attempt_count: 1,
            truncated: false,
            timestamp: "2025-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.log");
        let (mut log, existing) = ResultLog::open(&path).unwrap();
        assert!(existing.is_empty());
        log.append(&record("a", Some(Label::Positive))).unwrap();
        log.append(&record("b", None)).unwrap();
        assert!(matches!(log.append(&record("a", None)), Err(LogError::Duplicate(_))));
        drop(log);
        let (log, existing) = ResultLog::open(&path).unwrap();
        assert_eq!(existing.len(), 2);
        assert!(log.contains(&("c".into(), "b".into(), "a".into())));
    }

    #[test]
    fn torn_tail_is_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.log");
        let (mut log, _) = ResultLog::open(&path).unwrap();
        log.append(&record("a", Some(Label::Positive))).unwrap();
        drop(log);
        let good = fs::read(&path).unwrap();
        let mut torn = good.clone();
        torn.extend_from_slice(b"{\"plan_id\":\"p\",\"config");
        fs::write(&path, &torn).unwrap();
        let (mut log, existing) = ResultLog::open(&path).unwrap();
        assert_eq!(existing.len(), 1);
        assert_eq!(fs::read(&path).unwrap(), good);
        log.append(&record("b", None)).unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 2);
    }

    #[test]
    fn corruption_mid_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.log");
        let line = serde_json::to_string(&record("a", Some(Label::Positive))).unwrap();
        fs::write(&path, format!("garbage\n{line}\n")).unwrap();
        assert!(matches!(ResultLog::open(&path), Err(LogError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn record_must_have_exactly_one_outcome() {
        let mut r = record("a", Some(Label::Positive));
        r.error_kind = Some(FailureKind::Timeout);
        assert!(r.check().is_err());
        r.parsed_label = None;
        r.error_kind = None;
        assert!(r.check().is_err());
    }
}
