//! Turns raw model output into a binary label.
//!
//! Parsing is `strip_reasoning` followed by `extract_label` on the
//! remainder; the label never comes from inside a reasoning block.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningDelimiters {
    pub open: String,
    pub close: String,
}

impl Default for ReasoningDelimiters {
    fn default() -> Self {
        Self {
            open: "<think>".into(),
            close: "</think>".into(),
        }
    }
}

/// Output of [`strip_reasoning`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub trace: Option<String>,
    pub remainder: String,
    /// `(remainder_offset, raw_offset, len)` for each kept run of bytes.
    segments: Vec<(usize, usize, usize)>,
}

impl Stripped {
    /// Maps a byte offset in `remainder` back into the raw text.
    pub fn raw_offset(&self, remainder_offset: usize) -> usize {
        for &(r, raw, len) in self.segments.iter().rev() {
            if remainder_offset >= r && remainder_offset <= r + len {
                return raw + (remainder_offset - r);
            }
        }
        remainder_offset
    }
}

/// Removes delimited reasoning blocks.
///
/// * `open … close` blocks move into the trace (several are joined by `\n`).
/// * An open marker with no close marker makes the rest of the text trace
///   (reasoning cut off mid-way); the remainder is what came before it.
/// * A close marker with no open marker makes the text before it trace
///   (chat templates that pre-open the reasoning block).
pub fn strip_reasoning(raw: &str, delimiters: &ReasoningDelimiters) -> Stripped {
    let open = delimiters.open.as_str();
    let close = delimiters.close.as_str();
    let mut remainder = String::with_capacity(raw.len());
    let mut segments = Vec::new();
    let mut traces: Vec<&str> = Vec::new();
    let mut keep = |remainder: &mut String, start: usize, end: usize| {
        if end > start {
            segments.push((remainder.len(), start, end - start));
            remainder.push_str(&raw[start..end]);
        }
    };

    if open.is_empty() || close.is_empty() {
        keep(&mut remainder, 0, raw.len());
        return Stripped {
            trace: None,
            remainder,
            segments,
        };
    }

    let mut pos = 0;
    while pos < raw.len() {
        let next_open = raw[pos..].find(open).map(|i| i + pos);
        let next_close = raw[pos..].find(close).map(|i| i + pos);
        match (next_open, next_close) {
            (_, Some(c)) if next_open.is_none_or(|o| c < o) => {
                traces.push(&raw[pos..c]);
                pos = c + close.len();
            }
            (Some(o), _) => {
                keep(&mut remainder, pos, o);
                let body = o + open.len();
                match raw[body..].find(close) {
                    Some(rel) => {
                        traces.push(&raw[body..body + rel]);
                        pos = body + rel + close.len();
                    }
                    None => {
                        traces.push(&raw[body..]);
                        pos = raw.len();
                    }
                }
            }
            _ => {
                keep(&mut remainder, pos, raw.len());
                pos = raw.len();
            }
        }
    }

    Stripped {
        trace: (!traces.is_empty()).then(|| traces.join("\n")),
        remainder,
        segments,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    NoPayloadFound,
    MalformedPayload,
    MissingLabelField,
    InvalidLabelValue,
    TruncatedOutput,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::NoPayloadFound => "no_payload_found",
            ParseErrorKind::MalformedPayload => "malformed_payload",
            ParseErrorKind::MissingLabelField => "missing_label_field",
            ParseErrorKind::InvalidLabelValue => "invalid_label_value",
            ParseErrorKind::TruncatedOutput => "truncated_output",
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedClassification {
    pub label: Label,
    pub reasoning_trace: Option<String>,
    /// Byte range of the payload object in the text that was parsed.
    pub payload_span: Range<usize>,
}

/// Accepted label tokens, matched case-insensitively after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    /// Also accept yes/no, true/false and JSON booleans.
    #[serde(default)]
    pub lenient: bool,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self {
            positive: vec!["present".into()],
            negative: vec!["absent".into()],
            lenient: false,
        }
    }
}

impl LabelVocabulary {
    pub fn lenient() -> Self {
        Self {
            lenient: true,
            ..Self::default()
        }
    }

    pub fn lookup(&self, value: &serde_json::Value) -> Option<Label> {
        match value {
            serde_json::Value::String(s) => {
                let token = s.trim();
                let hit = |set: &[String]| set.iter().any(|t| t.eq_ignore_ascii_case(token));
                if hit(&self.positive) {
                    Some(Label::Positive)
                } else if hit(&self.negative) {
                    Some(Label::Negative)
                } else if self.lenient {
                    match token.to_ascii_lowercase().as_str() {
                        "yes" | "true" => Some(Label::Positive),
                        "no" | "false" => Some(Label::Negative),
                        _ => None,
                    }
                } else {
                    None
                }
            }
            serde_json::Value::Bool(b) if self.lenient => {
                Some(if *b { Label::Positive } else { Label::Negative })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParserOptions {
    #[serde(default)]
    pub delimiters: ReasoningDelimiters,
    #[serde(default)]
    pub vocabulary: LabelVocabulary,
}

/// Every top-level well-formed JSON object in `text`, left to right.
pub fn find_objects(text: &str) -> Vec<(Range<usize>, serde_json::Map<String, serde_json::Value>)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(serde_json::Value::Object(map))) => {
                let end = i + stream.byte_offset();
                found.push((i..end, map));
                i = end;
            }
            _ => i += 1,
        }
    }
    found
}

/// Reads the `label` field of the last well-formed object in `remainder`.
///
/// `truncated` is the gateway's length-cap flag; when set and no object
/// parses, the error kind is `truncated_output`.
pub fn extract_label(
    remainder: &str,
    vocabulary: &LabelVocabulary,
    truncated: bool,
) -> Result<ParsedClassification, ParseError> {
    let objects = find_objects(remainder);
    let Some((span, object)) = objects.into_iter().last() else {
        if truncated {
            return Err(ParseError::new(
                ParseErrorKind::TruncatedOutput,
                "output hit the token limit before a payload was complete",
            ));
        }
        return Err(if remainder.contains('{') {
            ParseError::new(ParseErrorKind::MalformedPayload, "no well-formed JSON object")
        } else {
            ParseError::new(ParseErrorKind::NoPayloadFound, "no JSON object in output")
        });
    };
    let Some(value) = object.get("label") else {
        return Err(ParseError::new(
            ParseErrorKind::MissingLabelField,
            format!("object at {}..{} has no `label` field", span.start, span.end),
        ));
    };
    match vocabulary.lookup(value) {
        Some(label) => Ok(ParsedClassification {
            label,
            reasoning_trace: None,
            payload_span: span,
        }),
        None => Err(ParseError::new(
            ParseErrorKind::InvalidLabelValue,
            format!("label value {value} not in vocabulary"),
        )),
    }
}

/// Full pipeline: strip reasoning, then extract the label from what is left.
/// The payload span is reported in raw-text coordinates.
pub fn parse_response(
    raw: &str,
    options: &ParserOptions,
    truncated: bool,
) -> Result<ParsedClassification, ParseError> {
    let stripped = strip_reasoning(raw, &options.delimiters);
    let mut parsed = extract_label(&stripped.remainder, &options.vocabulary, truncated)?;
    parsed.payload_span =
        stripped.raw_offset(parsed.payload_span.start)..stripped.raw_offset(parsed.payload_span.end);
    parsed.reasoning_trace = stripped.trace;
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d() -> ReasoningDelimiters {
        ReasoningDelimiters::default()
    }

    fn label(raw: &str) -> Result<Label, ParseErrorKind> {
        parse_response(raw, &ParserOptions::default(), false)
            .map(|p| p.label)
            .map_err(|e| e.kind)
    }

    #[test]
    fn strips_a_think_block() {
        let s = strip_reasoning("<think>the note says opiates</think>{\"label\":\"present\"}", &d());
        assert_eq!(s.trace.as_deref(), Some("the note says opiates"));
        assert_eq!(s.remainder, "{\"label\":\"present\"}");
    }

    #[test]
    fn no_delimiters_is_identity() {
        let s = strip_reasoning("plain {\"label\":\"absent\"}", &d());
        assert_eq!(s.trace, None);
        assert_eq!(s.remainder, "plain {\"label\":\"absent\"}");
    }

    #[test]
    fn unmatched_open_makes_suffix_trace() {
        let s = strip_reasoning("prefix <think>cut off here", &d());
        assert_eq!(s.remainder, "prefix ");
        assert_eq!(s.trace.as_deref(), Some("cut off here"));
    }

    #[test]
    fn orphan_close_makes_prefix_trace() {
        let s = strip_reasoning("thinking {\"label\":\"absent\"}</think>{\"label\":\"present\"}", &d());
        assert_eq!(s.remainder, "{\"label\":\"present\"}");
        assert_eq!(label("thinking {\"label\":\"absent\"}</think>{\"label\":\"present\"}"), Ok(Label::Positive));
    }

    #[test]
    fn multiple_blocks_join() {
        let s = strip_reasoning("<think>a</think>x<think>b</think>y", &d());
        assert_eq!(s.trace.as_deref(), Some("a\nb"));
        assert_eq!(s.remainder, "xy");
        assert_eq!(s.raw_offset(1), 33);
    }

    #[test]
    fn prose_is_ignored() {
        assert_eq!(label("Sure. {\"label\": \"absent\"}"), Ok(Label::Negative));
        assert_eq!(label("```json\n{\"label\": \"Present\"}\n```"), Ok(Label::Positive));
    }

    #[test]
    fn vocabulary_miss() {
        assert_eq!(label("{\"label\": \"maybe\"}"), Err(ParseErrorKind::InvalidLabelValue));
        assert_eq!(label("{\"label\": \"yes\"}"), Err(ParseErrorKind::InvalidLabelValue));
        assert_eq!(label("{\"label\": 1}"), Err(ParseErrorKind::InvalidLabelValue));
        let lenient = ParserOptions {
            vocabulary: LabelVocabulary::lenient(),
            ..Default::default()
        };
        let p = |s: &str| parse_response(s, &lenient, false).map(|p| p.label);
        assert_eq!(p("{\"label\": \"yes\"}"), Ok(Label::Positive));
        assert_eq!(p("{\"label\": false}"), Ok(Label::Negative));
        assert_eq!(p("{\"label\": \"present\"}"), Ok(Label::Positive));
    }

    #[test]
    fn last_object_wins() {
        let raw = "{\"label\":\"present\"} on reflection {\"label\":\"absent\"}";
        // oracle: enumerate all well-formed objects independently, the chosen payload is the final one
        let all = find_objects(raw);
        assert_eq!(all.len(), 2);
        let parsed = parse_response(raw, &ParserOptions::default(), false).unwrap();
        assert_eq!(parsed.label, Label::Negative);
        assert_eq!(parsed.payload_span, all[1].0);
        assert_eq!(&raw[parsed.payload_span.clone()], "{\"label\":\"absent\"}");
    }

    #[test]
    fn error_kinds() {
        assert_eq!(label(""), Err(ParseErrorKind::NoPayloadFound));
        assert_eq!(label("The answer is present."), Err(ParseErrorKind::NoPayloadFound));
        assert_eq!(label("{\"label\": \"present\""), Err(ParseErrorKind::MalformedPayload));
        assert_eq!(label("{'label': 'present'}"), Err(ParseErrorKind::MalformedPayload));
        assert_eq!(label("{\"answer\": \"present\"}"), Err(ParseErrorKind::MissingLabelField));
        let truncated = parse_response("<think>still going", &ParserOptions::default(), true);
        assert_eq!(truncated.unwrap_err().kind, ParseErrorKind::TruncatedOutput);
        let truncated = parse_response("{\"label\": \"pre", &ParserOptions::default(), true);
        assert_eq!(truncated.unwrap_err().kind, ParseErrorKind::TruncatedOutput);
        // a complete payload wins even when the cap was hit
        let ok = parse_response("{\"label\": \"absent\"} and then", &ParserOptions::default(), true);
        assert_eq!(ok.unwrap().label, Label::Negative);
    }

    #[test]
    fn label_inside_trace_is_ignored() {
        assert_eq!(label("<think>{\"label\":\"present\"}</think>"), Err(ParseErrorKind::NoPayloadFound));
        let p = parse_response(
            "<think>{\"label\":\"present\"}</think> {\"label\":\"absent\"}",
            &ParserOptions::default(),
            false,
        )
        .unwrap();
        assert_eq!(p.label, Label::Negative);
        assert_eq!(p.reasoning_trace.as_deref(), Some("{\"label\":\"present\"}"));
        assert_eq!(p.payload_span, 35..53);
    }

    proptest! {
        #[test]
        fn parse_is_total(raw in "\\PC{0,300}") {
            let _ = parse_response(&raw, &ParserOptions::default(), false);
            let _ = parse_response(&raw, &ParserOptions::default(), true);
        }

        #[test]
        fn parse_is_total_on_json_ish(raw in "[{}\"\\[\\]:,a-z <>/\\\\]{0,120}") {
            let _ = parse_response(&raw, &ParserOptions::default(), false);
        }

        #[test]
        fn trace_content_never_changes_label(
            trace_a in "[^<>]{0,80}",
            trace_b in "[^<>]{0,80}",
            tail in prop::sample::select(vec![
                "{\"label\":\"present\"}", "{\"label\":\"absent\"}", "nothing", "{\"label\":\"x\"}", "{bad",
            ]),
        ) {
            let a = label(&format!("<think>{trace_a}</think>{tail}"));
            let b = label(&format!("<think>{trace_b}</think>{tail}"));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn pipeline_is_the_composition(raw in "(<think>|</think>|\\{\"label\":\"(present|absent|no)\"\\}|[a-z {}\"]{0,8}){0,8}") {
            let opts = ParserOptions::default();
            let stripped = strip_reasoning(&raw, &opts.delimiters);
            let composed = extract_label(&stripped.remainder, &opts.vocabulary, false)
                .map(|p| p.label)
                .map_err(|e| e.kind);
            let piped = parse_response(&raw, &opts, false).map(|p| p.label).map_err(|e| e.kind);
            prop_assert_eq!(composed, piped);
        }
    }
}
