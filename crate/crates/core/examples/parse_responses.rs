//! Extract labels from raw model output: reasoning traces, repeated
//! payloads and the failure kinds.
//!
//! cargo run --example parse_responses

use kappabench::parser::{parse_response, LabelVocabulary, ParserOptions};

fn main() {
    let strict = ParserOptions::default();
    let lenient = ParserOptions {
        vocabulary: LabelVocabulary::lenient(),
        ..ParserOptions::default()
    };
    let samples: [(&str, bool, &ParserOptions); 8] = [
        (r#"{"label": "present"}"#, false, &strict),
        ("<think>Maybe {\"label\": \"present\"}? No.</think>\n{\"label\": \"absent\"}", false, &strict),
        (r#"{"label": "present"} on reflection {"label": "absent"}"#, false, &strict),
        ("<think>The notes describe", true, &strict),
        ("I cannot tell.", false, &strict),
        ("{label: present", false, &strict),
        (r#"{"answer": "present"}"#, false, &strict),
        (r#"{"label": "yes"}"#, false, &lenient),
    ];
    for (raw, truncated, options) in samples {
        match parse_response(raw, options, truncated) {
            Ok(p) => println!("{:<60} -> {} (payload at {:?})", format!("{raw:?}"), p.label, p.payload_span),
            Err(e) => println!("{:<60} -> error {}", format!("{raw:?}"), e.kind),
        }
    }
}
