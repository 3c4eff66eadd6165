//! Serve the mock over loopback HTTP and classify cases through the same
//! chat-completions client used for real inference servers.
//!
//! cargo run --example http_mock_server

use kappabench::corpus::Label;
use kappabench::gateway::{classify_case, HttpBackend, ModeAdapter, ModelConfig, ProcessingMode, RetryPolicy};
use kappabench::mock::{MockBackend, MockServer, MockSpec};
use kappabench::parser::parse_response;
use kappabench::prompt::{render, PromptTemplate, ShippedConstruct};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let narratives = [
        ("Father stated he keeps a handgun in the nightstand.", Label::Positive),
        ("Family moved to a new apartment; school enrollment confirmed.", Label::Negative),
    ];
    let mut mock = MockBackend::new(MockSpec {
        reasoning_trace: true,
        ..MockSpec::default()
    });
    for (text, label) in narratives {
        mock.add_case(text, label);
    }
    let server = MockServer::start("127.0.0.1:0", mock)?;
    println!("mock listening on {}", server.base_url());

    let backend = HttpBackend::new(&server.base_url(), None);
    let template = PromptTemplate::shipped(ShippedConstruct::Firearms);
    let config = ModelConfig::new("local-4b-r", server.base_url(), "local-4b", ProcessingMode::Reasoning, ModeAdapter::ThinkToggle);
    for (text, gold) in narratives {
        let prompt = render(&template, text)?;
        let response = classify_case(&backend, &config, &prompt, &RetryPolicy::default()).map_err(|f| f.error)?;
        let parsed = parse_response(&response.raw_text, &config.parser_options(), response.truncated)?;
        println!(
            "gold {gold:<8} parsed {:<8} in {:.3} s after {} attempt(s); trace: {:?}",
            parsed.label.as_str(),
            response.latency_seconds,
            response.attempt_count,
            parsed.reasoning_trace.as_deref().map(str::trim)
        );
    }
    Ok(())
}
