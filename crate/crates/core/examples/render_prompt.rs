//! Render a shipped prompt template against one case narrative.
//!
//! cargo run --example render_prompt

use kappabench::prompt::{render, PromptTemplate, ShippedConstruct};

fn main() {
    let template = PromptTemplate::shipped(ShippedConstruct::DomesticViolence);
    let prompt = render(&template, "Mother reported an argument with her partner last week.").unwrap();
    println!("template {:?} (reconstructed: {})", template.name, template.reconstructed);
    println!("--- system ---\n{}\n--- user ---\n{}", prompt.system_text, prompt.user_text);
    println!("--- template file ---\n{}", template.to_toml());
}
