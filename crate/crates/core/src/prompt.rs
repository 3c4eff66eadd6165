//! Three-part classification prompts: task instruction, operational
//! definition and output format go to the system message; the case
//! narrative goes to the user message through `user_template`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker replaced by the case narrative.
pub const CASE_PLACEHOLDER: &str = "{{case_text}}";

fn default_user_template() -> String {
    CASE_PLACEHOLDER.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub name: String,
    /// True for templates rebuilt from construct descriptions rather than
    /// copied from an original study instrument.
    #[serde(default)]
    pub reconstructed: bool,
    #[serde(default)]
    pub task_instruction: String,
    #[serde(default)]
    pub operational_definition: String,
    #[serde(default)]
    pub output_format_spec: String,
    #[serde(default = "default_user_template")]
    pub user_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("invalid template: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("case text is empty")]
    EmptyCaseText,
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
}

/// The four sample constructs shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShippedConstruct {
    SubstanceRelatedProblems,
    DomesticViolence,
    Firearms,
    Opioids,
}

impl ShippedConstruct {
    pub const ALL: [ShippedConstruct; 4] = [
        ShippedConstruct::SubstanceRelatedProblems,
        ShippedConstruct::DomesticViolence,
        ShippedConstruct::Firearms,
        ShippedConstruct::Opioids,
    ];

    fn source(self) -> &'static str {
        match self {
            ShippedConstruct::SubstanceRelatedProblems => {
                include_str!("../data/templates/substance_related_problems.toml")
            }
            ShippedConstruct::DomesticViolence => include_str!("../data/templates/domestic_violence.toml"),
            ShippedConstruct::Firearms => include_str!("../data/templates/firearms.toml"),
            ShippedConstruct::Opioids => include_str!("../data/templates/opioids.toml"),
        }
    }
}

impl PromptTemplate {
    pub fn shipped(construct: ShippedConstruct) -> PromptTemplate {
        PromptTemplate::from_toml(construct.source()).expect("shipped template parses")
    }

    pub fn from_toml(text: &str) -> Result<PromptTemplate, TemplateError> {
        toml::from_str(text).map_err(|e| TemplateError::Invalid(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<PromptTemplate, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        PromptTemplate::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("template serializes")
    }

    /// Lists every violated invariant; empty when the template is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (field, value) in [
            ("task_instruction", &self.task_instruction),
            ("operational_definition", &self.operational_definition),
            ("output_format_spec", &self.output_format_spec),
        ] {
            if value.trim().is_empty() {
                problems.push(format!("{field} missing"));
            }
            if value.contains(CASE_PLACEHOLDER) {
                problems.push(format!("{field} must not contain {CASE_PLACEHOLDER}"));
            }
        }
        match self.user_template.matches(CASE_PLACEHOLDER).count() {
            1 => {}
            0 => problems.push(format!("user_template lacks {CASE_PLACEHOLDER}")),
            n => problems.push(format!("user_template contains {CASE_PLACEHOLDER} {n} times (expected once)")),
        }
        problems
    }

    pub fn system_text(&self) -> String {
        format!(
            "{}\n\n{}\n\n{}",
            self.task_instruction.trim_end(),
            self.operational_definition.trim_end(),
            self.output_format_spec.trim_end()
        )
    }
}

pub fn validate_template(template: &PromptTemplate) -> Result<(), TemplateError> {
    let problems = template.problems();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(TemplateError::Invalid(problems))
    }
}

/// Substitutes the case narrative byte-for-byte; nothing is escaped.
pub fn render(template: &PromptTemplate, case_text: &str) -> Result<RenderedPrompt, TemplateError> {
    validate_template(template)?;
    if case_text.trim().is_empty() {
        return Err(TemplateError::EmptyCaseText);
    }
    let at = template
        .user_template
        .find(CASE_PLACEHOLDER)
        .expect("validated template has a placeholder");
    let mut user_text =
        String::with_capacity(template.user_template.len() - CASE_PLACEHOLDER.len() + case_text.len());
    user_text.push_str(&template.user_template[..at]);
    user_text.push_str(case_text);
    user_text.push_str(&template.user_template[at + CASE_PLACEHOLDER.len()..]);
    Ok(RenderedPrompt {
        system_text: template.system_text(),
        user_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PromptTemplate {
        PromptTemplate::shipped(ShippedConstruct::SubstanceRelatedProblems)
    }

    #[test]
    fn shipped_templates_validate() {
        for c in ShippedConstruct::ALL {
            let t = PromptTemplate::shipped(c);
            assert_eq!(validate_template(&t), Ok(()), "{c:?}");
            assert!(t.reconstructed);
            assert!(t.output_format_spec.contains("\"label\""));
        }
    }

    #[test]
    fn empty_definition_is_reported() {
        let mut t = sample();
        t.operational_definition = "  ".into();
        assert_eq!(
            validate_template(&t),
            Err(TemplateError::Invalid(vec!["operational_definition missing".into()]))
        );
    }

    #[test]
    fn placeholder_must_appear_once() {
        let mut t = sample();
        t.user_template = format!("{CASE_PLACEHOLDER} and {CASE_PLACEHOLDER}");
        assert!(validate_template(&t).is_err());
        t.user_template = "no marker".into();
        assert!(render(&t, "x").is_err());
        let mut t = sample();
        t.task_instruction.push_str(CASE_PLACEHOLDER);
        assert!(validate_template(&t).is_err());
    }

    #[test]
    fn renders_case_verbatim_and_purely() {
        let t = sample();
        let a = render(&t, "Father tested positive for opiates.").unwrap();
        assert!(a.user_text.contains("Father tested positive for opiates."));
        assert!(a.system_text.contains(&t.operational_definition));
        assert!(a.system_text.contains(&t.task_instruction));
        assert!(a.system_text.contains(&t.output_format_spec));
        assert_eq!(a, render(&t, "Father tested positive for opiates.").unwrap());
    }

    #[test]
    fn quotes_and_braces_survive() {
        let t = sample();
        let case = "He said \"{\"label\": \"absent\"}\" and {{not a marker}} \\n ok";
        let r = render(&t, case).unwrap();
        // locate the placeholder span from the template and compare bytes
        let at = t.user_template.find(CASE_PLACEHOLDER).unwrap();
        let tail = t.user_template.len() - at - CASE_PLACEHOLDER.len();
        assert_eq!(&r.user_text[at..r.user_text.len() - tail], case);
    }

    #[test]
    fn empty_case_text_rejected() {
        assert_eq!(render(&sample(), " \n"), Err(TemplateError::EmptyCaseText));
    }

    #[test]
    fn toml_round_trip() {
        let t = sample();
        assert_eq!(PromptTemplate::from_toml(&t.to_toml()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn rendering_preserves_case_bytes(case in "[\\PC\\x00-\\x1f{}\"\\\\]{1,200}") {
            prop_assume!(!case.trim().is_empty());
            let t = sample();
            let r = render(&t, &case).unwrap();
            prop_assert_eq!(
                r.user_text.len(),
                t.user_template.len() - CASE_PLACEHOLDER.len() + case.len()
            );
            let at = t.user_template.find(CASE_PLACEHOLDER).unwrap();
            prop_assert_eq!(&r.user_text[at..at + case.len()], case.as_str());
        }
    }
}
