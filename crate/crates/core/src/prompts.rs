//! Plain-text prompt templates.
//!
//! Defaults are compiled in from `prompts/`; a directory holding any of
//! `extraction.txt`, `validation.txt` or `answer.txt` overrides the matching
//! template. Placeholders are written `{name}` and substituted in one pass, so
//! braces inside substituted values are never re-expanded.

use std::fs;
use std::io;
use std::path::Path;

pub const EXTRACTION_TEMPLATE: &str = include_str!("../prompts/extraction.txt");
pub const VALIDATION_TEMPLATE: &str = include_str!("../prompts/validation.txt");
pub const ANSWER_TEMPLATE: &str = include_str!("../prompts/answer.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub extraction: String,
    pub validation: String,
    pub answer: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            extraction: EXTRACTION_TEMPLATE.to_string(),
            validation: VALIDATION_TEMPLATE.to_string(),
            answer: ANSWER_TEMPLATE.to_string(),
        }
    }
}

impl PromptSet {
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut set = Self::default();
        for (name, slot) in [
            ("extraction.txt", &mut set.extraction),
            ("validation.txt", &mut set.validation),
            ("answer.txt", &mut set.answer),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path)?;
            }
        }
        Ok(set)
    }
}

/// Replaces `{key}` placeholders; unknown placeholders are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let replaced = tail.find('}').and_then(|close| {
            let key = &tail[1..close];
            vars.iter()
                .find(|(name, _)| *name == key)
                .map(|(_, value)| (close, *value))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pass_substitution() {
        let out = render(
            "Q: {question} C: {context}",
            &[("question", "{context}"), ("context", "x")],
        );
        assert_eq!(out, "Q: {context} C: x");
    }

    #[test]
    fn unknown_placeholders_survive() {
        assert_eq!(render("a {b} {c", &[("x", "y")]), "a {b} {c");
    }

    #[test]
    fn override_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("answer.txt"), "custom {question}").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.answer, "custom {question}");
        assert_eq!(set.extraction, EXTRACTION_TEMPLATE);
    }
}
