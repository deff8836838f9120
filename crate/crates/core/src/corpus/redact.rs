//! Regex-driven PII redaction.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// A single redaction rule as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiPattern {
    pub name: String,
    pub pattern: String,
    /// Replacement text, e.g. `[REDACTED_CC]`.
    pub tag: String,
}

impl PiiPattern {
    pub fn new(name: &str, pattern: &str, tag: &str) -> Self {
        Self {
            name: name.to_string(),
            pattern: pattern.to_string(),
            tag: tag.to_string(),
        }
    }
}

/// Credit-card numbers, phone numbers and e-mail addresses, applied in that order.
pub fn default_patterns() -> Vec<PiiPattern> {
    vec![
        PiiPattern::new("credit_card", r"\b\d(?:[ -]?\d){12,18}\b", "[REDACTED_CC]"),
        PiiPattern::new(
            "phone",
            r"(?:\+?\d{1,3}[ .-]?)?(?:\(\d{3}\)[ .-]?|\b\d{3}[ .-])?\b\d{3}[ .-]\d{4}\b",
            "[REDACTED_PHONE]",
        ),
        PiiPattern::new(
            "email",
            r"[A-Za-z0-9.%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}",
            "[REDACTED_EMAIL]",
        ),
    ]
}

const MAX_PASSES: usize = 16;

#[derive(Debug, Clone)]
pub struct Redactor {
    rules: Vec<(Regex, String)>,
}

impl Redactor {
    /// Compiles `patterns`. A pattern that fails to compile, or that matches
    /// its own replacement tag, is rejected.
    pub fn new(patterns: &[PiiPattern]) -> Result<Self, CorpusError> {
        let mut rules = Vec::with_capacity(patterns.len());
        for p in patterns {
            let re = Regex::new(&p.pattern).map_err(|e| CorpusError::InvalidPattern {
                name: p.name.clone(),
                reason: e.to_string(),
            })?;
            if re.is_match(&p.tag) {
                return Err(CorpusError::InvalidPattern {
                    name: p.name.clone(),
                    reason: format!("pattern matches its own tag {:?}", p.tag),
                });
            }
            if p.tag.is_empty() {
                return Err(CorpusError::InvalidPattern {
                    name: p.name.clone(),
                    reason: "empty replacement tag".into(),
                });
            }
            rules.push((re, p.tag.clone()));
        }
        Ok(Self { rules })
    }

    pub fn with_defaults() -> Self {
        Self::new(&default_patterns()).expect("default PII patterns compile")
    }

    /// Replaces every maximal match of every rule by its tag. Passes repeat
    /// until no rule matches, so the result is a fixed point.
    pub fn redact(&self, text: &str) -> String {
        let mut current = text.to_string();
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for (re, tag) in &self.rules {
                if re.is_match(&current) {
                    current = re.replace_all(&current, regex::NoExpand(tag)).into_owned();
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        current
    }

    pub fn contains_pii(&self, text: &str) -> bool {
        self.rules.iter().any(|(re, _)| re.is_match(text))
    }
}

impl Default for Redactor {
    fn default() -> Self {
        Self::with_defaults()
    }
}

/// Convenience wrapper compiling `patterns` for a single call.
pub fn redact_pii(text: &str, patterns: &[PiiPattern]) -> Result<String, CorpusError> {
    Ok(Redactor::new(patterns)?.redact(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn credit_card_replaced() {
        let r = Redactor::with_defaults();
        assert_eq!(
            r.redact("card 4111 1111 1111 1111 please"),
            "card [REDACTED_CC] please"
        );
        assert_eq!(r.redact("card 4111-1111-1111-1111."), "card [REDACTED_CC].");
    }

    #[test]
    fn no_match_is_identity() {
        let r = Redactor::with_defaults();
        assert_eq!(r.redact("hello how are you"), "hello how are you");
    }

    #[test]
    fn multiple_phone_numbers() {
        let r = Redactor::with_defaults();
        assert_eq!(
            r.redact("call me at 555-0100 or 555-0101"),
            "call me at [REDACTED_PHONE] or [REDACTED_PHONE]"
        );
        assert_eq!(
            r.redact("office (415) 555-0199 ext"),
            "office [REDACTED_PHONE] ext"
        );
    }

    #[test]
    fn email_replaced() {
        let r = Redactor::with_defaults();
        assert_eq!(
            r.redact("mail jane.doe+x@example.co.uk now"),
            "mail [REDACTED_EMAIL] now"
        );
    }

    #[test]
    fn invalid_pattern_rejected() {
        let err = Redactor::new(&[PiiPattern::new("bad", "(unclosed", "[X]")]).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidPattern { .. }));
        let err = Redactor::new(&[PiiPattern::new("self", r"\[X\]", "[X]")]).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidPattern { .. }));
    }

    #[test]
    fn custom_pattern() {
        let r = Redactor::new(&[PiiPattern::new("acct", r"\bACCT\d+\b", "[REDACTED_ACCT]")]).unwrap();
        assert_eq!(r.redact("ref ACCT991 ok"), "ref [REDACTED_ACCT] ok");
    }

    proptest! {
        #[test]
        fn redaction_is_idempotent(text in "[0-9a-z @.()+ -]{0,80}") {
            let r = Redactor::with_defaults();
            let once = r.redact(&text);
            prop_assert_eq!(r.redact(&once), once.clone());
            prop_assert!(!r.contains_pii(&once));
        }
    }
}
