use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// One `{title, attribute, value}` record as it appears in a raw source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    pub title: String,
    pub attribute: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl RawTriple {
    pub fn new(title: &str, attribute: &str, value: &str) -> Self {
        RawTriple {
            title: title.to_string(),
            attribute: attribute.to_string(),
            value: value.to_string(),
            category: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NullValue,
    EmptyValue,
    InvalidChars,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NullValue => "null_value",
            DropReason::EmptyValue => "empty_value",
            DropReason::InvalidChars => "invalid_chars",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedTriple {
    pub triple: RawTriple,
    pub reason: DropReason,
}

/// Value filter applied to AE-110k triples. A value is dropped when it is
/// `NULL` (any case), blank, or made up only of `invalid_chars`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningRules {
    pub invalid_chars: BTreeSet<char>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            invalid_chars: ['-', '/'].into_iter().collect(),
        }
    }
}

impl CleaningRules {
    pub fn with_invalid_chars(chars: impl IntoIterator<Item = char>) -> Self {
        CleaningRules {
            invalid_chars: chars.into_iter().collect(),
        }
    }

    pub fn check(&self, value: &str) -> Option<DropReason> {
        let value = value.trim();
        if value.is_empty() {
            Some(DropReason::EmptyValue)
        } else if value.eq_ignore_ascii_case("null") {
            Some(DropReason::NullValue)
        } else if value.chars().all(|c| self.invalid_chars.contains(&c)) {
            Some(DropReason::InvalidChars)
        } else {
            None
        }
    }
}

/// Partition `triples` into kept and dropped, preserving input order. Kept
/// triples are returned untouched.
pub fn clean_triples(
    triples: Vec<RawTriple>,
    rules: &CleaningRules,
) -> (Vec<RawTriple>, Vec<DroppedTriple>) {
    let mut kept = Vec::with_capacity(triples.len());
    let mut dropped = Vec::new();
    for triple in triples {
        match rules.check(&triple.value) {
            None => kept.push(triple),
            Some(reason) => dropped.push(DroppedTriple { triple, reason }),
        }
    }
    (kept, dropped)
}
