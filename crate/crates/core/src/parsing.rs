//! Turning raw completions into pairs, attribute lists and pseudo titles.
//!
//! Every parser here is total: malformed output degrades to fewer results
//! plus warnings, never to an error.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{AttributeValuePair, PairSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Json,
    Lines,
    FallbackEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub pairs: PairSet,
    pub parse_mode: ParseMode,
    pub warnings: Vec<String>,
}

impl ParsedPrediction {
    fn fallback(mut warnings: Vec<String>, reason: &str) -> Self {
        warnings.push(reason.to_string());
        ParsedPrediction {
            pairs: PairSet::new(),
            parse_mode: ParseMode::FallbackEmpty,
            warnings,
        }
    }
}

/// Parse attribute-value pairs. A JSON object anywhere in the text wins
/// (the largest brace-balanced span that parses); otherwise each
/// `attribute: value` line becomes a pair, split at the first colon.
pub fn parse_pairs(raw: &str) -> ParsedPrediction {
    if raw.trim().is_empty() {
        return ParsedPrediction::fallback(Vec::new(), "empty completion");
    }
    let mut warnings = Vec::new();
    if let Some(object) = largest_json_object(raw) {
        let pairs = pairs_from_object(&object, &mut warnings);
        if !pairs.is_empty() {
            return ParsedPrediction {
                pairs,
                parse_mode: ParseMode::Json,
                warnings,
            };
        }
        warnings.push("JSON object held no usable pairs; trying line format".into());
    }

    let mut pairs = PairSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line = strip_bullet(line.trim());
        if line.is_empty() {
            continue;
        }
        let Some((attribute, value)) = line.split_once(':') else {
            warnings.push(format!("line {}: no ':' separator in {line:?}", idx + 1));
            continue;
        };
        match AttributeValuePair::new(attribute, value) {
            Ok(p) => {
                pairs.insert(p);
            }
            Err(e) => warnings.push(format!("line {}: {e}", idx + 1)),
        }
    }
    if pairs.is_empty() {
        return ParsedPrediction::fallback(warnings, "no attribute-value pairs found");
    }
    ParsedPrediction {
        pairs,
        parse_mode: ParseMode::Lines,
        warnings,
    }
}

fn pairs_from_object(object: &serde_json::Map<String, Value>, warnings: &mut Vec<String>) -> PairSet {
    let mut pairs = PairSet::new();
    let mut add = |attribute: &str, value: &Value, warnings: &mut Vec<String>| {
        let text = match value {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Null => {
                warnings.push(format!("attribute {attribute:?}: null value skipped"));
                return;
            }
            _ => {
                warnings.push(format!("attribute {attribute:?}: nested value skipped"));
                return;
            }
        };
        match AttributeValuePair::new(attribute, &text) {
            Ok(p) => {
                pairs.insert(p);
            }
            Err(e) => warnings.push(e.to_string()),
        }
    };
    for (attribute, value) in object {
        match value {
            Value::Array(items) => {
                for item in items {
                    add(attribute, item, warnings);
                }
            }
            v => add(attribute, v, warnings),
        }
    }
    pairs
}

/// Spans `[start, end)` of top-level brace-balanced regions, ignoring
/// braces inside JSON string literals once a region is open.
fn balanced_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if depth > 0 && in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            '"' if depth > 0 => in_string = true,
            _ => {}
        }
    }
    spans
}

fn largest_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let mut spans = balanced_spans(text);
    spans.sort_by_key(|&(s, e)| (std::cmp::Reverse(e - s), s));
    spans.into_iter().find_map(|(s, e)| match serde_json::from_str(&text[s..e]) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    })
}

/// Remove a leading list marker: `-`, `*`, `+`, `•`, `1.`, `2)`, `(3)`.
fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    for marker in ['-', '*', '+', '•', '·'] {
        if let Some(rest) = line.strip_prefix(marker) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    let inner = line.strip_prefix('(').unwrap_or(line);
    let digits = inner.len() - inner.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &inner[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    line
}

fn strip_quotes(text: &str) -> &str {
    text.trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '“' | '”'))
        .trim()
}

/// Attribute names, one per non-empty line. List markers are stripped; a
/// line shaped like `name: value` contributes only its name. The first
/// occurrence of each name wins.
pub fn parse_attributes(raw: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for line in raw.lines() {
        let line = strip_bullet(line);
        let name = line.split_once(':').map_or(line, |(name, _)| name);
        let name = strip_quotes(name);
        if name.is_empty() || name.starts_with("```") {
            continue;
        }
        if seen.insert(name.to_string()) {
            names.push(name.to_string());
        }
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTitles {
    pub titles: Vec<String>,
    pub warnings: Vec<String>,
}

/// Up to `n_expected` pseudo titles, one per non-empty line.
pub fn parse_titles(raw: &str, n_expected: usize) -> ParsedTitles {
    let mut titles: Vec<String> = raw
        .lines()
        .map(|l| strip_quotes(strip_bullet(l)))
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .map(str::to_string)
        .collect();
    let mut warnings = Vec::new();
    if titles.len() > n_expected {
        titles.truncate(n_expected);
    } else if titles.len() < n_expected {
        warnings.push(format!(
            "expected {n_expected} generated title(s), got {}",
            titles.len()
        ));
    }
    ParsedTitles { titles, warnings }
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’')
}

/// Canonical form used for matching: lowercase, trimmed, whitespace runs
/// collapsed, surrounding quotes and trailing periods removed. Interior
/// punctuation is kept.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut current = collapsed.as_str();
    loop {
        let next = current
            .trim()
            .trim_start_matches(is_quote)
            .trim_end_matches(|c| is_quote(c) || c == '.')
            .trim();
        if next == current {
            break;
        }
        current = next;
    }
    current.to_string()
}
