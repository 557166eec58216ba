//! Readers for the two raw source layouts.
//!
//! AE-110k ships as one triple per line, fields separated by `\u{1}` (the
//! published file) or tabs: `title, attribute, value[, category]`. The
//! optional fourth column carries the category; without it every product
//! gets [`Ae110kOptions::default_category`].
//!
//! OA-Mine ships as JSON lines, usually one file per category. A record
//! needs a `title`; the id comes from `id` or `asin`, the category from
//! `category` or the file stem, and the labels from any of `pairs`,
//! `entities` or `attributes`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::clean::{clean_triples, CleaningRules, RawTriple};
use super::{AttributeValuePair, CorpusError, Dataset, Product};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportIssue {
    pub line: usize,
    pub reason: String,
    pub record: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImportReport {
    pub records_read: usize,
    pub issues: Vec<ImportIssue>,
}

impl ImportReport {
    fn push(&mut self, line: usize, reason: impl Into<String>, record: Value) {
        self.issues.push(ImportIssue {
            line,
            reason: reason.into(),
            record,
        });
    }

    pub fn count(&self, reason: &str) -> usize {
        self.issues.iter().filter(|i| i.reason == reason).count()
    }

    /// One `{"reason", "record"}` object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for issue in &self.issues {
            let line = serde_json::json!({
                "reason": issue.reason,
                "record": issue.record,
                "line": issue.line,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| CorpusError::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Ae110kOptions {
    pub rules: CleaningRules,
    pub default_category: String,
    pub name: String,
}

impl Default for Ae110kOptions {
    fn default() -> Self {
        Ae110kOptions {
            rules: CleaningRules::default(),
            default_category: "uncategorized".to_string(),
            name: "ae110k".to_string(),
        }
    }
}

pub(crate) fn title_id(prefix: &str, title: &str) -> String {
    let digest = Sha256::digest(title.as_bytes());
    format!("{prefix}-{}", &hex::encode(digest)[..16])
}

pub fn import_ae110k(
    path: &Path,
    options: &Ae110kOptions,
) -> Result<(Dataset, ImportReport), CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    import_ae110k_from(file, options).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub(crate) fn import_ae110k_from(
    reader: impl Read,
    options: &Ae110kOptions,
) -> Result<(Dataset, ImportReport), CorpusError> {
    let mut report = ImportReport::default();
    let mut triples = Vec::new();
    let mut lines = Vec::new();
    let mut drop_flags = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::io(PathBuf::new(), e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        report.records_read += 1;
        let sep = if line.contains('\u{1}') { '\u{1}' } else { '\t' };
        let fields: Vec<&str> = line.split(sep).collect();
        if line_no == 1 && is_header(&fields) {
            report.records_read -= 1;
            continue;
        }
        if !(3..=4).contains(&fields.len()) {
            report.push(line_no, "malformed_record", Value::String(line.to_string()));
            continue;
        }
        if fields[0].trim().is_empty() {
            report.push(line_no, "empty_title", Value::String(line.to_string()));
            continue;
        }
        let mut triple = RawTriple::new(fields[0], fields[1], fields[2]);
        triple.category = fields
            .get(3)
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .map(str::to_string);
        drop_flags.push(options.rules.check(&triple.value).is_some());
        triples.push(triple);
        lines.push((line_no, line.to_string()));
    }

    let (kept, dropped) = clean_triples(triples, &options.rules);
    let mut kept_iter = kept.into_iter();
    let mut dropped_iter = dropped.into_iter();

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (String, Vec<AttributeValuePair>)> = HashMap::new();
    // Both halves of the partition preserve input order, so walking the
    // source lines lets each output be matched back to its line number.
    for ((line_no, line), is_dropped) in lines.into_iter().zip(drop_flags) {
        if is_dropped {
            let d = dropped_iter.next().expect("dropped triple for flagged line");
            report.push(line_no, d.reason.as_str(), Value::String(line));
            continue;
        }
        let kept_triple = kept_iter.next().expect("kept and dropped partition the input");
        match AttributeValuePair::new(&kept_triple.attribute, &kept_triple.value) {
            Ok(p) => {
                let entry = grouped.entry(kept_triple.title.clone()).or_insert_with(|| {
                    order.push(kept_triple.title.clone());
                    (
                        kept_triple
                            .category
                            .clone()
                            .unwrap_or_else(|| options.default_category.clone()),
                        Vec::new(),
                    )
                });
                entry.1.push(p);
            }
            Err(_) => report.push(line_no, "empty_attribute", Value::String(line)),
        }
    }

    let mut products = Vec::with_capacity(order.len());
    for title in order {
        let (category, pairs) = grouped.remove(&title).expect("grouped by title");
        products.push(Product::new(title_id("ae", &title), category, title, pairs)?);
    }
    Ok((Dataset::new(options.name.clone(), products)?, report))
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() >= 3
        && fields[0].trim().eq_ignore_ascii_case("title")
        && fields[1].trim().eq_ignore_ascii_case("attribute")
        && fields[2].trim().eq_ignore_ascii_case("value")
}

/// Import OA-Mine annotations from a single file or a directory of
/// `*.jsonl` / `*.json` files (read in file-name order). No value filtering
/// is applied; repeated pairs collapse into the product's pair set.
pub fn import_oamine(path: &Path) -> Result<(Dataset, ImportReport), CorpusError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CorpusError::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
            })
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut state = OaMineState::default();
    for file in &files {
        let category = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("uncategorized")
            .to_string();
        let f = fs::File::open(file).map_err(|e| CorpusError::io(file, e))?;
        state
            .read(f, &category)
            .map_err(|e| match e {
                CorpusError::Io { source, .. } => CorpusError::io(file, source),
                other => other,
            })?;
    }
    state.finish("oamine")
}

#[derive(Default)]
struct OaMineState {
    report: ImportReport,
    order: Vec<String>,
    products: HashMap<String, Product>,
}

impl OaMineState {
    fn read(&mut self, reader: impl Read, default_category: &str) -> Result<(), CorpusError> {
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| CorpusError::io(PathBuf::new(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            self.report.records_read += 1;
            let record: Value = match serde_json::from_str(&line) {
                Ok(v @ Value::Object(_)) => v,
                _ => {
                    self.report
                        .push(line_no, "malformed_record", Value::String(line.clone()));
                    continue;
                }
            };
            let title = match record.get("title").and_then(Value::as_str) {
                Some(t) if !t.trim().is_empty() => t.to_string(),
                _ => {
                    self.report.push(line_no, "missing_title", record);
                    continue;
                }
            };
            let id = ["id", "asin"]
                .iter()
                .find_map(|k| record.get(*k).and_then(value_as_text))
                .unwrap_or_else(|| title_id("oa", &title));
            let category = record
                .get("category")
                .and_then(Value::as_str)
                .filter(|c| !c.trim().is_empty())
                .unwrap_or(default_category)
                .to_string();

            let (pairs, bad) = extract_pairs(&record);
            if bad > 0 {
                self.report.push(line_no, "invalid_pair", record.clone());
            }

            match self.products.get_mut(&id) {
                Some(existing) if existing.title == title => existing.pairs.extend(pairs),
                Some(_) => self.report.push(line_no, "duplicate_id", record),
                None => {
                    let product = Product::new(id.clone(), category, title, pairs)?;
                    self.order.push(id.clone());
                    self.products.insert(id, product);
                }
            }
        }
        Ok(())
    }

    fn finish(mut self, name: &str) -> Result<(Dataset, ImportReport), CorpusError> {
        let products = self
            .order
            .iter()
            .map(|id| self.products.remove(id).expect("ordered id"))
            .collect();
        Ok((Dataset::new(name, products)?, self.report))
    }
}

fn value_as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Returns the valid pairs of a record and how many labels were unusable.
fn extract_pairs(record: &Value) -> (Vec<AttributeValuePair>, usize) {
    let mut pairs = Vec::new();
    let mut bad = 0;
    let mut push = |attr: Option<String>, value: Option<String>| match (attr, value) {
        (Some(a), Some(v)) => match AttributeValuePair::new(&a, &v) {
            Ok(p) => pairs.push(p),
            Err(_) => bad += 1,
        },
        _ => bad += 1,
    };

    for key in ["pairs", "entities"] {
        if let Some(Value::Array(items)) = record.get(key) {
            for item in items {
                match item {
                    Value::Array(fields) if fields.len() >= 2 => {
                        push(value_as_text(&fields[0]), value_as_text(&fields[1]))
                    }
                    Value::Object(obj) => {
                        let attr = ["attribute", "label", "type"]
                            .iter()
                            .find_map(|k| obj.get(*k).and_then(value_as_text));
                        let value = ["value", "text", "span"]
                            .iter()
                            .find_map(|k| obj.get(*k).and_then(value_as_text));
                        push(attr, value)
                    }
                    _ => push(None, None),
                }
            }
        }
    }
    if let Some(Value::Object(map)) = record.get("attributes") {
        for (attr, value) in map {
            match value {
                Value::Array(values) => {
                    for v in values {
                        push(Some(attr.clone()), value_as_text(v));
                    }
                }
                v => push(Some(attr.clone()), value_as_text(v)),
            }
        }
    }
    (pairs, bad)
}
