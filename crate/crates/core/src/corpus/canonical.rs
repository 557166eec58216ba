use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeValuePair, CorpusError, Dataset, PairSet, Product};

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    category: &'a str,
    title: &'a str,
    pairs: &'a PairSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    category: String,
    title: String,
    pairs: Vec<AttributeValuePair>,
}

pub fn write_canonical_to(ds: &Dataset, writer: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for p in ds.products() {
        let record = RecordOut {
            id: &p.id,
            category: &p.category,
            title: &p.title,
            pairs: &p.pairs,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_canonical(ds: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_canonical_to(ds, file).map_err(|e| CorpusError::io(path, e))
}

/// Read a canonical dataset file. The dataset is named after the file stem.
pub fn read_canonical(path: &Path) -> Result<Dataset, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    read_canonical_from(file, name).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub fn read_canonical_from(reader: impl Read, name: &str) -> Result<Dataset, CorpusError> {
    let mut products = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::io("", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse {
            line: line_no,
            message,
        };
        let record: RecordIn = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(record.id.clone()) {
            return Err(parse_err(format!("duplicate product id {:?}", record.id)));
        }
        let product = Product::new(record.id, record.category, record.title, record.pairs)
            .map_err(|e| parse_err(e.to_string()))?;
        products.push(product);
    }
    Dataset::new(name, products)
}
