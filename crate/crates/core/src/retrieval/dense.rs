use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use super::{cosine_similarity, rank_hits, Hit, RetrievalError};

/// Dense title embeddings keyed by product id, L2-normalised on insert.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

fn normalized(vector: &[f64]) -> Option<Vec<f64>> {
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(vector.iter().map(|x| x / norm).collect())
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Result<Self, RetrievalError> {
        if dimension == 0 {
            return Err(RetrievalError::Embedding {
                line: 0,
                message: "dimension must be positive".into(),
            });
        }
        Ok(EmbeddingStore {
            dimension,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Build a store from in-memory vectors; the first vector fixes the
    /// dimension.
    pub fn from_vectors<I, S>(entries: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store: Option<EmbeddingStore> = None;
        for (line, (id, vector)) in entries.into_iter().enumerate() {
            let s = match store.as_mut() {
                Some(s) => s,
                None => store.insert(EmbeddingStore::new(vector.len().max(1))?),
            };
            s.insert(id.into(), &vector, line + 1)?;
        }
        store.ok_or(RetrievalError::EmptyCorpus)
    }

    fn insert(&mut self, id: String, vector: &[f64], line: usize) -> Result<(), RetrievalError> {
        let err = |message: String| RetrievalError::Embedding { line, message };
        if vector.len() != self.dimension {
            return Err(err(format!(
                "vector for {id:?} has {} values, expected {}",
                vector.len(),
                self.dimension
            )));
        }
        if self.index.contains_key(&id) {
            return Err(err(format!("duplicate id {id:?}")));
        }
        let unit = normalized(vector).ok_or_else(|| err(format!("zero or non-finite vector for {id:?}")))?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(unit);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// A store holding only the given ids, in the order given. Ids absent
    /// from this store are returned as the error payload.
    pub fn restrict_to<'a, I>(&self, ids: I) -> Result<EmbeddingStore, Vec<String>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = EmbeddingStore {
            dimension: self.dimension,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        };
        let mut missing = Vec::new();
        for id in ids {
            match self.index.get(id) {
                Some(&i) if !out.index.contains_key(id) => {
                    out.index.insert(id.to_string(), out.ids.len());
                    out.ids.push(id.to_string());
                    out.vectors.push(self.vectors[i].clone());
                }
                Some(_) => {}
                None => missing.push(id.to_string()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(missing)
        }
    }
}

/// Load an embedding file: one `{"id", "vector"}` JSON object per line.
/// Blank lines and lines starting with `#` are skipped; the first record
/// fixes the dimension.
pub fn load_embedding_store(path: &Path) -> Result<EmbeddingStore, RetrievalError> {
    let file = fs::File::open(path).map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_embedding_store(file).map_err(|e| match e {
        RetrievalError::Io { source, .. } => RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_embedding_store(reader: impl Read) -> Result<EmbeddingStore, RetrievalError> {
    let mut store: Option<EmbeddingStore> = None;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| RetrievalError::Io {
            path: Default::default(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: EmbeddingRecord =
            serde_json::from_str(trimmed).map_err(|e| RetrievalError::Embedding {
                line: line_no,
                message: e.to_string(),
            })?;
        let s = match store.as_mut() {
            Some(s) => s,
            None => store.insert(EmbeddingStore::new(record.vector.len()).map_err(|_| {
                RetrievalError::Embedding {
                    line: line_no,
                    message: "empty vector".into(),
                }
            })?),
        };
        s.insert(record.id, &record.vector, line_no)?;
    }
    store.ok_or(RetrievalError::Embedding {
        line: 0,
        message: "no embedding records".into(),
    })
}

/// Top-`k` stored vectors by cosine similarity to `query`. Ties are broken
/// by ascending product id; `exclude_id` is removed before truncation.
pub fn select_dense(
    store: &EmbeddingStore,
    query: &[f64],
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<Hit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK(k));
    }
    if query.len() != store.dimension {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dimension,
            found: query.len(),
        });
    }
    let mut candidates = Vec::with_capacity(store.len());
    for (id, vector) in store.iter() {
        if exclude_id == Some(id) {
            continue;
        }
        candidates.push((id, id, cosine_similarity(query, vector)?));
    }
    Ok(rank_hits(candidates, k, str::to_string))
}
