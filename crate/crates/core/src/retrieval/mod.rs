//! Demonstration selection: random sampling, TF-IDF lexical similarity and
//! dense-embedding cosine similarity over the training set.

mod dense;
mod tfidf;
mod tokenize;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, PairSet, Product};

pub use dense::{load_embedding_store, read_embedding_store, select_dense, EmbeddingStore};
pub use tfidf::{build_tfidf_index, select_tfidf, smooth_idf, SparseVector, TfIdfIndex};
pub use tokenize::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1 (got {0})")]
    InvalidK(usize),
    #[error("k = {k} exceeds the {available} available candidates")]
    KTooLarge { k: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },
    #[error("no embedding for product(s): {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A scored candidate from one of the similarity selectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub product_id: String,
    pub score: f64,
}

/// A training product shown to the model as context: labeled
/// (title + pairs) or title-only (empty pairs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub product_id: String,
    pub title: String,
    pub pairs: PairSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Demonstration {
    pub fn labeled(product: &Product, score: Option<f64>) -> Self {
        Demonstration {
            product_id: product.id.clone(),
            title: product.title.clone(),
            pairs: product.pairs.clone(),
            score,
        }
    }

    /// Unlabeled context, e.g. a generated pseudo title.
    pub fn title_only(product_id: impl Into<String>, title: impl Into<String>) -> Self {
        Demonstration {
            product_id: product_id.into(),
            title: title.into(),
            pairs: PairSet::new(),
            score: None,
        }
    }

    pub fn without_labels(mut self) -> Self {
        self.pairs.clear();
        self
    }
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Sort by descending score then ascending tie key and keep the first `k`.
pub(crate) fn rank_hits<K: Ord, T>(
    candidates: impl IntoIterator<Item = (K, T, f64)>,
    k: usize,
    to_id: impl Fn(T) -> String,
) -> Vec<Hit> {
    let mut all: Vec<(K, T, f64)> = candidates.into_iter().collect();
    let order = |a: &(K, T, f64), b: &(K, T, f64)| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_by(order);
    all.into_iter()
        .map(|(_, t, score)| Hit {
            product_id: to_id(t),
            score,
        })
        .collect()
}

fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(query_id.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&hasher.finalize());
    ChaCha8Rng::from_seed(key)
}

/// Sample `k` distinct training products without replacement. The draw is
/// a pure function of `(train, k, seed, query_id, exclude_id)`.
pub fn select_random(
    train: &Dataset,
    k: usize,
    seed: u64,
    query_id: &str,
    exclude_id: Option<&str>,
) -> Result<Vec<Demonstration>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK(k));
    }
    let pool: Vec<&Product> = train
        .products()
        .iter()
        .filter(|p| exclude_id != Some(p.id.as_str()))
        .collect();
    if k > pool.len() {
        return Err(RetrievalError::KTooLarge {
            k,
            available: pool.len(),
        });
    }
    let mut rng = query_rng(seed, query_id);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| Demonstration::labeled(pool[i], None))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Random,
    Tfidf,
    Dense,
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectorKind::Random => "random",
            SelectorKind::Tfidf => "tfidf",
            SelectorKind::Dense => "dense",
        })
    }
}

impl FromStr for SelectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SelectorKind::Random),
            "tfidf" => Ok(SelectorKind::Tfidf),
            "dense" => Ok(SelectorKind::Dense),
            other => Err(format!("unknown selector {other:?} (expected random, tfidf or dense)")),
        }
    }
}

enum Backend {
    Random { seed: u64 },
    Tfidf(TfIdfIndex),
    Dense {
        candidates: EmbeddingStore,
        queries: EmbeddingStore,
    },
}

/// Selects labeled demonstrations from a training set for query products.
/// The query product itself is always excluded when it is part of the
/// training set.
pub struct Retriever<'a> {
    train: &'a Dataset,
    by_id: HashMap<&'a str, &'a Product>,
    backend: Backend,
}

impl<'a> Retriever<'a> {
    fn with_backend(train: &'a Dataset, backend: Backend) -> Self {
        Retriever {
            train,
            by_id: train.products().iter().map(|p| (p.id.as_str(), p)).collect(),
            backend,
        }
    }

    pub fn random(train: &'a Dataset, seed: u64) -> Self {
        Self::with_backend(train, Backend::Random { seed })
    }

    pub fn tfidf(train: &'a Dataset) -> Result<Self, RetrievalError> {
        let index = build_tfidf_index(train.products().iter().map(|p| (p.id.as_str(), p.title.as_str())))?;
        Ok(Self::with_backend(train, Backend::Tfidf(index)))
    }

    /// `store` must hold a vector for every training product; query
    /// vectors are looked up in the same store by product id.
    pub fn dense(train: &'a Dataset, store: EmbeddingStore) -> Result<Self, RetrievalError> {
        let candidates = store
            .restrict_to(train.products().iter().map(|p| p.id.as_str()))
            .map_err(RetrievalError::MissingEmbeddings)?;
        Ok(Self::with_backend(
            train,
            Backend::Dense {
                candidates,
                queries: store,
            },
        ))
    }

    pub fn kind(&self) -> SelectorKind {
        match self.backend {
            Backend::Random { .. } => SelectorKind::Random,
            Backend::Tfidf(_) => SelectorKind::Tfidf,
            Backend::Dense { .. } => SelectorKind::Dense,
        }
    }

    /// Up to `k` labeled demonstrations, most similar first.
    pub fn select(&self, query: &Product, k: usize) -> Result<Vec<Demonstration>, RetrievalError> {
        let exclude = Some(query.id.as_str());
        let hits = match &self.backend {
            Backend::Random { seed } => {
                return select_random(self.train, k, *seed, &query.id, exclude)
            }
            Backend::Tfidf(index) => select_tfidf(index, &query.title, k, exclude)?,
            Backend::Dense {
                candidates,
                queries,
            } => {
                let vector = queries
                    .get(&query.id)
                    .ok_or_else(|| RetrievalError::MissingEmbeddings(vec![query.id.clone()]))?;
                select_dense(candidates, vector, k, exclude)?
            }
        };
        Ok(hits
            .into_iter()
            .map(|hit| Demonstration::labeled(self.by_id[hit.product_id.as_str()], Some(hit.score)))
            .collect())
    }
}
