use std::collections::{BTreeMap, HashMap};

use super::tokenize::tokenize;
use super::{rank_hits, Hit, RetrievalError};

/// Sparse vector as `(term id, weight)` sorted by term id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector(Vec<(u32, f64)>);

impl SparseVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        ordered_sum(self.0.iter().map(|(_, w)| w * w)).sqrt()
    }

    /// Dot product. Terms are summed in ascending order of their
    /// contribution, so the result depends only on the multiset of
    /// contributions and not on how term ids were assigned.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut products = Vec::new();
        while i < self.0.len() && j < other.0.len() {
            let (ta, wa) = self.0[i];
            let (tb, wb) = other.0[j];
            match ta.cmp(&tb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    products.push(wa * wb);
                    i += 1;
                    j += 1;
                }
            }
        }
        ordered_sum(products)
    }
}

/// Sum in ascending order (all inputs here are non-negative).
pub(crate) fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut values: Vec<f64> = values.into_iter().collect();
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Smoothed inverse document frequency: `ln((1 + N) / (1 + df)) + 1`.
pub fn smooth_idf(doc_count: usize, doc_freq: usize) -> f64 {
    ((1.0 + doc_count as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

/// Lexical index over product titles: raw term counts weighted by smoothed
/// idf, each document L2-normalised.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocabulary: HashMap<String, u32>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
    ids: Vec<String>,
    doc_vectors: Vec<SparseVector>,
    postings: Vec<Vec<u32>>,
}

pub fn build_tfidf_index<'a, I>(corpus: I) -> Result<TfIdfIndex, RetrievalError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut vocabulary: HashMap<String, u32> = HashMap::new();
    let mut doc_freq: Vec<usize> = Vec::new();
    let mut ids = Vec::new();
    let mut counts: Vec<BTreeMap<u32, usize>> = Vec::new();

    for (id, title) in corpus {
        let mut tf: BTreeMap<u32, usize> = BTreeMap::new();
        for token in tokenize(title) {
            let next = vocabulary.len() as u32;
            let term = *vocabulary.entry(token).or_insert(next);
            if term as usize == doc_freq.len() {
                doc_freq.push(0);
            }
            *tf.entry(term).or_default() += 1;
        }
        for term in tf.keys() {
            doc_freq[*term as usize] += 1;
        }
        ids.push(id.to_string());
        counts.push(tf);
    }
    if ids.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }

    let n = ids.len();
    let idf: Vec<f64> = doc_freq.iter().map(|&df| smooth_idf(n, df)).collect();
    let mut postings = vec![Vec::new(); vocabulary.len()];
    let doc_vectors = counts
        .iter()
        .enumerate()
        .map(|(doc, tf)| {
            for term in tf.keys() {
                postings[*term as usize].push(doc as u32);
            }
            weigh(tf, &idf)
        })
        .collect();

    Ok(TfIdfIndex {
        vocabulary,
        doc_freq,
        idf,
        ids,
        doc_vectors,
        postings,
    })
}

fn weigh(tf: &BTreeMap<u32, usize>, idf: &[f64]) -> SparseVector {
    let raw = SparseVector(
        tf.iter()
            .map(|(&term, &count)| (term, count as f64 * idf[term as usize]))
            .collect(),
    );
    let norm = raw.norm();
    if norm == 0.0 {
        return SparseVector::default();
    }
    SparseVector(raw.0.into_iter().map(|(t, w)| (t, w / norm)).collect())
}

impl TfIdfIndex {
    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn term_id(&self, token: &str) -> Option<u32> {
        self.vocabulary.get(token).copied()
    }

    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.term_id(token).map(|t| self.doc_freq[t as usize])
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.term_id(token).map(|t| self.idf[t as usize])
    }

    pub fn doc_vector(&self, doc: usize) -> &SparseVector {
        &self.doc_vectors[doc]
    }

    /// Vectorise text with this index's vocabulary and idf table;
    /// out-of-vocabulary tokens are ignored.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<u32, usize> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&term) = self.vocabulary.get(&token) {
                *tf.entry(term).or_default() += 1;
            }
        }
        weigh(&tf, &self.idf)
    }
}

/// Top-`k` documents by cosine similarity to `query_title`. Ties keep
/// corpus insertion order; `exclude_id` is removed before truncation.
pub fn select_tfidf(
    index: &TfIdfIndex,
    query_title: &str,
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<Hit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK(k));
    }
    let query = index.vectorize(query_title);
    let mut scores = vec![0.0; index.doc_count()];
    let mut touched = vec![false; index.doc_count()];
    for &(term, _) in query.entries() {
        for &doc in &index.postings[term as usize] {
            let doc = doc as usize;
            if !touched[doc] {
                touched[doc] = true;
                scores[doc] = query.dot(&index.doc_vectors[doc]);
            }
        }
    }
    let candidates = scores
        .into_iter()
        .enumerate()
        .filter(|(doc, _)| exclude_id != Some(index.ids[*doc].as_str()))
        .map(|(doc, score)| (doc, doc, score));
    Ok(rank_hits(candidates, k, |doc| index.ids[doc].clone()))
}
