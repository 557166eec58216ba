//! Product datasets: ingestion, cleaning, stratified splitting and the
//! canonical JSON-lines format shared with the training tools.

mod canonical;
mod clean;
mod import;
mod split;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use canonical::{read_canonical, read_canonical_from, write_canonical, write_canonical_to};
pub use clean::{clean_triples, CleaningRules, DropReason, DroppedTriple, RawTriple};
pub use import::{import_ae110k, import_oamine, Ae110kOptions, ImportIssue, ImportReport};
pub use split::{stratified_split, SplitSpec, TrainFraction};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate product id {0:?}")]
    DuplicateId(String),
    #[error("invalid attribute-value pair: {0}")]
    InvalidPair(String),
    #[error("invalid product: {0}")]
    InvalidProduct(String),
    #[error("category {category:?} has {count} product(s); at least 2 are needed to split")]
    CategoryTooSmall { category: String, count: usize },
    #[error("invalid train fraction: {0}")]
    InvalidFraction(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A labeled attribute-value pair. Both sides are stored trimmed and are
/// never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct AttributeValuePair {
    attribute: String,
    value: String,
}

#[derive(Deserialize)]
struct RawPair {
    attribute: String,
    value: String,
}

impl TryFrom<RawPair> for AttributeValuePair {
    type Error = CorpusError;

    fn try_from(raw: RawPair) -> Result<Self, Self::Error> {
        AttributeValuePair::new(raw.attribute, raw.value)
    }
}

impl AttributeValuePair {
    pub fn new(attribute: impl AsRef<str>, value: impl AsRef<str>) -> Result<Self, CorpusError> {
        let attribute = attribute.as_ref().trim();
        let value = value.as_ref().trim();
        if attribute.is_empty() {
            return Err(CorpusError::InvalidPair(format!(
                "empty attribute (value {value:?})"
            )));
        }
        if value.is_empty() {
            return Err(CorpusError::InvalidPair(format!(
                "empty value for attribute {attribute:?}"
            )));
        }
        Ok(AttributeValuePair {
            attribute: attribute.to_string(),
            value: value.to_string(),
        })
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for AttributeValuePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.attribute, self.value)
    }
}

/// Build a pair from string literals; panics on empty input. Test and
/// fixture helper.
pub fn pair(attribute: &str, value: &str) -> AttributeValuePair {
    AttributeValuePair::new(attribute, value).expect("valid attribute-value pair")
}

pub type PairSet = BTreeSet<AttributeValuePair>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub category: String,
    pub title: String,
    pub pairs: PairSet,
}

impl Product {
    pub fn new(
        id: impl Into<String>,
        category: impl Into<String>,
        title: impl Into<String>,
        pairs: impl IntoIterator<Item = AttributeValuePair>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let title = title.into();
        if id.is_empty() {
            return Err(CorpusError::InvalidProduct("empty product id".into()));
        }
        if title.trim().is_empty() {
            return Err(CorpusError::InvalidProduct(format!(
                "product {id:?} has an empty title"
            )));
        }
        Ok(Product {
            id,
            category: category.into(),
            title,
            pairs: pairs.into_iter().collect(),
        })
    }
}

/// An ordered collection of products with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    name: String,
    products: Vec<Product>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, products: Vec<Product>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(products.len());
        for product in &products {
            if !seen.insert(product.id.as_str()) {
                return Err(CorpusError::DuplicateId(product.id.clone()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            products,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Dataset {
            name: name.into(),
            products: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.products.iter().map(|p| p.category.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.products.iter().find(|p| p.id == id)
    }

    pub fn into_products(self) -> Vec<Product> {
        self.products
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub product_count: usize,
    pub pair_count: usize,
    pub category_count: usize,
    pub unique_attribute_count: usize,
    pub unique_value_count: usize,
}

/// Counts over exact (case-sensitive, trimmed) strings.
pub fn dataset_stats(ds: &Dataset) -> StatsReport {
    let mut attributes = HashSet::new();
    let mut values = HashSet::new();
    let mut pair_count = 0;
    for product in ds.products() {
        pair_count += product.pairs.len();
        for p in &product.pairs {
            attributes.insert(p.attribute());
            values.insert(p.value());
        }
    }
    StatsReport {
        product_count: ds.len(),
        pair_count,
        category_count: ds.categories().len(),
        unique_attribute_count: attributes.len(),
        unique_value_count: values.len(),
    }
}
