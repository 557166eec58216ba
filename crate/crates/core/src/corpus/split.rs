use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Dataset};

/// A train fraction held as an exact ratio so `floor(fraction * n)` never
/// suffers from binary rounding (`0.57 * 100` is 56.999... in `f64`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TrainFraction {
    numerator: u64,
    denominator: u64,
}

impl TrainFraction {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, CorpusError> {
        if denominator == 0 || numerator == 0 || numerator >= denominator {
            return Err(CorpusError::InvalidFraction(format!(
                "{numerator}/{denominator} is not strictly between 0 and 1"
            )));
        }
        let g = gcd(numerator, denominator);
        Ok(TrainFraction {
            numerator: numerator / g,
            denominator: denominator / g,
        })
    }

    /// Number of training items out of `n`, rounded down.
    pub fn train_count(self, n: usize) -> usize {
        ((n as u128 * self.numerator as u128) / self.denominator as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl Default for TrainFraction {
    fn default() -> Self {
        TrainFraction {
            numerator: 4,
            denominator: 5,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FromStr for TrainFraction {
    type Err = CorpusError;

    /// Accepts `"0.8"`, `".75"` or `"4/5"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || CorpusError::InvalidFraction(format!("cannot parse {s:?}"));
        if let Some((num, den)) = s.split_once('/') {
            let num = num.trim().parse().map_err(|_| bad())?;
            let den = den.trim().parse().map_err(|_| bad())?;
            return TrainFraction::new(num, den);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int
            .checked_mul(scale)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        TrainFraction::new(num, scale)
    }
}

impl TryFrom<String> for TrainFraction {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TrainFraction> for String {
    fn from(f: TrainFraction) -> String {
        f.to_string()
    }
}

impl fmt::Display for TrainFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: TrainFraction,
    pub seed: u64,
}

fn category_rng(seed: u64, category: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(category.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Split per category: shuffle that category's products with a generator
/// seeded from `(seed, category)`, send the first `floor(fraction * n)` to
/// train and the rest to test. Both halves keep the input dataset order.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), CorpusError> {
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, product) in ds.products().iter().enumerate() {
        by_category.entry(product.category.as_str()).or_default().push(idx);
    }

    let mut in_train = vec![false; ds.len()];
    for (category, mut indices) in by_category {
        if indices.len() < 2 {
            return Err(CorpusError::CategoryTooSmall {
                category: category.to_string(),
                count: indices.len(),
            });
        }
        let mut rng = category_rng(spec.seed, category);
        indices.shuffle(&mut rng);
        let n_train = spec.train_fraction.train_count(indices.len());
        for &idx in &indices[..n_train] {
            in_train[idx] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (idx, product) in ds.products().iter().enumerate() {
        if in_train[idx] {
            train.push(product.clone());
        } else {
            test.push(product.clone());
        }
    }
    Ok((
        Dataset::new(format!("{}-train", ds.name()), train)?,
        Dataset::new(format!("{}-test", ds.name()), test)?,
    ))
}
