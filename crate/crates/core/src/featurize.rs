//! TF-IDF featurization and the remote embedding client.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Pool;
use crate::error::{Error, Result};
use crate::http::{bearer_from_env, JsonClient, RetryPolicy};

/// Case-folds and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Unigram vocabulary with document frequencies, indexed in lexicographic
/// term order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: u32,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: u32,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        if r.terms.len() != r.df.len() {
            return Err(Error::invalid("vocabulary terms and df lengths differ"));
        }
        if r.df.iter().any(|&d| d == 0 || d > r.n_docs) {
            return Err(Error::invalid("vocabulary df out of range"));
        }
        let index = r
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != r.terms.len() {
            return Err(Error::invalid("vocabulary has duplicate terms"));
        }
        Ok(Vocabulary {
            terms: r.terms,
            df: r.df,
            n_docs: r.n_docs,
            index,
        })
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            terms: v.terms,
            df: v.df,
            n_docs: v.n_docs,
        }
    }
}

impl Vocabulary {
    pub fn fit_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0u32;
        for text in texts {
            n_docs += 1;
            let uniq: HashSet<String> = tokenize(text).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::invalid("cannot fit a vocabulary on zero documents"));
        }
        let (terms, df): (Vec<_>, Vec<_>) = df.into_iter().unzip();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t): (usize, &String)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            terms,
            df,
            n_docs,
            index,
        })
    }

    pub fn fit(pool: &Pool) -> Result<Self> {
        Vocabulary::fit_texts(pool.texts())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> u32 {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| i as usize)
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn df(&self, index: usize) -> u32 {
        self.df[index]
    }

    /// Smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let n = f64::from(self.n_docs);
        let df = f64::from(self.df[index]);
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Raw-count TF times smoothed IDF, L2-normalized. Out-of-vocabulary
    /// tokens are ignored; a text without known tokens maps to the zero vector.
    pub fn transform(&self, text: &str) -> FeatureVector {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(&tok) {
                *tf.entry(i).or_default() += 1;
            }
        }
        let (indices, values): (Vec<u32>, Vec<f64>) = tf
            .into_iter()
            .map(|(i, c)| (i, f64::from(c) * self.idf(i as usize)))
            .unzip();
        let mut v = FeatureVector {
            dim: self.terms.len(),
            indices,
            values,
        };
        v.normalize();
        v
    }
}

pub fn fit(pool: &Pool) -> Result<Vocabulary> {
    Vocabulary::fit(pool)
}

pub fn transform(vocab: &Vocabulary, text: &str) -> FeatureVector {
    vocab.transform(text)
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a sparse vector from `(index, value)` pairs; zeros are dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = pairs.into_iter().filter(|&(_, v)| v != 0.0).collect();
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::invalid(format!("repeated index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::Dimension { expected: dim, got: i + 1 });
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature weight"));
        }
        Ok(FeatureVector {
            dim,
            indices: entries.iter().map(|&(i, _)| i as u32).collect(),
            values: entries.iter().map(|&(_, v)| v).collect(),
        })
    }

    pub fn from_dense(values: &[f64]) -> Result<Self> {
        FeatureVector::from_pairs(values.len(), values.iter().copied().enumerate())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub(crate) fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    /// Squared Euclidean distance to a dense point.
    pub fn squared_distance_dense(&self, dense: &[f64], dense_sq_norm: f64) -> f64 {
        let cross: f64 = self.iter().map(|(i, v)| v * (v - 2.0 * dense[i])).sum();
        (dense_sq_norm + cross).max(0.0)
    }
}

/// Euclidean distance, computed over the union of both supports.
pub fn distance(a: &FeatureVector, b: &FeatureVector) -> f64 {
    debug_assert_eq!(a.dim, b.dim);
    let (mut i, mut j, mut acc) = (0, 0, 0.0f64);
    while i < a.indices.len() || j < b.indices.len() {
        let ai = a.indices.get(i).copied().unwrap_or(u32::MAX);
        let bj = b.indices.get(j).copied().unwrap_or(u32::MAX);
        let d = match ai.cmp(&bj) {
            std::cmp::Ordering::Less => {
                i += 1;
                a.values[i - 1]
            }
            std::cmp::Ordering::Greater => {
                j += 1;
                b.values[j - 1]
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
                a.values[i - 1] - b.values[j - 1]
            }
        };
        acc += d * d;
    }
    acc.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Full URL of the embeddings endpoint.
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_embedding_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_embedding_key_env() -> String {
    "ALGUIDE_EMBEDDING_API_KEY".into()
}

/// Client for an embeddings-API-compatible endpoint.
///
/// Request: `{"input": [..]}` (plus `"model"` when configured).
/// Response: `{"data": [{"embedding": [..]}, ..]}`; rows carrying an
/// `"index"` field are reordered by it.
pub struct EmbeddingClient {
    config: EmbeddingConfig,
    http: JsonClient,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingConfig) -> Self {
        let http = JsonClient::new(config.retry.clone(), bearer_from_env(&config.api_key_env));
        EmbeddingClient { config, http }
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<FeatureVector>> {
        if texts.is_empty() {
            return Err(Error::invalid("no texts to embed"));
        }
        let mut body = serde_json::json!({ "input": texts });
        if let Some(model) = &self.config.model {
            body["model"] = serde_json::Value::String(model.clone());
        }
        let value = self.http.post_ok(&self.config.endpoint, &body)?;
        let mut resp: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("malformed embedding response: {e}")))?;
        if resp.data.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "count mismatch: sent {} texts, received {} embeddings",
                texts.len(),
                resp.data.len()
            )));
        }
        if resp.data.iter().all(|r| r.index.is_some()) {
            resp.data.sort_by_key(|r| r.index);
        }
        let dim = resp.data[0].embedding.len();
        resp.data
            .iter()
            .map(|row| {
                if row.embedding.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: row.embedding.len(),
                    });
                }
                let mut v = FeatureVector::from_dense(&row.embedding)?;
                v.dim = dim;
                v.normalize();
                Ok(v)
            })
            .collect()
    }
}

pub fn embed_remote(config: &EmbeddingConfig, texts: &[&str]) -> Result<Vec<FeatureVector>> {
    EmbeddingClient::new(config.clone()).embed(texts)
}
