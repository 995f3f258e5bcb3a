//! Okapi BM25 over an in-memory inverted index.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate document id {0}")]
    DuplicateDocId(String),
}

/// Index keyed by document ids of type `K`.
#[derive(Debug, Clone)]
pub struct Bm25Index<K> {
    params: Bm25Params,
    keys: Vec<K>,
    key_set: BTreeMap<K, usize>,
    doc_len: Vec<u32>,
    total_len: u64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl<K: Clone + Ord> Bm25Index<K> {
    pub fn new(params: Bm25Params) -> Self {
        Bm25Index {
            params,
            keys: Vec::new(),
            key_set: BTreeMap::new(),
            doc_len: Vec::new(),
            total_len: 0,
            postings: BTreeMap::new(),
        }
    }

    pub fn build<'t>(
        docs: impl IntoIterator<Item = (K, &'t str)>,
        params: Bm25Params,
    ) -> Result<Self, IndexError>
    where
        K: core::fmt::Debug,
    {
        let mut idx = Self::new(params);
        for (k, text) in docs {
            idx.add(k, text)?;
        }
        Ok(idx)
    }

    pub fn add(&mut self, key: K, text: &str) -> Result<(), IndexError>
    where
        K: core::fmt::Debug,
    {
        let doc = self.keys.len();
        if self.key_set.contains_key(&key) {
            return Err(IndexError::DuplicateDocId(alloc::format!("{key:?}")));
        }
        self.key_set.insert(key.clone(), doc);
        let tokens = tokenize(text);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, n) in tf {
            self.postings
                .entry(term)
                .or_default()
                .push(Posting { doc, tf: n });
        }
        self.keys.push(key);
        self.doc_len.push(tokens.len() as u32);
        self.total_len += tokens.len() as u64;
        Ok(())
    }

    pub fn doc_count(&self) -> usize {
        self.keys.len()
    }

    /// Term frequency of `term` in document `key`.
    pub fn term_frequency(&self, key: &K, term: &str) -> u32 {
        let Some(&doc) = self.key_set.get(key) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|p| p.iter().find(|p| p.doc == doc))
            .map_or(0, |p| p.tf)
    }

    pub fn doc_length(&self, key: &K) -> Option<u32> {
        self.key_set.get(key).map(|&d| self.doc_len[d])
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avgdl()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn avgdl(&self) -> f64 {
        if self.keys.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.keys.len() as f64
        }
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.keys.len() as f64;
        let df = self.postings.get(term).map_or(0, |p| p.len()) as f64;
        libm::log(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    /// Scores of documents that contain at least one query term. Duplicate
    /// query terms count once per occurrence.
    pub fn search(&self, query: &str) -> BTreeMap<K, f64> {
        let avgdl = self.avgdl();
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in postings {
                let tf = p.tf as f64;
                let dl = self.doc_len[p.doc] as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
                *acc.entry(p.doc).or_default() += s;
            }
        }
        acc.into_iter()
            .map(|(doc, s)| (self.keys[doc].clone(), s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(
            tokenize("Hash-Join, SORT merge!"),
            vec!["hash", "join", "sort", "merge"]
        );
    }

    #[test]
    fn rarer_terms_score_higher() {
        let idx = Bm25Index::build(
            [
                (1, "join algorithms for databases"),
                (2, "databases and storage"),
                (3, "storage engines"),
            ],
            Bm25Params::default(),
        )
        .unwrap();
        let hits = idx.search("join databases");
        assert_eq!(hits.len(), 2);
        assert!(hits[&1] > hits[&2]);
        assert!(!hits.contains_key(&3));
        assert!(idx.search("quantum").is_empty());
    }

    #[test]
    fn term_counts_and_duplicates() {
        let mut idx = Bm25Index::new(Bm25Params::default());
        idx.add(1, "Join, JOIN join!").unwrap();
        idx.add(2, "hash join").unwrap();
        assert_eq!(idx.term_frequency(&1, "join"), 3);
        assert_eq!(idx.doc_length(&2), Some(2));
        assert_eq!(idx.avg_doc_length(), 2.5);
        assert!(matches!(
            idx.add(1, "again"),
            Err(IndexError::DuplicateDocId(_))
        ));
        let empty: Bm25Index<i32> = Bm25Index::new(Bm25Params::default());
        assert!(empty.search("join").is_empty());
    }
}
