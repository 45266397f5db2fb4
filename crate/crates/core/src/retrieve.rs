//! Boolean set retrieval, BM25 ranking, and a hashed bag-of-words dense
//! retriever.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contains_sequence, tokenize, Corpus, InvertedIndex};
use crate::query::BoolExpr;

#[derive(Debug, Error, PartialEq)]
pub enum RetrieveError {
    #[error("vector dimension mismatch: query has {query}, document `{doc}` has {found}")]
    DimensionMismatch { query: usize, doc: String, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A scored document list sorted by `(score desc, doc-id asc)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    entries: Vec<(String, f64)>,
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

impl Ranking {
    /// Sorts, drops duplicate ids (keeping the best-scored one) and truncates
    /// to `k`.
    pub fn from_scored(mut entries: Vec<(String, f64)>, k: usize) -> Self {
        entries.sort_by(rank_order);
        let mut seen = BTreeSet::new();
        entries.retain(|(id, _)| seen.insert(id.clone()));
        entries.truncate(k);
        Self { entries }
    }

    /// Ranking with descending synthetic scores, preserving the given order.
    /// Useful for replaying externally produced result lists.
    pub fn from_ordered_ids<S: AsRef<str>>(ids: &[S]) -> Self {
        let n = ids.len();
        let entries = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_ref().to_owned(), (n - i) as f64))
            .collect();
        Self::from_scored(entries, n)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the sort, uniqueness and length invariants.
    pub fn is_valid(&self, k: usize) -> bool {
        let unique: BTreeSet<&str> = self.ids().collect();
        self.entries.len() <= k
            && unique.len() == self.entries.len()
            && self.entries.windows(2).all(|w| rank_order(&w[0], &w[1]) == Ordering::Less)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, RetrieveError> {
        if !(k1 > 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(RetrieveError::InvalidParams(format!("k1={k1}, b={b}")));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

impl DenseConfig {
    pub fn new(dim: usize, seed: u64) -> Result<Self, RetrieveError> {
        if dim < 8 {
            return Err(RetrieveError::InvalidParams(format!("dim {dim} < 8")));
        }
        Ok(Self { dim, seed })
    }
}

// ---------------------------------------------------------------------------
// Boolean evaluation
// ---------------------------------------------------------------------------

/// Ordinals of documents satisfying `expr`.
pub fn eval_bool(expr: &BoolExpr, corpus: &Corpus, index: &InvertedIndex) -> BTreeSet<usize> {
    match expr {
        BoolExpr::Term(term) => term_matches(term, corpus, index),
        BoolExpr::And(children) => {
            let mut iter = children.iter();
            let Some(first) = iter.next() else { return BTreeSet::new() };
            let mut acc = eval_bool(first, corpus, index);
            for child in iter {
                if acc.is_empty() {
                    break;
                }
                let next = eval_bool(child, corpus, index);
                acc.retain(|d| next.contains(d));
            }
            acc
        }
        BoolExpr::Or(children) => children
            .iter()
            .flat_map(|c| eval_bool(c, corpus, index))
            .collect(),
    }
}

fn term_matches(term: &str, corpus: &Corpus, index: &InvertedIndex) -> BTreeSet<usize> {
    let tokens = tokenize(term);
    let Some((first, rest)) = tokens.split_first() else { return BTreeSet::new() };
    let mut candidates: BTreeSet<usize> = index.postings(first).iter().map(|p| p.doc).collect();
    for t in rest {
        let docs: BTreeSet<usize> = index.postings(t).iter().map(|p| p.doc).collect();
        candidates.retain(|d| docs.contains(d));
    }
    if tokens.len() > 1 {
        candidates.retain(|&d| contains_sequence(&tokenize(&corpus.doc(d).text), &tokens));
    }
    candidates
}

/// Document ids (rather than ordinals) matching `expr`.
pub fn eval_bool_ids(expr: &BoolExpr, corpus: &Corpus, index: &InvertedIndex) -> BTreeSet<String> {
    eval_bool(expr, corpus, index)
        .into_iter()
        .map(|d| corpus.doc(d).id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

pub fn idf(index: &InvertedIndex, term: &str) -> f64 {
    let n = index.doc_count() as f64;
    let df = index.doc_freq(term) as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_weight(index: &InvertedIndex, tf: u32, doc: usize, params: Bm25Params) -> f64 {
    let tf = f64::from(tf);
    let len = f64::from(index.doc_length(doc));
    let avg = index.avg_doc_length();
    let norm = if avg > 0.0 { len / avg } else { 0.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// BM25 score of one document; `terms` is a multiset, so repeated query
/// terms count repeatedly.
pub fn bm25_score<S: AsRef<str>>(index: &InvertedIndex, terms: &[S], doc: usize, params: Bm25Params) -> f64 {
    terms
        .iter()
        .map(|t| {
            let t = t.as_ref();
            let tf = index.term_freq(t, doc);
            if tf == 0 {
                0.0
            } else {
                idf(index, t) * term_weight(index, tf, doc, params)
            }
        })
        .sum()
}

pub fn bm25_topk<S: AsRef<str>>(index: &InvertedIndex, terms: &[S], k: usize, params: Bm25Params) -> Ranking {
    let candidates: BTreeSet<usize> = terms
        .iter()
        .flat_map(|t| index.postings(t.as_ref()).iter().map(|p| p.doc))
        .collect();
    let scored = candidates
        .into_iter()
        .map(|d| (index.doc_id(d).to_owned(), bm25_score(index, terms, d, params)))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    Ranking::from_scored(scored, k)
}

/// Boolean filter, then BM25 order against all of the expression's term tokens.
pub fn boolean_retrieve(
    expr: &BoolExpr,
    corpus: &Corpus,
    index: &InvertedIndex,
    k: usize,
    params: Bm25Params,
) -> Ranking {
    let candidates = eval_bool(expr, corpus, index);
    if candidates.is_empty() {
        return Ranking::default();
    }
    let terms = expr.term_tokens();
    let scored = candidates
        .into_iter()
        .map(|d| (index.doc_id(d).to_owned(), bm25_score(index, &terms, d, params)))
        .collect();
    Ranking::from_scored(scored, k)
}

// ---------------------------------------------------------------------------
// Dense (hashed) retrieval
// ---------------------------------------------------------------------------

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer so low bits are usable for bucketing
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of tokens into `cfg.dim` buckets, L2-normalized.
pub fn embed(text: &str, cfg: &DenseConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dim];
    for token in tokenize(text) {
        let h = fnv1a(token.as_bytes(), cfg.seed);
        let bucket = (h % cfg.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exhaustive cosine scan over `(doc-id, vector)` pairs.
pub fn dense_topk(
    doc_vectors: &[(String, Vec<f64>)],
    query: &[f64],
    k: usize,
) -> Result<Ranking, RetrieveError> {
    let mut scored = Vec::with_capacity(doc_vectors.len());
    for (id, v) in doc_vectors {
        if v.len() != query.len() {
            return Err(RetrieveError::DimensionMismatch {
                query: query.len(),
                doc: id.clone(),
                found: v.len(),
            });
        }
        scored.push((id.clone(), cosine(v, query)));
    }
    Ok(Ranking::from_scored(scored, k))
}

pub fn embed_corpus(corpus: &Corpus, cfg: &DenseConfig) -> Vec<(String, Vec<f64>)> {
    corpus
        .docs()
        .iter()
        .map(|d| (d.id.clone(), embed(&d.text, cfg)))
        .collect()
}
