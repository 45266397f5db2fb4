//! Task evaluation metrics: Recall@K, NDCG@K, answer-span hits, and
//! execution accuracy.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpus::{contains_span, Corpus};
use crate::retrieve::Ranking;
use crate::sql::{ResultSet, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("recall is undefined for an empty relevant set")]
    NoRelevant,
    #[error("NDCG is undefined without a positively graded document")]
    NoPositiveGrade,
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranking: &Ranking, relevant: &BTreeSet<String>, k: usize) -> Result<f64, MetricError> {
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    let hits = ranking.ids().take(k).filter(|id| relevant.contains(*id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

fn discount(rank_zero_based: usize) -> f64 {
    ((rank_zero_based + 2) as f64).log2()
}

/// NDCG with linear gains (`gain = grade`) and `log2(i + 1)` discounts.
pub fn ndcg_at_k(ranking: &Ranking, grades: &BTreeMap<String, u32>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Err(MetricError::NoPositiveGrade);
    }
    let dcg: f64 = ranking
        .ids()
        .take(k)
        .enumerate()
        .map(|(i, id)| f64::from(grades.get(id).copied().unwrap_or(0)) / discount(i))
        .sum();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    Ok(dcg / idcg)
}

/// 1-based rank of the first document containing any answer candidate.
pub fn first_hit_rank<S: AsRef<str>>(ranking: &Ranking, corpus: &Corpus, candidates: &[S]) -> Option<usize> {
    ranking
        .ids()
        .position(|id| corpus.get(id).is_some_and(|doc| contains_span(doc, candidates)))
        .map(|p| p + 1)
}

pub fn hits_at_n(rank: Option<usize>, n: usize) -> u8 {
    u8::from(rank.is_some_and(|r| r <= n))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum CanonicalValue {
    Int(i64),
    /// Non-integral reals, compared by bit pattern after normalizing -0.0.
    Real(u64),
    Text(String),
}

fn canonical(v: &Value) -> CanonicalValue {
    match v {
        Value::Integer(i) => CanonicalValue::Int(*i),
        Value::Real(r) => {
            let integral = r.fract() == 0.0 && r.abs() < 9.0e15;
            if integral {
                CanonicalValue::Int(*r as i64)
            } else {
                CanonicalValue::Real(r.to_bits())
            }
        }
        Value::Text(s) => CanonicalValue::Text(s.clone()),
    }
}

/// Execution-accuracy comparison: multiset equality of rows, column order
/// preserved, integer-valued reals equal to integers.
pub fn result_sets_match(a: &ResultSet, b: &ResultSet) -> u8 {
    let canon = |rs: &ResultSet| {
        let mut rows: Vec<Vec<CanonicalValue>> =
            rs.rows.iter().map(|r| r.iter().map(canonical).collect()).collect();
        rows.sort();
        rows
    };
    u8::from(canon(a) == canon(b))
}
