//! Seeded synthetic conjunction task.
//!
//! Every query hides a pair of gold terms among distractors. The relevant
//! documents are exactly those containing both gold terms of the pair.
//!
//! The remaining documents are near misses: each repeats one gold term of
//! some query and adds two of that query's distractors. A single gold term
//! therefore ranks its near misses (higher term frequency) above the
//! relevant documents and earns a small, predictable recall, while a
//! distractor next to a gold term pulls near misses to the top. Only the
//! gold pair, with `AND` or `OR`, retrieves the relevant set cleanly.
//!
//! Documents are padded to a common length with filler terms, which are
//! not part of any query or of the action pool, so BM25 cannot separate
//! documents by length and a random policy rarely touches a relevant one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Qrels};
use crate::env::{TaskItem, TaskTarget};
use crate::policy::{ActionVocab, PolicyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub n_queries: usize,
    pub relevant_per_query: usize,
    pub distractors_per_query: usize,
    /// Distractors of the owning query in each near miss.
    pub near_miss_distractors: usize,
    /// Occurrences of the gold term in each near miss.
    pub near_miss_gold_tf: usize,
    /// Tokens per document.
    pub doc_len: usize,
    pub filler_terms: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 200,
            n_queries: 8,
            relevant_per_query: 8,
            distractors_per_query: 3,
            near_miss_distractors: 2,
            near_miss_gold_tf: 2,
            doc_len: 8,
            filler_terms: 10,
            pool_size: 16,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Gold, distractor and filler terms together (50 by default).
    pub fn vocab_size(&self) -> usize {
        self.n_queries * (2 + self.distractors_per_query) + self.filler_terms
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub corpus: Corpus,
    pub qrels: Qrels,
    pub items: Vec<TaskItem>,
    pub gold: Vec<(String, String)>,
    /// Extra action terms, drawn from the gold and distractor terms.
    pub pool: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("synthetic config: {0}")]
pub struct SyntheticError(String);

pub fn term_name(i: usize) -> String {
    format!("t{i:02}")
}

impl SyntheticTask {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self, SyntheticError> {
        let nq = cfg.n_queries;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(SyntheticError(msg.to_owned())) };
        check(nq >= 1, "need at least one query")?;
        check(cfg.near_miss_distractors <= cfg.distractors_per_query, "near misses use more distractors than a query has")?;
        let near_miss_core = cfg.near_miss_gold_tf + cfg.near_miss_distractors;
        check(cfg.doc_len >= near_miss_core.max(2), "documents too short")?;
        check(cfg.filler_terms >= cfg.doc_len - 2, "too few filler terms to pad relevant documents")?;
        check(cfg.n_docs >= nq * cfg.relevant_per_query, "not enough documents for the relevant sets")?;
        check(cfg.pool_size <= nq * (2 + cfg.distractors_per_query), "pool larger than the query vocabulary")?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocab: Vec<String> = (0..cfg.vocab_size()).map(term_name).collect();
        // Query q's gold pair is (vocab[q], vocab[nq + q]); its distractors
        // follow the gold block.
        let gold: Vec<(String, String)> = (0..nq).map(|q| (vocab[q].clone(), vocab[nq + q].clone())).collect();
        let dpq = cfg.distractors_per_query;
        let distractors: Vec<Vec<String>> =
            (0..nq).map(|q| vocab[2 * nq + q * dpq..2 * nq + (q + 1) * dpq].to_vec()).collect();
        let filler: Vec<String> = vocab[nq * (2 + dpq)..].to_vec();

        let mut texts: Vec<(Vec<String>, Option<usize>)> = Vec::with_capacity(cfg.n_docs);
        for (q, (a, b)) in gold.iter().enumerate() {
            for _ in 0..cfg.relevant_per_query {
                let mut toks = vec![a.clone(), b.clone()];
                toks.extend(filler.choose_multiple(&mut rng, cfg.doc_len - 2).cloned());
                texts.push((toks, Some(q)));
            }
        }
        let mut owner = 0;
        while texts.len() < cfg.n_docs {
            let q = owner % nq;
            let half = (owner / nq) % 2;
            owner += 1;
            let g = if half == 0 { &gold[q].0 } else { &gold[q].1 };
            let mut toks = vec![g.clone(); cfg.near_miss_gold_tf];
            toks.extend(distractors[q].choose_multiple(&mut rng, cfg.near_miss_distractors).cloned());
            toks.extend(filler.choose_multiple(&mut rng, cfg.doc_len - near_miss_core).cloned());
            texts.push((toks, None));
        }
        texts.shuffle(&mut rng);

        let mut docs = Vec::with_capacity(texts.len());
        let mut qrels = Qrels::new();
        let mut grades: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new(); nq];
        for (i, (mut toks, owner)) in texts.into_iter().enumerate() {
            toks.shuffle(&mut rng);
            let id = format!("doc{i:03}");
            if let Some(q) = owner {
                qrels.insert(format!("q{q}"), id.clone(), 1);
                grades[q].insert(id.clone(), 1);
            }
            docs.push(Document::new(id, toks.join(" ")));
        }
        let corpus = Corpus::new(docs).map_err(|e| SyntheticError(e.to_string()))?;

        let items = gold
            .iter()
            .zip(grades)
            .enumerate()
            .map(|(q, ((a, b), g))| {
                let mut words = vec![a.clone(), b.clone()];
                words.extend(distractors[q].iter().cloned());
                words.shuffle(&mut rng);
                TaskItem { id: format!("q{q}"), query: words.join(" "), target: TaskTarget::Grades(g) }
            })
            .collect();

        let mut pool = vocab[..nq * (2 + dpq)].to_vec();
        pool.shuffle(&mut rng);
        pool.truncate(cfg.pool_size);
        Ok(Self { corpus, qrels, items, gold, pool })
    }

    pub fn vocab(&self) -> Result<ActionVocab, PolicyError> {
        let queries: Vec<&str> = self.items.iter().map(|i| i.query.as_str()).collect();
        ActionVocab::for_task(&queries, &self.pool)
    }
}
