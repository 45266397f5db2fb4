//! `rgym eval`: greedy-decode a checkpoint over a query set and score it.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use retrieval_gym::metrics::{first_hit_rank, hits_at_n, ndcg_at_k, recall_at_k};
use retrieval_gym::query::Payload;
use retrieval_gym::{parse_bool_query, tokenize, Corpus, Environment, PolicyParams, Qrels, SearchEnv};

use crate::data::QueryLine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Recall,
    Ndcg,
    Hits,
}

#[derive(Debug, Serialize)]
pub struct ItemScore {
    pub id: String,
    pub query: String,
    pub generated: String,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub metric: EvalMetric,
    pub k: usize,
    pub mean: f64,
    pub items: Vec<ItemScore>,
}

/// Fails when a query uses a term the checkpoint's vocabulary lacks: its
/// input-query feature would silently vanish.
fn check_vocab(params: &PolicyParams, queries: &[QueryLine]) -> Result<()> {
    let known: BTreeSet<&str> = params.vocab.terms().iter().map(String::as_str).collect();
    for q in queries {
        if let Some(t) = tokenize(&q.text).iter().find(|t| !known.contains(t.as_str())) {
            bail!("checkpoint vocabulary does not match the queries: query `{}` uses unknown term `{t}`", q.id);
        }
    }
    Ok(())
}

pub fn evaluate(
    params: &PolicyParams,
    corpus: Corpus,
    queries: &[QueryLine],
    qrels: Option<&Qrels>,
    metric: EvalMetric,
    k: usize,
) -> Result<EvalReport> {
    if k == 0 {
        bail!("k must be at least 1");
    }
    check_vocab(params, queries)?;
    let env = SearchEnv::boolean(corpus);
    let corpus = env.corpus().expect("search env has a corpus");
    let mut items = Vec::with_capacity(queries.len());
    for q in queries {
        let generated = params.greedy_episode(&q.text).query;
        let expr = parse_bool_query(&generated).with_context(|| format!("decoded query `{generated}` does not parse"))?;
        let ranking = env.search(&Payload::Boolean(expr), k)?;
        let grades = || {
            qrels
                .context("this metric needs --qrels")?
                .grades(&q.id)
                .with_context(|| format!("no judgments for query `{}`", q.id))
        };
        let value = match metric {
            EvalMetric::Recall => {
                let relevant: BTreeSet<String> =
                    grades()?.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d.clone()).collect();
                recall_at_k(&ranking, &relevant, k)?
            }
            EvalMetric::Ndcg => ndcg_at_k(&ranking, grades()?, k)?,
            EvalMetric::Hits => {
                let answers = q.answers.as_deref().with_context(|| format!("query `{}` has no answers", q.id))?;
                f64::from(hits_at_n(first_hit_rank(&ranking, corpus, answers), k))
            }
        };
        items.push(ItemScore { id: q.id.clone(), query: q.text.clone(), generated, value });
    }
    let mean = if items.is_empty() { 0.0 } else { items.iter().map(|i| i.value).sum::<f64>() / items.len() as f64 };
    Ok(EvalReport { metric, k, mean, items })
}

pub fn write_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    if report.items.is_empty() {
        w.write_record(["id", "query", "generated", "value"])?;
    }
    for item in &report.items {
        w.serialize(item)?;
    }
    w.flush()?;
    Ok(())
}
