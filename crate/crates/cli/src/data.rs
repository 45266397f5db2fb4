//! File loaders shared by the subcommands.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use retrieval_gym::sql::MiniDb;
use retrieval_gym::{Corpus, Qrels, TaskItem, TaskRewardSpec, TaskTarget};

/// One line of a queries file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryLine {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::from_jsonl(open(path)?).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    Qrels::from_tsv(open(path)?).with_context(|| format!("reading qrels {}", path.display()))
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryLine>> {
    let mut out: Vec<QueryLine> = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if out.iter().any(|o| o.id == q.id) {
            bail!("{} line {}: duplicate query id `{}`", path.display(), i + 1, q.id);
        }
        out.push(q);
    }
    Ok(out)
}

/// One term per line; blank lines are ignored.
pub fn load_pool(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
}

pub fn load_db(path: &Path) -> Result<MiniDb> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    MiniDb::from_json(&text).with_context(|| format!("reading database {}", path.display()))
}

/// Pairs queries with their targets: answer spans for rank-tier tasks,
/// relevance grades otherwise.
pub fn task_items(queries: &[QueryLine], qrels: Option<&Qrels>, spec: &TaskRewardSpec) -> Result<Vec<TaskItem>> {
    queries
        .iter()
        .map(|q| {
            let target = match spec {
                TaskRewardSpec::RankTiers { .. } => match &q.answers {
                    Some(a) if !a.is_empty() => TaskTarget::Answers(a.clone()),
                    _ => bail!("query `{}` has no answers", q.id),
                },
                TaskRewardSpec::SqlExec { .. } => bail!("SQL tasks are not query-rewrite tasks"),
                _ => {
                    let qrels = qrels.context("this reward needs a qrels file")?;
                    let grades = qrels.grades(&q.id).with_context(|| format!("no judgments for query `{}`", q.id))?;
                    TaskTarget::Grades(grades.clone())
                }
            };
            Ok(TaskItem { id: q.id.clone(), query: q.text.clone(), target })
        })
        .collect()
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}
