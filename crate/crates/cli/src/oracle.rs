//! Newline-delimited JSON reward oracle.
//!
//! Request: `{"id", "task", "response", ...target}` where the target is
//! `qrels_key` (literature_search, classic_ir_sparse, classic_ir_dense),
//! `answers` (evidence_seeking) or `gold_sql` (sql, with optional `db` and
//! `hard_mode`). Reply: `{"id", "format", "retrieval", "total"}`, or
//! `{"id", "error"}` when the request cannot be scored. Every input line
//! gets exactly one reply, in order.

use std::io::{BufRead, Write};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use retrieval_gym::env::Backend;
use retrieval_gym::retrieve::DenseConfig;
use retrieval_gym::reward::DEFAULT_DEPTH;
use retrieval_gym::{
    composite_reward, Corpus, Environment, Qrels, RewardBreakdown, SearchEnv, SqlEnv, TaskGrammar, TaskRewardSpec,
    Target,
};

pub struct Oracle {
    boolean: Option<SearchEnv>,
    sparse: Option<SearchEnv>,
    dense: Option<SearchEnv>,
    qrels: Option<Qrels>,
    databases: Vec<SqlEnv>,
    db_names: Vec<String>,
}

impl Oracle {
    pub fn new(corpus: Option<Corpus>, qrels: Option<Qrels>, dbs: Vec<retrieval_gym::sql::MiniDb>, dense: DenseConfig) -> Self {
        let (boolean, sparse, dense) = match corpus {
            Some(c) => (
                Some(SearchEnv::boolean(c.clone())),
                Some(SearchEnv::with_backend(c.clone(), TaskGrammar::FreeText, Backend::Bm25)),
                Some(SearchEnv::dense(c, dense)),
            ),
            None => (None, None, None),
        };
        let db_names = dbs.iter().map(|d| d.name.clone()).collect();
        Self { boolean, sparse, dense, qrels, databases: dbs.into_iter().map(SqlEnv::new).collect(), db_names }
    }

    fn search_env(env: &Option<SearchEnv>) -> Result<&SearchEnv, String> {
        env.as_ref().ok_or_else(|| "no corpus loaded (pass --corpus)".to_owned())
    }

    fn database(&self, name: Option<&str>) -> Result<&SqlEnv, String> {
        match name {
            Some(n) => self
                .db_names
                .iter()
                .position(|d| d.eq_ignore_ascii_case(n))
                .map(|i| &self.databases[i])
                .ok_or_else(|| format!("unknown database `{n}`")),
            None if self.databases.len() == 1 => Ok(&self.databases[0]),
            None if self.databases.is_empty() => Err("no database loaded (pass --db)".into()),
            None => Err("several databases loaded; the request must name one with `db`".into()),
        }
    }

    fn grades(&self, key: Option<&str>) -> Result<&std::collections::BTreeMap<String, u32>, String> {
        let key = key.ok_or("missing `qrels_key`")?;
        let qrels = self.qrels.as_ref().ok_or("no qrels loaded (pass --qrels)")?;
        qrels.grades(key).ok_or_else(|| format!("unknown qrels key `{key}`"))
    }

    pub fn score(&self, req: &Request) -> Result<RewardBreakdown, String> {
        let run = |env: &dyn Environment, spec: TaskRewardSpec, target: Target<'_>| {
            composite_reward(&req.response, env, &spec, target).map_err(|e| e.to_string())
        };
        match req.task.as_str() {
            "literature_search" => {
                let grades = self.grades(req.qrels_key.as_deref())?;
                run(Self::search_env(&self.boolean)?, TaskRewardSpec::RecallTiers { k: DEFAULT_DEPTH }, Target::Grades(grades))
            }
            "evidence_seeking" => {
                let answers = req.answers.as_deref().ok_or("missing `answers`")?;
                run(Self::search_env(&self.boolean)?, TaskRewardSpec::RankTiers { depth: DEFAULT_DEPTH }, Target::Answers(answers))
            }
            "classic_ir_sparse" | "classic_ir_dense" => {
                let env = if req.task == "classic_ir_sparse" { &self.sparse } else { &self.dense };
                let grades = self.grades(req.qrels_key.as_deref())?;
                run(Self::search_env(env)?, TaskRewardSpec::NdcgValue { k: DEFAULT_DEPTH }, Target::Grades(grades))
            }
            "sql" => {
                let gold = req.gold_sql.as_deref().ok_or("missing `gold_sql`")?;
                let spec = TaskRewardSpec::SqlExec { hard_mode: req.hard_mode };
                run(self.database(req.db.as_deref())?, spec, Target::GoldSql(gold))
            }
            other => Err(format!("unknown task `{other}`")),
        }
    }

    /// Answers one raw request line.
    pub fn reply(&self, line: &str) -> String {
        let raw: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error_reply(Value::Null, &format!("invalid JSON: {e}")),
        };
        let id = raw.get("id").cloned().unwrap_or(Value::Null);
        let req: Request = match serde_json::from_value(raw) {
            Ok(r) => r,
            Err(e) => return error_reply(Value::Null, &format!("invalid request: {e}")),
        };
        match self.score(&req) {
            Ok(b) => serde_json::to_string(&Reply { id: req.id, format: b.format, retrieval: b.retrieval, total: b.total })
                .expect("reply serializes"),
            Err(e) => error_reply(id, &e),
        }
    }

    /// Serves requests until `input` is exhausted. Only I/O failures end
    /// the loop early.
    pub fn serve<R: BufRead, W: Write>(&self, input: R, mut output: W) -> Result<()> {
        for line in input.lines() {
            let line = line.context("reading request stream")?;
            writeln!(output, "{}", self.reply(&line)).context("writing reply")?;
            output.flush().context("writing reply")?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: Value,
    pub task: String,
    pub response: String,
    #[serde(default)]
    pub qrels_key: Option<String>,
    #[serde(default)]
    pub answers: Option<Vec<String>>,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub db: Option<String>,
    #[serde(default)]
    pub hard_mode: bool,
}

#[derive(Serialize)]
struct Reply {
    id: Value,
    format: f64,
    retrieval: Option<f64>,
    total: f64,
}

#[derive(Serialize)]
struct ErrorReply<'a> {
    id: Value,
    error: &'a str,
}

fn error_reply(id: Value, error: &str) -> String {
    serde_json::to_string(&ErrorReply { id, error }).expect("reply serializes")
}
