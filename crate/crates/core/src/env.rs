//! Retrieval and SQL environments that turn a parsed answer into results.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Corpus, InvertedIndex};
use crate::query::{Payload, TaskGrammar, ThinkMode};
use crate::retrieve::{
    bm25_topk, boolean_retrieve, dense_topk, embed, embed_corpus, Bm25Params, DenseConfig, Ranking, RetrieveError,
};
use crate::sql::MiniDb;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("this environment cannot execute a {0} payload")]
    UnsupportedPayload(&'static str),
    #[error("environment has no {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
}

/// What the reward is measured against for one query.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Graded judgments; any grade above 0 counts as relevant for recall.
    Grades(&'a BTreeMap<String, u32>),
    /// Answer strings for span matching.
    Answers(&'a [String]),
    GoldSql(&'a str),
}

impl Target<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            Target::Grades(_) => "relevance grades",
            Target::Answers(_) => "answer spans",
            Target::GoldSql(_) => "gold SQL",
        }
    }
}

/// Owned counterpart of [`Target`], for datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTarget {
    Grades(BTreeMap<String, u32>),
    Answers(Vec<String>),
    GoldSql(String),
}

impl TaskTarget {
    pub fn as_target(&self) -> Target<'_> {
        match self {
            TaskTarget::Grades(g) => Target::Grades(g),
            TaskTarget::Answers(a) => Target::Answers(a),
            TaskTarget::GoldSql(s) => Target::GoldSql(s),
        }
    }
}

/// One input query with what its rewrite is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub id: String,
    pub query: String,
    pub target: TaskTarget,
}

/// A prepared task environment. Implementations must be safe to share
/// between concurrent reward computations.
pub trait Environment {
    fn grammar(&self) -> TaskGrammar;

    fn think_mode(&self) -> ThinkMode {
        ThinkMode::Required
    }

    /// Runs the payload and returns at most `depth` results.
    fn search(&self, payload: &Payload, depth: usize) -> Result<Ranking, EnvError>;

    fn corpus(&self) -> Option<&Corpus> {
        None
    }

    fn database(&self) -> Option<&MiniDb> {
        None
    }
}

/// How a [`SearchEnv`] ranks documents.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Boolean filter, BM25 order inside the match set.
    Boolean,
    /// Plain BM25 over the query's tokens; boolean structure is ignored.
    Bm25,
    /// Hashed-embedding cosine scan.
    Dense { cfg: DenseConfig, vectors: Vec<(String, Vec<f64>)> },
}

#[derive(Debug, Clone)]
pub struct SearchEnv {
    corpus: Corpus,
    index: InvertedIndex,
    grammar: TaskGrammar,
    think_mode: ThinkMode,
    backend: Backend,
    bm25: Bm25Params,
}

impl SearchEnv {
    pub fn boolean(corpus: Corpus) -> Self {
        Self::with_backend(corpus, TaskGrammar::BooleanSearch, Backend::Boolean)
    }

    pub fn bm25(corpus: Corpus, grammar: TaskGrammar) -> Self {
        Self::with_backend(corpus, grammar, Backend::Bm25)
    }

    pub fn dense(corpus: Corpus, cfg: DenseConfig) -> Self {
        let vectors = embed_corpus(&corpus, &cfg);
        Self::with_backend(corpus, TaskGrammar::FreeText, Backend::Dense { cfg, vectors })
    }

    pub fn with_backend(corpus: Corpus, grammar: TaskGrammar, backend: Backend) -> Self {
        let index = InvertedIndex::build(&corpus);
        Self { corpus, index, grammar, think_mode: ThinkMode::Required, backend, bm25: Bm25Params::default() }
    }

    pub fn think_mode_set(mut self, mode: ThinkMode) -> Self {
        self.think_mode = mode;
        self
    }

    pub fn bm25_params_set(mut self, params: Bm25Params) -> Self {
        self.bm25 = params;
        self
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }
}

impl Environment for SearchEnv {
    fn grammar(&self) -> TaskGrammar {
        self.grammar
    }

    fn think_mode(&self) -> ThinkMode {
        self.think_mode
    }

    fn search(&self, payload: &Payload, depth: usize) -> Result<Ranking, EnvError> {
        let tokens = |p: &Payload| match p {
            Payload::Boolean(e) => Ok(e.term_tokens()),
            Payload::Text(t) => Ok(tokenize(t)),
            Payload::Sql(_) => Err(EnvError::UnsupportedPayload("SQL")),
        };
        match &self.backend {
            Backend::Boolean => match payload {
                Payload::Boolean(e) => Ok(boolean_retrieve(e, &self.corpus, &self.index, depth, self.bm25)),
                Payload::Text(_) => Err(EnvError::UnsupportedPayload("free-text")),
                Payload::Sql(_) => Err(EnvError::UnsupportedPayload("SQL")),
            },
            Backend::Bm25 => Ok(bm25_topk(&self.index, &tokens(payload)?, depth, self.bm25)),
            Backend::Dense { cfg, vectors } => {
                let q = embed(&tokens(payload)?.join(" "), cfg);
                Ok(dense_topk(vectors, &q, depth)?)
            }
        }
    }

    fn corpus(&self) -> Option<&Corpus> {
        Some(&self.corpus)
    }
}

#[derive(Debug, Clone)]
pub struct SqlEnv {
    db: MiniDb,
    think_mode: ThinkMode,
}

impl SqlEnv {
    pub fn new(db: MiniDb) -> Self {
        Self { db, think_mode: ThinkMode::Required }
    }

    pub fn think_mode_set(mut self, mode: ThinkMode) -> Self {
        self.think_mode = mode;
        self
    }
}

impl Environment for SqlEnv {
    fn grammar(&self) -> TaskGrammar {
        TaskGrammar::Sql
    }

    fn think_mode(&self) -> ThinkMode {
        self.think_mode
    }

    fn search(&self, _payload: &Payload, _depth: usize) -> Result<Ranking, EnvError> {
        Err(EnvError::UnsupportedPayload("search"))
    }

    fn database(&self) -> Option<&MiniDb> {
        Some(&self.db)
    }
}

/// Wraps an environment and counts every retrieval or database access.
#[derive(Debug)]
pub struct CountingEnv<E> {
    inner: E,
    searches: AtomicUsize,
    db_reads: AtomicUsize,
}

impl<E: Environment> CountingEnv<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, searches: AtomicUsize::new(0), db_reads: AtomicUsize::new(0) }
    }

    pub fn searches(&self) -> usize {
        self.searches.load(Ordering::SeqCst)
    }

    pub fn db_reads(&self) -> usize {
        self.db_reads.load(Ordering::SeqCst)
    }

    pub fn accesses(&self) -> usize {
        self.searches() + self.db_reads()
    }
}

impl<E: Environment> Environment for CountingEnv<E> {
    fn grammar(&self) -> TaskGrammar {
        self.inner.grammar()
    }

    fn think_mode(&self) -> ThinkMode {
        self.inner.think_mode()
    }

    fn search(&self, payload: &Payload, depth: usize) -> Result<Ranking, EnvError> {
        self.searches.fetch_add(1, Ordering::SeqCst);
        self.inner.search(payload, depth)
    }

    fn corpus(&self) -> Option<&Corpus> {
        self.inner.corpus()
    }

    fn database(&self) -> Option<&MiniDb> {
        self.db_reads.fetch_add(1, Ordering::SeqCst);
        self.inner.database()
    }
}
