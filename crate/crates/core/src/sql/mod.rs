//! A small relational executor for scoring generated SQL by execution
//! accuracy.
//!
//! Supported subset: `SELECT <columns | COUNT(*)> FROM t [AS a]
//! [[INNER] JOIN u [AS b] ON x = y [AND ...]]* [WHERE <predicate>] [;]`,
//! where predicates combine comparisons (`= != <> < <= > >=`) between
//! columns and literals with `AND`, `OR` and parentheses.

mod db;
mod exec;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use db::{ColumnType, MiniDb, Table, TableSchema};
pub use exec::execute_sql;
pub use parse::parse_sql;

use crate::metrics::result_sets_match;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Integer(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn bare(column: impl Into<String>) -> Self {
        Self { qualifier: None, column: column.into() }
    }

    pub fn qualified(qualifier: impl Into<String>, column: impl Into<String>) -> Self {
        Self { qualifier: Some(qualifier.into()), column: column.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Join {
    pub table: TableRef,
    /// Conjunction of column equalities.
    pub on: Vec<(ColumnRef, ColumnRef)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectList {
    CountStar,
    Columns(Vec<ColumnRef>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Literal(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Compare { left: Operand, op: CmpOp, right: Operand },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqlAst {
    pub select: SelectList,
    pub from: TableRef,
    pub joins: Vec<Join>,
    pub filter: Option<Predicate>,
}

/// Identifier as SQL text, double-quoted unless it lexes as a bare name.
fn ident(name: &str) -> String {
    let bare = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !parse::is_keyword(name);
    if bare {
        name.to_owned()
    } else {
        format!("\"{name}\"")
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{}.{}", ident(q), ident(&self.column)),
            None => f.write_str(&ident(&self.column)),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} AS {}", ident(&self.table), ident(a)),
            None => f.write_str(&ident(&self.table)),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => c.fmt(f),
            Operand::Literal(v) => v.fmt(f),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, ps: &[Predicate], sep: &str| {
            f.write_str("(")?;
            for (i, p) in ps.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                p.fmt(f)?;
            }
            f.write_str(")")
        };
        match self {
            Predicate::Compare { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Predicate::And(ps) => join(f, ps, " AND "),
            Predicate::Or(ps) => join(f, ps, " OR "),
        }
    }
}

impl fmt::Display for SqlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.select {
            SelectList::CountStar => f.write_str("COUNT(*)")?,
            SelectList::Columns(cols) => {
                let cols: Vec<String> = cols.iter().map(ToString::to_string).collect();
                f.write_str(&cols.join(", "))?;
            }
        }
        write!(f, " FROM {}", self.from)?;
        for join in &self.joins {
            write!(f, " INNER JOIN {} ON ", join.table)?;
            for (i, (l, r)) in join.on.iter().enumerate() {
                if i > 0 {
                    f.write_str(" AND ")?;
                }
                write!(f, "{l} = {r}")?;
            }
        }
        if let Some(p) = &self.filter {
            write!(f, " WHERE {p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("syntax error at byte {position}: expected {expected}")]
pub struct SyntaxError {
    pub position: usize,
    pub expected: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("no such table `{0}`")]
    UnknownTable(String),
    #[error("no such column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("duplicate table name or alias `{0}`")]
    DuplicateAlias(String),
    #[error("cannot compare {left} with {right}")]
    TypeMismatch { left: String, right: String },
}

#[derive(Debug, Error)]
pub enum SqlError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("gold query failed: {0}")]
    Gold(Box<SqlError>),
    #[error("fixture: {0}")]
    Fixture(String),
}

/// How a generated query fared against the gold result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOutcome {
    Match,
    Mismatch,
    ExecutionError,
}

/// Parses and executes `src` in one step.
pub fn run_sql(src: &str, db: &MiniDb) -> Result<ResultSet, SqlError> {
    let ast = parse_sql(src)?;
    Ok(execute_sql(&ast, db)?)
}

/// Runs `generated` and compares it with the (already computed) gold result.
pub fn exec_outcome(generated: &str, gold: &ResultSet, db: &MiniDb) -> ExecOutcome {
    match run_sql(generated, db) {
        Ok(rs) if result_sets_match(&rs, gold) == 1 => ExecOutcome::Match,
        Ok(_) => ExecOutcome::Mismatch,
        Err(_) => ExecOutcome::ExecutionError,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqlScore {
    pub accuracy: u8,
    pub reward: f64,
    pub outcome: ExecOutcome,
}

/// Execution accuracy and training reward of `generated` against `gold`.
pub fn score_sql(generated: &str, gold: &str, db: &MiniDb, hard_mode: bool) -> Result<SqlScore, SqlError> {
    let gold_rs = run_sql(gold, db).map_err(|e| SqlError::Gold(Box::new(e)))?;
    let outcome = exec_outcome(generated, &gold_rs, db);
    Ok(SqlScore {
        accuracy: u8::from(outcome == ExecOutcome::Match),
        reward: crate::reward::sql_reward(outcome, hard_mode),
        outcome,
    })
}

/// One line of a SQL task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlTask {
    pub question: String,
    pub db: String,
    pub gold_sql: String,
    #[serde(default)]
    pub hard_mode: bool,
}

pub fn load_sql_tasks<R: std::io::BufRead>(reader: R) -> Result<Vec<SqlTask>, SqlError> {
    let mut tasks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SqlError::Fixture(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let task = serde_json::from_str(&line)
            .map_err(|e| SqlError::Fixture(format!("line {}: {e}", i + 1)))?;
        tasks.push(task);
    }
    Ok(tasks)
}
