//! Reward functions: a format term plus a task-specific retrieval term.
//!
//! The retrieval term is only computed for well-formed responses. A response
//! that fails to parse earns the format penalty alone and the environment is
//! never queried.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, Target};
use crate::metrics::{first_hit_rank, ndcg_at_k, recall_at_k, MetricError};
use crate::query::{parse_structured_response_with, FormatError, Payload, StructuredResponse};
use crate::retrieve::Ranking;
use crate::sql::{score_sql, SqlError};

pub const FORMAT_OK: f64 = 1.0;
pub const FORMAT_PENALTY: f64 = -4.0;
/// Added in hard mode when generated SQL runs without error.
pub const SQL_EXEC_BONUS: f64 = 0.3;
pub const DEFAULT_DEPTH: usize = 3000;

const RECALL_TIERS: [(f64, f64); 6] = [(0.7, 5.0), (0.5, 4.0), (0.4, 3.0), (0.3, 1.0), (0.1, 0.5), (0.05, 0.1)];
const RANK_TIERS: [(usize, f64); 6] = [(5, 5.0), (20, 4.0), (50, 2.0), (100, 1.0), (1000, 0.5), (3000, 0.1)];
const TIER_FLOOR: f64 = -3.5;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("recall {0} is outside [0, 1]")]
    RecallOutOfRange(f64),
    #[error("reward spec {spec} cannot be scored against {target}")]
    TargetMismatch { spec: &'static str, target: &'static str },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskRewardSpec {
    /// Tiered Recall@k.
    RecallTiers {
        #[serde(default = "default_depth")]
        k: usize,
    },
    /// Tiered rank of the first answer-bearing document within `depth`.
    RankTiers {
        #[serde(default = "default_depth")]
        depth: usize,
    },
    /// NDCG@k used directly as the reward.
    NdcgValue {
        #[serde(default = "default_depth")]
        k: usize,
    },
    SqlExec {
        #[serde(default)]
        hard_mode: bool,
    },
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

impl TaskRewardSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskRewardSpec::RecallTiers { .. } => "recall_tiers",
            TaskRewardSpec::RankTiers { .. } => "rank_tiers",
            TaskRewardSpec::NdcgValue { .. } => "ndcg_value",
            TaskRewardSpec::SqlExec { .. } => "sql_exec",
        }
    }

    /// Closed interval every composite total falls into.
    pub fn reward_range(&self) -> (f64, f64) {
        let top = match self {
            TaskRewardSpec::RecallTiers { .. } | TaskRewardSpec::RankTiers { .. } => 5.0,
            TaskRewardSpec::NdcgValue { .. } => 1.0,
            TaskRewardSpec::SqlExec { hard_mode } => 1.0 + if *hard_mode { SQL_EXEC_BONUS } else { 0.0 },
        };
        (FORMAT_PENALTY, FORMAT_OK + top)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    /// Absent exactly when the format check failed.
    pub retrieval: Option<f64>,
    pub total: f64,
    /// The underlying task metric (recall, reciprocal rank, NDCG or
    /// execution accuracy); reported, never rewarded directly.
    #[serde(skip)]
    pub metric: Option<f64>,
}

impl RewardBreakdown {
    pub fn gated() -> Self {
        Self { format: FORMAT_PENALTY, retrieval: None, total: FORMAT_PENALTY, metric: None }
    }

    fn scored(retrieval: f64, metric: f64) -> Self {
        Self { format: FORMAT_OK, retrieval: Some(retrieval), total: FORMAT_OK + retrieval, metric: Some(metric) }
    }
}

pub fn format_reward(parse: &Result<StructuredResponse, FormatError>) -> f64 {
    if parse.is_ok() {
        FORMAT_OK
    } else {
        FORMAT_PENALTY
    }
}

/// First tier whose (inclusive) lower bound `recall` reaches.
pub fn recall_tier_reward(recall: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&recall) {
        return Err(RewardError::RecallOutOfRange(recall));
    }
    Ok(RECALL_TIERS
        .iter()
        .find(|(bound, _)| recall >= *bound)
        .map_or(TIER_FLOOR, |&(_, r)| r))
}

pub fn rank_tier_reward(rank: Option<usize>) -> f64 {
    let Some(rank) = rank else { return TIER_FLOOR };
    RANK_TIERS
        .iter()
        .find(|(bound, _)| rank <= *bound)
        .map_or(TIER_FLOOR, |&(_, r)| r)
}

pub fn ndcg_reward(ranking: &Ranking, grades: &BTreeMap<String, u32>, k_train: usize) -> Result<f64, MetricError> {
    ndcg_at_k(ranking, grades, k_train)
}

pub fn sql_reward(outcome: crate::sql::ExecOutcome, hard_mode: bool) -> f64 {
    use crate::sql::ExecOutcome;
    let bonus = if hard_mode { SQL_EXEC_BONUS } else { 0.0 };
    match outcome {
        ExecOutcome::Match => 1.0 + bonus,
        ExecOutcome::Mismatch => bonus,
        ExecOutcome::ExecutionError => 0.0,
    }
}

/// Scores one response: parse under the environment's grammar, then (only
/// if that succeeded) retrieve or execute and apply `spec`.
pub fn composite_reward<E: Environment + ?Sized>(
    response: &str,
    env: &E,
    spec: &TaskRewardSpec,
    target: Target<'_>,
) -> Result<RewardBreakdown, RewardError> {
    let parsed = match parse_structured_response_with(response, env.grammar(), env.think_mode()) {
        Ok(p) => p,
        Err(_) => return Ok(RewardBreakdown::gated()),
    };
    let mismatch = || RewardError::TargetMismatch { spec: spec.name(), target: target.kind() };
    match (*spec, target) {
        (TaskRewardSpec::RecallTiers { k }, Target::Grades(grades)) => {
            let relevant: BTreeSet<String> =
                grades.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d.clone()).collect();
            let ranking = env.search(&parsed.payload, k)?;
            let recall = recall_at_k(&ranking, &relevant, k)?;
            Ok(RewardBreakdown::scored(recall_tier_reward(recall)?, recall))
        }
        (TaskRewardSpec::RankTiers { depth }, Target::Answers(answers)) => {
            let ranking = env.search(&parsed.payload, depth)?;
            let corpus = env.corpus().ok_or(EnvError::Missing("corpus"))?;
            let rank = first_hit_rank(&ranking, corpus, answers);
            let rr = rank.map_or(0.0, |r| 1.0 / r as f64);
            Ok(RewardBreakdown::scored(rank_tier_reward(rank), rr))
        }
        (TaskRewardSpec::NdcgValue { k }, Target::Grades(grades)) => {
            let ranking = env.search(&parsed.payload, k)?;
            let ndcg = ndcg_reward(&ranking, grades, k)?;
            Ok(RewardBreakdown::scored(ndcg, ndcg))
        }
        (TaskRewardSpec::SqlExec { hard_mode }, Target::GoldSql(gold)) => {
            let Payload::Sql(sql) = &parsed.payload else { return Err(mismatch()) };
            let db = env.database().ok_or(EnvError::Missing("database"))?;
            let score = score_sql(sql, gold, db, hard_mode)?;
            Ok(RewardBreakdown::scored(score.reward, f64::from(score.accuracy)))
        }
        _ => Err(mismatch()),
    }
}
