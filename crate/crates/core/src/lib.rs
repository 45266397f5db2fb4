//! Reward design, retrieval environments and a PPO trainer for learning
//! query rewrites at small scale.

pub mod corpus;
pub mod env;
pub mod injection;
pub mod metrics;
pub mod policy;
pub mod ppo;
pub mod query;
pub mod retrieve;
pub mod reward;
pub mod sql;
pub mod synthetic;

pub use corpus::{tokenize, Corpus, Document, InvertedIndex, Qrels};
pub use env::{CountingEnv, Environment, SearchEnv, SqlEnv, TaskItem, TaskTarget, Target};
pub use policy::{ActionVocab, PolicyParams};
pub use ppo::{train, GaeConfig, IterationRecord, PpoConfig};
pub use query::{parse_bool_query, parse_structured_response, render_bool_query, BoolExpr, TaskGrammar};
pub use reward::{composite_reward, RewardBreakdown, TaskRewardSpec};
