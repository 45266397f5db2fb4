//! `rgym train`: flat JSON config in, learning curve + checkpoint + summary out.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use retrieval_gym::policy::{DEFAULT_MAX_LEN, DEFAULT_TEMPERATURE};
use retrieval_gym::synthetic::{SyntheticConfig, SyntheticTask};
use retrieval_gym::{
    train, ActionVocab, GaeConfig, IterationRecord, PolicyParams, PpoConfig, SearchEnv, TaskItem, TaskRewardSpec,
};

use crate::data;

/// Every key of a training config. Paths are relative to the config file.
/// Either `synthetic` or `corpus` + `queries` (+ `qrels`) selects the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub reward: TaskRewardSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<PathBuf>,
    /// Extra action terms, one per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    pub seed: u64,
    pub iterations: usize,
    pub output_dir: PathBuf,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "d_value_coef")]
    pub value_coef: f64,
    #[serde(default = "d_entropy_coef")]
    pub entropy_coef: f64,
    #[serde(default = "d_kl_beta")]
    pub kl_beta: f64,
    #[serde(default = "d_lr_actor")]
    pub lr_actor: f64,
    #[serde(default = "d_lr_critic")]
    pub lr_critic: f64,
    #[serde(default = "d_batch")]
    pub batch_episodes: usize,
    #[serde(default = "d_minibatch")]
    pub minibatch_episodes: usize,
    #[serde(default = "d_epochs")]
    pub epochs_per_batch: usize,
    #[serde(default = "d_normalize")]
    pub normalize_advantages: bool,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
}

fn ppo_default() -> PpoConfig {
    PpoConfig::default()
}
fn d_max_len() -> usize {
    DEFAULT_MAX_LEN
}
fn d_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn d_clip_eps() -> f64 {
    ppo_default().clip_eps
}
fn d_value_coef() -> f64 {
    ppo_default().value_coef
}
fn d_entropy_coef() -> f64 {
    ppo_default().entropy_coef
}
fn d_kl_beta() -> f64 {
    ppo_default().kl_beta
}
fn d_lr_actor() -> f64 {
    ppo_default().lr_actor
}
fn d_lr_critic() -> f64 {
    ppo_default().lr_critic
}
fn d_batch() -> usize {
    ppo_default().batch_episodes
}
fn d_minibatch() -> usize {
    ppo_default().minibatch_episodes
}
fn d_epochs() -> usize {
    ppo_default().epochs_per_batch
}
fn d_normalize() -> bool {
    ppo_default().normalize_advantages
}
fn d_gamma() -> f64 {
    GaeConfig::default().gamma
}
fn d_lambda() -> f64 {
    GaeConfig::default().lambda
}

impl TrainConfig {
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_eps: self.clip_eps,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            kl_beta: self.kl_beta,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            batch_episodes: self.batch_episodes,
            minibatch_episodes: self.minibatch_episodes,
            epochs_per_batch: self.epochs_per_batch,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn gae(&self) -> GaeConfig {
        GaeConfig { gamma: self.gamma, lambda: self.lambda }
    }
}

pub fn parse_config(src: &str) -> Result<TrainConfig> {
    serde_json::from_str(src).context("invalid training config")
}

/// Summary written next to the curve and checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    /// Mean total reward of the last iteration; absent after zero iterations.
    pub final_mean_reward: Option<f64>,
    pub final_metric: Option<f64>,
    pub seed: u64,
    pub iterations: usize,
    pub checkpoint_checksum: String,
    pub config: TrainConfig,
}

struct Task {
    env: SearchEnv,
    items: Vec<TaskItem>,
    vocab: ActionVocab,
}

fn load_task(cfg: &TrainConfig, base: &Path) -> Result<Task> {
    match (&cfg.synthetic, &cfg.corpus, &cfg.queries) {
        (Some(syn), None, None) => {
            ensure!(cfg.qrels.is_none() && cfg.pool.is_none(), "`qrels` and `pool` do not apply to a synthetic task");
            let task = SyntheticTask::generate(syn)?;
            let vocab = task.vocab()?;
            Ok(Task { env: SearchEnv::boolean(task.corpus), items: task.items, vocab })
        }
        (None, Some(corpus), Some(queries)) => {
            let corpus = data::load_corpus(&data::resolve(base, corpus))?;
            let queries = data::load_queries(&data::resolve(base, queries))?;
            let qrels = cfg.qrels.as_ref().map(|p| data::load_qrels(&data::resolve(base, p))).transpose()?;
            let pool = cfg.pool.as_ref().map(|p| data::load_pool(&data::resolve(base, p))).transpose()?.unwrap_or_default();
            let items = data::task_items(&queries, qrels.as_ref(), &cfg.reward)?;
            let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
            let vocab = ActionVocab::for_task(&texts, &pool)?;
            Ok(Task { env: SearchEnv::boolean(corpus), items, vocab })
        }
        (Some(_), _, _) => bail!("give either `synthetic` or `corpus` + `queries`, not both"),
        _ => bail!("the config needs `synthetic`, or both `corpus` and `queries`"),
    }
}

fn write_curve(path: &Path, curve: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    if curve.is_empty() {
        w.write_record(retrieval_gym::ppo::CURVE_COLUMNS)?;
    }
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(config_path: &Path) -> Result<Summary> {
    let src = fs::read_to_string(config_path).with_context(|| format!("cannot read {}", config_path.display()))?;
    let cfg = parse_config(&src)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let task = load_task(&cfg, base)?;
    let init = PolicyParams::zeros(task.vocab, cfg.max_len, cfg.temperature)?;

    let out_dir = data::resolve(base, &cfg.output_dir);
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let result = train(&task.env, &cfg.reward, &task.items, init, &cfg.ppo(), &cfg.gae(), cfg.iterations, &mut rng, &mut |r| {
        curve.push(r.clone())
    });
    let (params, failure) = match result {
        Ok(outcome) => (outcome.params, None),
        Err(f) => (*f.params.clone(), Some(f)),
    };
    write_curve(&out_dir.join("curve.csv"), &curve)?;
    fs::write(out_dir.join("checkpoint.json"), params.to_json())?;
    let last = curve.last();
    let summary = Summary {
        final_mean_reward: last.map(|r| r.mean_total_reward),
        final_metric: last.map(|r| r.mean_retrieval_metric),
        seed: cfg.seed,
        iterations: curve.len(),
        checkpoint_checksum: format!("{:016x}", params.checksum()),
        config: cfg,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if let Some(f) = failure {
        return Err(anyhow::Error::new(f).context("training failed; the last intact checkpoint was written"));
    }
    Ok(summary)
}
