//! `rgym`: indexing, training, evaluation, reward oracle and injection
//! analysis for the retrieval gym.

mod data;
mod eval;
mod oracle;
mod train;

use std::fs;
use std::io::{self, BufRead};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use retrieval_gym::injection::{injection_report, InjectionItem};
use retrieval_gym::retrieve::DenseConfig;
use retrieval_gym::synthetic::{SyntheticConfig, SyntheticTask};
use retrieval_gym::{InvertedIndex, PolicyParams};

#[derive(Parser)]
#[command(name = "rgym", version, about = "Retrieval gym command-line tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverted index from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a query-rewriting policy with PPO.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy-decode a checkpoint over a query set and report a metric.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "recall")]
        metric: eval::EvalMetric,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-item CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score responses read as JSON lines on stdin; one reply per line on stdout.
    RewardOracle {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Database fixture; repeat for several.
        #[arg(long)]
        db: Vec<PathBuf>,
        #[arg(long, default_value_t = DenseConfig::default().dim)]
        dense_dim: usize,
        #[arg(long, default_value_t = DenseConfig::default().seed)]
        dense_seed: u64,
    },
    /// Flag generated queries that inject answer spans.
    AnalyzeInjection {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic conjunction task as corpus, queries, qrels and pool files.
    Synth {
        /// Generator settings as JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Index { corpus, out } => {
            let corpus = data::load_corpus(&corpus)?;
            let index = InvertedIndex::build(&corpus);
            fs::write(&out, index.to_json()).with_context(|| format!("cannot write {}", out.display()))?;
            eprintln!("indexed {} documents", index.doc_count());
        }
        Command::Train { config } => {
            let summary = train::run(&config)?;
            match summary.final_mean_reward {
                Some(r) => eprintln!("trained {} iterations, final mean reward {r:.3}", summary.iterations),
                None => eprintln!("zero iterations; checkpoint is the initial policy"),
            }
        }
        Command::Eval { checkpoint, corpus, queries, qrels, metric, k, out, csv } => {
            let src = fs::read_to_string(&checkpoint).with_context(|| format!("cannot read {}", checkpoint.display()))?;
            let params = PolicyParams::from_json(&src).context("loading checkpoint")?;
            let corpus = data::load_corpus(&corpus)?;
            let queries = data::load_queries(&queries)?;
            let qrels = qrels.map(|p| data::load_qrels(&p)).transpose()?;
            let report = eval::evaluate(&params, corpus, &queries, qrels.as_ref(), metric, k)?;
            write_json(&out, &report)?;
            if let Some(path) = csv {
                eval::write_csv(&path, &report)?;
            }
            eprintln!("mean {:?}@{k} = {:.4}", metric, report.mean);
        }
        Command::RewardOracle { corpus, qrels, db, dense_dim, dense_seed } => {
            let corpus = corpus.map(|p| data::load_corpus(&p)).transpose()?;
            let qrels = qrels.map(|p| data::load_qrels(&p)).transpose()?;
            let dbs = db.iter().map(|p| data::load_db(p)).collect::<Result<Vec<_>>>()?;
            let dense = DenseConfig::new(dense_dim, dense_seed)?;
            let oracle = oracle::Oracle::new(corpus, qrels, dbs, dense);
            oracle.serve(io::stdin().lock(), io::stdout().lock())?;
        }
        Command::AnalyzeInjection { input, out } => {
            let file = fs::File::open(&input).with_context(|| format!("cannot open {}", input.display()))?;
            let mut items = Vec::new();
            for (i, line) in io::BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let item: InjectionItem =
                    serde_json::from_str(&line).with_context(|| format!("{} line {}", input.display(), i + 1))?;
                items.push(item);
            }
            let report = injection_report(&items)?;
            write_json(&out, &report)?;
            eprintln!("injection rate {:.4} over {} items", report.rate, report.items.len());
        }
        Command::Synth { config, out_dir } => {
            let cfg: SyntheticConfig = match config {
                Some(p) => {
                    let src = fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                    serde_json::from_str(&src).context("invalid synthetic config")?
                }
                None => SyntheticConfig::default(),
            };
            let task = SyntheticTask::generate(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            let mut corpus = String::new();
            for d in task.corpus.docs() {
                corpus.push_str(&serde_json::to_string(d)?);
                corpus.push('\n');
            }
            fs::write(out_dir.join("corpus.jsonl"), corpus)?;
            let mut queries = String::new();
            for item in &task.items {
                let line = data::QueryLine { id: item.id.clone(), text: item.query.clone(), answers: None };
                queries.push_str(&serde_json::to_string(&line)?);
                queries.push('\n');
            }
            fs::write(out_dir.join("queries.jsonl"), queries)?;
            fs::write(out_dir.join("qrels.tsv"), task.qrels.to_tsv())?;
            fs::write(out_dir.join("pool.txt"), task.pool.join("\n") + "\n")?;
            eprintln!("wrote {} documents and {} queries to {}", task.corpus.len(), task.items.len(), out_dir.display());
        }
    }
    Ok(())
}
