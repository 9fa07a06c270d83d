use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prca_core::gateway::{EndpointConfig, Gateway, HttpClient, JudgeBackend, MockGenerator, PromptTemplate};
use prca_core::pipeline::{
    build_toy, evaluate, ingest, read_qa_jsonl, run_contextual_stage, run_reward_stage, sweep_topk, write_sweep_csv,
    BackendKind, EvalSetup, KnowledgeBase, RunConfig, ToyConfig,
};
use prca_core::policy::PolicySnapshot;
use prca_core::retrieval::{Corpus, InvertedIndex};

const AFTER_HELP: &str = "\
Configuration is one flat TOML file whose keys mirror the training config
(learning_rate, batch_size, num_beams, retrieval_k, clip_eps, ...) plus the
run settings below. Every key can be overridden with --set key=value.

Paths (run settings):
  corpus        corpus JSONL, one {\"id\", \"text\"} per line
  train, test   QA JSONL, one {\"question\", \"answer\", \"gold_context\"?, \"doc_ids\"?} per line
  index         BM25 index file written by build-index
  output_dir    checkpoints, logs, reports and sweep CSVs

Outputs under output_dir:
  extract.ckpt, extract_loss.jsonl     from train-extract
  reward.ckpt, reward_log.jsonl        from train-reward
  eval_with.json / eval_without.json   from evaluate
  sweep.csv                            from sweep-topk

Backends: generator = mock | http, judge = mock | http. The http backend
posts chat-completion requests to endpoint_url and reads the bearer token
from the PRCA_API_KEY environment variable.";

#[derive(Parser)]
#[command(name = "prca", version, about = "Train and evaluate a contextual adapter for retrieval QA")]
#[command(after_help = AFTER_HELP)]
struct Cli {
    /// Flat TOML config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic distractor benchmark (corpus, train, test).
    GenToy(GenToyArgs),
    /// Build the BM25 index over the corpus.
    BuildIndex,
    /// Supervised extraction stage; writes extract.ckpt.
    TrainExtract,
    /// Reward-driven stage on top of an extraction checkpoint; writes reward.ckpt.
    TrainReward {
        /// Defaults to output_dir/extract.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Judge-scored accuracy with or without the adapter.
    Evaluate(EvalArgs),
    /// Evaluate with and without the adapter at several Top-K values.
    SweepTopk {
        /// Defaults to output_dir/reward.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        ks: Vec<usize>,
    },
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 8)]
    distractors: usize,
    #[arg(long)]
    multi_hop: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Adapter checkpoint; defaults to output_dir/reward.ckpt.
    #[arg(long, conflicts_with = "no_adapter")]
    checkpoint: Option<PathBuf>,
    /// Feed the raw Top-K concatenation to the generator.
    #[arg(long)]
    no_adapter: bool,
    /// Top-K; defaults to retrieval_k.
    #[arg(long)]
    k: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides)?,
        None => RunConfig::parse("", &cli.overrides)?,
    };
    Ok(cfg)
}

fn knowledge_base(cfg: &RunConfig) -> Result<KnowledgeBase> {
    let corpus = Corpus::read_jsonl(&cfg.run.corpus).with_context(|| format!("reading {}", cfg.run.corpus.display()))?;
    if cfg.run.index.exists() {
        let index = InvertedIndex::load(&cfg.run.index).with_context(|| format!("reading {}", cfg.run.index.display()))?;
        Ok(KnowledgeBase::with_index(corpus, index)?)
    } else {
        Ok(KnowledgeBase::new(corpus)?)
    }
}

fn http_client(cfg: &RunConfig) -> Result<HttpClient> {
    let r = &cfg.run;
    let endpoint = EndpointConfig {
        url: r.endpoint_url.clone(),
        model: r.endpoint_model.clone(),
        temperature: r.endpoint_temperature,
        max_tokens: r.endpoint_max_tokens,
        timeout_secs: r.endpoint_timeout_secs,
    };
    let mut client = HttpClient::from_env(endpoint)?;
    if let Some(path) = &r.prompt_template {
        client = client.with_template(PromptTemplate::from_file(path)?);
    }
    Ok(client)
}

/// The generator gateway plus the HTTP client the judge should use, if any.
fn backends(cfg: &RunConfig) -> Result<(Gateway, Option<HttpClient>)> {
    let limit = cfg.run.max_in_flight;
    let gateway = match cfg.run.generator {
        BackendKind::Mock => Gateway::with_limit(MockGenerator, limit),
        BackendKind::Http => Gateway::with_limit(http_client(cfg)?, limit),
    };
    let judge = match cfg.run.judge {
        BackendKind::Mock => None,
        BackendKind::Http => Some(http_client(cfg)?),
    };
    Ok((gateway, judge))
}

fn output_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.run.output_dir).with_context(|| format!("creating {}", cfg.run.output_dir.display()))?;
    Ok(cfg.run.output_dir.join(name))
}

fn load_checkpoint(path: &Path) -> Result<PolicySnapshot> {
    PolicySnapshot::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_toy(args: &GenToyArgs) -> Result<()> {
    let toy = ToyConfig {
        train: args.train,
        test: args.test,
        distractors: args.distractors,
        multi_hop: args.multi_hop,
        seed: args.seed,
        ..ToyConfig::default()
    };
    let bench = build_toy(&toy)?;
    bench.write_to(&args.out)?;
    println!(
        "wrote {} documents, {} train and {} test questions to {}",
        bench.corpus.len(),
        bench.train.len(),
        bench.test.len(),
        args.out.display()
    );
    Ok(())
}

fn build_index(cfg: &RunConfig) -> Result<()> {
    let corpus = Corpus::read_jsonl(&cfg.run.corpus).with_context(|| format!("reading {}", cfg.run.corpus.display()))?;
    let index = InvertedIndex::build(&corpus)?;
    if let Some(dir) = cfg.run.index.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    index.save(&cfg.run.index)?;
    println!(
        "indexed {} documents (avg length {:.1}) into {}",
        index.doc_count(),
        index.avg_doc_length(),
        cfg.run.index.display()
    );
    Ok(())
}

fn train_extract(cfg: &RunConfig) -> Result<()> {
    let data = ingest(&cfg.run.corpus, &cfg.run.train)?;
    let (docs, questions) = data.counts();
    println!("{docs} documents, {questions} training questions");
    let kb = match cfg.run.index.exists() {
        true => KnowledgeBase::with_index(data.corpus, InvertedIndex::load(&cfg.run.index)?)?,
        false => KnowledgeBase::new(data.corpus)?,
    };
    let out = run_contextual_stage(&cfg.training, &kb, &data.instances)?;
    let mut log = BufWriter::new(File::create(output_path(cfg, "extract_loss.jsonl")?)?);
    for (i, loss) in out.step_losses.iter().enumerate() {
        writeln!(log, "{{\"step\":{},\"loss\":{}}}", i + 1, loss)?;
    }
    log.flush()?;
    let ckpt = output_path(cfg, "extract.ckpt")?;
    out.policy.save(&ckpt)?;
    match (out.step_losses.first(), out.step_losses.last()) {
        (Some(a), Some(b)) => println!("{} steps, loss {a:.4} -> {b:.4}", out.step_losses.len()),
        _ => println!("no training steps"),
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn train_reward(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let kb = knowledge_base(cfg)?;
    let train = read_qa_jsonl(&cfg.run.train)?;
    let ckpt = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => cfg.run.output_dir.join("extract.ckpt"),
    };
    let policy = load_checkpoint(&ckpt)?;
    let (gateway, _) = backends(cfg)?;
    let mut log = BufWriter::new(File::create(output_path(cfg, "reward_log.jsonl")?)?);
    let out = run_reward_stage(&cfg.training, &kb, &train, policy, &gateway, Some(&mut log))?;
    let path = output_path(cfg, "reward.ckpt")?;
    out.policy.save(&path)?;
    let n = out.reports.len();
    if n > 0 {
        let q = (n / 4).max(1);
        let mean = |rs: &[prca_core::ppo::PpoUpdateReport]| rs.iter().map(|r| r.mean_reward).sum::<f64>() / rs.len() as f64;
        println!(
            "{n} iterations, {} generator calls, mean reward {:.4} (first quarter) -> {:.4} (last quarter)",
            gateway.calls(),
            mean(&out.reports[..q]),
            mean(&out.reports[n - q..])
        );
    } else {
        println!("no iterations");
    }
    println!("checkpoint: {}", path.display());
    Ok(())
}

fn run_evaluate(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let kb = knowledge_base(cfg)?;
    let test = read_qa_jsonl(&cfg.run.test)?;
    let policy = match (args.no_adapter, &args.checkpoint) {
        (true, _) => None,
        (false, Some(p)) => Some(load_checkpoint(p)?),
        (false, None) => Some(load_checkpoint(&cfg.run.output_dir.join("reward.ckpt"))?),
    };
    let (gateway, judge_client) = backends(cfg)?;
    let judge = match &judge_client {
        Some(c) => JudgeBackend::Api(c),
        None => JudgeBackend::Mock,
    };
    let setup = EvalSetup {
        cfg: &cfg.training,
        kb: &kb,
        gateway: &gateway,
        judge: &judge,
        lenient: cfg.run.lenient,
    };
    let k = args.k.unwrap_or(cfg.training.retrieval_k);
    let report = evaluate(&setup, &test, policy.as_ref(), k)?;
    let name = if policy.is_some() { "eval_with.json" } else { "eval_without.json" };
    let path = output_path(cfg, name)?;
    fs::write(&path, report.to_json()?)?;
    println!(
        "accuracy {:.4} ({}/{}), {} errored, mean context tokens {:.1}, {} generator calls",
        report.accuracy,
        report.yes_count,
        report.instance_count,
        report.errored,
        report.mean_context_tokens,
        report.generator_calls
    );
    println!("report: {}", path.display());
    Ok(())
}

fn run_sweep(cfg: &RunConfig, checkpoint: Option<&Path>, ks: &[usize]) -> Result<()> {
    let kb = knowledge_base(cfg)?;
    let test = read_qa_jsonl(&cfg.run.test)?;
    let policy = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => load_checkpoint(&cfg.run.output_dir.join("reward.ckpt"))?,
    };
    let (gateway, judge_client) = backends(cfg)?;
    let judge = match &judge_client {
        Some(c) => JudgeBackend::Api(c),
        None => JudgeBackend::Mock,
    };
    let setup = EvalSetup {
        cfg: &cfg.training,
        kb: &kb,
        gateway: &gateway,
        judge: &judge,
        lenient: cfg.run.lenient,
    };
    let rows = sweep_topk(&setup, &test, &policy, ks)?;
    let path = output_path(cfg, "sweep.csv")?;
    write_sweep_csv(&rows, BufWriter::new(File::create(&path)?))?;
    write_sweep_csv(&rows, std::io::stdout().lock())?;
    println!("sweep: {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::GenToy(args) = &cli.command {
        if cli.config.is_some() || !cli.overrides.is_empty() {
            bail!("gen-toy takes no config; use its own flags");
        }
        return gen_toy(args);
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenToy(_) => unreachable!("handled above"),
        Command::BuildIndex => build_index(&cfg),
        Command::TrainExtract => train_extract(&cfg),
        Command::TrainReward { checkpoint } => train_reward(&cfg, checkpoint.as_deref()),
        Command::Evaluate(args) => run_evaluate(&cfg, args),
        Command::SweepTopk { checkpoint, ks } => run_sweep(&cfg, checkpoint.as_deref(), ks),
    }
}
