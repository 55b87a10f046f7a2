use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use oncoalign_core::config::{PipelineConfig, ENV_CONFIG};
use oncoalign_core::embed::EmbeddingRequest;
use oncoalign_core::jsonl::{read_jsonl, write_jsonl};
use oncoalign_core::metrics::report::{build_report, write_samples_csv, EvalRecord, ReportOptions};
use oncoalign_core::pipeline::{Pipeline, Stage};
use oncoalign_core::records::{instruction_text, SurvivalOutcome};
use oncoalign_core::reward::{total_reward, RewardBreakdown};

#[derive(Parser)]
#[command(name = "oncoalign", version, about = "Survival-outcome reasoning pipeline")]
struct Cli {
    /// TOML config; falls back to $ONCOALIGN_CONFIG, then built-in defaults.
    #[arg(long, global = true, env = ENV_CONFIG)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact root; one subdirectory per stage.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run stages in pipeline order (all, or those listed in the config).
    Run {
        /// Comma-separated stage names.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Parse and validate records, then split train/eval.
    Ingest,
    /// Render prompts and training pairs.
    Prompts,
    /// Score model outputs with the composite reward.
    Score(ScoreArgs),
    /// Cluster embeddings and select exemplars.
    Coldstart,
    /// Train the toy policy with GRPO.
    TrainToy(TrainToyArgs),
    /// Evaluate model outputs.
    Eval(EvalArgs),
    /// Aggregate stage artifacts into a summary.
    Report,
    /// Embed `{id, text}` lines into `{id, vector}` lines.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ScoreArgs {
    /// Standalone mode: `{id?, output_text, truth: {status, months}}` lines.
    #[arg(long, requires = "output")]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    clip_epsilon: Option<f64>,
    #[arg(long)]
    kl_coeff: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Also copy the training log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Standalone mode: evaluation JSONL with `{id, cancer_type, output_text, truth_status, truth_months, reference_trace?}`.
    #[arg(long, requires = "output_dir")]
    input: Option<PathBuf>,
    /// Receives report.json and samples.csv.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ScoreInput {
    id: Option<String>,
    output_text: String,
    truth: SurvivalOutcome,
}

#[derive(Serialize)]
struct ScoreOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(flatten)]
    reward: RewardBreakdown,
}

#[derive(Deserialize)]
struct TextInput {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct VectorOutput {
    id: String,
    vector: Vec<f64>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_stages(cfg: PipelineConfig, out: &Path, stages: &[Stage]) -> Result<()> {
    let pipeline = Pipeline::new(cfg, out);
    for report in pipeline.run(stages)? {
        println!("{}: {}", report.stage, serde_json::to_value(report.status)?.as_str().unwrap_or("?"));
    }
    Ok(())
}

fn score_standalone(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<()> {
    let rows: Vec<ScoreInput> = read_jsonl(input)?;
    let scored: Vec<ScoreOutput> = rows
        .into_iter()
        .map(|r| ScoreOutput {
            reward: total_reward(&r.output_text, &r.truth, &cfg.reward),
            id: r.id,
        })
        .collect();
    write_jsonl(output, &scored)?;
    println!("scored {} outputs", scored.len());
    Ok(())
}

fn eval_standalone(cfg: &PipelineConfig, input: &Path, dir: &Path) -> Result<()> {
    let records: Vec<EvalRecord> = read_jsonl(input)?;
    let provider = cfg.embedding_provider()?;
    let opts = ReportOptions {
        profile: cfg.eval.profile,
        rescale_baseline: cfg.eval.rescale_baseline,
        default_prompt: instruction_text(true),
    };
    let (report, rows) = build_report(&records, provider.as_ref(), &opts);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    fs::write(dir.join("report.json"), json)?;
    write_samples_csv(&rows, fs::File::create(dir.join("samples.csv"))?)?;
    println!(
        "evaluated {} samples ({} scoreable, {} missing)",
        report.n_samples, report.missing.n_scoreable, report.missing.n_missing
    );
    Ok(())
}

fn embed(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<()> {
    let rows: Vec<TextInput> = read_jsonl(input)?;
    if rows.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let provider = cfg.embedding_provider()?;
    let response = provider.embed(&EmbeddingRequest::new(rows.iter().map(|r| r.text.clone())))?;
    let out: Vec<VectorOutput> = rows
        .into_iter()
        .zip(response.vectors)
        .map(|(r, vector)| VectorOutput { id: r.id, vector })
        .collect();
    write_jsonl(output, &out)?;
    println!("embedded {} texts with {}", out.len(), response.provider_id);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Run { stages } => {
            if !stages.is_empty() {
                cfg.stages = stages;
            }
            let stages = Pipeline::new(cfg.clone(), &cli.out).configured_stages()?;
            run_stages(cfg, &cli.out, &stages)
        }
        Command::Ingest => run_stages(cfg, &cli.out, &[Stage::Ingest]),
        Command::Prompts => run_stages(cfg, &cli.out, &[Stage::Prompts]),
        Command::Score(args) => match (args.input, args.output) {
            (Some(input), Some(output)) => score_standalone(&cfg, &input, &output),
            _ => run_stages(cfg, &cli.out, &[Stage::Score]),
        },
        Command::Coldstart => run_stages(cfg, &cli.out, &[Stage::ColdStart]),
        Command::TrainToy(args) => {
            if let Some(g) = args.group_size {
                cfg.grpo.group_size = g;
            }
            if let Some(e) = args.clip_epsilon {
                cfg.grpo.clip_epsilon = e;
            }
            if let Some(b) = args.kl_coeff {
                cfg.grpo.kl_coeff = b;
            }
            if let Some(s) = args.steps {
                cfg.toy.steps = s;
            }
            let pipeline = Pipeline::new(cfg.clone(), &cli.out);
            run_stages(cfg, &cli.out, &[Stage::TrainToy])?;
            if let Some(log) = args.log {
                let src = pipeline.stage_dir(Stage::TrainToy).join("train_log.jsonl");
                fs::copy(&src, &log).with_context(|| format!("copying training log to {}", log.display()))?;
            }
            Ok(())
        }
        Command::Eval(args) => match (args.input, args.output_dir) {
            (Some(input), Some(dir)) => eval_standalone(&cfg, &input, &dir),
            _ => run_stages(cfg, &cli.out, &[Stage::Eval]),
        },
        Command::Report => run_stages(cfg, &cli.out, &[Stage::Report]),
        Command::Embed { input, output } => embed(&cfg, &input, &output),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
