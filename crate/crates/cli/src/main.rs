//! `styleforge`: corpus building, style-conditioned fine-tuning and
//! generation, detector-based evaluation, syntactic comparison, and
//! attribution analysis behind one entry point.

mod config;
mod errors;
mod manifest;
mod plotdata;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use styleforge_core::backend::BackendId;
use styleforge_core::generation::FineTuneMethod;

use crate::config::PipelineConfig;
use crate::errors::{config_err, exit_code_for};
use crate::stages::Ctx;

#[derive(Parser)]
#[command(
    name = "styleforge",
    version,
    about = "Style-conditioned sentence generation, evaluation, and explanation"
)]
struct Cli {
    /// Backend implementation; also honors STYLEFORGE_BACKEND.
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Master RNG seed for the invoked stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Pipeline config file (used by `pipeline` when its own flag is absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Default output location for subcommands that take one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus construction from raw documents.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Fine-tune the causal model on tagged training strings.
    Finetune(FinetuneArgs),
    /// Generate sentences from single-token seeds.
    Generate(GenerateArgs),
    /// Classify generated sentences and report agreement and filtering.
    Evaluate(EvaluateArgs),
    /// Syntactic feature histograms and divergences, real vs. generated.
    Synfeat(SynfeatArgs),
    /// Attention-enrichment and integrated-gradients analyses.
    Explain(ExplainArgs),
    /// Run every stage from a declarative config file.
    Pipeline(PipelineArgs),
    /// Re-emit a report as plain plot-ready CSV.
    Plotdata(PlotdataArgs),
    /// Write synthetic demo documents and parses for a quick start.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum CorpusAction {
    /// Clean, segment, label, and split raw documents.
    Build(CorpusBuildArgs),
}

#[derive(Args)]
struct CorpusBuildArgs {
    /// Directory of documents: author-named subdirectories or N_*.txt files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Tag scheme JSON; the built-in five-author scheme when omitted.
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Sidecar JSONL with {text, parse} rows.
    #[arg(long)]
    parses: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 3)]
    min_words: usize,
    #[arg(long, default_value_t = 128)]
    max_words: usize,
    /// Require boundary markers instead of falling back to the whole file.
    #[arg(long)]
    strict_markers: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Corpus directory produced by `corpus build`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: FineTuneMethod,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    context: usize,
    #[arg(long, default_value_t = 2000)]
    vocab_words: usize,
    #[arg(long, default_value_t = 8)]
    lora_rank: usize,
    #[arg(long, default_value_t = 16.0)]
    lora_alpha: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator checkpoint directory.
    #[arg(long)]
    model: PathBuf,
    /// Label override; inferred from the checkpoint when omitted.
    #[arg(long, value_parser = parse_method)]
    method: Option<FineTuneMethod>,
    #[arg(long, default_value_t = 50)]
    per_author: usize,
    #[arg(long = "temp", default_value_t = 0.9)]
    temperature: f64,
    #[arg(long = "max-new", default_value_t = 64)]
    max_new_tokens: usize,
    /// Corpus directory supplying the seed-word vocabulary.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    seed_words: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Detector checkpoint directory (trained here when absent and --corpus given).
    #[arg(long)]
    detector: PathBuf,
    /// Generated sentences JSONL.
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value_t = 0.93)]
    threshold: f64,
    /// Corpus directory for detector training.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    detector_epochs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynfeatArgs {
    /// Real records: a corpus.jsonl file.
    #[arg(long)]
    real: PathBuf,
    /// Generated sentences JSONL.
    #[arg(long)]
    generated: PathBuf,
    /// Parse sidecar for generated sentences.
    #[arg(long)]
    parses: Option<PathBuf>,
    /// `all` or a comma-separated feature list.
    #[arg(long, default_value = "all")]
    features: String,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    /// Analysis: attention enrichment, generator IG, or classifier IG.
    #[arg(value_parser = ["ae", "ig-gen", "ig-cls"])]
    analysis: String,
    /// Model checkpoint: generator for ae/ig-gen, detector for ig-cls.
    #[arg(long)]
    model: PathBuf,
    /// generated.jsonl for ig-gen, corpus.jsonl for ig-cls; unused by ae.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 25)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    #[arg(long, value_enum)]
    kind: plotdata::PlotKind,
    /// The report file the data comes from.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// Sentences per author.
    #[arg(long, default_value_t = 300)]
    per_author: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<FineTuneMethod, String> {
    match s {
        "fft" => Ok(FineTuneMethod::Fft),
        "lora" => Ok(FineTuneMethod::Lora),
        other => Err(format!("unknown method {other}; expected fft or lora")),
    }
}

fn required_out(
    explicit: Option<PathBuf>,
    global: &Option<PathBuf>,
    what: &str,
) -> anyhow::Result<PathBuf> {
    explicit
        .or_else(|| global.clone())
        .ok_or_else(|| config_err(format!("--out is required for {what}")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let backend = match &cli.backend {
        Some(name) => BackendId::from_name(name),
        None => BackendId::from_env(),
    }
    .map_err(|e| config_err(e.to_string()))?;
    let backend_name = backend.name();

    match cli.command {
        Command::Corpus {
            action: CorpusAction::Build(args),
        } => {
            let out = required_out(args.out, &cli.out, "corpus build")?;
            let ctx = Ctx::new(backend_name, &out.join("manifests"), cli.seed);
            let section = config::CorpusSection {
                input_dir: args.input,
                scheme: args.scheme,
                parses: args.parses,
                test_fraction: args.test_fraction,
                min_words: args.min_words,
                max_words: args.max_words,
                strict_markers: args.strict_markers,
            };
            stages::stage_corpus(&ctx, &section, &out)
        }
        Command::Finetune(args) => {
            let out = required_out(args.out, &cli.out, "finetune")?;
            let ctx = Ctx::new(backend_name, &out.join("manifests"), cli.seed);
            let model = config::ModelSection {
                layers: args.layers,
                heads: args.heads,
                embed_dim: args.embed_dim,
                context: args.context,
                vocab_words: args.vocab_words,
            };
            let section = config::FinetuneSection {
                epochs: args.epochs,
                batch_size: args.batch_size,
                lr: args.lr,
                pretrain_epochs: args.pretrain_epochs,
                lora_rank: args.lora_rank,
                lora_alpha: args.lora_alpha,
            };
            stages::stage_finetune(&ctx, &args.corpus, &model, &section, args.method, &out)
        }
        Command::Generate(args) => {
            let out = required_out(args.out, &cli.out, "generate")?;
            let manifest_dir = out
                .parent()
                .map(|p| p.join("manifests"))
                .unwrap_or_else(|| PathBuf::from("manifests"));
            let ctx = Ctx::new(backend_name, &manifest_dir, cli.seed);
            let section = config::GenerateSection {
                per_author: args.per_author,
                temperature: args.temperature,
                max_new_tokens: args.max_new_tokens,
                seed_words: args.seed_words,
            };
            stages::stage_generate(
                &ctx,
                &args.model,
                args.corpus.as_deref(),
                &section,
                args.method,
                &out,
            )
        }
        Command::Evaluate(args) => {
            let out = required_out(args.out, &cli.out, "evaluate")?;
            let ctx = Ctx::new(backend_name, &out.join("manifests"), cli.seed);
            let section = config::EvaluateSection {
                threshold: args.threshold,
            };
            let detector_section = config::DetectorSection {
                epochs: args.detector_epochs,
                ..Default::default()
            };
            stages::stage_evaluate(
                &ctx,
                &args.detector,
                args.corpus.as_deref(),
                &args.generated,
                &section,
                &detector_section,
                &out,
            )
        }
        Command::Synfeat(args) => {
            let out = required_out(args.out, &cli.out, "synfeat")?;
            let ctx = Ctx::new(backend_name, &out.join("manifests"), cli.seed);
            let section = config::SynfeatSection {
                bins: args.bins,
                features: args.features,
            };
            stages::stage_synfeat(
                &ctx,
                &args.real,
                &args.generated,
                args.parses.as_deref(),
                &section,
                &out,
            )
        }
        Command::Explain(args) => {
            let out = required_out(args.out, &cli.out, "explain")?;
            let ctx = Ctx::new(backend_name, &out.join("manifests"), cli.seed);
            let section = config::ExplainSection {
                steps: args.steps,
                ae_samples: args.samples,
                ig_samples: args.samples.min(20),
                cls_sentences: args.samples,
                top_k: args.top_k,
            };
            let input = |what: &str| {
                args.input
                    .clone()
                    .ok_or_else(|| config_err(format!("--input is required for {what}")))
            };
            match args.analysis.as_str() {
                "ae" => stages::stage_explain_ae(&ctx, &args.model, &section, &out),
                "ig-gen" => stages::stage_explain_ig_gen(
                    &ctx,
                    &args.model,
                    &input("ig-gen")?,
                    &section,
                    &out,
                ),
                "ig-cls" => stages::stage_explain_ig_cls(
                    &ctx,
                    &args.model,
                    &input("ig-cls")?,
                    &section,
                    &out,
                ),
                other => Err(config_err(format!("unknown analysis {other}"))),
            }
        }
        Command::Pipeline(args) => {
            let path = args
                .config
                .or(cli.config)
                .ok_or_else(|| config_err("pipeline needs --config FILE"))?;
            let config = PipelineConfig::load(&path).map_err(|e| config_err(e.to_string()))?;
            stages::run_pipeline(&config)
        }
        Command::Plotdata(args) => {
            let out = required_out(args.out, &cli.out, "plotdata")?;
            plotdata::emit_plot_data(args.kind, &args.report, &out)
        }
        Command::Demo(args) => {
            let out = required_out(args.out, &cli.out, "demo")?;
            stages::write_demo_inputs(&out, args.per_author, cli.seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
