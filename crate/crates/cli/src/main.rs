//! The `mumo` binary: every pipeline stage as a subcommand, plus `pipeline`
//! to run them all behind the manifest, `generate` for one-off decoding and
//! `print-config` to dump the effective configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mumo_cli::bench::{parse_mode, trace_to_jsonl};
use mumo_cli::config::Config;
use mumo_cli::pipeline::{self, Paths};
use mumo_cli::report::ReportFormat;
use mumo_cli::CliError;
use mumo_core::decoder::{generate, DecodeMode};
use mumo_core::io as artifacts;

#[derive(Parser)]
#[command(name = "mumo", about = "word-head decoding benchmark pipeline", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// configuration file; defaults apply where it is absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// master seed fanned out to every stage seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// artifact directory
    #[arg(long, global = true, default_value = "mumo_out")]
    out_dir: PathBuf,
    /// worker threads for the benchmark; 1 forces sequential
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/heldout corpora and the word list
    Synth,
    /// Tokenizer stages
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Train the frozen base model
    TrainBase,
    /// Collect the word inventory into a validated mono vocabulary
    BuildMonoVocab,
    /// Initialize the word head against the trained base model
    InitHead,
    /// Fine-tune the word head; the base model stays frozen
    FinetuneHead,
    /// Decode one prompt and print the generation
    Generate(GenerateArgs),
    /// Run every decoding mode over shared prompts and write the reports
    Bench,
    /// Run all stages, skipping whatever the manifest proves up to date
    Pipeline,
    /// Print the effective configuration as TOML
    PrintConfig,
}

#[derive(Subcommand)]
enum TokenizerCommand {
    /// Learn the byte-pair vocabulary from the training text
    Learn,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    prompt: String,
    /// vanilla, mumo, mumo_no_verify or shortlist
    #[arg(long, default_value = "mumo")]
    mode: String,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// write the step-by-step trace as JSON lines
    #[arg(long)]
    trace: Option<PathBuf>,
    /// allowed-id file for shortlist mode; omitted means the full vocabulary
    #[arg(long)]
    shortlist: Option<PathBuf>,
    /// sample instead of the configured deterministic argmax
    #[arg(long)]
    sample: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.override_seed(seed);
    }
    let paths = Paths::new(&cli.global.out_dir);
    let threads = cli.global.threads;

    let ensure_out_dir = || {
        std::fs::create_dir_all(&paths.out_dir).map_err(|e| {
            CliError::Config(format!("output directory {}: {e}", paths.out_dir.display()))
        })
    };

    match cli.command {
        Command::Synth => {
            ensure_out_dir()?;
            pipeline::stage_synth(&config, &paths, threads)
        }
        Command::Tokenizer(TokenizerCommand::Learn) => {
            ensure_out_dir()?;
            pipeline::stage_learn_bpe(&config, &paths, threads)
        }
        Command::TrainBase => {
            ensure_out_dir()?;
            pipeline::stage_train_base(&config, &paths, threads)
        }
        Command::BuildMonoVocab => {
            ensure_out_dir()?;
            pipeline::stage_build_mono_vocab(&config, &paths, threads)
        }
        Command::InitHead => {
            ensure_out_dir()?;
            pipeline::stage_init_head(&config, &paths, threads)
        }
        Command::FinetuneHead => {
            ensure_out_dir()?;
            pipeline::stage_finetune_head(&config, &paths, threads)
        }
        Command::Generate(args) => generate_command(&config, &paths, args),
        Command::Bench => {
            ensure_out_dir()?;
            pipeline::stage_bench(&config, &paths, threads)
        }
        Command::Pipeline => {
            let statuses = pipeline::run_pipeline(&config, &paths, threads)?;
            for (stage, ran) in &statuses {
                println!("{stage}: {}", if *ran { "ran" } else { "skipped" });
            }
            let report = paths.report(ReportFormat::Markdown);
            if report.exists() {
                println!("\nreport: {}", report.display());
            }
            Ok(())
        }
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn generate_command(config: &Config, paths: &Paths, args: GenerateArgs) -> Result<(), CliError> {
    let stage = CliError::stage("generate");
    let io_err = |e: artifacts::IoError| match e {
        artifacts::IoError::DigestMismatch { .. } => CliError::Artifact(e.to_string()),
        other => CliError::Stage { stage: "generate", message: other.to_string() },
    };

    let mode = parse_mode(&args.mode)?;
    let vocab = artifacts::load_vocabulary(&paths.vocab()).map_err(io_err)?;
    let model = artifacts::load_model(&paths.base_model()).map_err(io_err)?;
    let mono = artifacts::load_mono_vocabulary(&paths.mono(), &vocab).map_err(io_err)?;
    let head = match mode {
        DecodeMode::Mumo | DecodeMode::MumoNoVerify => {
            Some(artifacts::load_head(&paths.head(), &model).map_err(io_err)?)
        }
        _ => None,
    };

    let mut dc = config.decode_config(mode);
    if let Some(n) = args.max_new_tokens {
        dc.max_new_tokens = n;
    }
    if args.sample {
        dc.deterministic = false;
    }
    if mode == DecodeMode::Shortlist {
        dc.shortlist = Some(match &args.shortlist {
            Some(f) => artifacts::load_shortlist(f, &vocab).map_err(io_err)?,
            None => (0..vocab.size() as mumo_core::TokenId).collect(),
        });
    }

    let (bytes, trace) =
        generate(&model, head.as_ref(), &mono, &vocab, &args.prompt, &dc).map_err(&stage)?;
    println!("{}", String::from_utf8_lossy(&bytes));
    log::info!(
        "generate: {} steps, {} tokens, {} invocations, {} positions{}",
        trace.step_count(),
        trace.tokens_emitted,
        trace.invocations,
        trace.positions,
        if trace.truncated { " (truncated at the context limit)" } else { "" }
    );
    if let Some(path) = &args.trace {
        write_file("generate", path, &trace_to_jsonl(&trace))?;
    }
    Ok(())
}

fn write_file(stage: &'static str, path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Stage { stage, message: format!("{}: {e}", path.display()) })
}
