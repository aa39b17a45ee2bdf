//! Command-line front end: one subcommand per pipeline stage, `all` to run
//! the whole chain, and `gen-corpus` to produce a synthetic test corpus.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flew_pipeline::config::{load_config, PipelineConfig};
use flew_pipeline::manifest::StageManifest;
use flew_pipeline::stages::{run_all, run_stage, Stage};
use flew_pipeline::synth::{generate, write_corpus, SynthSpec};

#[derive(Parser)]
#[command(
    name = "flew",
    version,
    about = "Facet-weighted citation embeddings: stage runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Arguments shared by every stage subcommand.
#[derive(Args)]
struct StageArgs {
    /// Flat key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's stage directory.
    #[arg(long)]
    stage_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Directory to write the corpus into.
    #[arg(long)]
    out: PathBuf,
    /// Seed for corpus generation.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of papers to generate.
    #[arg(long, default_value_t = 300)]
    papers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus files and write canonical copies.
    Ingest(StageArgs),
    /// Split the citation graph into per-facet weighted subgraphs.
    Facets(StageArgs),
    /// Train structural node embeddings on each facet subgraph.
    EmbedGraph(StageArgs),
    /// Sample ranked-window triplets from each node-embedding table.
    Sample(StageArgs),
    /// Split every abstract into facet sections.
    SplitText(StageArgs),
    /// Train the three facet text encoders on materialized triplets.
    Train(StageArgs),
    /// Embed every document with each facet encoder.
    Encode(StageArgs),
    /// Grid-search facet weights per validation task.
    SearchWeights(StageArgs),
    /// Score every task with its best weights and each facet alone.
    Evaluate(StageArgs),
    /// Run every stage in dependency order.
    All(StageArgs),
    /// Generate a synthetic corpus with planted facet communities.
    GenCorpus(GenArgs),
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), String> {
    let one = |args: StageArgs, stage: Stage| -> Result<(), String> {
        let cfg = load_with_overrides(&args)?;
        let manifest = run_stage(stage, &cfg).map_err(|e| e.to_string())?;
        report(&manifest);
        Ok(())
    };
    match command {
        Command::Ingest(a) => one(a, Stage::Ingest),
        Command::Facets(a) => one(a, Stage::Facets),
        Command::EmbedGraph(a) => one(a, Stage::EmbedGraph),
        Command::Sample(a) => one(a, Stage::Sample),
        Command::SplitText(a) => one(a, Stage::SplitText),
        Command::Train(a) => one(a, Stage::Train),
        Command::Encode(a) => one(a, Stage::Encode),
        Command::SearchWeights(a) => one(a, Stage::SearchWeights),
        Command::Evaluate(a) => one(a, Stage::Evaluate),
        Command::All(a) => {
            let cfg = load_with_overrides(&a)?;
            let manifests = run_all(&cfg).map_err(|e| e.to_string())?;
            manifests.iter().for_each(report);
            Ok(())
        }
        Command::GenCorpus(g) => {
            let spec = SynthSpec {
                papers: g.papers,
                seed: g.seed,
                ..SynthSpec::default()
            };
            let corpus = generate(&spec).map_err(|e| e.to_string())?;
            let config_path = write_corpus(&corpus, &g.out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} papers, {} citation lines, {} tasks; config at {}",
                spec.papers,
                corpus.citation_lines.len(),
                corpus.tasks.len(),
                config_path.display()
            );
            Ok(())
        }
    }
}

fn load_with_overrides(args: &StageArgs) -> Result<PipelineConfig, String> {
    let mut cfg = load_config(&args.config).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.stage_dir {
        cfg.stage_dir = dir.clone();
    }
    Ok(cfg)
}

fn report(manifest: &StageManifest) {
    println!("stage {}: {}", manifest.stage, manifest.note);
}
