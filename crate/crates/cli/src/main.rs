mod config;
mod rundir;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dcdcsr::synth::{self, SynthConfig};
use dcdcsr::Task;

use crate::config::{ConfigArgs, RunConfig};
use crate::rundir::RunDir;
use crate::stages::stage;

#[derive(Parser)]
#[command(name = "dcdcsr", version, about = "Cross-domain recommendation by deep latent-factor mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, train every stage for every seed, evaluate and write reports
    Run(ConfigArgs),
    /// Chronological train/test split of the target ratings
    Split(ConfigArgs),
    /// Factorize source and target training ratings
    TrainMf(StageArgs),
    /// Build benchmark factors from the two factorizations
    Bridge(StageArgs),
    /// Train the mapping network and map every target factor
    Map(StageArgs),
    /// Refit the other side with the mapped factors held fixed
    Finetune(StageArgs),
    /// Score every configured method and write reports
    Evaluate(ConfigArgs),
    /// Print the top items for one user of a finished run
    Recommend(RecommendArgs),
    /// Write a synthetic source/target pair with planted shared factors
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Only this seed instead of every configured seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    user: String,
    #[arg(long, short, default_value_t = 10)]
    n: usize,
    /// Seed whose final model is used; defaults to the first configured seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for source.csv, target.csv and config.toml
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "CDR")]
    task: Task,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Users per domain (items per system for CSR)
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    common_fraction: Option<f64>,
    #[arg(long)]
    source_per_entity: Option<usize>,
    #[arg(long)]
    target_per_entity: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

fn stage_seeds(cfg: &RunConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s])
}

fn with_stage(name: &str, args: &StageArgs, f: fn(&RunConfig, &RunDir, &[u64]) -> Result<()>) -> Result<()> {
    stage(name, || {
        let cfg = RunConfig::resolve(&args.config)?;
        let rd = RunDir::new(cfg.output());
        f(&cfg, &rd, &stage_seeds(&cfg, args.seed))?;
        rd.write_manifest()
    })
}

fn synth(args: &SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        task: args.task,
        seed: args.seed,
        n_shared_side: args.entities.unwrap_or(d.n_shared_side),
        common_fraction: args.common_fraction.unwrap_or(d.common_fraction),
        source_per_entity: args.source_per_entity.unwrap_or(d.source_per_entity),
        target_per_entity: args.target_per_entity.unwrap_or(d.target_per_entity),
        noise_std: args.noise.unwrap_or(d.noise_std),
        ..d
    };
    let pair = synth::generate(&cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    pair.source.write_to(&args.out.join("source.csv"), ',')?;
    pair.target.write_to(&args.out.join("target.csv"), ',')?;
    let run = RunConfig {
        task: args.task,
        source: Some("source.csv".into()),
        target: Some("target.csv".into()),
        scale: cfg.scale,
        ..Default::default()
    };
    let text = format!("output = \"run\"\n{}", toml::to_string(&run)?);
    std::fs::write(args.out.join("config.toml"), text)?;
    eprintln!(
        "synth: {} source and {} target ratings, {} shared entities",
        pair.source.len(),
        pair.target.len(),
        pair.common.len()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let reports = stages::run(&cfg, &RunDir::new(cfg.output()))?;
            let mut out = std::io::stdout().lock();
            dcdcsr::eval::ExperimentReport::write_summary_text(&reports, &mut out)?;
            Ok(())
        }
        Command::Split(args) => stage("split", || {
            let cfg = RunConfig::resolve(&args)?;
            let rd = RunDir::new(cfg.output());
            stages::split(&cfg, &rd)?;
            rd.write_manifest()
        }),
        Command::TrainMf(a) => with_stage("train-mf", &a, stages::train_mf),
        Command::Bridge(a) => with_stage("bridge", &a, stages::bridge),
        Command::Map(a) => with_stage("map", &a, stages::map),
        Command::Finetune(a) => with_stage("finetune", &a, stages::finetune),
        Command::Evaluate(args) => stage("evaluate", || {
            let cfg = RunConfig::resolve(&args)?;
            let rd = RunDir::new(cfg.output());
            let reports = stages::evaluate(&cfg, &rd)?;
            rd.write_manifest()?;
            let mut out = std::io::stdout().lock();
            dcdcsr::eval::ExperimentReport::write_summary_text(&reports, &mut out)?;
            Ok(())
        }),
        Command::Recommend(a) => stage("recommend", || {
            let cfg = RunConfig::resolve(&a.config)?;
            let seed = a.seed.unwrap_or(cfg.seeds[0]);
            let recs = stages::recommend(&cfg, &RunDir::new(cfg.output()), seed, &a.user, a.n)?;
            for (rank, (item, score)) in recs.iter().enumerate() {
                println!("{}\t{item}\t{score:.4}", rank + 1);
            }
            Ok(())
        }),
        Command::Synth(a) => stage("synth", || synth(&a)),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
