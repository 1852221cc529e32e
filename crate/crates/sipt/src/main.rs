//! Command-line front end: each subcommand is a thin wrapper over the
//! library so every run is equally scriptable from Rust.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sipt::experiment::{
    evaluate_from_dir, prepare, read_embeddings_csv, run_experiment, run_noise_sweep, train_arm,
    write_inputs, Arm, ExperimentConfig, ExperimentOutcome, DEFAULT_NOISE_RATES,
};
use sipt::project::export_projection;

#[derive(Parser)]
#[command(
    name = "sipt",
    version,
    about = "Structure-inducing pre-training experiments on synthetic corpora"
)]
struct Cli {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory (beats SIPT_OUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the topic-model corpus and write corpus.jsonl.
    GenerateCorpus,
    /// Build the variant's pre-training graph; write graph.edges and labels.json.
    BuildGraph,
    /// Train the MPT-only and SIPT arms without evaluating.
    Pretrain,
    /// Evaluate existing checkpoints (inputs are re-derived from the config).
    Evaluate,
    /// Full pipeline: inputs, both arms, evaluation artifacts.
    Experiment,
    /// Cliques noise sweep: shared MPT arm, one SIPT arm per rate.
    NoiseSweep {
        /// Comma-separated noise rates (default 0,0.05,0.1,0.15,0.5).
        #[arg(long, value_delimiter = ',', value_name = "RATES")]
        rates: Option<Vec<f64>>,
    },
    /// Project one arm's embeddings onto their top-2 principal components.
    Project {
        #[arg(long, value_enum, default_value_t = ArmName::Sipt)]
        arm: ArmName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmName {
    Mpt,
    Sipt,
}

impl From<ArmName> for Arm {
    fn from(name: ArmName) -> Arm {
        match name {
            ArmName::Mpt => Arm::Mpt,
            ArmName::Sipt => Arm::Sipt,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Ok(dir) = std::env::var("SIPT_OUT_DIR") {
        config.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_outcome(outcome: &ExperimentOutcome) {
    println!(
        "lc={} mpt_auroc={} sipt_auroc={} delta={}",
        outcome.mpt.lc,
        outcome.mpt.knn_macro_auroc,
        outcome.sipt.knn_macro_auroc,
        outcome.sipt.knn_macro_auroc - outcome.mpt.knn_macro_auroc
    );
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli)?;
    match cli.command {
        Command::GenerateCorpus => {
            let prepared = prepare(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("corpus.jsonl");
            sipt::corpus::write_corpus(&path, &prepared.corpus)?;
            println!("wrote {} samples to {}", prepared.corpus.len(), path.display());
        }
        Command::BuildGraph => {
            let prepared = prepare(&config)?;
            write_inputs(&prepared, &config)?;
            println!(
                "wrote {} ({} nodes, {} edges)",
                config.out_dir.join("graph.edges").display(),
                prepared.graph.num_nodes(),
                prepared.graph.num_edges()
            );
        }
        Command::Pretrain => {
            let prepared = prepare(&config)?;
            write_inputs(&prepared, &config)?;
            for arm in [Arm::Mpt, Arm::Sipt] {
                train_arm(&prepared, &config, arm)?;
                println!("trained {} arm", arm.dir_name());
            }
        }
        Command::Evaluate => {
            let outcome = evaluate_from_dir(&config)?;
            print_outcome(&outcome);
        }
        Command::Experiment => {
            let outcome = run_experiment(&config)?;
            print_outcome(&outcome);
            println!("artifacts in {}", config.out_dir.display());
        }
        Command::NoiseSweep { rates } => {
            let rates = rates.unwrap_or_else(|| DEFAULT_NOISE_RATES.to_vec());
            let rows = run_noise_sweep(&config, &rates)?;
            for r in &rows {
                println!("rate={} mpt_auroc={} sipt_auroc={}", r.rate, r.mpt_auroc, r.sipt_auroc);
            }
            println!("wrote {}", config.out_dir.join("noise_sweep.csv").display());
        }
        Command::Project { arm } => {
            let dir = config.out_dir.join(Arm::from(arm).dir_name());
            let embeddings = read_embeddings_csv(&dir.join("embeddings.csv"))
                .with_context(|| format!("reading {}", dir.join("embeddings.csv").display()))?;
            let path = dir.join("projection.csv");
            let result = export_projection(&embeddings, &path)?;
            println!(
                "wrote {} ({} rows, explained variance {} / {})",
                path.display(),
                result.coords.len(),
                result.explained[0],
                result.explained[1]
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
