use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod layout;

/// Ingredient amount prediction from recipe embeddings.
#[derive(Parser, Debug)]
#[command(name = "pita", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted substitution groups.
    Synth(SynthArgs),
    /// Build substitution groups and distance matrices from ingredient embeddings.
    BuildGroups(BuildGroupsArgs),
    /// Train one stage of the cascade.
    Train(TrainArgs),
    /// Predict relative amounts for a matrix of recipe embeddings.
    Predict(PredictArgs),
    /// Score a trained model (or a predictions file) on a dataset split.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub ingredients: usize,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value_t = 5000)]
    pub recipes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop amount noise and substitutions.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildGroupsArgs {
    /// Ingredient names, one per line.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Ingredient word embeddings (one row per vocabulary entry).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Curation verdicts as `name<TAB>name<TAB>approve|reject|add`.
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Cosine similarity above which a pair is proposed.
    #[arg(long, default_value_t = pita_core::groups::DEFAULT_PAIR_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageArg {
    Retrieval,
    Id,
    Ap,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// JSON run configuration with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory; overrides `paths.data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Group directory written by build-groups; overrides `paths.groups`.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Model directory. Earlier stages are read from here.
    #[arg(long)]
    pub out: PathBuf,
    /// Config override, `key=value`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Raw recipe embeddings.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Recipe lines selecting rows and ids; without it every row is
    /// predicted with its row number as id.
    #[arg(long)]
    pub recipes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Score these predictions instead of running the model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PITA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::BuildGroups(a) => commands::build_groups(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.to_string().replace('\n', " ");
            eprintln!("pita: error[{}] {}: {msg}", f.code(), f.kind());
            ExitCode::from(f.code())
        }
    }
}
