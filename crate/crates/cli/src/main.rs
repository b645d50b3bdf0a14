mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wtopics_core::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "wtopics", version, about = "Survey-weighted mixture-of-unigrams topic models")]
struct Cli {
    /// Worker thread cap (falls back to WTOPICS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a mixture of unigrams to a JSONL corpus.
    Fit(FitArgs),
    /// Fit the hierarchical model with covariate effects.
    FitHier(FitHierArgs),
    /// Topic proportions for covariate combinations from a hierarchical fit.
    CompareGroups(CompareArgs),
    /// Write a synthetic population and one informative sample.
    Simulate(StudyArgs),
    /// Run the weighted vs. unweighted replication study.
    Replicate(ReplicateArgs),
    /// Increase the topic count until the smallest topic falls below 1%.
    SelectTopics(SelectArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSONL corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    /// Dirichlet concentration on topic proportions.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dirichlet concentration on topic-word distributions.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub leapfrog_steps: Option<usize>,
    /// Adapt a diagonal mass matrix during burn-in.
    #[arg(long)]
    pub adapt_mass: bool,
    /// Ignore survey weights (every document weighs 1).
    #[arg(long)]
    pub unweighted: bool,
    /// Stopword list, one word per line (replaces the built-in list).
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Minimum corpus count for a token to enter the vocabulary.
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Words listed per topic.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Cluster documents by per-draw majority vote.
    #[arg(long)]
    pub vote: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    /// Registered model name.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Args, Debug)]
pub struct HierFlags {
    /// Fixed-effect covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Vec<String>,
    /// Random-effect covariate.
    #[arg(long)]
    pub random: Option<String>,
    /// Prior on random-effect variances.
    #[arg(long, value_parser = ["inverse-gamma", "gamma"])]
    pub variance_prior: Option<String>,
    /// One random-effect variance shared by all topics.
    #[arg(long)]
    pub shared_variance: bool,
    /// Variance prior shape.
    #[arg(long)]
    pub a: Option<f64>,
    /// Variance prior scale (rate for the gamma prior).
    #[arg(long)]
    pub b: Option<f64>,
    /// Prior variance of the fixed effects.
    #[arg(long)]
    pub sigma2_beta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FitHierArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    #[command(flatten)]
    pub hier: HierFlags,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Output directory of a `fit-hier` run.
    #[arg(long)]
    pub input: PathBuf,
    /// Covariate combination such as `gender=F,state=CA`; repeatable.
    #[arg(long, required = true)]
    pub group: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    /// JSON study configuration (population, design, hmc, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Population size.
    #[arg(long)]
    pub pop_size: Option<usize>,
    /// Selection size factor of target-topic documents.
    #[arg(long)]
    pub boost: Option<f64>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub target_topic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplicateArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// Number of replicates.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    /// Largest topic count tried.
    #[arg(long)]
    pub max_topics: Option<usize>,
    /// First topic count tried.
    #[arg(long)]
    pub start: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Inference => 4,
    }
}

fn init_threads(cli_threads: Option<usize>) -> Result<(), Error> {
    let n = match cli_threads {
        Some(n) => Some(n),
        None => match std::env::var("WTOPICS_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("WTOPICS_THREADS must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidConfig("thread cap must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::FitHier(a) => commands::fit_hier(a),
        Command::CompareGroups(a) => commands::compare_groups(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Replicate(a) => commands::replicate(a),
        Command::SelectTopics(a) => commands::select_topics(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
