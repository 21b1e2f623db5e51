use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use opinionrank::cli::{
    cmd_eval, cmd_index, cmd_query, cmd_train_crf, read_cli_config, CliConfig, CliError, EvalArgs,
    QueryArgs,
};
use opinionrank::crf::Hyperparams;
use opinionrank::rank::{Bm25Params, TierMode};

/// Opinion-based entity ranking: train the aspect CRF, index review
/// corpora, and rank entities against aspect-preference queries.
#[derive(Parser)]
#[command(name = "opinionrank", version)]
struct Cli {
    /// Optional key=value config file with default paths and parameters
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Verbose diagnostics
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the aspect-extraction CRF from CoNLL annotations
    TrainCrf {
        /// Annotation file: token<TAB>label lines, blank line between sentences
        #[arg(long)]
        annotations: PathBuf,
        /// Where to write the trained model
        #[arg(long)]
        model_out: PathBuf,
        /// Opinion lexicon TSV (defaults to the built-in seed lexicon)
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// L2 regularization strength
        #[arg(long)]
        l2: Option<f64>,
        /// Gradient-ascent learning rate
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Training epochs
        #[arg(long)]
        epochs: Option<u32>,
        /// Mini-batch size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Shuffle seed (fixed seed -> identical model)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build a queryable index from a review corpus
    Index {
        /// Corpus TSV: entity_id<TAB>review_id<TAB>text
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Trained CRF model
        #[arg(long)]
        model: Option<PathBuf>,
        /// Where to write the index
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Fuzzy inference parameters (defaults compiled in)
        #[arg(long)]
        fuzzy_config: Option<PathBuf>,
        /// Fail on the first corrupt corpus line instead of skipping it
        #[arg(long)]
        strict: bool,
    },
    /// Rank entities against an aspect-preference query
    Query {
        /// Free text ("good battery life") or structured tokens
        /// ("battery_life:pos:strong display:pos")
        query: String,
        #[arg(long)]
        index: Option<PathBuf>,
        /// CRF model (required for free-text queries)
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        fuzzy_config: Option<PathBuf>,
        /// Show at most this many results
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Print per-aspect match detail
        #[arg(long)]
        explain: bool,
        /// Machine-readable output: rank<TAB>entity<TAB>tier<TAB>score
        #[arg(long)]
        porcelain: bool,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        /// How per-aspect levels combine: every | average
        #[arg(long)]
        tier_mode: Option<String>,
    },
    /// Score rankings against relevance judgments (P@k, NDCG@k)
    Eval {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Queries file: query_id<TAB>query per line
        #[arg(long)]
        queries: PathBuf,
        /// Judgments file: query_id<TAB>entity_id<TAB>grade per line
        #[arg(long)]
        qrels: PathBuf,
        /// Also score a BM25-only ranking with tiers disabled
        #[arg(long)]
        baseline: bool,
        /// Metric cutoff
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        fuzzy_config: Option<PathBuf>,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        tier_mode: Option<String>,
    },
}

fn parse_tier_mode(flag: Option<&str>, config: &CliConfig) -> Result<TierMode, CliError> {
    match flag {
        Some(s) => TierMode::parse(s)
            .ok_or_else(|| CliError::Usage(format!("bad tier mode {s:?} (expected every|average)"))),
        None => Ok(config.tier_mode.unwrap_or_default()),
    }
}

fn bm25_params(k1: Option<f64>, b: Option<f64>, config: &CliConfig) -> Bm25Params {
    let defaults = Bm25Params::default();
    Bm25Params {
        k1: k1.or(config.k1).unwrap_or(defaults.k1),
        b: b.or(config.b).unwrap_or(defaults.b),
    }
}

fn require(path: Option<PathBuf>, fallback: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.or(fallback)
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (no config default either)")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => read_cli_config(path)?,
        None => CliConfig::default(),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::TrainCrf {
            annotations,
            model_out,
            lexicon,
            l2,
            learning_rate,
            epochs,
            batch_size,
            seed,
        } => {
            let defaults = Hyperparams::default();
            let hyper = Hyperparams {
                l2: l2.unwrap_or(defaults.l2),
                learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                epochs: epochs.unwrap_or(defaults.epochs),
                batch_size: batch_size.unwrap_or(defaults.batch_size),
                seed: seed.unwrap_or(defaults.seed),
            };
            let lexicon = lexicon.or(config.lexicon);
            cmd_train_crf(&annotations, &model_out, lexicon.as_deref(), hyper, &mut out)
        }
        Command::Index { corpus, model, out: out_path, lexicon, fuzzy_config, strict } => {
            let corpus = require(corpus, config.corpus.clone(), "corpus")?;
            let model = require(model, config.model.clone(), "model")?;
            let lexicon = lexicon.or(config.lexicon);
            let fuzzy_config = fuzzy_config.or(config.fuzzy_config);
            cmd_index(
                &corpus,
                &model,
                &out_path,
                lexicon.as_deref(),
                fuzzy_config.as_deref(),
                strict,
                cli.verbose > 0,
                &mut out,
            )
        }
        Command::Query {
            query,
            index,
            model,
            lexicon,
            fuzzy_config,
            top,
            explain,
            porcelain,
            k1,
            b,
            tier_mode,
        } => {
            let index = require(index, config.index.clone(), "index")?;
            let params = bm25_params(k1, b, &config);
            let mode = parse_tier_mode(tier_mode.as_deref(), &config)?;
            let model = model.or(config.model.clone());
            let lexicon = lexicon.or(config.lexicon.clone());
            let fuzzy_config = fuzzy_config.or(config.fuzzy_config.clone());
            cmd_query(
                &QueryArgs {
                    index: &index,
                    query: &query,
                    model: model.as_deref(),
                    lexicon: lexicon.as_deref(),
                    fuzzy_config: fuzzy_config.as_deref(),
                    top,
                    explain,
                    porcelain,
                    params,
                    mode,
                },
                &mut out,
            )
        }
        Command::Eval {
            index,
            queries,
            qrels,
            baseline,
            k,
            model,
            lexicon,
            fuzzy_config,
            k1,
            b,
            tier_mode,
        } => {
            let index = require(index, config.index.clone(), "index")?;
            let params = bm25_params(k1, b, &config);
            let mode = parse_tier_mode(tier_mode.as_deref(), &config)?;
            let model = model.or(config.model.clone());
            let lexicon = lexicon.or(config.lexicon.clone());
            let fuzzy_config = fuzzy_config.or(config.fuzzy_config.clone());
            cmd_eval(
                &EvalArgs {
                    index: &index,
                    queries: &queries,
                    qrels: &qrels,
                    model: model.as_deref(),
                    lexicon: lexicon.as_deref(),
                    fuzzy_config: fuzzy_config.as_deref(),
                    k,
                    baseline,
                    params,
                    mode,
                },
                &mut out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(), // prints help/usage; exits 0 for --help, 2 otherwise
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
