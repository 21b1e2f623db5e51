//! Command implementations behind the `opinionrank` binary.
//!
//! Each command writes its report to the supplied writer and maps failures
//! onto the stable exit-code contract: 0 success, 2 usage or input error,
//! 3 internal error.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{self, build_index, load_index, save_index, CorpusRecord, SkippedLine};
use crate::crf::{self, read_annotations, token_accuracy, CrfModel, Hyperparams};
use crate::eval::{evaluate, read_qrels, read_queries, EvalContext, EvalError};
use crate::fuzzy::FuzzyConfig;
use crate::rank::{parse_query, rank, Bm25Params, RankError, TierMode};
use crate::text::OpinionLexicon;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or bad input files: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Unexpected internal failure: exit code 3.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn internal(msg: impl std::fmt::Display) -> CliError {
    CliError::Internal(msg.to_string())
}

/// Optional key=value defaults file. Flags override these; built-in
/// defaults apply last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub fuzzy_config: Option<PathBuf>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub tier_mode: Option<TierMode>,
}

pub fn read_cli_config(path: &Path) -> Result<CliConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = CliConfig::default();
    for (idx, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(usage(format!(
                "config {} line {}: expected key = value",
                path.display(),
                idx + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            usage(format!("config {} line {}: bad {what} {value:?}", path.display(), idx + 1))
        };
        match key {
            "corpus" => config.corpus = Some(PathBuf::from(value)),
            "lexicon" => config.lexicon = Some(PathBuf::from(value)),
            "model" => config.model = Some(PathBuf::from(value)),
            "index" => config.index = Some(PathBuf::from(value)),
            "fuzzy_config" => config.fuzzy_config = Some(PathBuf::from(value)),
            "k1" => config.k1 = Some(value.parse().map_err(|_| bad("k1"))?),
            "b" => config.b = Some(value.parse().map_err(|_| bad("b"))?),
            "tier_mode" => {
                config.tier_mode = Some(TierMode::parse(value).ok_or_else(|| bad("tier_mode"))?)
            }
            _ => return Err(usage(format!(
                "config {} line {}: unknown key {key:?}",
                path.display(),
                idx + 1
            ))),
        }
    }
    Ok(config)
}

fn load_lexicon(path: Option<&Path>) -> Result<OpinionLexicon, CliError> {
    match path {
        None => Ok(OpinionLexicon::default_seed()),
        Some(p) => OpinionLexicon::load(p)
            .map_err(|e| usage(format!("cannot load lexicon {}: {e}", p.display()))),
    }
}

fn load_fuzzy(path: Option<&Path>) -> Result<FuzzyConfig, CliError> {
    match path {
        None => Ok(FuzzyConfig::default()),
        Some(p) => FuzzyConfig::load(p)
            .map_err(|e| usage(format!("cannot load fuzzy config {}: {e}", p.display()))),
    }
}

fn load_model(path: &Path) -> Result<CrfModel, CliError> {
    CrfModel::load(path).map_err(|e| usage(format!("cannot load model {}: {e}", path.display())))
}

/// Train the aspect CRF and write the model file. Reports the final
/// objective and training-set token accuracy.
pub fn cmd_train_crf(
    annotations: &Path,
    model_out: &Path,
    lexicon_path: Option<&Path>,
    hyper: Hyperparams,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let lexicon = load_lexicon(lexicon_path)?;
    let corpus = read_annotations(annotations)
        .map_err(|e| usage(format!("cannot read annotations {}: {e}", annotations.display())))?;
    let outcome = crf::train(&corpus, &lexicon, hyper).map_err(|e| match e {
        crf::CrfError::Divergence { .. } => internal(e),
        other => usage(other),
    })?;
    let accuracy = token_accuracy(&outcome.model, &corpus, &lexicon);
    let tokens: usize = corpus.iter().map(|s| s.tokens.len()).sum();
    outcome
        .model
        .save(model_out)
        .map_err(|e| internal(format!("cannot write model {}: {e}", model_out.display())))?;
    writeln!(out, "trained on {} sentences ({} tokens), {} features", corpus.len(), tokens, outcome.model.num_features())
        .map_err(|e| internal(e))?;
    writeln!(out, "final objective: {:.6}", outcome.final_objective).map_err(|e| internal(e))?;
    writeln!(out, "training token accuracy: {:.2}%", accuracy * 100.0).map_err(|e| internal(e))?;
    writeln!(out, "model written to {}", model_out.display()).map_err(|e| internal(e))?;
    Ok(())
}

/// Build and persist the index. Lenient mode (default) skips corrupt corpus
/// lines and reports them; strict mode fails on the first.
#[allow(clippy::too_many_arguments)]
pub fn cmd_index(
    corpus_path: &Path,
    model_path: &Path,
    out_path: &Path,
    lexicon_path: Option<&Path>,
    fuzzy_path: Option<&Path>,
    strict: bool,
    verbose: bool,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let lexicon = load_lexicon(lexicon_path)?;
    let fuzzy = load_fuzzy(fuzzy_path)?;
    let model = load_model(model_path)?;

    let (records, skipped_lines): (Vec<CorpusRecord>, Vec<SkippedLine>) = if strict {
        let records = corpus::ingest(corpus_path)
            .map_err(|e| usage(format!("cannot ingest {}: {e}", corpus_path.display())))?;
        (records, Vec::new())
    } else {
        corpus::ingest_lenient(corpus_path)
            .map_err(|e| usage(format!("cannot ingest {}: {e}", corpus_path.display())))?
    };

    let (index, report) = build_index(&records, &model, &lexicon, &fuzzy);
    save_index(&index, out_path)
        .map_err(|e| internal(format!("cannot write index {}: {e}", out_path.display())))?;

    writeln!(
        out,
        "indexed {} entities, {} reviews ({} line(s) skipped, {} review(s) skipped)",
        report.entities,
        report.reviews_processed,
        skipped_lines.len(),
        report.reviews_skipped.len()
    )
    .map_err(|e| internal(e))?;
    if report.entities == 0 {
        writeln!(out, "warning: empty corpus; the index answers no queries").map_err(|e| internal(e))?;
    }
    if verbose {
        for s in &skipped_lines {
            writeln!(out, "skipped line {}: {}", s.line, s.reason).map_err(|e| internal(e))?;
        }
        for (entity, review, reason) in &report.reviews_skipped {
            writeln!(out, "skipped review {entity}/{review}: {reason}").map_err(|e| internal(e))?;
        }
    }
    writeln!(out, "index written to {}", out_path.display()).map_err(|e| internal(e))?;
    Ok(())
}

/// Everything `cmd_query` needs besides the output writer.
pub struct QueryArgs<'a> {
    pub index: &'a Path,
    pub query: &'a str,
    pub model: Option<&'a Path>,
    pub lexicon: Option<&'a Path>,
    pub fuzzy_config: Option<&'a Path>,
    pub top: usize,
    pub explain: bool,
    pub porcelain: bool,
    pub params: Bm25Params,
    pub mode: TierMode,
}

fn map_rank_error(e: RankError) -> CliError {
    usage(e)
}

/// Rank entities against one query and print the result table.
pub fn cmd_query(args: &QueryArgs, out: &mut impl Write) -> Result<(), CliError> {
    args.params.validate().map_err(usage)?;
    let lexicon = load_lexicon(args.lexicon)?;
    let fuzzy = load_fuzzy(args.fuzzy_config)?;
    let index = load_index(args.index)
        .map_err(|e| usage(format!("cannot load index {}: {e}", args.index.display())))?;
    // the model is only needed for free-text queries; load lazily
    let model = match args.model {
        Some(path) if path.exists() => Some(load_model(path)?),
        _ => None,
    };
    let query =
        parse_query(args.query, &lexicon, &fuzzy, model.as_ref()).map_err(map_rank_error)?;
    let results = rank(&index, &query, &args.params, args.mode);

    if args.porcelain {
        for (i, r) in results.iter().take(args.top).enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:.6}", i + 1, r.entity_id, r.tier, r.bm25)
                .map_err(|e| internal(e))?;
        }
        return Ok(());
    }

    writeln!(out, "{:<5} {:<24} {:<10} {:>10}", "rank", "entity", "tier", "bm25")
        .map_err(|e| internal(e))?;
    for (i, r) in results.iter().take(args.top).enumerate() {
        writeln!(out, "{:<5} {:<24} {:<10} {:>10.6}", i + 1, r.entity_id, r.tier, r.bm25)
            .map_err(|e| internal(e))?;
        if args.explain {
            for m in &r.matched_aspects {
                let profile = match (m.profile_orientation, m.profile_granularity) {
                    (Some(o), Some(g)) => format!("{o}/{g}"),
                    _ => "absent".to_string(),
                };
                let wanted = query
                    .aspects
                    .iter()
                    .find(|qa| qa.aspect == m.aspect)
                    .map(|qa| match qa.granularity {
                        Some(g) => format!("{}/{g}", qa.orientation),
                        None => format!("{}/any", qa.orientation),
                    })
                    .unwrap_or_default();
                writeln!(
                    out,
                    "      {}: level {} (profile {profile}, query {wanted})",
                    m.aspect, m.level
                )
                .map_err(|e| internal(e))?;
            }
        }
    }
    if results.is_empty() {
        writeln!(out, "(no matching entities)").map_err(|e| internal(e))?;
    }
    Ok(())
}

/// Everything `cmd_eval` needs besides the output writer.
pub struct EvalArgs<'a> {
    pub index: &'a Path,
    pub queries: &'a Path,
    pub qrels: &'a Path,
    pub model: Option<&'a Path>,
    pub lexicon: Option<&'a Path>,
    pub fuzzy_config: Option<&'a Path>,
    pub k: usize,
    pub baseline: bool,
    pub params: Bm25Params,
    pub mode: TierMode,
}

/// Score the full system (and optionally the BM25-only baseline) against
/// relevance judgments, printing Precision@k and NDCG@k per query.
pub fn cmd_eval(args: &EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    args.params.validate().map_err(usage)?;
    let lexicon = load_lexicon(args.lexicon)?;
    let fuzzy = load_fuzzy(args.fuzzy_config)?;
    let index = load_index(args.index)
        .map_err(|e| usage(format!("cannot load index {}: {e}", args.index.display())))?;
    let model = match args.model {
        Some(path) if path.exists() => Some(load_model(path)?),
        _ => None,
    };
    let queries = read_queries(args.queries)
        .map_err(|e| usage(format!("cannot read queries {}: {e}", args.queries.display())))?;
    let qrels = read_qrels(args.qrels)
        .map_err(|e| usage(format!("cannot read qrels {}: {e}", args.qrels.display())))?;

    let ctx = EvalContext {
        index: &index,
        lexicon: &lexicon,
        fuzzy: &fuzzy,
        model: model.as_ref(),
        params: args.params,
        mode: args.mode,
    };
    let report = evaluate(&ctx, &queries, &qrels, args.k, args.baseline).map_err(|e| match e {
        EvalError::Io(io) => internal(io),
        other => usage(other),
    })?;

    let k = report.k;
    if args.baseline {
        writeln!(
            out,
            "{:<10} {:>8} {:>9} {:>13} {:>14}",
            "query",
            format!("P@{k}"),
            format!("NDCG@{k}"),
            format!("base-P@{k}"),
            format!("base-NDCG@{k}")
        )
        .map_err(|e| internal(e))?;
    } else {
        writeln!(out, "{:<10} {:>8} {:>9}", "query", format!("P@{k}"), format!("NDCG@{k}"))
            .map_err(|e| internal(e))?;
    }
    for row in &report.rows {
        match row.baseline {
            Some(base) => writeln!(
                out,
                "{:<10} {:>8.4} {:>9.4} {:>13.4} {:>14.4}",
                row.query_id, row.full.precision, row.full.ndcg, base.precision, base.ndcg
            ),
            None => writeln!(
                out,
                "{:<10} {:>8.4} {:>9.4}",
                row.query_id, row.full.precision, row.full.ndcg
            ),
        }
        .map_err(|e| internal(e))?;
    }
    match report.mean_baseline {
        Some(base) => writeln!(
            out,
            "{:<10} {:>8.4} {:>9.4} {:>13.4} {:>14.4}",
            "mean", report.mean_full.precision, report.mean_full.ndcg, base.precision, base.ndcg
        ),
        None => writeln!(
            out,
            "{:<10} {:>8.4} {:>9.4}",
            "mean", report.mean_full.precision, report.mean_full.ndcg
        ),
    }
    .map_err(|e| internal(e))?;
    Ok(())
}
