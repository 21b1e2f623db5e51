//! Ranked-retrieval evaluation against relevance judgments.
//!
//! Compares the full tiered ranking with a BM25-only baseline (tiers
//! disabled) on Precision@k and NDCG@k, mirroring a fuzzy vs non-fuzzy
//! ranked-list comparison.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Index;
use crate::crf::CrfModel;
use crate::fuzzy::FuzzyConfig;
use crate::rank::{bm25_only_ranking, parse_query, rank, Bm25Params, RankError, TierMode};
use crate::text::OpinionLexicon;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval io: {0}")]
    Io(#[from] std::io::Error),
    #[error("queries file line {line}: {msg}")]
    ParseQueries { line: usize, msg: String },
    #[error("qrels file line {line}: {msg}")]
    ParseQrels { line: usize, msg: String },
    #[error("empty qrels")]
    EmptyQrels,
    #[error("unmatched query ids: {0}")]
    UnmatchedQueryIds(String),
    #[error("query {query_id}: {source}")]
    Query { query_id: String, source: RankError },
}

/// One evaluation query: an id plus the query string (free text or
/// structured).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
}

/// Read queries: one `query_id<TAB>query text` per line.
pub fn read_queries(path: &Path) -> Result<Vec<EvalQuery>, EvalError> {
    let file = std::fs::File::open(path)?;
    parse_queries(std::io::BufReader::new(file))
}

pub fn parse_queries(reader: impl BufRead) -> Result<Vec<EvalQuery>, EvalError> {
    let mut queries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(EvalError::ParseQueries {
                line: lineno,
                msg: "expected query_id<TAB>query".to_string(),
            });
        };
        if id.is_empty() || text.trim().is_empty() {
            return Err(EvalError::ParseQueries {
                line: lineno,
                msg: "empty query id or text".to_string(),
            });
        }
        queries.push(EvalQuery { id: id.to_string(), text: text.to_string() });
    }
    Ok(queries)
}

/// Relevance judgments: query id -> entity id -> grade (0 = not relevant).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &String> {
        self.grades.keys()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }
}

/// Read qrels: one `query_id<TAB>entity_id<TAB>grade` per line.
pub fn read_qrels(path: &Path) -> Result<Qrels, EvalError> {
    let file = std::fs::File::open(path)?;
    parse_qrels(std::io::BufReader::new(file))
}

pub fn parse_qrels(reader: impl BufRead) -> Result<Qrels, EvalError> {
    let mut grades: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EvalError::ParseQrels {
                line: lineno,
                msg: format!("expected query_id<TAB>entity_id<TAB>grade, got {} fields", fields.len()),
            });
        }
        let grade: u32 = fields[2].parse().map_err(|_| EvalError::ParseQrels {
            line: lineno,
            msg: format!("bad grade {:?}", fields[2]),
        })?;
        grades
            .entry(fields[0].to_string())
            .or_default()
            .insert(fields[1].to_string(), grade);
    }
    Ok(Qrels { grades })
}

/// Precision@k: fraction of the top-k entities with grade > 0.
pub fn precision_at_k(ranking: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| grades.get(*id).copied().unwrap_or(0) > 0)
        .count();
    hits as f64 / k as f64
}

/// NDCG@k with linear gain: `DCG = sum grade_i / log2(i + 1)` over 1-based
/// ranks, normalized by the ideal ordering of the judged grades.
pub fn ndcg_at_k(ranking: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| {
            let gain = grades.get(id).copied().unwrap_or(0) as f64;
            gain / ((i + 2) as f64).log2()
        })
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().filter(|g| *g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| *g as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Metrics of one query under one ranking mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueryMetrics {
    pub precision: f64,
    pub ndcg: f64,
}

/// Per-query evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub query_id: String,
    pub full: QueryMetrics,
    /// BM25-only metrics, present when the baseline was requested.
    pub baseline: Option<QueryMetrics>,
}

/// Whole evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub rows: Vec<EvalRow>,
    pub mean_full: QueryMetrics,
    pub mean_baseline: Option<QueryMetrics>,
}

/// Pipeline handles needed to parse free-text queries during evaluation.
pub struct EvalContext<'a> {
    pub index: &'a Index,
    pub lexicon: &'a OpinionLexicon,
    pub fuzzy: &'a FuzzyConfig,
    pub model: Option<&'a CrfModel>,
    pub params: Bm25Params,
    pub mode: TierMode,
}

/// Run every query under the full system (and optionally the BM25-only
/// baseline) and score both against the qrels.
///
/// Queries and qrels must cover exactly the same query ids.
pub fn evaluate(
    ctx: &EvalContext,
    queries: &[EvalQuery],
    qrels: &Qrels,
    k: usize,
    with_baseline: bool,
) -> Result<EvalReport, EvalError> {
    if qrels.is_empty() {
        return Err(EvalError::EmptyQrels);
    }
    let query_ids: std::collections::BTreeSet<&str> =
        queries.iter().map(|q| q.id.as_str()).collect();
    let qrel_ids: std::collections::BTreeSet<&str> =
        qrels.query_ids().map(String::as_str).collect();
    let mut unmatched: Vec<String> = Vec::new();
    for id in query_ids.difference(&qrel_ids) {
        unmatched.push(format!("{id} (no qrels)"));
    }
    for id in qrel_ids.difference(&query_ids) {
        unmatched.push(format!("{id} (no query)"));
    }
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedQueryIds(unmatched.join(", ")));
    }

    let mut rows = Vec::new();
    let mut sum_full = QueryMetrics::default();
    let mut sum_base = QueryMetrics::default();
    for query in queries {
        let parsed = parse_query(&query.text, ctx.lexicon, ctx.fuzzy, ctx.model)
            .map_err(|source| EvalError::Query { query_id: query.id.clone(), source })?;
        let grades = qrels.for_query(&query.id).expect("ids checked above");

        let full_ranking: Vec<String> = rank(ctx.index, &parsed, &ctx.params, ctx.mode)
            .into_iter()
            .map(|r| r.entity_id)
            .collect();
        let full = QueryMetrics {
            precision: precision_at_k(&full_ranking, grades, k),
            ndcg: ndcg_at_k(&full_ranking, grades, k),
        };
        sum_full.precision += full.precision;
        sum_full.ndcg += full.ndcg;

        let baseline = with_baseline.then(|| {
            let ranking: Vec<String> = bm25_only_ranking(ctx.index, &parsed, &ctx.params)
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let metrics = QueryMetrics {
                precision: precision_at_k(&ranking, grades, k),
                ndcg: ndcg_at_k(&ranking, grades, k),
            };
            sum_base.precision += metrics.precision;
            sum_base.ndcg += metrics.ndcg;
            metrics
        });

        rows.push(EvalRow { query_id: query.id.clone(), full, baseline });
    }

    let count = rows.len().max(1) as f64;
    Ok(EvalReport {
        k,
        mean_full: QueryMetrics {
            precision: sum_full.precision / count,
            ndcg: sum_full.ndcg / count,
        },
        mean_baseline: with_baseline.then(|| QueryMetrics {
            precision: sum_base.precision / count,
            ndcg: sum_base.ndcg / count,
        }),
        rows,
    })
}
