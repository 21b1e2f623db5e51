//! Tiered entity ranking with BM25 refinement.
//!
//! Entities are first grouped into three tiers against the query — aspect,
//! orientation and strength all matching beats aspect and orientation, which
//! beats aspect presence alone — then ordered within each tier by the BM25
//! score of the entity document against the query terms:
//!
//! ```text
//!   S(D; Q) = sum over t in Q and D of
//!       k1 * c(t,D) / (c(t,D) + k1 * (1 - b + b * |D| / avgdl)) * ln((n+1) / n_t)
//! ```
//!
//! Queries arrive either as free text (run through the same
//! tokenize/extract/assess pipeline as reviews) or as structured
//! `aspect:pos|neg[:level]` tokens that bypass it.

use std::fmt;

use thiserror::Error;

use crate::corpus::{EntityDoc, Index};
use crate::crf::{extract_aspects, CrfModel};
use crate::fuzzy::{assess, FuzzyConfig, Granularity, Orientation};
use crate::profile::{pair, EntityProfile};
use crate::text::{extract_opinion_units, tag, tokenize, OpinionLexicon};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("no aspect recoverable from query {0:?}")]
    EmptyQuery(String),
    #[error("free-text query requires a trained aspect model")]
    ModelRequired,
    #[error("bad structured query token {token:?}: {msg}")]
    BadStructured { token: String, msg: String },
}

/// One parsed query preference.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAspect {
    /// Lowercase aspect key.
    pub aspect: String,
    pub orientation: Orientation,
    /// Present when the query specified (or the pipeline inferred) a
    /// strength level.
    pub granularity: Option<Granularity>,
}

impl QueryAspect {
    pub fn strength_specified(&self) -> bool {
        self.granularity.is_some()
    }
}

/// A parsed query: aspect preferences plus the opinion words that join the
/// aspect terms in the BM25 term set.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub raw: String,
    pub aspects: Vec<QueryAspect>,
    pub opinion_terms: Vec<String>,
}

impl Query {
    /// Unique BM25 query terms: aspect words plus opinion words, in first
    /// occurrence order.
    pub fn terms(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut terms = Vec::new();
        let words = self
            .aspects
            .iter()
            .flat_map(|a| a.aspect.split_whitespace())
            .chain(self.opinion_terms.iter().map(String::as_str));
        for word in words {
            if seen.insert(word.to_string()) {
                terms.push(word.to_string());
            }
        }
        terms
    }
}

/// BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1 > 0.0) {
            return Err(format!("k1 must be positive, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(format!("b must be in [0,1], got {}", self.b));
        }
        Ok(())
    }
}

/// Match tier of an entity against the whole query, best first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    NoMatch,
    Low,
    Moderate,
    High,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::NoMatch => "no_match",
            Tier::Low => "low",
            Tier::Moderate => "moderate",
            Tier::High => "high",
        })
    }
}

/// How per-aspect match levels combine into the entity tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TierMode {
    /// Every query aspect must reach the tier's level (conjunctive).
    #[default]
    EveryAspect,
    /// The mean level across query aspects decides.
    AverageLevel,
}

impl TierMode {
    pub fn parse(s: &str) -> Option<TierMode> {
        Some(match s {
            "every" => TierMode::EveryAspect,
            "average" => TierMode::AverageLevel,
            _ => return None,
        })
    }
}

/// Per-aspect match detail, reported for explanations.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectMatch {
    pub aspect: String,
    /// 0 absent, 1 aspect only, 2 + orientation, 3 + strength.
    pub level: u8,
    pub profile_orientation: Option<Orientation>,
    pub profile_granularity: Option<Granularity>,
}

/// One ranked entity.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub entity_id: String,
    pub tier: Tier,
    pub bm25: f64,
    pub matched_aspects: Vec<AspectMatch>,
}

/// Strength levels within this distance (in granularity steps) count as a
/// strength match.
pub const STRENGTH_MATCH_DISTANCE: u8 = 1;

fn aspect_level(profile: &EntityProfile, qa: &QueryAspect) -> AspectMatch {
    let Some(summary) = profile.aspects.get(&qa.aspect) else {
        return AspectMatch {
            aspect: qa.aspect.clone(),
            level: 0,
            profile_orientation: None,
            profile_granularity: None,
        };
    };
    let mut level = 1;
    if summary.orientation == qa.orientation {
        level = 2;
        if let Some(wanted) = qa.granularity {
            if wanted.distance(summary.granularity) <= STRENGTH_MATCH_DISTANCE {
                level = 3;
            }
        }
    }
    AspectMatch {
        aspect: qa.aspect.clone(),
        level,
        profile_orientation: Some(summary.orientation),
        profile_granularity: Some(summary.granularity),
    }
}

/// Tier of one entity against the query, plus the per-aspect detail.
pub fn tier_with_detail(
    profile: &EntityProfile,
    query: &Query,
    mode: TierMode,
) -> (Tier, Vec<AspectMatch>) {
    let matches: Vec<AspectMatch> =
        query.aspects.iter().map(|qa| aspect_level(profile, qa)).collect();
    let tier = match mode {
        TierMode::EveryAspect => {
            let min = matches.iter().map(|m| m.level).min().unwrap_or(0);
            match min {
                3 => Tier::High,
                2 => Tier::Moderate,
                1 => Tier::Low,
                _ => Tier::NoMatch,
            }
        }
        TierMode::AverageLevel => {
            let sum: u32 = matches.iter().map(|m| m.level as u32).sum();
            let avg = sum as f64 / matches.len().max(1) as f64;
            if avg >= 2.5 {
                Tier::High
            } else if avg >= 1.5 {
                Tier::Moderate
            } else if avg > 0.0 {
                Tier::Low
            } else {
                Tier::NoMatch
            }
        }
    };
    (tier, matches)
}

/// Tier of one entity against the query.
pub fn tier(profile: &EntityProfile, query: &Query, mode: TierMode) -> Tier {
    tier_with_detail(profile, query, mode).0
}

/// BM25 score of one entity document against the query terms.
///
/// `n` is the number of entity documents and `avgdl` their mean length;
/// terms absent from the document contribute zero.
pub fn bm25(
    doc: &EntityDoc,
    query_terms: &[String],
    params: &Bm25Params,
    n: usize,
    avgdl: f64,
    df: impl Fn(&str) -> usize,
) -> f64 {
    let mut score = 0.0;
    for term in query_terms {
        let Some(&count) = doc.terms.get(term) else {
            continue;
        };
        let c = count as f64;
        let n_t = df(term) as f64;
        let norm = 1.0 - params.b + params.b * doc.len as f64 / avgdl;
        let tf = params.k1 * c / (c + params.k1 * norm);
        let idf = ((n as f64 + 1.0) / n_t).ln();
        score += tf * idf;
    }
    score
}

/// Rank every entity of the index against the query: assign tiers, drop
/// non-matching entities, and order by tier, then BM25, then entity id.
pub fn rank(
    index: &Index,
    query: &Query,
    params: &Bm25Params,
    mode: TierMode,
) -> Vec<RankedResult> {
    let n = index.entity_count();
    let avgdl = index.avgdl();
    let terms = query.terms();
    let mut results: Vec<RankedResult> = index
        .profiles
        .values()
        .filter_map(|profile| {
            let (tier, matched_aspects) = tier_with_detail(profile, query, mode);
            if tier == Tier::NoMatch {
                return None;
            }
            let doc = &index.docs[&profile.entity_id];
            let bm25 = bm25(doc, &terms, params, n, avgdl, |t| index.document_frequency(t));
            Some(RankedResult { entity_id: profile.entity_id.clone(), tier, bm25, matched_aspects })
        })
        .collect();
    results.sort_by(|a, b| {
        b.tier
            .cmp(&a.tier)
            .then(b.bm25.total_cmp(&a.bm25))
            .then(a.entity_id.cmp(&b.entity_id))
    });
    results
}

/// BM25-only ranking over all entities (tiers disabled), used as the
/// non-fuzzy baseline in evaluation.
pub fn bm25_only_ranking(index: &Index, query: &Query, params: &Bm25Params) -> Vec<(String, f64)> {
    let n = index.entity_count();
    let avgdl = index.avgdl();
    let terms = query.terms();
    let mut scored: Vec<(String, f64)> = index
        .docs
        .iter()
        .map(|(entity_id, doc)| {
            let score = bm25(doc, &terms, params, n, avgdl, |t| index.document_frequency(t));
            (entity_id.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

fn parse_structured_token(token: &str) -> Result<QueryAspect, RankError> {
    let parts: Vec<&str> = token.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(RankError::BadStructured {
            token: token.to_string(),
            msg: "expected aspect:pos|neg[:level]".to_string(),
        });
    }
    let aspect = parts[0].replace('_', " ").to_lowercase();
    if aspect.trim().is_empty() {
        return Err(RankError::BadStructured {
            token: token.to_string(),
            msg: "empty aspect".to_string(),
        });
    }
    let orientation = match parts[1] {
        "pos" => Orientation::Positive,
        "neg" => Orientation::Negative,
        other => {
            return Err(RankError::BadStructured {
                token: token.to_string(),
                msg: format!("bad orientation {other:?} (expected pos|neg)"),
            })
        }
    };
    let granularity = match parts.get(2) {
        None => None,
        Some(level) => Some(Granularity::parse(level).ok_or_else(|| RankError::BadStructured {
            token: token.to_string(),
            msg: format!("bad strength level {level:?}"),
        })?),
    };
    Ok(QueryAspect { aspect, orientation, granularity })
}

/// Parse a query string.
///
/// When every whitespace-separated token contains a `:` the structured
/// syntax `aspect:pos|neg[:very_weak..very_strong]` applies (underscores in
/// the aspect become spaces). Otherwise the text runs through the review
/// pipeline: CRF aspect extraction, opinion assessment and same-sentence
/// pairing, which requires `model`.
pub fn parse_query(
    text: &str,
    lexicon: &OpinionLexicon,
    fuzzy: &FuzzyConfig,
    model: Option<&CrfModel>,
) -> Result<Query, RankError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(RankError::EmptyQuery(text.to_string()));
    }
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    if tokens.iter().all(|t| t.contains(':')) {
        let mut aspects = Vec::new();
        for token in tokens {
            let qa = parse_structured_token(token)?;
            if !aspects.iter().any(|existing: &QueryAspect| existing.aspect == qa.aspect) {
                aspects.push(qa);
            }
        }
        return Ok(Query { raw: text.to_string(), aspects, opinion_terms: Vec::new() });
    }

    let model = model.ok_or(RankError::ModelRequired)?;
    let sentences = tokenize(trimmed);
    let tagged: Vec<_> = sentences.iter().map(|s| tag(s, lexicon)).collect();
    let mentions = extract_aspects(model, &tagged);
    let mut assessments = Vec::new();
    let mut opinion_terms = Vec::new();
    for sentence in &tagged {
        for unit in extract_opinion_units(sentence, lexicon) {
            opinion_terms.push(unit.adjective.token.token.surface.to_lowercase());
            if let Some(modifier) = &unit.modifier {
                opinion_terms.push(modifier.token.token.surface.to_lowercase());
            }
            // an unassessable unit only costs its strength, not the query
            if let Ok(assessment) = assess(&unit, fuzzy) {
                assessments.push((unit, assessment));
            }
        }
    }
    let paired = pair(&mentions, &assessments, "query");
    let mut aspects: Vec<QueryAspect> = Vec::new();
    for op in paired {
        if !aspects.iter().any(|existing| existing.aspect == op.aspect) {
            aspects.push(QueryAspect {
                aspect: op.aspect,
                orientation: op.orientation,
                granularity: Some(op.granularity),
            });
        }
    }
    if aspects.is_empty() {
        return Err(RankError::EmptyQuery(text.to_string()));
    }
    Ok(Query { raw: text.to_string(), aspects, opinion_terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::GranularityScale;
    use crate::profile::AspectSummary;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn profile_with(entries: &[(&str, Orientation, Granularity)]) -> EntityProfile {
        let aspects = entries
            .iter()
            .map(|(aspect, orientation, granularity)| {
                (
                    aspect.to_string(),
                    AspectSummary {
                        orientation: *orientation,
                        mean_strength: 5.0,
                        granularity: *granularity,
                        mention_count: 1,
                    },
                )
            })
            .collect();
        EntityProfile { entity_id: "e".to_string(), aspects, review_count: 1 }
    }

    fn query_of(aspects: &[(&str, Orientation, Option<Granularity>)]) -> Query {
        Query {
            raw: String::new(),
            aspects: aspects
                .iter()
                .map(|(a, o, g)| QueryAspect {
                    aspect: a.to_string(),
                    orientation: *o,
                    granularity: *g,
                })
                .collect(),
            opinion_terms: Vec::new(),
        }
    }

    #[test]
    fn tier_high_on_full_match() {
        let profile = profile_with(&[("battery", Orientation::Positive, Granularity::Strong)]);
        let query = query_of(&[("battery", Orientation::Positive, Some(Granularity::Strong))]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::High);
    }

    #[test]
    fn tier_moderate_on_distant_strength() {
        // orientation matches, strength 3 levels away
        let profile = profile_with(&[("battery", Orientation::Positive, Granularity::VeryWeak)]);
        let query = query_of(&[("battery", Orientation::Positive, Some(Granularity::Strong))]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::Moderate);
    }

    #[test]
    fn tier_adjacent_strength_still_matches() {
        let profile = profile_with(&[("battery", Orientation::Positive, Granularity::Moderate)]);
        let query = query_of(&[("battery", Orientation::Positive, Some(Granularity::Strong))]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::High);
    }

    #[test]
    fn tier_low_on_orientation_mismatch() {
        let profile = profile_with(&[("battery", Orientation::Negative, Granularity::Strong)]);
        let query = query_of(&[("battery", Orientation::Positive, Some(Granularity::Strong))]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::Low);
    }

    #[test]
    fn tier_no_match_on_absent_aspect() {
        let profile = profile_with(&[("display", Orientation::Positive, Granularity::Strong)]);
        let query = query_of(&[("battery", Orientation::Positive, None)]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::NoMatch);
    }

    #[test]
    fn tier_without_strength_caps_at_moderate() {
        let profile = profile_with(&[("battery", Orientation::Positive, Granularity::Strong)]);
        let query = query_of(&[("battery", Orientation::Positive, None)]);
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::Moderate);
    }

    #[test]
    fn tier_conjunction_takes_the_minimum() {
        let profile = profile_with(&[
            ("battery", Orientation::Positive, Granularity::Strong),
            ("display", Orientation::Negative, Granularity::Weak),
        ]);
        let query = query_of(&[
            ("battery", Orientation::Positive, Some(Granularity::Strong)),
            ("display", Orientation::Positive, Some(Granularity::Weak)),
        ]);
        // battery level 3, display level 1 -> Low
        assert_eq!(tier(&profile, &query, TierMode::EveryAspect), Tier::Low);
        // average mode: (3+1)/2 = 2 -> Moderate
        assert_eq!(tier(&profile, &query, TierMode::AverageLevel), Tier::Moderate);
    }

    fn doc_of(pairs: &[(&str, u64)], len: u64) -> EntityDoc {
        let terms: BTreeMap<String, u64> =
            pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect();
        EntityDoc { terms, len }
    }

    #[test]
    fn bm25_hand_derived_point() {
        // n=2, n_t=1, c=2, |D|=avgdl=10, k1=1.2, b=0.75
        // (1.2*2)/(2+1.2*1) * ln(3) = 0.75 * 1.098612... = 0.823959...
        let doc = doc_of(&[("battery", 2)], 10);
        let params = Bm25Params::default();
        let score = bm25(&doc, &["battery".to_string()], &params, 2, 10.0, |_| 1);
        assert!((score - 0.823959).abs() < 1e-6, "got {score}");
    }

    #[test]
    fn bm25_absent_term_contributes_zero() {
        let doc = doc_of(&[("battery", 2)], 10);
        let params = Bm25Params::default();
        let score = bm25(&doc, &["display".to_string()], &params, 2, 10.0, |_| 1);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn bm25_b_zero_ignores_length() {
        let params = Bm25Params { k1: 1.2, b: 0.0 };
        let short = doc_of(&[("battery", 2)], 10);
        let long = doc_of(&[("battery", 2)], 20);
        let s1 = bm25(&short, &["battery".to_string()], &params, 2, 10.0, |_| 1);
        let s2 = bm25(&long, &["battery".to_string()], &params, 2, 10.0, |_| 1);
        assert_eq!(s1, s2);
    }

    proptest! {
        #[test]
        fn bm25_monotone_in_count_and_bounded(
            c in 1u64..200, k1 in 0.1..3.0f64, b in 0.0..1.0f64,
            dl in 1u64..100, avgdl in 1.0..100.0f64, n in 1usize..50,
        ) {
            let params = Bm25Params { k1, b };
            let term = "t".to_string();
            let n_t = 1usize;
            let lo = bm25(&doc_of(&[("t", c)], dl), &[term.clone()], &params, n, avgdl, |_| n_t);
            let hi = bm25(&doc_of(&[("t", c + 1)], dl), &[term.clone()], &params, n, avgdl, |_| n_t);
            prop_assert!(hi > lo, "not increasing: {} -> {}", lo, hi);
            let bound = k1 * ((n as f64 + 1.0) / n_t as f64).ln();
            prop_assert!(hi <= bound + 1e-12, "{} exceeds bound {}", hi, bound);
        }

        #[test]
        fn bm25_length_penalty(
            c in 1u64..50, k1 in 0.1..3.0f64, b in 0.01..1.0f64,
            dl in 1u64..100, extra in 1u64..100, n in 1usize..50,
        ) {
            let params = Bm25Params { k1, b };
            let avgdl = 50.0;
            let term = "t".to_string();
            let short = bm25(&doc_of(&[("t", c)], dl), &[term.clone()], &params, n, avgdl, |_| 1);
            let long = bm25(&doc_of(&[("t", c)], dl + extra), &[term.clone()], &params, n, avgdl, |_| 1);
            prop_assert!(long < short, "length penalty violated: {} !< {}", long, short);
        }
    }

    fn index_of(entities: &[(&str, Tier)]) -> (Index, Query) {
        // builds an index where each entity's tier against the query
        // "battery:pos:strong" is forced by its profile
        let query = Query {
            raw: "battery:pos:strong".to_string(),
            aspects: vec![QueryAspect {
                aspect: "battery".to_string(),
                orientation: Orientation::Positive,
                granularity: Some(Granularity::Strong),
            }],
            opinion_terms: Vec::new(),
        };
        let mut profiles = BTreeMap::new();
        let mut docs = BTreeMap::new();
        for (id, tier) in entities {
            let profile = match tier {
                Tier::High => profile_with(&[("battery", Orientation::Positive, Granularity::Strong)]),
                Tier::Moderate => {
                    profile_with(&[("battery", Orientation::Positive, Granularity::VeryWeak)])
                }
                Tier::Low => profile_with(&[("battery", Orientation::Negative, Granularity::Strong)]),
                Tier::NoMatch => profile_with(&[("display", Orientation::Positive, Granularity::Weak)]),
            };
            let mut profile = profile;
            profile.entity_id = id.to_string();
            profiles.insert(id.to_string(), profile);
            docs.insert(id.to_string(), doc_of(&[("battery", 2), ("filler", 3)], 5));
        }
        (Index { config_digest: String::new(), profiles, docs }, query)
    }

    #[test]
    fn rank_orders_by_tier_then_bm25_then_id() {
        let (mut index, query) = index_of(&[
            ("low-1", Tier::Low),
            ("high-1", Tier::High),
            ("mod-1", Tier::Moderate),
            ("none-1", Tier::NoMatch),
            ("low-2", Tier::Low),
        ]);
        // give low-2 a much higher battery count: still must trail mod/high
        index.docs.get_mut("low-2").unwrap().terms.insert("battery".to_string(), 50);
        let results = rank(&index, &query, &Bm25Params::default(), TierMode::EveryAspect);
        let ids: Vec<&str> = results.iter().map(|r| r.entity_id.as_str()).collect();
        assert_eq!(ids, ["high-1", "mod-1", "low-2", "low-1"]);
        assert!(results[2].bm25 > results[3].bm25);
    }

    #[test]
    fn rank_matches_bruteforce_comparator() {
        let (index, query) = index_of(&[
            ("a", Tier::High),
            ("b", Tier::Low),
            ("c", Tier::Moderate),
            ("d", Tier::High),
            ("e", Tier::Low),
            ("f", Tier::NoMatch),
        ]);
        let params = Bm25Params::default();
        let results = rank(&index, &query, &params, TierMode::EveryAspect);

        // independent route: compute (tier, bm25) per entity, selection-sort
        // by the declared comparator
        let mut expected: Vec<(Tier, f64, String)> = index
            .profiles
            .values()
            .map(|p| {
                let t = tier(p, &query, TierMode::EveryAspect);
                let doc = &index.docs[&p.entity_id];
                let score = bm25(
                    doc,
                    &query.terms(),
                    &params,
                    index.entity_count(),
                    index.avgdl(),
                    |t| index.document_frequency(t),
                );
                (t, score, p.entity_id.clone())
            })
            .filter(|(t, _, _)| *t != Tier::NoMatch)
            .collect();
        let mut sorted: Vec<(Tier, f64, String)> = Vec::new();
        while !expected.is_empty() {
            let mut best = 0;
            for i in 1..expected.len() {
                let (bt, bs, bid) = &expected[best];
                let (it, is, iid) = &expected[i];
                let better = it > bt
                    || (it == bt && is > bs)
                    || (it == bt && is == bs && iid < bid);
                if better {
                    best = i;
                }
            }
            sorted.push(expected.remove(best));
        }
        let expected_ids: Vec<&str> = sorted.iter().map(|(_, _, id)| id.as_str()).collect();
        let got_ids: Vec<&str> = results.iter().map(|r| r.entity_id.as_str()).collect();
        assert_eq!(got_ids, expected_ids);
    }

    #[test]
    fn structured_query_parses() {
        let lex = OpinionLexicon::default_seed();
        let fuzzy = FuzzyConfig::default();
        let q = parse_query("battery:pos:strong display:pos", &lex, &fuzzy, None).unwrap();
        assert_eq!(q.aspects.len(), 2);
        assert_eq!(q.aspects[0].aspect, "battery");
        assert_eq!(q.aspects[0].orientation, Orientation::Positive);
        assert_eq!(q.aspects[0].granularity, Some(Granularity::Strong));
        assert!(q.aspects[0].strength_specified());
        assert_eq!(q.aspects[1].aspect, "display");
        assert_eq!(q.aspects[1].granularity, None);
        assert!(!q.aspects[1].strength_specified());
        assert!(q.opinion_terms.is_empty());
    }

    #[test]
    fn structured_query_underscores_and_negatives() {
        let lex = OpinionLexicon::default_seed();
        let fuzzy = FuzzyConfig::default();
        let q = parse_query("battery_life:neg:very_weak", &lex, &fuzzy, None).unwrap();
        assert_eq!(q.aspects[0].aspect, "battery life");
        assert_eq!(q.aspects[0].orientation, Orientation::Negative);
        assert_eq!(q.aspects[0].granularity, Some(Granularity::VeryWeak));
    }

    #[test]
    fn structured_query_rejects_bad_tokens() {
        let lex = OpinionLexicon::default_seed();
        let fuzzy = FuzzyConfig::default();
        assert!(matches!(
            parse_query("battery:maybe", &lex, &fuzzy, None),
            Err(RankError::BadStructured { .. })
        ));
        assert!(matches!(
            parse_query("battery:pos:stronk", &lex, &fuzzy, None),
            Err(RankError::BadStructured { .. })
        ));
    }

    #[test]
    fn empty_query_errors() {
        let lex = OpinionLexicon::default_seed();
        let fuzzy = FuzzyConfig::default();
        assert!(matches!(
            parse_query("", &lex, &fuzzy, None),
            Err(RankError::EmptyQuery(_))
        ));
        assert!(matches!(
            parse_query("   ", &lex, &fuzzy, None),
            Err(RankError::EmptyQuery(_))
        ));
    }

    #[test]
    fn free_text_query_requires_model() {
        let lex = OpinionLexicon::default_seed();
        let fuzzy = FuzzyConfig::default();
        assert!(matches!(
            parse_query("good battery", &lex, &fuzzy, None),
            Err(RankError::ModelRequired)
        ));
    }

    #[test]
    fn query_terms_are_unique_and_ordered() {
        let q = Query {
            raw: String::new(),
            aspects: vec![
                QueryAspect {
                    aspect: "battery life".to_string(),
                    orientation: Orientation::Positive,
                    granularity: None,
                },
                QueryAspect {
                    aspect: "life".to_string(),
                    orientation: Orientation::Positive,
                    granularity: None,
                },
            ],
            opinion_terms: vec!["good".to_string(), "good".to_string()],
        };
        assert_eq!(q.terms(), ["battery", "life", "good"]);
    }

    proptest! {
        /// Over random small corpora, no lower-tier entity ever precedes a
        /// higher-tier one in the ranked output.
        #[test]
        fn tier_dominance_holds(seed_levels in proptest::collection::vec(0u8..4, 1..20)) {
            let entities: Vec<(String, Tier)> = seed_levels
                .iter()
                .enumerate()
                .map(|(i, level)| {
                    let tier = match level {
                        3 => Tier::High,
                        2 => Tier::Moderate,
                        1 => Tier::Low,
                        _ => Tier::NoMatch,
                    };
                    (format!("entity-{i:02}"), tier)
                })
                .collect();
            let refs: Vec<(&str, Tier)> =
                entities.iter().map(|(id, t)| (id.as_str(), *t)).collect();
            let (index, query) = index_of(&refs);
            let results = rank(&index, &query, &Bm25Params::default(), TierMode::EveryAspect);
            for pair in results.windows(2) {
                prop_assert!(pair[0].tier >= pair[1].tier);
            }
            let expected_kept = entities.iter().filter(|(_, t)| *t != Tier::NoMatch).count();
            prop_assert_eq!(results.len(), expected_kept);
        }
    }
}
