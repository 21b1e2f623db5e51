//! Aspect-opinion pairing within reviews and per-entity aggregation.
//!
//! [`pair`] joins extracted aspect mentions with opinion assessments by
//! same-sentence proximity; [`summarize`] folds all of an entity's paired
//! opinions into one [`EntityProfile`] keyed by aspect.

use std::collections::BTreeMap;

use crate::crf::AspectMention;
use crate::fuzzy::{Granularity, GranularityScale, Orientation, SentimentAssessment};
use crate::text::OpinionUnit;

/// One review of one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Review {
    pub review_id: String,
    pub entity_id: String,
    pub text: String,
}

/// The aspect duplet: an aspect key with the orientation and strength of the
/// opinion nearest to it, tagged with the source review.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectOpinion {
    /// Lowercase aspect phrase.
    pub aspect: String,
    pub orientation: Orientation,
    pub strength_crisp: f64,
    pub granularity: Granularity,
    pub review_id: String,
}

/// Aggregated view of one aspect across an entity's reviews.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectSummary {
    /// Majority orientation; ties (including zero votes) become neutral.
    pub orientation: Orientation,
    /// Arithmetic mean of mention strengths, still on `[0,10]`.
    pub mean_strength: f64,
    /// Granularity of the mean strength.
    pub granularity: Granularity,
    pub mention_count: usize,
}

/// Per-entity aggregation over every paired aspect opinion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityProfile {
    pub entity_id: String,
    pub aspects: BTreeMap<String, AspectSummary>,
    pub review_count: usize,
}

/// Token distance between an aspect span and an opinion unit's adjective.
fn distance(mention: &AspectMention, unit: &OpinionUnit) -> usize {
    let adj = unit.adjective.token.token.position;
    let (start, end) = mention.span;
    if adj >= start && adj < end {
        0
    } else if adj < start {
        start - adj
    } else {
        adj - (end - 1)
    }
}

/// Pair each aspect mention with the nearest same-sentence assessment.
///
/// Aspects in sentences without an opinion unit are dropped, as are units in
/// sentences without an aspect; one unit may serve several aspects. Ties go
/// to the earlier unit.
pub fn pair(
    mentions: &[AspectMention],
    assessments: &[(OpinionUnit, SentimentAssessment)],
    review_id: &str,
) -> Vec<AspectOpinion> {
    let mut out = Vec::new();
    for mention in mentions {
        let mut best: Option<(usize, &SentimentAssessment)> = None;
        for (unit, assessment) in assessments {
            if unit.sentence_id != mention.sentence_id {
                continue;
            }
            let d = distance(mention, unit);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, assessment));
            }
        }
        if let Some((_, assessment)) = best {
            out.push(AspectOpinion {
                aspect: mention.phrase.clone(),
                orientation: assessment.orientation,
                strength_crisp: assessment.strength_crisp,
                granularity: assessment.granularity,
                review_id: review_id.to_string(),
            });
        }
    }
    out
}

/// Aggregate every paired opinion of one entity into a profile.
///
/// Per aspect: mean strength, majority-vote orientation (neutral on ties)
/// and the granularity of the mean under `scale`.
pub fn summarize(
    entity_id: &str,
    opinions: &[AspectOpinion],
    review_count: usize,
    scale: &GranularityScale,
) -> EntityProfile {
    struct Acc {
        strength_sum: f64,
        positive: usize,
        negative: usize,
        count: usize,
    }
    let mut by_aspect: BTreeMap<&str, Acc> = BTreeMap::new();
    for op in opinions {
        let acc = by_aspect.entry(op.aspect.as_str()).or_insert(Acc {
            strength_sum: 0.0,
            positive: 0,
            negative: 0,
            count: 0,
        });
        acc.strength_sum += op.strength_crisp;
        acc.count += 1;
        match op.orientation {
            Orientation::Positive => acc.positive += 1,
            Orientation::Negative => acc.negative += 1,
            Orientation::Neutral => {}
        }
    }
    let aspects = by_aspect
        .into_iter()
        .map(|(aspect, acc)| {
            let mean = acc.strength_sum / acc.count as f64;
            let orientation = match acc.positive.cmp(&acc.negative) {
                std::cmp::Ordering::Greater => Orientation::Positive,
                std::cmp::Ordering::Less => Orientation::Negative,
                std::cmp::Ordering::Equal => Orientation::Neutral,
            };
            let summary = AspectSummary {
                orientation,
                mean_strength: mean,
                granularity: scale.label(mean),
                mention_count: acc.count,
            };
            (aspect.to_string(), summary)
        })
        .collect();
    EntityProfile { entity_id: entity_id.to_string(), aspects, review_count }
}
