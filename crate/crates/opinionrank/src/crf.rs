//! Linear-chain conditional random field for aspect extraction.
//!
//! Sentences are labeled with the BIO scheme over a three-label alphabet
//! (`O`, `B-ASPECT`, `I-ASPECT`). The model scores a label sequence as the
//! sum of per-position emission weights (indicator features x label) plus
//! label-to-label transition weights. Training maximizes the L2-regularized
//! conditional log-likelihood with mini-batch gradient ascent, where the
//! gradient is observed minus expected feature counts (forward-backward).
//! Decoding is Viterbi with the BIO constraint: `I-ASPECT` is unreachable
//! at sentence start and after `O`.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::{tag, OpinionLexicon, TaggedToken, Token};

/// Magic header of persisted models.
pub const MODEL_MAGIC: &str = "ORCRF1";

/// Number of labels in the alphabet.
pub const NUM_LABELS: usize = 3;

/// Sequence label. The alphabet is ordered `O < B-ASPECT < I-ASPECT`; ties
/// during decoding resolve toward the earlier label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Outside,
    Begin,
    Inside,
}

pub const LABELS: [Label; NUM_LABELS] = [Label::Outside, Label::Begin, Label::Inside];

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Outside => 0,
            Label::Begin => 1,
            Label::Inside => 2,
        }
    }

    pub fn from_index(i: usize) -> Label {
        LABELS[i]
    }

    pub fn parse(s: &str) -> Option<Label> {
        Some(match s {
            "O" => Label::Outside,
            "B-ASPECT" => Label::Begin,
            "I-ASPECT" => Label::Inside,
            _ => return None,
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Outside => "O",
            Label::Begin => "B-ASPECT",
            Label::Inside => "I-ASPECT",
        })
    }
}

/// Is `prev -> next` a valid BIO transition? (`O -> I` is not; `I` is also
/// invalid at sentence start, handled separately.)
fn transition_allowed(prev: Label, next: Label) -> bool {
    !(prev == Label::Outside && next == Label::Inside)
}

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("training diverged: objective is not finite at epoch {epoch}")]
    Divergence { epoch: u32 },
    #[error("annotation file line {line}: {msg}")]
    Conll { line: usize, msg: String },
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model header {found:?} (expected {MODEL_MAGIC:?})")]
    BadMagic { found: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// A sentence with gold BIO labels, as parsed from the annotation file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<Token>,
    pub gold_labels: Vec<Label>,
}

/// Training hyperparameters, kept on the model for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { l2: 0.1, learning_rate: 0.1, epochs: 50, batch_size: 8, seed: 42 }
    }
}

/// Sparse binary feature vector: ids of the indicator features active at one
/// position, in template order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
}

/// Interned feature-name dictionary. Ids are assigned in first-seen order
/// during training and persist with the model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureDict {
    names: Vec<String>,
    by_name: std::collections::HashMap<String, u32>,
}

impl FeatureDict {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        id
    }

    fn lookup(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    fn push_loaded(&mut self, name: String) {
        let id = self.names.len() as u32;
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
    }
}

/// Emit the indicator feature names for one position: lowercase word
/// identity, pos class and affixes of length 1..=3, each at window offsets
/// -2..=+2. Out-of-bounds offsets emit a single boundary sentinel.
pub fn feature_templates(sentence: &[TaggedToken], position: usize) -> Vec<String> {
    debug_assert!(position < sentence.len());
    let mut out = Vec::with_capacity(40);
    for offset in -2i64..=2 {
        let idx = position as i64 + offset;
        if idx < 0 {
            out.push(format!("w[{offset}]=<BOS>"));
            continue;
        }
        let Some(tt) = sentence.get(idx as usize) else {
            out.push(format!("w[{offset}]=<EOS>"));
            continue;
        };
        let lower = tt.token.surface.to_lowercase();
        out.push(format!("w[{offset}]={lower}"));
        out.push(format!("p[{offset}]={}", tt.pos_class));
        let chars: Vec<char> = lower.chars().collect();
        for k in 1..=3.min(chars.len()) {
            let prefix: String = chars[..k].iter().collect();
            let suffix: String = chars[chars.len() - k..].iter().collect();
            out.push(format!("pre{k}[{offset}]={prefix}"));
            out.push(format!("suf{k}[{offset}]={suffix}"));
        }
    }
    out
}

/// Per-position feature vectors of one sentence.
pub type SentenceFeatures = Vec<FeatureVector>;

/// Trained CRF: feature dictionary plus one flat weight vector laid out as
/// `nfeat x NUM_LABELS` emissions followed by `NUM_LABELS x NUM_LABELS`
/// transitions (row-major `[from][to]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    dict: FeatureDict,
    weights: Vec<f64>,
    hyper: Hyperparams,
}

impl CrfModel {
    fn with_dict(dict: FeatureDict, hyper: Hyperparams) -> Self {
        let len = dict.len() * NUM_LABELS + NUM_LABELS * NUM_LABELS;
        CrfModel { dict, weights: vec![0.0; len], hyper }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    pub fn num_features(&self) -> usize {
        self.dict.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.weights.len(), "weight vector length mismatch");
        self.weights = weights;
    }

    fn emission_weight(&self, feature: u32, label: Label) -> f64 {
        self.weights[feature as usize * NUM_LABELS + label.index()]
    }

    fn transition_index(from: usize, to: usize, nfeat: usize) -> usize {
        nfeat * NUM_LABELS + from * NUM_LABELS + to
    }

    pub fn transition_weight(&self, from: Label, to: Label) -> f64 {
        self.weights[Self::transition_index(from.index(), to.index(), self.dict.len())]
    }

    /// Map a tagged sentence to per-position feature vectors; features
    /// unknown to the dictionary are dropped.
    pub fn featurize_sentence(&self, sentence: &[TaggedToken]) -> SentenceFeatures {
        (0..sentence.len())
            .map(|pos| FeatureVector {
                ids: feature_templates(sentence, pos)
                    .iter()
                    .filter_map(|name| self.dict.lookup(name))
                    .collect(),
            })
            .collect()
    }

    pub fn emission_score(&self, fv: &FeatureVector, label: Label) -> f64 {
        fv.ids.iter().map(|&f| self.emission_weight(f, label)).sum()
    }

    /// Unconstrained score of one label sequence (finite for every sequence).
    pub fn sequence_score(&self, feats: &SentenceFeatures, labels: &[Label]) -> f64 {
        assert_eq!(feats.len(), labels.len());
        let mut score = 0.0;
        for (t, label) in labels.iter().enumerate() {
            score += self.emission_score(&feats[t], *label);
            if t > 0 {
                score += self.transition_weight(labels[t - 1], *label);
            }
        }
        score
    }

    /// Log partition function over all `3^n` label sequences, computed with
    /// the forward algorithm in log space.
    pub fn forward_log_partition(&self, feats: &SentenceFeatures) -> Result<f64, CrfError> {
        if feats.is_empty() {
            return Err(CrfError::EmptySentence);
        }
        let mut alpha: [f64; NUM_LABELS] =
            std::array::from_fn(|l| self.emission_score(&feats[0], Label::from_index(l)));
        for fv in &feats[1..] {
            let mut next = [f64::NEG_INFINITY; NUM_LABELS];
            for (to, slot) in next.iter_mut().enumerate() {
                let terms: [f64; NUM_LABELS] = std::array::from_fn(|from| {
                    alpha[from]
                        + self.transition_weight(Label::from_index(from), Label::from_index(to))
                });
                *slot = log_sum_exp(&terms) + self.emission_score(fv, Label::from_index(to));
            }
            alpha = next;
        }
        Ok(log_sum_exp(&alpha))
    }

    /// Viterbi decoding under the BIO constraint. Ties resolve toward the
    /// earlier label in the alphabet, so the all-zero model decodes all-`O`.
    pub fn decode(&self, sentence: &[TaggedToken]) -> Vec<Label> {
        let feats = self.featurize_sentence(sentence);
        self.decode_features(&feats)
    }

    pub fn decode_features(&self, feats: &SentenceFeatures) -> Vec<Label> {
        let n = feats.len();
        if n == 0 {
            return Vec::new();
        }
        let mut delta = vec![[f64::NEG_INFINITY; NUM_LABELS]; n];
        let mut back = vec![[0usize; NUM_LABELS]; n];
        for l in 0..NUM_LABELS {
            let label = Label::from_index(l);
            if label == Label::Inside {
                continue; // unreachable at sentence start
            }
            delta[0][l] = self.emission_score(&feats[0], label);
        }
        for t in 1..n {
            for to in 0..NUM_LABELS {
                let to_label = Label::from_index(to);
                let mut best = f64::NEG_INFINITY;
                let mut best_from = 0;
                for from in 0..NUM_LABELS {
                    if !transition_allowed(Label::from_index(from), to_label) {
                        continue;
                    }
                    let score = delta[t - 1][from]
                        + self.transition_weight(Label::from_index(from), to_label);
                    if score > best {
                        best = score;
                        best_from = from;
                    }
                }
                if best > f64::NEG_INFINITY {
                    delta[t][to] = best + self.emission_score(&feats[t], to_label);
                    back[t][to] = best_from;
                }
            }
        }
        let mut last = 0;
        let mut best = f64::NEG_INFINITY;
        for (l, score) in delta[n - 1].iter().enumerate() {
            if *score > best {
                best = *score;
                last = l;
            }
        }
        let mut labels = vec![Label::Outside; n];
        labels[n - 1] = Label::from_index(last);
        for t in (1..n).rev() {
            last = back[t][last];
            labels[t - 1] = Label::from_index(last);
        }
        labels
    }

    /// Persist in the versioned text format. Byte-identical across runs for
    /// the same model.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        let h = &self.hyper;
        writeln!(
            w,
            "hyper\t{}\t{}\t{}\t{}\t{}",
            h.l2, h.learning_rate, h.epochs, h.batch_size, h.seed
        )?;
        let nfeat = self.dict.len();
        let trans: Vec<String> = (0..NUM_LABELS * NUM_LABELS)
            .map(|i| self.weights[nfeat * NUM_LABELS + i].to_string())
            .collect();
        writeln!(w, "transitions\t{}", trans.join("\t"))?;
        writeln!(w, "features\t{nfeat}")?;
        for (id, name) in self.dict.names.iter().enumerate() {
            let ws: Vec<String> = (0..NUM_LABELS)
                .map(|l| self.weights[id * NUM_LABELS + l].to_string())
                .collect();
            writeln!(w, "{name}\t{}", ws.join("\t"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CrfError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CrfError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CrfError> {
        let mut lines = reader.lines();
        let magic = lines
            .next()
            .ok_or_else(|| CrfError::Corrupt("empty file".to_string()))??;
        if magic != MODEL_MAGIC {
            return Err(CrfError::BadMagic { found: magic });
        }
        let hyper_line = lines
            .next()
            .ok_or_else(|| CrfError::Corrupt("missing hyper line".to_string()))??;
        let fields: Vec<&str> = hyper_line.split('\t').collect();
        if fields.len() != 6 || fields[0] != "hyper" {
            return Err(CrfError::Corrupt("bad hyper line".to_string()));
        }
        let parse_f = |s: &str| -> Result<f64, CrfError> {
            s.parse().map_err(|_| CrfError::Corrupt(format!("bad number {s:?}")))
        };
        let hyper = Hyperparams {
            l2: parse_f(fields[1])?,
            learning_rate: parse_f(fields[2])?,
            epochs: fields[3]
                .parse()
                .map_err(|_| CrfError::Corrupt(format!("bad epochs {:?}", fields[3])))?,
            batch_size: fields[4]
                .parse()
                .map_err(|_| CrfError::Corrupt(format!("bad batch {:?}", fields[4])))?,
            seed: fields[5]
                .parse()
                .map_err(|_| CrfError::Corrupt(format!("bad seed {:?}", fields[5])))?,
        };
        let trans_line = lines
            .next()
            .ok_or_else(|| CrfError::Corrupt("missing transitions".to_string()))??;
        let tfields: Vec<&str> = trans_line.split('\t').collect();
        if tfields.len() != 1 + NUM_LABELS * NUM_LABELS || tfields[0] != "transitions" {
            return Err(CrfError::Corrupt("bad transitions line".to_string()));
        }
        let feat_line = lines
            .next()
            .ok_or_else(|| CrfError::Corrupt("missing feature count".to_string()))??;
        let ffields: Vec<&str> = feat_line.split('\t').collect();
        if ffields.len() != 2 || ffields[0] != "features" {
            return Err(CrfError::Corrupt("bad feature count line".to_string()));
        }
        let nfeat: usize = ffields[1]
            .parse()
            .map_err(|_| CrfError::Corrupt(format!("bad feature count {:?}", ffields[1])))?;

        let mut dict = FeatureDict::default();
        let mut weights = vec![0.0; nfeat * NUM_LABELS + NUM_LABELS * NUM_LABELS];
        for i in 0..nfeat {
            let line = lines
                .next()
                .ok_or_else(|| CrfError::Corrupt(format!("truncated at feature {i}")))??;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 1 + NUM_LABELS {
                return Err(CrfError::Corrupt(format!("bad feature line {i}")));
            }
            dict.push_loaded(fields[0].to_string());
            for l in 0..NUM_LABELS {
                weights[i * NUM_LABELS + l] = parse_f(fields[1 + l])?;
            }
        }
        for (i, s) in tfields[1..].iter().enumerate() {
            weights[nfeat * NUM_LABELS + i] = parse_f(s)?;
        }
        if lines.next().transpose()?.is_some_and(|l| !l.trim().is_empty()) {
            return Err(CrfError::Corrupt("trailing content".to_string()));
        }
        Ok(CrfModel { dict, weights, hyper })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Forward-backward marginals for one sentence, used for expected counts.
/// Returns (log Z, per-position label posteriors, per-edge posteriors).
fn forward_backward(
    model: &CrfModel,
    feats: &SentenceFeatures,
) -> (f64, Vec<[f64; NUM_LABELS]>, Vec<[[f64; NUM_LABELS]; NUM_LABELS]>) {
    let n = feats.len();
    let emit: Vec<[f64; NUM_LABELS]> = feats
        .iter()
        .map(|fv| std::array::from_fn(|l| model.emission_score(fv, Label::from_index(l))))
        .collect();
    let trans: [[f64; NUM_LABELS]; NUM_LABELS] = std::array::from_fn(|from| {
        std::array::from_fn(|to| {
            model.transition_weight(Label::from_index(from), Label::from_index(to))
        })
    });

    let mut alpha = vec![[0.0f64; NUM_LABELS]; n];
    alpha[0] = emit[0];
    for t in 1..n {
        for to in 0..NUM_LABELS {
            let terms: [f64; NUM_LABELS] =
                std::array::from_fn(|from| alpha[t - 1][from] + trans[from][to]);
            alpha[t][to] = log_sum_exp(&terms) + emit[t][to];
        }
    }
    let log_z = log_sum_exp(&alpha[n - 1]);

    let mut beta = vec![[0.0f64; NUM_LABELS]; n];
    for t in (0..n.saturating_sub(1)).rev() {
        for from in 0..NUM_LABELS {
            let terms: [f64; NUM_LABELS] =
                std::array::from_fn(|to| trans[from][to] + emit[t + 1][to] + beta[t + 1][to]);
            beta[t][from] = log_sum_exp(&terms);
        }
    }

    let node_marginals: Vec<[f64; NUM_LABELS]> = (0..n)
        .map(|t| std::array::from_fn(|l| (alpha[t][l] + beta[t][l] - log_z).exp()))
        .collect();
    let edge_marginals: Vec<[[f64; NUM_LABELS]; NUM_LABELS]> = (1..n)
        .map(|t| {
            std::array::from_fn(|from| {
                std::array::from_fn(|to| {
                    (alpha[t - 1][from] + trans[from][to] + emit[t][to] + beta[t][to] - log_z)
                        .exp()
                })
            })
        })
        .collect();
    (log_z, node_marginals, edge_marginals)
}

/// One training instance with cached features.
struct Instance {
    feats: SentenceFeatures,
    gold: Vec<Label>,
}

impl Instance {
    /// Add `scale * (observed - expected)` feature counts to `grad`;
    /// returns this sentence's conditional log-likelihood.
    fn accumulate(&self, model: &CrfModel, grad: &mut [f64], scale: f64) -> f64 {
        let nfeat = model.dict.len();
        let (log_z, nodes, edges) = forward_backward(model, &self.feats);
        for (t, fv) in self.feats.iter().enumerate() {
            let gold = self.gold[t].index();
            for &f in &fv.ids {
                grad[f as usize * NUM_LABELS + gold] += scale;
                for l in 0..NUM_LABELS {
                    grad[f as usize * NUM_LABELS + l] -= scale * nodes[t][l];
                }
            }
            if t > 0 {
                let prev = self.gold[t - 1].index();
                grad[CrfModel::transition_index(prev, gold, nfeat)] += scale;
                for from in 0..NUM_LABELS {
                    for to in 0..NUM_LABELS {
                        grad[CrfModel::transition_index(from, to, nfeat)] -=
                            scale * edges[t - 1][from][to];
                    }
                }
            }
        }
        model.sequence_score(&self.feats, &self.gold) - log_z
    }
}

/// L2-regularized conditional log-likelihood of a feature-cached corpus and
/// its analytic gradient at the model's current weights:
/// `sum_i ll_i - l2/2 * ||w||^2`. Exposed so the gradient can be checked
/// against finite differences.
pub fn objective_and_gradient(
    model: &CrfModel,
    corpus: &[(SentenceFeatures, Vec<Label>)],
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.weights.len()];
    let mut objective = 0.0;
    for (feats, gold) in corpus {
        let inst = Instance { feats: feats.clone(), gold: gold.clone() };
        objective += inst.accumulate(model, &mut grad, 1.0);
    }
    for (g, w) in grad.iter_mut().zip(&model.weights) {
        *g -= l2 * w;
    }
    objective -= 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    (objective, grad)
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CrfModel,
    /// Regularized log-likelihood at the final weights.
    pub final_objective: f64,
}

/// Train a model from scratch on BIO-annotated sentences.
///
/// Tokens are tagged with the lexicon-driven tagger before featurization so
/// training and decoding see identical features. Deterministic for a fixed
/// seed.
pub fn train(
    corpus: &[AnnotatedSentence],
    lexicon: &OpinionLexicon,
    hyper: Hyperparams,
) -> Result<TrainOutcome, CrfError> {
    if corpus.is_empty() {
        return Err(CrfError::EmptyCorpus);
    }
    for (i, s) in corpus.iter().enumerate() {
        if s.tokens.is_empty() || s.tokens.len() != s.gold_labels.len() {
            return Err(CrfError::Conll {
                line: i + 1,
                msg: "empty sentence or label length mismatch".to_string(),
            });
        }
    }

    // First pass: build the feature dictionary in corpus order.
    let mut dict = FeatureDict::default();
    let tagged: Vec<Vec<TaggedToken>> = corpus.iter().map(|s| tag(&s.tokens, lexicon)).collect();
    let mut instances = Vec::with_capacity(corpus.len());
    for (sentence, annotated) in tagged.iter().zip(corpus) {
        let feats: SentenceFeatures = (0..sentence.len())
            .map(|pos| FeatureVector {
                ids: feature_templates(sentence, pos)
                    .iter()
                    .map(|name| dict.intern(name))
                    .collect(),
            })
            .collect();
        instances.push(Instance { feats, gold: annotated.gold_labels.clone() });
    }

    let mut model = CrfModel::with_dict(dict, hyper);
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let batch_size = hyper.batch_size.max(1);
    // Per-batch weight decay implementing the l2 term of the objective,
    // clamped at zero so extreme l2 shrinks weights instead of oscillating.
    let decay = (1.0 - hyper.learning_rate * hyper.l2 / n as f64).max(0.0);

    let mut final_objective = evaluate_objective(&model, &instances, hyper.l2);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let mut grad = vec![0.0; model.weights.len()];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                instances[i].accumulate(&model, &mut grad, scale);
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w = *w * decay + hyper.learning_rate * g;
            }
        }
        final_objective = evaluate_objective(&model, &instances, hyper.l2);
        if !final_objective.is_finite() {
            return Err(CrfError::Divergence { epoch });
        }
    }
    Ok(TrainOutcome { model, final_objective })
}

fn evaluate_objective(model: &CrfModel, instances: &[Instance], l2: f64) -> f64 {
    let mut objective = 0.0;
    for inst in instances {
        let log_z = model
            .forward_log_partition(&inst.feats)
            .expect("non-empty sentence");
        objective += model.sequence_score(&inst.feats, &inst.gold) - log_z;
    }
    objective - 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// An aspect phrase decoded from a review sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectMention {
    /// Lowercased surface phrase; the aspect key used everywhere downstream.
    pub phrase: String,
    pub sentence_id: usize,
    /// Token span `[start, end)` within the sentence.
    pub span: (usize, usize),
}

/// Decode every sentence and collapse maximal `B (I)*` runs into aspect
/// mentions.
pub fn extract_aspects(model: &CrfModel, sentences: &[Vec<TaggedToken>]) -> Vec<AspectMention> {
    let mut mentions = Vec::new();
    for (sentence_id, sentence) in sentences.iter().enumerate() {
        if sentence.is_empty() {
            continue;
        }
        let labels = model.decode(sentence);
        let mut start: Option<usize> = None;
        for (pos, label) in labels.iter().chain(std::iter::once(&Label::Outside)).enumerate() {
            match label {
                Label::Begin => {
                    if let Some(s) = start.take() {
                        mentions.push(mention_from(sentence, sentence_id, s, pos));
                    }
                    start = Some(pos);
                }
                Label::Inside => {}
                Label::Outside => {
                    if let Some(s) = start.take() {
                        mentions.push(mention_from(sentence, sentence_id, s, pos));
                    }
                }
            }
        }
    }
    mentions
}

fn mention_from(
    sentence: &[TaggedToken],
    sentence_id: usize,
    start: usize,
    end: usize,
) -> AspectMention {
    let phrase = sentence[start..end]
        .iter()
        .map(|tt| tt.token.surface.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ");
    AspectMention { phrase, sentence_id, span: (start, end) }
}

/// Parse a CoNLL-style annotation file: one `token<TAB>label` per line,
/// blank line between sentences. Validates BIO (no `I-ASPECT` at sentence
/// start or after `O`).
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedSentence>, CrfError> {
    let file = std::fs::File::open(path)?;
    parse_annotations(std::io::BufReader::new(file))
}

pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<AnnotatedSentence>, CrfError> {
    let mut sentences: Vec<AnnotatedSentence> = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut labels: Vec<Label> = Vec::new();
    fn flush(sentences: &mut Vec<AnnotatedSentence>, tokens: &mut Vec<Token>, labels: &mut Vec<Label>) {
        if !tokens.is_empty() {
            sentences.push(AnnotatedSentence {
                tokens: std::mem::take(tokens),
                gold_labels: std::mem::take(labels),
            });
        }
    }
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            flush(&mut sentences, &mut tokens, &mut labels);
            continue;
        }
        let Some((surface, label_str)) = trimmed.split_once('\t') else {
            return Err(CrfError::Conll {
                line: lineno,
                msg: "expected token<TAB>label".to_string(),
            });
        };
        if surface.is_empty() {
            return Err(CrfError::Conll { line: lineno, msg: "empty token".to_string() });
        }
        let label = Label::parse(label_str).ok_or_else(|| CrfError::Conll {
            line: lineno,
            msg: format!("unknown label {label_str:?}"),
        })?;
        if label == Label::Inside
            && !matches!(labels.last(), Some(Label::Begin) | Some(Label::Inside))
        {
            return Err(CrfError::Conll {
                line: lineno,
                msg: "I-ASPECT without preceding B-ASPECT".to_string(),
            });
        }
        tokens.push(Token {
            surface: surface.to_string(),
            position: tokens.len(),
            sentence_id: sentences.len(),
        });
        labels.push(label);
    }
    flush(&mut sentences, &mut tokens, &mut labels);
    Ok(sentences)
}

/// Token accuracy of the model against gold labels, used by the training
/// report.
pub fn token_accuracy(
    model: &CrfModel,
    corpus: &[AnnotatedSentence],
    lexicon: &OpinionLexicon,
) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for sentence in corpus {
        let tagged = tag(&sentence.tokens, lexicon);
        let decoded = model.decode(&tagged);
        for (d, g) in decoded.iter().zip(&sentence.gold_labels) {
            total += 1;
            if d == g {
                correct += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn lexicon() -> OpinionLexicon {
        OpinionLexicon::default_seed()
    }

    fn sentence_of(text: &str) -> Vec<TaggedToken> {
        let sentences = crate::text::tokenize(text);
        tag(&sentences[0], &lexicon())
    }

    fn annotated(text: &str, labels: &[Label]) -> AnnotatedSentence {
        let tokens = crate::text::tokenize(text).remove(0);
        assert_eq!(tokens.len(), labels.len());
        AnnotatedSentence { tokens, gold_labels: labels.to_vec() }
    }

    /// Tiny corpus where "battery" is always the aspect.
    fn toy_corpus() -> Vec<AnnotatedSentence> {
        use Label::*;
        vec![
            annotated("battery is good", &[Begin, Outside, Outside]),
            annotated("the battery works", &[Outside, Begin, Outside]),
            annotated("i love this battery", &[Outside, Outside, Outside, Begin]),
            annotated("good battery", &[Outside, Begin]),
            annotated("display is nice", &[Outside, Outside, Outside]),
        ]
    }

    /// All BIO-valid label sequences of length n.
    fn valid_sequences(n: usize) -> Vec<Vec<Label>> {
        let mut all = vec![vec![]];
        for t in 0..n {
            let mut next = Vec::new();
            for seq in &all {
                for label in LABELS {
                    let ok = if t == 0 {
                        label != Label::Inside
                    } else {
                        transition_allowed(*seq.last().unwrap(), label)
                    };
                    if ok {
                        let mut s = seq.clone();
                        s.push(label);
                        next.push(s);
                    }
                }
            }
            all = next;
        }
        all
    }

    /// All 3^n label sequences.
    fn all_sequences(n: usize) -> Vec<Vec<Label>> {
        let mut all = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for seq in &all {
                for label in LABELS {
                    let mut s = seq.clone();
                    s.push(label);
                    next.push(s);
                }
            }
            all = next;
        }
        all
    }

    fn random_model(sentence: &[TaggedToken], rng: &mut impl Rng) -> CrfModel {
        // Build a dictionary over this sentence's features, then randomize.
        let corpus = vec![AnnotatedSentence {
            tokens: sentence.iter().map(|tt| tt.token.clone()).collect(),
            gold_labels: vec![Label::Outside; sentence.len()],
        }];
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let mut model = train(&corpus, &lexicon(), hyper).unwrap().model;
        let weights: Vec<f64> = (0..model.weights().len())
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect();
        model.set_weights(weights);
        model
    }

    #[test]
    fn feature_templates_boundary_sentinels() {
        let sentence = sentence_of("battery");
        let feats = feature_templates(&sentence, 0);
        assert!(feats.contains(&"w[0]=battery".to_string()));
        assert!(feats.contains(&"suf3[0]=ery".to_string()));
        assert!(feats.contains(&"pre1[0]=b".to_string()));
        assert!(feats.contains(&"p[0]=noun".to_string()));
        assert!(feats.contains(&"w[-2]=<BOS>".to_string()));
        assert!(feats.contains(&"w[-1]=<BOS>".to_string()));
        assert!(feats.contains(&"w[1]=<EOS>".to_string()));
        assert!(feats.contains(&"w[2]=<EOS>".to_string()));
    }

    #[test]
    fn feature_templates_deterministic_and_window_local() {
        let a = sentence_of("one two battery four five");
        let b = sentence_of("one two battery four five");
        assert_eq!(feature_templates(&a, 2), feature_templates(&b, 2));
        // differ only at position 0, outside the +-2 window of position 3
        let long_a = sentence_of("x two battery four five");
        let long_b = sentence_of("y two battery four five");
        assert_eq!(feature_templates(&long_a, 3), feature_templates(&long_b, 3));
        assert_ne!(feature_templates(&long_a, 1), feature_templates(&long_b, 1));
    }

    #[test]
    fn zero_weight_partition_is_n_log_3() {
        let corpus = toy_corpus();
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let model = train(&corpus, &lexicon(), hyper).unwrap().model;
        for text in ["battery", "battery is good", "one two three four five"] {
            let sentence = sentence_of(text);
            let feats = model.featurize_sentence(&sentence);
            let log_z = model.forward_log_partition(&feats).unwrap();
            let expected = sentence.len() as f64 * 3f64.ln();
            assert!((log_z - expected).abs() < 1e-12, "{text}: {log_z} vs {expected}");
        }
    }

    #[test]
    fn single_token_partition_is_lse_of_label_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sentence = sentence_of("battery");
        let model = random_model(&sentence, &mut rng);
        let feats = model.featurize_sentence(&sentence);
        let scores: Vec<f64> = LABELS
            .iter()
            .map(|l| model.emission_score(&feats[0], *l))
            .collect();
        let expected = log_sum_exp(&scores);
        assert!((model.forward_log_partition(&feats).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn partition_matches_enumeration_on_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let len = 1 + (trial % 5);
            let text = ["good", "battery", "is", "very", "display"][..len].join(" ");
            let sentence = sentence_of(&text);
            let model = random_model(&sentence, &mut rng);
            let feats = model.featurize_sentence(&sentence);
            let log_z = model.forward_log_partition(&feats).unwrap();
            let brute: f64 = log_sum_exp(
                &all_sequences(len)
                    .iter()
                    .map(|seq| model.sequence_score(&feats, seq))
                    .collect::<Vec<_>>(),
            );
            assert!((log_z - brute).abs() < 1e-8, "trial {trial}: {log_z} vs {brute}");
        }
    }

    #[test]
    fn probabilities_normalize_over_all_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sentence = sentence_of("good battery life here");
        let model = random_model(&sentence, &mut rng);
        let feats = model.featurize_sentence(&sentence);
        let log_z = model.forward_log_partition(&feats).unwrap();
        let total: f64 = all_sequences(4)
            .iter()
            .map(|seq| (model.sequence_score(&feats, seq) - log_z).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "total {total}");
    }

    #[test]
    fn empty_sentence_partition_errors_and_decode_is_empty() {
        let corpus = toy_corpus();
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let model = train(&corpus, &lexicon(), hyper).unwrap().model;
        assert!(matches!(
            model.forward_log_partition(&Vec::new()),
            Err(CrfError::EmptySentence)
        ));
        assert!(model.decode(&[]).is_empty());
    }

    #[test]
    fn zero_weights_decode_all_outside() {
        let corpus = toy_corpus();
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let model = train(&corpus, &lexicon(), hyper).unwrap().model;
        let sentence = sentence_of("good battery life");
        assert_eq!(model.decode(&sentence), vec![Label::Outside; 3]);
    }

    #[test]
    fn viterbi_matches_bruteforce_on_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..50 {
            let len = 1 + (trial % 5);
            let text = ["battery", "life", "is", "good", "here"][..len].join(" ");
            let sentence = sentence_of(&text);
            let model = random_model(&sentence, &mut rng);
            let feats = model.featurize_sentence(&sentence);
            let decoded = model.decode_features(&feats);
            let decoded_score = model.sequence_score(&feats, &decoded);
            let best = valid_sequences(len)
                .into_iter()
                .map(|seq| {
                    let s = model.sequence_score(&feats, &seq);
                    (seq, s)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(
                (decoded_score - best.1).abs() < 1e-9,
                "trial {trial}: viterbi {decoded_score} < brute {}",
                best.1
            );
        }
    }

    #[test]
    fn decoded_sequences_are_bio_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let sentence = sentence_of("battery life is good here now");
            let model = random_model(&sentence, &mut rng);
            let labels = model.decode(&sentence);
            assert_ne!(labels[0], Label::Inside);
            for pair in labels.windows(2) {
                assert!(transition_allowed(pair[0], pair[1]), "bad pair {pair:?}");
            }
        }
    }

    #[test]
    fn training_learns_separable_toy_corpus() {
        let corpus = toy_corpus();
        let outcome = train(&corpus, &lexicon(), Hyperparams::default()).unwrap();
        assert_eq!(token_accuracy(&outcome.model, &corpus, &lexicon()), 1.0);
        let sentence = sentence_of("battery is good");
        assert_eq!(
            outcome.model.decode(&sentence),
            vec![Label::Begin, Label::Outside, Label::Outside]
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = toy_corpus();
        let a = train(&corpus, &lexicon(), Hyperparams::default()).unwrap();
        let b = train(&corpus, &lexicon(), Hyperparams::default()).unwrap();
        assert_eq!(a.model, b.model);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.model.write(&mut buf_a).unwrap();
        b.model.write(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn huge_l2_shrinks_weights() {
        let corpus = toy_corpus();
        let small = train(&corpus, &lexicon(), Hyperparams { l2: 0.1, ..Hyperparams::default() })
            .unwrap();
        let huge = train(&corpus, &lexicon(), Hyperparams { l2: 1e6, ..Hyperparams::default() })
            .unwrap();
        let norm = |m: &CrfModel| m.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        println!("norm small-l2 {} / huge-l2 {}", norm(&small.model), norm(&huge.model));
        // full decay clamps every step to one gradient update from zero
        assert!(norm(&huge.model) < 0.25 * norm(&small.model));
        let lr = Hyperparams::default().learning_rate;
        let max_w = huge.model.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max_w <= lr * 2.0, "max weight {max_w} exceeds a single clamped step");
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(
            train(&[], &lexicon(), Hyperparams::default()),
            Err(CrfError::EmptyCorpus)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let corpus = vec![
            annotated("battery is good", &[Label::Begin, Label::Outside, Label::Outside]),
            annotated("good display", &[Label::Outside, Label::Begin]),
            annotated("the battery life", &[Label::Outside, Label::Begin, Label::Inside]),
        ];
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let mut model = train(&corpus, &lexicon(), hyper).unwrap().model;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let weights: Vec<f64> = (0..model.weights().len())
            .map(|_| rng.gen_range(-0.8..0.8))
            .collect();
        model.set_weights(weights.clone());

        let cached: Vec<(SentenceFeatures, Vec<Label>)> = corpus
            .iter()
            .map(|s| {
                let tagged = tag(&s.tokens, &lexicon());
                (model.featurize_sentence(&tagged), s.gold_labels.clone())
            })
            .collect();
        let l2 = 0.1;
        let (_, grad) = objective_and_gradient(&model, &cached, l2);

        let step = 1e-5;
        for i in 0..weights.len() {
            let mut plus = weights.clone();
            plus[i] += step;
            let mut minus = weights.clone();
            minus[i] -= step;
            let mut m = model.clone();
            m.set_weights(plus);
            let (obj_plus, _) = objective_and_gradient(&m, &cached, l2);
            m.set_weights(minus);
            let (obj_minus, _) = objective_and_gradient(&m, &cached, l2);
            let fd = (obj_plus - obj_minus) / (2.0 * step);
            let denom = grad[i].abs().max(fd.abs()).max(1.0);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "weight {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn extract_aspects_from_trained_model() {
        use Label::*;
        let corpus = vec![
            annotated("battery life is good", &[Begin, Inside, Outside, Outside]),
            annotated("the display", &[Outside, Begin]),
            annotated("price is fine", &[Begin, Outside, Outside]),
        ];
        let outcome = train(&corpus, &lexicon(), Hyperparams::default()).unwrap();
        let sentences: Vec<Vec<TaggedToken>> =
            crate::text::tokenize("Battery life is good. The display!")
                .iter()
                .map(|s| tag(s, &lexicon()))
                .collect();
        let mentions = extract_aspects(&outcome.model, &sentences);
        assert_eq!(mentions.len(), 2);
        assert_eq!(mentions[0].phrase, "battery life");
        assert_eq!(mentions[0].sentence_id, 0);
        assert_eq!(mentions[0].span, (0, 2));
        assert_eq!(mentions[1].phrase, "display");
        assert_eq!(mentions[1].sentence_id, 1);
    }

    #[test]
    fn all_outside_yields_no_mentions() {
        let corpus = toy_corpus();
        let hyper = Hyperparams { epochs: 0, ..Hyperparams::default() };
        let model = train(&corpus, &lexicon(), hyper).unwrap().model;
        let sentences: Vec<Vec<TaggedToken>> = vec![sentence_of("nothing to see")];
        assert!(extract_aspects(&model, &sentences).is_empty());
    }

    #[test]
    fn conll_roundtrip_and_validation() {
        let text = "battery\tB-ASPECT\nlife\tI-ASPECT\nis\tO\n\ngood\tO\ndisplay\tB-ASPECT\n";
        let sentences = parse_annotations(text.as_bytes()).unwrap();
        assert_eq!(sentences.len(), 2);
        assert_eq!(
            sentences[0].gold_labels,
            vec![Label::Begin, Label::Inside, Label::Outside]
        );
        assert_eq!(sentences[1].tokens[1].surface, "display");

        let bad = "life\tI-ASPECT\n";
        assert!(matches!(
            parse_annotations(bad.as_bytes()),
            Err(CrfError::Conll { line: 1, .. })
        ));
        let bad = "is\tO\nlife\tI-ASPECT\n";
        assert!(matches!(
            parse_annotations(bad.as_bytes()),
            Err(CrfError::Conll { line: 2, .. })
        ));
        let bad = "token NO-TAB\n";
        assert!(matches!(parse_annotations(bad.as_bytes()), Err(CrfError::Conll { .. })));
    }

    #[test]
    fn model_save_load_roundtrip_bit_identical() {
        let corpus = toy_corpus();
        let outcome = train(&corpus, &lexicon(), Hyperparams::default()).unwrap();
        let mut bytes = Vec::new();
        outcome.model.write(&mut bytes).unwrap();
        let loaded = CrfModel::read(bytes.as_slice()).unwrap();
        assert_eq!(outcome.model, loaded);
        let mut bytes2 = Vec::new();
        loaded.write(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn model_load_rejects_bad_files() {
        assert!(matches!(
            CrfModel::read("WRONGMAGIC\n".as_bytes()),
            Err(CrfError::BadMagic { .. })
        ));
        let corpus = toy_corpus();
        let hyper = Hyperparams { epochs: 1, ..Hyperparams::default() };
        let outcome = train(&corpus, &lexicon(), hyper).unwrap();
        let mut bytes = Vec::new();
        outcome.model.write(&mut bytes).unwrap();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(CrfModel::read(truncated), Err(CrfError::Corrupt(_))));
    }
}
