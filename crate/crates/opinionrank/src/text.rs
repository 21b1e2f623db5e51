//! Tokenization, lexicon-based part-of-speech classification and opinion-word
//! extraction.
//!
//! The tagger is deliberately not a statistical POS tagger: the downstream
//! pipeline only needs to discriminate opinion adjectives, adverb modifiers
//! and negators, so lexicon membership plus two suffix heuristics are enough
//! and keep the whole pipeline deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

/// Valid degree range for lexicon entries and fuzzy inputs.
pub const DEGREE_MIN: f64 = 0.0;
pub const DEGREE_MAX: f64 = 10.0;

/// Part-of-speech class assigned by [`tag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosClass {
    Adjective,
    Adverb,
    Negator,
    Noun,
    Other,
}

impl fmt::Display for PosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PosClass::Adjective => "adjective",
            PosClass::Adverb => "adverb",
            PosClass::Negator => "negator",
            PosClass::Noun => "noun",
            PosClass::Other => "other",
        };
        f.write_str(s)
    }
}

/// Opinion polarity of a lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

/// A single word of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Original surface form (case preserved).
    pub surface: String,
    /// 0-based index within the sentence.
    pub position: usize,
    /// 0-based sentence index within the review.
    pub sentence_id: usize,
}

/// A token plus its part-of-speech class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub token: Token,
    pub pos_class: PosClass,
}

/// One opinion lexicon entry: degree on `[0,10]`, polarity and word class.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub degree: f64,
    pub polarity: Polarity,
    pub pos_class: PosClass,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("lexicon line {line}: duplicate lemma {lemma:?}")]
    DuplicateLemma { line: usize, lemma: String },
    #[error("lexicon line {line}: degree {degree} outside [0,10]")]
    DegreeRange { line: usize, degree: f64 },
}

/// Lookup table from lowercase lemma to degree, polarity and word class.
///
/// Stored as an ordered map so serialization is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionLexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

/// Words treated as negators. `n't` covers contracted forms like "isn't".
const NEGATORS: [&str; 3] = ["not", "no", "never"];

/// Small built-in noun list for the suffix-heuristic tagger. Covers the
/// aspect vocabulary of the bundled corpora.
const KNOWN_NOUNS: [&str; 34] = [
    "battery", "life", "display", "screen", "keyboard", "price", "sound", "camera", "speaker",
    "charger", "design", "quality", "laptop", "phone", "hotel", "room", "staff", "location",
    "breakfast", "wifi", "food", "service", "pool", "view", "bed", "bathroom", "car", "mileage",
    "brakes", "drive", "engine", "seat", "trunk", "channels",
];

impl OpinionLexicon {
    /// The eight-entry default lexicon (degrees as published, all positive).
    pub fn default_seed() -> Self {
        let mut entries = BTreeMap::new();
        let adj = |d: f64| LexiconEntry {
            degree: d,
            polarity: Polarity::Positive,
            pos_class: PosClass::Adjective,
        };
        let adv = |d: f64| LexiconEntry {
            degree: d,
            polarity: Polarity::Positive,
            pos_class: PosClass::Adverb,
        };
        entries.insert("like".to_string(), adj(4.0));
        entries.insert("love".to_string(), adj(5.0));
        entries.insert("good".to_string(), adj(3.0));
        entries.insert("excellent".to_string(), adj(6.0));
        entries.insert("enjoy".to_string(), adj(8.0));
        entries.insert("really".to_string(), adv(5.0));
        entries.insert("extremely".to_string(), adv(9.0));
        entries.insert("very".to_string(), adv(5.0));
        OpinionLexicon { entries }
    }

    pub fn new(entries: BTreeMap<String, LexiconEntry>) -> Self {
        OpinionLexicon { entries }
    }

    pub fn get(&self, lemma: &str) -> Option<&LexiconEntry> {
        self.entries.get(lemma)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &LexiconEntry)> {
        self.entries.iter()
    }

    /// Load from a TSV file: `lemma<TAB>degree<TAB>polarity<TAB>pos_class`.
    /// Lines starting with `#` and blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, LexiconError> {
        let mut entries = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 4 {
                return Err(LexiconError::Parse {
                    line: lineno,
                    msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let lemma = fields[0].to_lowercase();
            if lemma.is_empty() {
                return Err(LexiconError::Parse {
                    line: lineno,
                    msg: "empty lemma".to_string(),
                });
            }
            let degree: f64 = fields[1].parse().map_err(|_| LexiconError::Parse {
                line: lineno,
                msg: format!("bad degree {:?}", fields[1]),
            })?;
            if !(DEGREE_MIN..=DEGREE_MAX).contains(&degree) {
                return Err(LexiconError::DegreeRange { line: lineno, degree });
            }
            let polarity = match fields[2] {
                "positive" => Polarity::Positive,
                "negative" => Polarity::Negative,
                other => {
                    return Err(LexiconError::Parse {
                        line: lineno,
                        msg: format!("bad polarity {other:?} (expected positive|negative)"),
                    })
                }
            };
            let pos_class = match fields[3] {
                "adjective" => PosClass::Adjective,
                "adverb" => PosClass::Adverb,
                other => {
                    return Err(LexiconError::Parse {
                        line: lineno,
                        msg: format!("bad pos_class {other:?} (expected adjective|adverb)"),
                    })
                }
            };
            if entries.contains_key(&lemma) {
                return Err(LexiconError::DuplicateLemma { line: lineno, lemma });
            }
            entries.insert(lemma, LexiconEntry { degree, polarity, pos_class });
        }
        Ok(OpinionLexicon { entries })
    }

    /// Serialize in the same TSV format, lemmas sorted.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        for (lemma, e) in &self.entries {
            writeln!(w, "{lemma}\t{}\t{}\t{}", e.degree, e.polarity, e.pos_class)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)
    }
}

impl Default for OpinionLexicon {
    fn default() -> Self {
        Self::default_seed()
    }
}

/// An opinion word resolved against the lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionWord {
    pub token: TaggedToken,
    pub degree: f64,
    pub polarity: Polarity,
}

/// A lexicon adjective with its optional adverb modifier and negation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionUnit {
    pub adjective: OpinionWord,
    pub modifier: Option<OpinionWord>,
    pub negated: bool,
    pub sentence_id: usize,
}

/// How far back (in tokens) an adverb may sit from the adjective it modifies.
pub const MODIFIER_WINDOW: usize = 2;
/// How far back a negator still flips the adjective.
pub const NEGATION_WINDOW: usize = 3;

/// Split text into sentences of word tokens.
///
/// Sentences end at `.`, `!` or `?`; any other non-word character separates
/// tokens and is dropped. Word characters are alphanumerics plus an internal
/// apostrophe (so "isn't" stays one token). Empty sentences are dropped.
pub fn tokenize(text: &str) -> Vec<Vec<Token>> {
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut word = String::new();

    let flush_word = |word: &mut String, current: &mut Vec<String>| {
        let trimmed = word.trim_matches('\'');
        if !trimmed.is_empty() {
            current.push(trimmed.to_string());
        }
        word.clear();
    };

    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            word.push(ch);
        } else {
            flush_word(&mut word, &mut current);
            if matches!(ch, '.' | '!' | '?') && !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
        }
    }
    flush_word(&mut word, &mut current);
    if !current.is_empty() {
        sentences.push(current);
    }

    sentences
        .into_iter()
        .enumerate()
        .map(|(sentence_id, words)| {
            words
                .into_iter()
                .enumerate()
                .map(|(position, surface)| Token { surface, position, sentence_id })
                .collect()
        })
        .collect()
}

fn is_negator(lower: &str) -> bool {
    NEGATORS.contains(&lower) || lower.ends_with("n't")
}

/// Assign a [`PosClass`] to every token of one sentence.
///
/// Precedence: negator set, then lexicon membership, then the `-ly` adverb
/// suffix, then the built-in noun list, then `Other`.
pub fn tag(sentence: &[Token], lexicon: &OpinionLexicon) -> Vec<TaggedToken> {
    sentence
        .iter()
        .map(|token| {
            let lower = token.surface.to_lowercase();
            let pos_class = if is_negator(&lower) {
                PosClass::Negator
            } else if let Some(entry) = lexicon.get(&lower) {
                entry.pos_class
            } else if lower.len() > 2 && lower.ends_with("ly") {
                PosClass::Adverb
            } else if KNOWN_NOUNS.contains(&lower.as_str()) {
                PosClass::Noun
            } else {
                PosClass::Other
            };
            TaggedToken { token: token.clone(), pos_class }
        })
        .collect()
}

/// Find one [`OpinionUnit`] per lexicon adjective in the sentence.
///
/// The modifier is the nearest lexicon adverb within the preceding
/// [`MODIFIER_WINDOW`] tokens; the unit is negated when a negator occurs
/// within the preceding [`NEGATION_WINDOW`] tokens.
pub fn extract_opinion_units(tagged: &[TaggedToken], lexicon: &OpinionLexicon) -> Vec<OpinionUnit> {
    let mut units = Vec::new();
    for (pos, tt) in tagged.iter().enumerate() {
        if tt.pos_class != PosClass::Adjective {
            continue;
        }
        let lower = tt.token.surface.to_lowercase();
        let Some(entry) = lexicon.get(&lower) else {
            continue;
        };
        let adjective = OpinionWord {
            token: tt.clone(),
            degree: entry.degree,
            polarity: entry.polarity,
        };

        let mut modifier = None;
        for back in 1..=MODIFIER_WINDOW {
            let Some(prev_pos) = pos.checked_sub(back) else { break };
            let prev = &tagged[prev_pos];
            if prev.pos_class == PosClass::Adverb {
                if let Some(adv) = lexicon.get(&prev.token.surface.to_lowercase()) {
                    if adv.pos_class == PosClass::Adverb {
                        modifier = Some(OpinionWord {
                            token: prev.clone(),
                            degree: adv.degree,
                            polarity: adv.polarity,
                        });
                        break;
                    }
                }
            }
        }

        let negated = (1..=NEGATION_WINDOW).any(|back| {
            pos.checked_sub(back)
                .map(|p| tagged[p].pos_class == PosClass::Negator)
                .unwrap_or(false)
        });

        units.push(OpinionUnit {
            adjective,
            modifier,
            negated,
            sentence_id: tt.token.sentence_id,
        });
    }
    units
}
