//! Corpus ingestion, index construction and persistence.
//!
//! A corpus is a line-delimited TSV of `entity_id<TAB>review_id<TAB>text`
//! records. [`build_index`] runs the extract/assess/pair/summarize pipeline
//! over every review and assembles the per-entity profiles plus the term
//! statistics BM25 needs. Indexes persist to a versioned text file with
//! magic header `ORIDX1`; identical inputs rebuild byte-identical files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crf::{extract_aspects, CrfModel};
use crate::fuzzy::{assess, FuzzyConfig, Granularity, Orientation};
use crate::profile::{pair, summarize, AspectOpinion, AspectSummary, EntityProfile};
use crate::text::{extract_opinion_units, tag, tokenize, OpinionLexicon};

/// Magic header of persisted indexes.
pub const INDEX_MAGIC: &str = "ORIDX1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("corpus line {line}: duplicate record ({entity_id}, {review_id})")]
    Duplicate { line: usize, entity_id: String, review_id: String },
    #[error("bad index header {found:?} (expected {INDEX_MAGIC:?})")]
    BadMagic { found: String },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

/// One corpus line: a single review of a single entity.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub entity_id: String,
    pub review_id: String,
    pub text: String,
}

fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn parse_record(line: &str, lineno: usize) -> Result<CorpusRecord, CorpusError> {
    let fields: Vec<&str> = line.splitn(3, '\t').collect();
    if fields.len() != 3 {
        return Err(CorpusError::Parse {
            line: lineno,
            msg: format!("expected entity_id<TAB>review_id<TAB>text, got {} fields", fields.len()),
        });
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(CorpusError::Parse {
            line: lineno,
            msg: "empty entity_id or review_id".to_string(),
        });
    }
    Ok(CorpusRecord {
        entity_id: fields[0].to_string(),
        review_id: fields[1].to_string(),
        text: unescape(fields[2]),
    })
}

/// Strict ingestion: any malformed line or duplicate key fails with its line
/// number.
pub fn ingest(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file))
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let record = parse_record(&line, lineno)?;
        if !seen.insert((record.entity_id.clone(), record.review_id.clone())) {
            return Err(CorpusError::Duplicate {
                line: lineno,
                entity_id: record.entity_id,
                review_id: record.review_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// A line skipped by lenient ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Lenient ingestion: malformed lines and duplicates are skipped and
/// reported instead of failing. IO errors still fail.
pub fn ingest_lenient(path: &Path) -> Result<(Vec<CorpusRecord>, Vec<SkippedLine>), CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_record(&line, lineno) {
            Ok(record) => {
                if seen.insert((record.entity_id.clone(), record.review_id.clone())) {
                    records.push(record);
                } else {
                    skipped.push(SkippedLine {
                        line: lineno,
                        reason: format!(
                            "duplicate record ({}, {})",
                            record.entity_id, record.review_id
                        ),
                    });
                }
            }
            Err(e) => skipped.push(SkippedLine { line: lineno, reason: e.to_string() }),
        }
    }
    Ok((records, skipped))
}

/// Serialize records back to the corpus TSV format.
pub fn write_records(records: &[CorpusRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.entity_id, r.review_id, escape(&r.text))?;
    }
    Ok(())
}

/// Term statistics of one entity document (the concatenation of its
/// reviews).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityDoc {
    /// Lowercased term -> occurrence count.
    pub terms: BTreeMap<String, u64>,
    /// Total token count.
    pub len: u64,
}

/// The queryable artifact: entity profiles plus BM25 statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Index {
    /// Digest of the lexicon, fuzzy config and CRF model that built this.
    pub config_digest: String,
    pub profiles: BTreeMap<String, EntityProfile>,
    pub docs: BTreeMap<String, EntityDoc>,
}

impl Index {
    /// Number of entity documents.
    pub fn entity_count(&self) -> usize {
        self.docs.len()
    }

    /// Mean entity-document length; 0 for an empty index.
    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            return 0.0;
        }
        let total: u64 = self.docs.values().map(|d| d.len).sum();
        total as f64 / self.docs.len() as f64
    }

    /// Number of entity documents containing `term`.
    pub fn document_frequency(&self, term: &str) -> usize {
        self.docs.values().filter(|d| d.terms.contains_key(term)).count()
    }
}

/// Outcome counters of an index build.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub entities: usize,
    pub reviews_processed: usize,
    /// `(entity_id, review_id, reason)` for reviews the pipeline rejected.
    pub reviews_skipped: Vec<(String, String, String)>,
}

/// Digest of the full pipeline configuration, stored in the index so a
/// mismatched lexicon/config/model is detectable.
pub fn config_digest(
    lexicon: &OpinionLexicon,
    fuzzy: &FuzzyConfig,
    model: &CrfModel,
) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    lexicon.write(&mut buf).expect("writing to Vec cannot fail");
    hasher.update(&buf);
    buf.clear();
    fuzzy.write(&mut buf).expect("writing to Vec cannot fail");
    hasher.update(&buf);
    buf.clear();
    model.write(&mut buf).expect("writing to Vec cannot fail");
    hasher.update(&buf);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn process_review(
    record: &CorpusRecord,
    model: &CrfModel,
    lexicon: &OpinionLexicon,
    fuzzy: &FuzzyConfig,
) -> Result<Vec<AspectOpinion>, String> {
    let sentences = tokenize(&record.text);
    let tagged: Vec<_> = sentences.iter().map(|s| tag(s, lexicon)).collect();
    let mentions = extract_aspects(model, &tagged);
    let mut assessments = Vec::new();
    for sentence in &tagged {
        for unit in extract_opinion_units(sentence, lexicon) {
            let assessment = assess(&unit, fuzzy).map_err(|e| e.to_string())?;
            assessments.push((unit, assessment));
        }
    }
    Ok(pair(&mentions, &assessments, &record.review_id))
}

/// Run the full pipeline over every record and assemble the index.
///
/// A review the pipeline rejects is skipped and counted in the report
/// rather than failing the build.
pub fn build_index(
    records: &[CorpusRecord],
    model: &CrfModel,
    lexicon: &OpinionLexicon,
    fuzzy: &FuzzyConfig,
) -> (Index, BuildReport) {
    let mut by_entity: BTreeMap<&str, Vec<&CorpusRecord>> = BTreeMap::new();
    for record in records {
        by_entity.entry(&record.entity_id).or_default().push(record);
    }

    let mut report = BuildReport { entities: by_entity.len(), ..BuildReport::default() };
    let mut profiles = BTreeMap::new();
    let mut docs = BTreeMap::new();
    for (entity_id, reviews) in &by_entity {
        let mut opinions = Vec::new();
        let mut doc = EntityDoc::default();
        for record in reviews {
            for sentence in tokenize(&record.text) {
                for token in sentence {
                    *doc.terms.entry(token.surface.to_lowercase()).or_insert(0) += 1;
                    doc.len += 1;
                }
            }
            match process_review(record, model, lexicon, fuzzy) {
                Ok(mut ops) => {
                    report.reviews_processed += 1;
                    opinions.append(&mut ops);
                }
                Err(reason) => report.reviews_skipped.push((
                    entity_id.to_string(),
                    record.review_id.clone(),
                    reason,
                )),
            }
        }
        let profile = summarize(entity_id, &opinions, reviews.len(), &fuzzy.scale);
        profiles.insert(entity_id.to_string(), profile);
        docs.insert(entity_id.to_string(), doc);
    }

    let index = Index {
        config_digest: config_digest(lexicon, fuzzy, model),
        profiles,
        docs,
    };
    (index, report)
}

/// Persist the index; [`load_index`] restores it exactly and a second
/// [`save_index`] reproduces the bytes.
pub fn save_index(index: &Index, path: &Path) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_index(index, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_index(index: &Index, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{INDEX_MAGIC}")?;
    writeln!(w, "digest\t{}", index.config_digest)?;
    writeln!(w, "entities\t{}", index.docs.len())?;
    for (entity_id, doc) in &index.docs {
        let profile = index.profiles.get(entity_id);
        let review_count = profile.map_or(0, |p| p.review_count);
        let aspects = profile.map_or(0, |p| p.aspects.len());
        writeln!(
            w,
            "entity\t{entity_id}\t{review_count}\t{}\t{aspects}\t{}",
            doc.len,
            doc.terms.len()
        )?;
        if let Some(profile) = profile {
            for (aspect, s) in &profile.aspects {
                writeln!(
                    w,
                    "a\t{aspect}\t{}\t{}\t{}\t{}",
                    s.orientation, s.mean_strength, s.granularity, s.mention_count
                )?;
            }
        }
        for (term, count) in &doc.terms {
            writeln!(w, "t\t{term}\t{count}")?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Index, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_index(std::io::BufReader::new(file))
}

pub fn read_index(reader: impl BufRead) -> Result<Index, CorpusError> {
    let mut lines = reader.lines();
    let mut next_line = || -> Result<String, CorpusError> {
        lines
            .next()
            .ok_or_else(|| CorpusError::Corrupt("unexpected end of file".to_string()))?
            .map_err(CorpusError::from)
    };

    let magic = next_line()?;
    if magic != INDEX_MAGIC {
        return Err(CorpusError::BadMagic { found: magic });
    }
    let digest_line = next_line()?;
    let config_digest = digest_line
        .strip_prefix("digest\t")
        .ok_or_else(|| CorpusError::Corrupt("missing digest line".to_string()))?
        .to_string();
    let entities_line = next_line()?;
    let n: usize = entities_line
        .strip_prefix("entities\t")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CorpusError::Corrupt("bad entities line".to_string()))?;

    let mut profiles = BTreeMap::new();
    let mut docs = BTreeMap::new();
    for _ in 0..n {
        let header = next_line()?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 6 || fields[0] != "entity" {
            return Err(CorpusError::Corrupt(format!("bad entity header {header:?}")));
        }
        let entity_id = fields[1].to_string();
        let review_count: usize = fields[2]
            .parse()
            .map_err(|_| CorpusError::Corrupt("bad review count".to_string()))?;
        let doc_len: u64 = fields[3]
            .parse()
            .map_err(|_| CorpusError::Corrupt("bad doc length".to_string()))?;
        let n_aspects: usize = fields[4]
            .parse()
            .map_err(|_| CorpusError::Corrupt("bad aspect count".to_string()))?;
        let n_terms: usize = fields[5]
            .parse()
            .map_err(|_| CorpusError::Corrupt("bad term count".to_string()))?;

        let mut aspects = BTreeMap::new();
        for _ in 0..n_aspects {
            let line = next_line()?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 || fields[0] != "a" {
                return Err(CorpusError::Corrupt(format!("bad aspect line {line:?}")));
            }
            let orientation = Orientation::parse(fields[2])
                .ok_or_else(|| CorpusError::Corrupt(format!("bad orientation {:?}", fields[2])))?;
            let mean_strength: f64 = fields[3]
                .parse()
                .map_err(|_| CorpusError::Corrupt("bad mean strength".to_string()))?;
            let granularity = Granularity::parse(fields[4])
                .ok_or_else(|| CorpusError::Corrupt(format!("bad granularity {:?}", fields[4])))?;
            let mention_count: usize = fields[5]
                .parse()
                .map_err(|_| CorpusError::Corrupt("bad mention count".to_string()))?;
            aspects.insert(
                fields[1].to_string(),
                AspectSummary { orientation, mean_strength, granularity, mention_count },
            );
        }
        let mut terms = BTreeMap::new();
        let mut len_check: u64 = 0;
        for _ in 0..n_terms {
            let line = next_line()?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields[0] != "t" {
                return Err(CorpusError::Corrupt(format!("bad term line {line:?}")));
            }
            let count: u64 = fields[2]
                .parse()
                .map_err(|_| CorpusError::Corrupt("bad term count".to_string()))?;
            len_check += count;
            terms.insert(fields[1].to_string(), count);
        }
        if len_check != doc_len {
            return Err(CorpusError::Corrupt(format!(
                "entity {entity_id}: term counts sum to {len_check}, header says {doc_len}"
            )));
        }
        profiles.insert(
            entity_id.clone(),
            EntityProfile { entity_id: entity_id.clone(), aspects, review_count },
        );
        docs.insert(entity_id, EntityDoc { terms, len: doc_len });
    }
    let end = next_line()?;
    if end != "end" {
        return Err(CorpusError::Corrupt("missing end marker".to_string()));
    }
    Ok(Index { config_digest, profiles, docs })
}
