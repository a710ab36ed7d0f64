//! Review ingestion: JSON-lines parsing, validation, filtering and
//! helpfulness-ratio labels.
//!
//! Each input line is classified into exactly one outcome. Rejections are
//! attributed to the first failing check in this order:
//!
//! 1. `malformed_json`: the line is not a JSON object
//! 2. `invalid_field`: a field is present with the wrong type or range
//! 3. `votes_inconsistent`: `helpful[0] > helpful[1]`
//! 4. `missing_field`: `reviewText`, `overall`, `asin` or `helpful` absent or null
//! 5. `too_few_votes`: ten or fewer total votes
//! 6. `no_alphabetic`: the text has no Unicode letter
//!
//! Steps 1-4 happen while parsing, 5-6 in [`apply_filters`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Strict lower bound on total votes for a review to be kept.
pub const MIN_TOTAL_VOTES_EXCLUSIVE: u64 = 10;

const PARSE_CHUNK: usize = 16_384;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus file {path} line {line}: {message}")]
    BadCorpusLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("helpfulness ratio undefined: {helpful} helpful of {total} total votes")]
    Domain { helpful: u64, total: u64 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub product_id: String,
    pub text: String,
    pub stars: f64,
    pub helpful_votes: u64,
    pub total_votes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(flatten)]
    pub review: Review,
    pub target: f64,
    pub word_count: u64,
}

impl LabeledExample {
    pub fn review_id(&self) -> &str {
        &self.review.review_id
    }

    pub fn product_id(&self) -> &str {
        &self.review.product_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedJson,
    InvalidField,
    VotesInconsistent,
    MissingField,
    TooFewVotes,
    NoAlphabetic,
}

impl RejectReason {
    pub const ALL: [RejectReason; 6] = [
        RejectReason::MalformedJson,
        RejectReason::InvalidField,
        RejectReason::VotesInconsistent,
        RejectReason::MissingField,
        RejectReason::TooFewVotes,
        RejectReason::NoAlphabetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MalformedJson => "malformed_json",
            RejectReason::InvalidField => "invalid_field",
            RejectReason::VotesInconsistent => "votes_inconsistent",
            RejectReason::MissingField => "missing_field",
            RejectReason::TooFewVotes => "too_few_votes",
            RejectReason::NoAlphabetic => "no_alphabetic",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: RejectReason,
    pub detail: String,
}

/// Outcome of parsing one input line.
pub type Record = Result<Review, Rejection>;

/// Per-rule accounting for one ingest. `input == kept + sum(rejected)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub input: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl FilterStats {
    pub fn rejected_for(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub stats: FilterStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub category: String,
    pub examples: Vec<LabeledExample>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Distinct product ids, sorted.
    pub fn product_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .examples
            .iter()
            .map(|e| e.review.product_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

pub fn helpfulness_ratio(helpful_votes: u64, total_votes: u64) -> Result<f64, CorpusError> {
    if total_votes == 0 || helpful_votes > total_votes {
        return Err(CorpusError::Domain {
            helpful: helpful_votes,
            total: total_votes,
        });
    }
    Ok(helpful_votes as f64 / total_votes as f64)
}

/// Number of maximal whitespace-delimited tokens.
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn has_alphabetic(text: &str) -> bool {
    text.chars().any(char::is_alphabetic)
}

#[derive(Deserialize)]
struct RawLine {
    #[serde(rename = "reviewText")]
    review_text: Option<Value>,
    overall: Option<Value>,
    asin: Option<Value>,
    helpful: Option<Value>,
}

/// Classify one JSON line. `line` is 1-based and doubles as the review id.
pub fn parse_line(line: usize, raw: &str) -> Record {
    let reject = |reason, detail: String| Rejection {
        line,
        reason,
        detail,
    };
    let parsed: RawLine = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => return Err(reject(RejectReason::MalformedJson, e.to_string())),
    };

    let text = match &parsed.review_text {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(reject(
                RejectReason::InvalidField,
                format!("reviewText is not a string: {other}"),
            ))
        }
    };
    let stars = match &parsed.overall {
        None => None,
        Some(v) => match v.as_f64() {
            Some(s) if (1.0..=5.0).contains(&s) => Some(s),
            _ => {
                return Err(reject(
                    RejectReason::InvalidField,
                    format!("overall is not a rating in [1, 5]: {v}"),
                ))
            }
        },
    };
    let product = match &parsed.asin {
        None => None,
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(other) => {
            return Err(reject(
                RejectReason::InvalidField,
                format!("asin is not a non-empty string: {other}"),
            ))
        }
    };
    let votes = match &parsed.helpful {
        None => None,
        Some(v) => match parse_votes(v) {
            Some(pair) => Some(pair),
            None => {
                return Err(reject(
                    RejectReason::InvalidField,
                    format!("helpful is not a pair of vote counts: {v}"),
                ))
            }
        },
    };
    if let Some((h, t)) = votes {
        if h > t {
            return Err(reject(
                RejectReason::VotesInconsistent,
                format!("{h} helpful votes exceed {t} total votes"),
            ));
        }
    }

    let mut missing = Vec::new();
    if text.is_none() {
        missing.push("reviewText");
    }
    if stars.is_none() {
        missing.push("overall");
    }
    if product.is_none() {
        missing.push("asin");
    }
    if votes.is_none() {
        missing.push("helpful");
    }
    match (text, stars, product, votes) {
        (Some(text), Some(stars), Some(product_id), Some((helpful_votes, total_votes))) => {
            Ok(Review {
                review_id: line.to_string(),
                product_id,
                text,
                stars,
                helpful_votes,
                total_votes,
            })
        }
        _ => Err(reject(RejectReason::MissingField, missing.join(","))),
    }
}

fn parse_votes(v: &Value) -> Option<(u64, u64)> {
    match v.as_array()?.as_slice() {
        [h, t] => Some((h.as_u64()?, t.as_u64()?)),
        _ => None,
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead + Send>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let gz = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let inner: Box<dyn Read + Send> = if gz {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::with_capacity(1 << 20, inner)))
}

/// Streaming reader over a JSON-lines review dump (`.gz` accepted).
///
/// Lines are parsed in parallel chunks; records come out in file order.
/// Blank lines are skipped and do not count as input.
pub struct ReviewStream {
    path: PathBuf,
    reader: Box<dyn BufRead + Send>,
    line_no: usize,
    pending: std::vec::IntoIter<Record>,
    done: bool,
}

impl ReviewStream {
    fn refill(&mut self) -> Result<(), CorpusError> {
        let mut batch: Vec<(usize, String)> = Vec::with_capacity(PARSE_CHUNK);
        while batch.len() < PARSE_CHUNK {
            let mut buf = String::new();
            let n = self
                .reader
                .read_line(&mut buf)
                .map_err(io_err(&self.path))?;
            if n == 0 {
                self.done = true;
                break;
            }
            self.line_no += 1;
            if buf.trim().is_empty() {
                continue;
            }
            batch.push((self.line_no, buf));
        }
        let parsed: Vec<Record> = batch
            .par_iter()
            .map(|(no, raw)| parse_line(*no, raw))
            .collect();
        self.pending = parsed.into_iter();
        Ok(())
    }
}

impl Iterator for ReviewStream {
    type Item = Result<Record, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.pending.next() {
                return Some(Ok(r));
            }
            if self.done {
                return None;
            }
            if let Err(e) = self.refill() {
                self.done = true;
                return Some(Err(e));
            }
        }
    }
}

pub fn parse_dataset(path: &Path) -> Result<ReviewStream, CorpusError> {
    Ok(ReviewStream {
        path: path.to_path_buf(),
        reader: open_maybe_gz(path)?,
        line_no: 0,
        pending: Vec::new().into_iter(),
        done: false,
    })
}

/// Incremental form of [`apply_filters`], for streams that can fail mid-way.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    examples: Vec<LabeledExample>,
    stats: FilterStats,
}

impl CorpusBuilder {
    pub fn push(&mut self, record: Record) {
        self.stats.input += 1;
        let outcome = record.and_then(|review| {
            let reason = if review.total_votes <= MIN_TOTAL_VOTES_EXCLUSIVE {
                Some(RejectReason::TooFewVotes)
            } else if !has_alphabetic(&review.text) {
                Some(RejectReason::NoAlphabetic)
            } else {
                None
            };
            match reason {
                Some(reason) => Err(Rejection {
                    line: 0,
                    reason,
                    detail: String::new(),
                }),
                None => Ok(review),
            }
        });
        match outcome {
            Ok(review) => {
                let target = review.helpful_votes as f64 / review.total_votes as f64;
                let word_count = word_count(&review.text);
                self.stats.kept += 1;
                self.examples.push(LabeledExample {
                    review,
                    target,
                    word_count,
                });
            }
            Err(rej) => *self.stats.rejected.entry(rej.reason).or_insert(0) += 1,
        }
    }

    pub fn finish(self, category: &str, source: &str) -> Corpus {
        Corpus {
            category: category.to_string(),
            examples: self.examples,
            provenance: Provenance {
                source: source.to_string(),
                stats: self.stats,
            },
        }
    }
}

pub fn apply_filters<I>(records: I, category: &str, source: &str) -> Corpus
where
    I: IntoIterator<Item = Record>,
{
    let mut builder = CorpusBuilder::default();
    for r in records {
        builder.push(r);
    }
    builder.finish(category, source)
}

/// Parse and filter a raw dump in one pass.
pub fn ingest(path: &Path, category: &str) -> Result<Corpus, CorpusError> {
    let mut builder = CorpusBuilder::default();
    for record in parse_dataset(path)? {
        builder.push(record?);
    }
    Ok(builder.finish(category, &path.display().to_string()))
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    category: String,
    source: String,
    stats: FilterStats,
}

/// `corpus.jsonl` -> `corpus.stats.json`.
pub fn stats_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("stats.json")
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for ex in &corpus.examples {
        let line = serde_json::to_string(ex).expect("examples serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;

    let side = stats_path(path);
    let sidecar = Sidecar {
        category: corpus.category.clone(),
        source: corpus.provenance.source.clone(),
        stats: corpus.provenance.stats.clone(),
    };
    let body = serde_json::to_string_pretty(&sidecar).expect("stats serialize");
    std::fs::write(&side, body + "\n").map_err(io_err(&side))
}

/// Read a corpus written by [`write_corpus`]. The stats sidecar is optional.
pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let reader = open_maybe_gz(path)?;
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadCorpusLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        examples.push(ex);
    }
    let side = stats_path(path);
    let (category, provenance) = match std::fs::read_to_string(&side) {
        Ok(body) => {
            let s: Sidecar =
                serde_json::from_str(&body).map_err(|e| CorpusError::BadCorpusLine {
                    path: side.clone(),
                    line: 0,
                    message: e.to_string(),
                })?;
            (
                s.category,
                Provenance {
                    source: s.source,
                    stats: s.stats,
                },
            )
        }
        Err(_) => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            Provenance::default(),
        ),
    };
    Ok(Corpus {
        category,
        examples,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_field_mapping() {
        let r = parse_line(
            1,
            r#"{"reviewText":"Great phone","overall":5.0,"asin":"A1","helpful":[11,12]}"#,
        )
        .unwrap();
        assert_eq!(r.stars, 5.0);
        assert_eq!(r.helpful_votes, 11);
        assert_eq!(r.total_votes, 12);
        assert_eq!(r.product_id, "A1");
        assert_eq!(r.review_id, "1");
    }

    #[test]
    fn missing_overall() {
        let e = parse_line(3, r#"{"reviewText":"ok","asin":"A1","helpful":[11,12]}"#).unwrap_err();
        assert_eq!(e.reason, RejectReason::MissingField);
        assert_eq!(e.line, 3);
        let e = parse_line(3, r#"{"reviewText":"ok","overall":null,"asin":"A1","helpful":[1,12]}"#)
            .unwrap_err();
        assert_eq!(e.reason, RejectReason::MissingField);
    }

    #[test]
    fn votes_inconsistent() {
        let e = parse_line(1, r#"{"helpful":[5,3]}"#).unwrap_err();
        assert_eq!(e.reason, RejectReason::VotesInconsistent);
        let e = parse_line(
            1,
            r#"{"reviewText":"x","overall":4,"asin":"A","helpful":[5,3]}"#,
        )
        .unwrap_err();
        assert_eq!(e.reason, RejectReason::VotesInconsistent);
    }

    #[test]
    fn malformed_and_invalid() {
        assert_eq!(
            parse_line(1, "{not json").unwrap_err().reason,
            RejectReason::MalformedJson
        );
        assert_eq!(
            parse_line(1, r#"{"reviewText":"x","overall":4,"asin":"A","helpful":[1]}"#)
                .unwrap_err()
                .reason,
            RejectReason::InvalidField
        );
        assert_eq!(
            parse_line(1, r#"{"reviewText":"x","overall":9,"asin":"A","helpful":[1,20]}"#)
                .unwrap_err()
                .reason,
            RejectReason::InvalidField
        );
        assert_eq!(
            parse_line(1, r#"{"reviewText":"x","overall":3,"asin":"A","helpful":[-1,20]}"#)
                .unwrap_err()
                .reason,
            RejectReason::InvalidField
        );
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(helpfulness_ratio(0, 12).unwrap(), 0.0);
        assert_eq!(helpfulness_ratio(12, 12).unwrap(), 1.0);
        assert_eq!(helpfulness_ratio(9, 12).unwrap(), 0.75);
        assert!(helpfulness_ratio(0, 0).is_err());
        assert!(helpfulness_ratio(3, 2).is_err());
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count("Great goods are great"), 4);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  a\tb \n c  "), 3);
    }

    fn review(votes: u64, text: &str) -> Record {
        Ok(Review {
            review_id: "x".into(),
            product_id: "P".into(),
            text: text.into(),
            stars: 3.0,
            helpful_votes: 0,
            total_votes: votes,
        })
    }

    #[test]
    fn ten_votes_is_excluded() {
        let c = apply_filters(vec![review(10, "fine"), review(11, "fine")], "t", "mem");
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.provenance.stats.rejected_for(RejectReason::TooFewVotes), 1);
    }

    #[test]
    fn symbol_only_text_is_excluded() {
        let c = apply_filters(
            vec![review(20, "!!! 12345 ???"), review(20, "ünïcödé 1")],
            "t",
            "mem",
        );
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.provenance.stats.rejected_for(RejectReason::NoAlphabetic), 1);
    }

    #[test]
    fn labels_are_exact_ratios() {
        let mut r = review(12, "a b c").unwrap();
        r.helpful_votes = 9;
        let c = apply_filters(vec![Ok(r)], "t", "mem");
        assert_eq!(c.examples[0].target, 0.75);
        assert_eq!(c.examples[0].word_count, 3);
    }
}
