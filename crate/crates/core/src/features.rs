//! Lexicon histograms, side features and train-set normalization.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("cannot fit a normalizer on zero rows")]
    EmptyTrainingSet,
    #[error("feature schema mismatch: expected {expected:?}, got {got:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("non-finite feature value {value} for {name}")]
    NonFinite { name: String, value: f64 },
    #[error("i/o on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Entry {
    Exact(String),
    Prefix(String),
}

impl Entry {
    fn matches(&self, token: &str) -> bool {
        match self {
            Entry::Exact(w) => token == w,
            Entry::Prefix(p) => token.starts_with(p.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconCategory {
    pub name: String,
    entries: Vec<Entry>,
}

impl LexiconCategory {
    fn matches(&self, token: &str) -> bool {
        self.entries.iter().any(|e| e.matches(token))
    }
}

/// Word-category dictionary. Entries are lowercase words; a trailing `*`
/// turns an entry into a prefix match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: Vec<LexiconCategory>,
}

impl Lexicon {
    pub fn new<I, S, E>(categories: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = (S, Vec<E>)>,
        S: Into<String>,
        E: AsRef<str>,
    {
        let mut out: Vec<LexiconCategory> = Vec::new();
        for (name, raw) in categories {
            let name = name.into();
            if name.is_empty() {
                return Err(FeatureError::Lexicon("empty category name".into()));
            }
            if out.iter().any(|c| c.name == name) {
                return Err(FeatureError::Lexicon(format!("duplicate category {name}")));
            }
            let mut entries = Vec::with_capacity(raw.len());
            for e in raw {
                entries.push(parse_entry(&name, e.as_ref())?);
            }
            if entries.is_empty() {
                return Err(FeatureError::Lexicon(format!("category {name} has no entries")));
            }
            out.push(LexiconCategory { name, entries });
        }
        Ok(Self { categories: out })
    }

    /// Load the JSON form `{category: [entries...]}`; category order is file order.
    pub fn from_json(body: &str) -> Result<Self, FeatureError> {
        let map: IndexMap<String, Vec<String>> =
            serde_json::from_str(body).map_err(|e| FeatureError::Lexicon(e.to_string()))?;
        Self::new(map)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let body = std::fs::read_to_string(path).map_err(|e| FeatureError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&body)
    }

    pub fn categories(&self) -> &[LexiconCategory] {
        &self.categories
    }

    /// `<name>_count` for every category, then `<name>_pct`.
    pub fn schema(&self) -> Vec<String> {
        let counts = self.categories.iter().map(|c| format!("{}_count", c.name));
        let pcts = self.categories.iter().map(|c| format!("{}_pct", c.name));
        counts.chain(pcts).collect()
    }
}

fn parse_entry(category: &str, raw: &str) -> Result<Entry, FeatureError> {
    let bad = |why: &str| FeatureError::Lexicon(format!("{category}: entry {raw:?} {why}"));
    let (stem, wildcard) = match raw.strip_suffix('*') {
        Some(stem) => (stem, true),
        None => (raw, false),
    };
    if stem.is_empty() {
        return Err(bad("is empty"));
    }
    if stem.contains('*') {
        return Err(bad("has a wildcard before the last character"));
    }
    if stem.chars().any(char::is_uppercase) {
        return Err(bad("is not lowercase"));
    }
    Ok(if wildcard {
        Entry::Prefix(stem.to_string())
    } else {
        Entry::Exact(stem.to_string())
    })
}

/// Lowercased maximal runs of letters.
pub fn lexicon_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: Vec<String>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema: Vec<String>) -> Result<Self, FeatureError> {
        if values.len() != schema.len() {
            return Err(FeatureError::SchemaMismatch {
                expected: schema,
                got: vec![format!("{} values", values.len())],
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                name: schema[i].clone(),
                value: *v,
            });
        }
        Ok(Self { values, schema })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-category match counts followed by the same counts as fractions of
/// the token count. A token contributes at most one to each category.
pub fn extract_lexicon_features(text: &str, lexicon: &Lexicon) -> FeatureVector {
    let tokens = lexicon_tokens(text);
    let counts: Vec<f64> = lexicon
        .categories
        .iter()
        .map(|c| tokens.iter().filter(|t| c.matches(t)).count() as f64)
        .collect();
    let denom = tokens.len().max(1) as f64;
    let mut values = counts.clone();
    values.extend(counts.iter().map(|c| c / denom));
    FeatureVector {
        values,
        schema: lexicon.schema(),
    }
}

pub const SIDE_SCHEMA: [&str; 2] = ["stars", "word_count"];

pub fn side_schema() -> Vec<String> {
    SIDE_SCHEMA.iter().map(|s| s.to_string()).collect()
}

/// `[stars, word_count]`.
pub fn side_features(example: &LabeledExample) -> FeatureVector {
    FeatureVector {
        values: vec![example.review.stars, example.word_count as f64],
        schema: side_schema(),
    }
}

/// Per-feature population mean and standard deviation of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub schema: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn fit_normalizer(train: &[FeatureVector]) -> Result<Normalizer, FeatureError> {
    let first = train.first().ok_or(FeatureError::EmptyTrainingSet)?;
    let d = first.len();
    for v in train {
        if v.schema != first.schema {
            return Err(FeatureError::SchemaMismatch {
                expected: first.schema.clone(),
                got: v.schema.clone(),
            });
        }
    }
    let n = train.len() as f64;
    let mut means = vec![0.0; d];
    for v in train {
        for (m, x) in means.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for v in train {
        for ((s, x), m) in stds.iter_mut().zip(&v.values).zip(&means) {
            *s += (x - m) * (x - m);
        }
    }
    for s in stds.iter_mut() {
        *s = (*s / n).sqrt();
        // Constant columns would divide by zero.
        if !s.is_finite() || *s <= 0.0 {
            *s = 1.0;
        }
    }
    Ok(Normalizer {
        schema: first.schema.clone(),
        means,
        stds,
    })
}

pub fn normalize(v: &FeatureVector, n: &Normalizer) -> Result<FeatureVector, FeatureError> {
    if v.schema != n.schema {
        return Err(FeatureError::SchemaMismatch {
            expected: n.schema.clone(),
            got: v.schema.clone(),
        });
    }
    let values = v
        .values
        .iter()
        .zip(n.means.iter().zip(&n.stds))
        .map(|(x, (m, s))| (x - m) / s)
        .collect();
    Ok(FeatureVector {
        values,
        schema: v.schema.clone(),
    })
}

/// Write rows as CSV with `review_id` followed by the schema columns.
pub fn write_feature_csv<W: Write>(
    out: W,
    schema: &[String],
    rows: &[(String, FeatureVector)],
) -> Result<(), FeatureError> {
    let io = |e: csv::Error| FeatureError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["review_id".to_string()];
    header.extend(schema.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (id, fv) in rows {
        if fv.schema != schema {
            return Err(FeatureError::SchemaMismatch {
                expected: schema.to_vec(),
                got: fv.schema.clone(),
            });
        }
        let mut rec = vec![id.clone()];
        rec.extend(fv.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FeatureError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}
