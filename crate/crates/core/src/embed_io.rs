//! Embedding interchange files.
//!
//! Binary layout, version 1, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HRKEMBED"
//! 8       1     format version (1)
//! 9       1     pooling tag (0 = cls, 1 = mean)
//! 10      2     reserved, zero
//! 12      4     dim (u32)
//! 16      8     record count (u64)
//! 24      4     metadata length m (u32)
//! 28      m     producer metadata, UTF-8
//! then `count` records:
//!         4     id length n (u32)
//!         n     review id, UTF-8
//!         4*dim vector components, IEEE-754 binary32
//! ```
//!
//! A CSV variant (`review_id,v0,v1,...`, optional header) is accepted for
//! hand-written fixtures.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::features::{side_features, FeatureVector};

pub const MAGIC: &[u8; 8] = b"HRKEMBED";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_FIXED: u64 = 28;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at byte 0: not an embedding file")]
    BadMagic,
    #[error("unsupported format version {version} at byte 8 (reader supports {FORMAT_VERSION})")]
    UnsupportedVersion { version: u8 },
    #[error("unknown pooling tag {tag} at byte 9")]
    BadPooling { tag: u8 },
    #[error("file truncated at byte {offset}: needed {needed} more bytes for {what}")]
    Truncated {
        offset: u64,
        needed: usize,
        what: &'static str,
    },
    #[error("header declares {declared} records but {found} were found (byte {offset})")]
    CountMismatch {
        declared: u64,
        found: u64,
        offset: u64,
    },
    #[error("invalid UTF-8 in {what} at byte {offset}")]
    Utf8 { offset: u64, what: &'static str },
    #[error("duplicate review id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} has {got} components, expected {expected}")]
    DimMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("record {id:?} has a non-finite component at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("embedding csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("{} review ids have no embedding: {}", .0.len(), .0.join(", "))]
    Missing(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    Mean,
}

impl Pooling {
    fn tag(self) -> u8 {
        match self {
            Pooling::Cls => 0,
            Pooling::Mean => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, EmbedError> {
        match tag {
            0 => Ok(Pooling::Cls),
            1 => Ok(Pooling::Mean),
            tag => Err(EmbedError::BadPooling { tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub review_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHeader {
    pub version: u8,
    pub pooling: Pooling,
    pub dim: usize,
    pub count: u64,
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub header: EmbeddingHeader,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFile {
    pub fn dim(&self) -> usize {
        self.header.dim
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn validate_records(records: &[EmbeddingRecord], dim: usize) -> Result<(), EmbedError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.vector.len() != dim {
            return Err(EmbedError::DimMismatch {
                id: r.review_id.clone(),
                got: r.vector.len(),
                expected: dim,
            });
        }
        if let Some(index) = r.vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite {
                id: r.review_id.clone(),
                index,
            });
        }
        if !seen.insert(r.review_id.as_str()) {
            return Err(EmbedError::DuplicateId(r.review_id.clone()));
        }
    }
    Ok(())
}

/// Serializes to any writer after validating every record.
pub fn encode<W: Write>(
    out: W,
    records: &[EmbeddingRecord],
    dim: usize,
    pooling: Pooling,
    metadata: &str,
) -> Result<(), EmbedError> {
    validate_records(records, dim)?;
    encode_unchecked(out, records, dim, pooling, metadata).map_err(|source| EmbedError::Io {
        path: "<writer>".into(),
        source,
    })
}

fn encode_unchecked<W: Write>(
    out: W,
    records: &[EmbeddingRecord],
    dim: usize,
    pooling: Pooling,
    metadata: &str,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    w.write_all(MAGIC)?;
    w.write_all(&[FORMAT_VERSION, pooling.tag(), 0, 0])?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&(metadata.len() as u32).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    for r in records {
        w.write_all(&(r.review_id.len() as u32).to_le_bytes())?;
        w.write_all(r.review_id.as_bytes())?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Validates first; nothing is created on disk if validation fails.
pub fn write_embeddings(
    records: &[EmbeddingRecord],
    dim: usize,
    pooling: Pooling,
    metadata: &str,
    path: &Path,
) -> Result<(), EmbedError> {
    validate_records(records, dim)?;
    let file = File::create(path).map_err(io_err(path))?;
    encode_unchecked(file, records, dim, pooling, metadata).map_err(io_err(path))
}

/// Streaming reader over the binary format. The header is parsed eagerly;
/// records are yielded one at a time.
pub struct EmbeddingReader<R> {
    inner: R,
    offset: u64,
    header: EmbeddingHeader,
    read: u64,
    seen: HashSet<String>,
    done: bool,
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(inner: R) -> Result<Self, EmbedError> {
        let mut r = Self {
            inner,
            offset: 0,
            header: EmbeddingHeader {
                version: FORMAT_VERSION,
                pooling: Pooling::Cls,
                dim: 0,
                count: 0,
                metadata: String::new(),
            },
            read: 0,
            seen: HashSet::new(),
            done: false,
        };
        let magic = r.read_exact_n(8, "magic")?;
        if magic != MAGIC {
            return Err(EmbedError::BadMagic);
        }
        let fixed = r.read_exact_n((HEADER_FIXED - 8) as usize, "header")?;
        let version = fixed[0];
        if version != FORMAT_VERSION {
            return Err(EmbedError::UnsupportedVersion { version });
        }
        let pooling = Pooling::from_tag(fixed[1])?;
        let dim = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(fixed[8..16].try_into().expect("8 bytes"));
        let meta_len = u32::from_le_bytes(fixed[16..20].try_into().expect("4 bytes")) as usize;
        let meta_offset = r.offset;
        let meta = r.read_exact_n(meta_len, "metadata")?;
        let metadata = String::from_utf8(meta).map_err(|_| EmbedError::Utf8 {
            offset: meta_offset,
            what: "metadata",
        })?;
        r.header = EmbeddingHeader {
            version,
            pooling,
            dim,
            count,
            metadata,
        };
        Ok(r)
    }

    pub fn header(&self) -> &EmbeddingHeader {
        &self.header
    }

    /// Reads exactly `n` bytes or reports where the file ran out.
    fn read_exact_n(&mut self, n: usize, what: &'static str) -> Result<Vec<u8>, EmbedError> {
        let mut buf = Vec::with_capacity(n);
        let got = (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|source| EmbedError::Io {
                path: "<reader>".into(),
                source,
            })?;
        if got < n {
            return Err(EmbedError::Truncated {
                offset: self.offset + got as u64,
                needed: n - got,
                what,
            });
        }
        self.offset += n as u64;
        Ok(buf)
    }

    /// Probes for one more byte; only used once all records are read.
    fn at_eof(&mut self) -> Result<bool, EmbedError> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(source) => {
                    return Err(EmbedError::Io {
                        path: "<reader>".into(),
                        source,
                    })
                }
            }
        }
    }

    fn next_record(&mut self) -> Result<Option<EmbeddingRecord>, EmbedError> {
        if self.read == self.header.count {
            if self.at_eof()? {
                return Ok(None);
            }
            return Err(EmbedError::CountMismatch {
                declared: self.header.count,
                found: self.read + 1,
                offset: self.offset,
            });
        }
        let start = self.offset;
        let len_bytes = {
            let mut buf = Vec::with_capacity(4);
            let got = (&mut self.inner)
                .take(4)
                .read_to_end(&mut buf)
                .map_err(|source| EmbedError::Io {
                    path: "<reader>".into(),
                    source,
                })?;
            if got == 0 {
                return Err(EmbedError::CountMismatch {
                    declared: self.header.count,
                    found: self.read,
                    offset: start,
                });
            }
            if got < 4 {
                return Err(EmbedError::Truncated {
                    offset: start + got as u64,
                    needed: 4 - got,
                    what: "record id length",
                });
            }
            self.offset += 4;
            buf
        };
        let id_len = u32::from_le_bytes(len_bytes[..].try_into().expect("4 bytes")) as usize;
        let id_offset = self.offset;
        let id = String::from_utf8(self.read_exact_n(id_len, "review id")?).map_err(|_| EmbedError::Utf8 {
            offset: id_offset,
            what: "review id",
        })?;
        let raw = self.read_exact_n(4 * self.header.dim, "vector")?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(index) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { id, index });
        }
        if !self.seen.insert(id.clone()) {
            return Err(EmbedError::DuplicateId(id));
        }
        self.read += 1;
        Ok(Some(EmbeddingRecord {
            review_id: id,
            vector,
        }))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord, EmbedError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn decode<R: Read>(reader: R) -> Result<EmbeddingFile, EmbedError> {
    let mut r = EmbeddingReader::new(reader)?;
    let mut records = Vec::with_capacity(r.header.count.min(1 << 20) as usize);
    for rec in &mut r {
        records.push(rec?);
    }
    Ok(EmbeddingFile {
        header: r.header,
        records,
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile, EmbedError> {
    let file = File::open(path).map_err(io_err(path))?;
    decode(BufReader::new(file)).map_err(|e| match e {
        EmbedError::Io { source, .. } => EmbedError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses the CSV variant. A first line whose second field is not a number
/// is treated as a header. Pooling is recorded as `cls`.
pub fn parse_embeddings_csv<R: Read>(reader: R) -> Result<EmbeddingFile, EmbedError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| EmbedError::Csv {
            line,
            message: e.to_string(),
        })?;
        if row.is_empty() || (row.len() == 1 && row[0].is_empty()) {
            continue;
        }
        if line == 1 && row.get(1).is_some_and(|f| f.parse::<f32>().is_err()) {
            continue;
        }
        let id = row[0].to_string();
        let vector = row
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f32>().map_err(|e| EmbedError::Csv {
                    line,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f32>, _>>()?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(EmbedError::DimMismatch {
                id,
                got: vector.len(),
                expected,
            });
        }
        records.push(EmbeddingRecord {
            review_id: id,
            vector,
        });
    }
    let dim = dim.unwrap_or(0);
    validate_records(&records, dim)?;
    Ok(EmbeddingFile {
        header: EmbeddingHeader {
            version: FORMAT_VERSION,
            pooling: Pooling::Cls,
            dim,
            count: records.len() as u64,
            metadata: "csv".into(),
        },
        records,
    })
}

/// Dispatches on extension: `.csv` uses the CSV variant, anything else the
/// binary format.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingFile, EmbedError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let file = File::open(path).map_err(io_err(path))?;
        parse_embeddings_csv(BufReader::new(file))
    } else {
        read_embeddings(path)
    }
}

/// One split example paired with its embedding. Side features are raw;
/// normalization needs training-split statistics and happens downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow {
    pub review_id: String,
    pub product_id: String,
    pub embedding: Vec<f64>,
    pub side: FeatureVector,
    pub target: f64,
}

/// Rows in split order. Every missing id is reported at once.
pub fn join(split: &[LabeledExample], embeddings: &EmbeddingFile) -> Result<Vec<JoinedRow>, EmbedError> {
    let index: HashMap<&str, &EmbeddingRecord> = embeddings
        .records
        .iter()
        .map(|r| (r.review_id.as_str(), r))
        .collect();
    let missing: Vec<String> = split
        .iter()
        .filter(|e| !index.contains_key(e.review_id()))
        .map(|e| e.review_id().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EmbedError::Missing(missing));
    }
    Ok(split
        .iter()
        .map(|e| JoinedRow {
            review_id: e.review_id().to_string(),
            product_id: e.product_id().to_string(),
            embedding: index[e.review_id()].vector.iter().map(|&v| f64::from(v)).collect(),
            side: side_features(e),
            target: e.target,
        })
        .collect())
}
