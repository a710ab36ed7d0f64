//! Regression and ranking metrics: MAE, RMSE, Pearson, Spearman, Kendall
//! tau-b and per-product NDCG@k.
//!
//! Ties are resolved with `partial_cmp` on finite values, so `-0.0 == 0.0`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric needs at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: Metric, reason: String },
    #[error("invalid scored entry {review_id}: {reason}")]
    InvalidEntry { review_id: String, reason: String },
    #[error("scored-set csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Rmse,
    Pcc,
    Spc,
    Kc,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Mae,
        Metric::Rmse,
        Metric::Pcc,
        Metric::Spc,
        Metric::Kc,
        Metric::Ndcg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Pcc => "PCC",
            Metric::Spc => "SPC",
            Metric::Kc => "KC",
            Metric::Ndcg => "NDCG",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mae | Metric::Rmse)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_pair(y: &[f64], p: &[f64], needed: usize) -> Result<(), MetricError> {
    if y.len() != p.len() {
        return Err(MetricError::LengthMismatch(y.len(), p.len()));
    }
    if y.len() < needed {
        return Err(MetricError::TooShort {
            needed,
            got: y.len(),
        });
    }
    Ok(())
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("metric inputs are finite")
}

pub fn mae(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, p, 1)?;
    Ok(y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, p, 1)?;
    let mse = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

fn pearson_as(metric: Metric, y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, p, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(p) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined {
            metric,
            reason: "one of the inputs is constant".into(),
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    pearson_as(Metric::Pcc, y, p)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| cmp_f64(&v[a], &v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, p, 2)?;
    pearson_as(Metric::Spc, &average_ranks(y), &average_ranks(p))
}

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions (strictly greater
/// element before a smaller one).
fn sort_count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = sort_count_inversions(&mut v[..mid], buf) + sort_count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Concordance counts behind tau-b, from an O(n log n) sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    /// Concordant minus discordant pairs.
    pub net: i64,
    /// Pairs not tied in the first input.
    pub untied_first: u64,
    /// Pairs not tied in the second input.
    pub untied_second: u64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Option<f64> {
        if self.untied_first == 0 || self.untied_second == 0 {
            return None;
        }
        Some(self.net as f64 / ((self.untied_first as f64) * (self.untied_second as f64)).sqrt())
    }
}

pub fn kendall_counts(y: &[f64], p: &[f64]) -> KendallCounts {
    let n = y.len() as u64;
    let total = n * n.saturating_sub(1) / 2;
    let mut pairs: Vec<(f64, f64)> = y.iter().copied().zip(p.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_f64(&a.0, &b.0).then_with(|| cmp_f64(&a.1, &b.1)));
    let xs: Vec<f64> = pairs.iter().map(|q| q.0).collect();
    let tied_x = tie_pairs(&xs);
    let tied_xy = tie_pairs(&pairs);
    let mut second: Vec<f64> = pairs.iter().map(|q| q.1).collect();
    let mut buf = Vec::with_capacity(second.len());
    let discordant = sort_count_inversions(&mut second, &mut buf);
    let tied_y = tie_pairs(&second);
    let net = total as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * discordant as i64;
    KendallCounts {
        net,
        untied_first: total - tied_x,
        untied_second: total - tied_y,
    }
}

pub fn kendall(y: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, p, 2)?;
    kendall_counts(y, p)
        .tau_b()
        .map(|t| t.clamp(-1.0, 1.0))
        .ok_or_else(|| MetricError::Undefined {
            metric: Metric::Kc,
            reason: "one of the inputs is entirely tied".into(),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub review_id: String,
    pub product_id: String,
    pub target: f64,
    pub prediction: f64,
}

fn dcg(gains: impl Iterator<Item = f64>, k: usize) -> f64 {
    gains
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k for one product's reviews, with linear gain equal to the target.
/// Prediction ties are ordered by review id. All-zero relevance gives 1.
pub fn ndcg_at_k(group: &[ScoredEntry], k: usize) -> f64 {
    let k = k.max(1);
    let mut by_pred: Vec<&ScoredEntry> = group.iter().collect();
    by_pred.sort_by(|a, b| {
        cmp_f64(&b.prediction, &a.prediction).then_with(|| a.review_id.cmp(&b.review_id))
    });
    let mut ideal: Vec<f64> = group.iter().map(|e| e.target).collect();
    ideal.sort_by(|a, b| cmp_f64(b, a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return 1.0;
    }
    (dcg(by_pred.iter().map(|e| e.target), k) / idcg).clamp(0.0, 1.0)
}

/// Predictions paired with targets for one evaluation; the interchange
/// format for externally produced predictions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Result<Self, MetricError> {
        for e in &entries {
            let bad = |reason: &str| MetricError::InvalidEntry {
                review_id: e.review_id.clone(),
                reason: reason.into(),
            };
            if !(0.0..=1.0).contains(&e.target) {
                return Err(bad("target outside [0, 1]"));
            }
            if !e.prediction.is_finite() {
                return Err(bad("prediction is not finite"));
            }
        }
        Ok(Self { entries })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MetricError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in r.deserialize() {
            entries.push(row.map_err(|e: csv::Error| MetricError::Csv(e.to_string()))?);
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e).map_err(|e| MetricError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| MetricError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub pcc: f64,
    pub spc: f64,
    pub kc: f64,
    pub ndcg: f64,
    pub k: usize,
    pub n: usize,
    pub n_products: usize,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Mae => self.mae,
            Metric::Rmse => self.rmse,
            Metric::Pcc => self.pcc,
            Metric::Spc => self.spc,
            Metric::Kc => self.kc,
            Metric::Ndcg => self.ndcg,
        }
    }
}

/// Pooled MAE/RMSE/PCC/SPC/KC over all entries and NDCG@k averaged over
/// products. Entries are put in (product, review) order first, so the
/// result does not depend on input order.
pub fn evaluate(scored: &ScoredSet, k: usize) -> Result<MetricsReport, MetricError> {
    if scored.entries.is_empty() {
        return Err(MetricError::TooShort { needed: 1, got: 0 });
    }
    let mut entries: Vec<&ScoredEntry> = scored.entries.iter().collect();
    entries.sort_by(|a, b| {
        a.product_id
            .cmp(&b.product_id)
            .then_with(|| a.review_id.cmp(&b.review_id))
    });
    let y: Vec<f64> = entries.iter().map(|e| e.target).collect();
    let p: Vec<f64> = entries.iter().map(|e| e.prediction).collect();

    let mut groups: BTreeMap<&str, Vec<ScoredEntry>> = BTreeMap::new();
    for e in &entries {
        groups.entry(&e.product_id).or_default().push((*e).clone());
    }
    let ndcg = groups.values().map(|g| ndcg_at_k(g, k)).sum::<f64>() / groups.len() as f64;

    Ok(MetricsReport {
        mae: mae(&y, &p)?,
        rmse: rmse(&y, &p)?,
        pcc: pearson(&y, &p)?,
        spc: spearman(&y, &p)?,
        kc: kendall(&y, &p)?,
        ndcg,
        k,
        n: y.len(),
        n_products: groups.len(),
    })
}
