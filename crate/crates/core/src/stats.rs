//! Cross-run aggregation and head-to-head significance tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::metrics::{Metric, MetricsReport};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("{what} needs at least 2 runs, got {got}")]
    TooFewRuns { what: String, got: usize },
    #[error("run sets {a} and {b} are not comparable: seeds {seeds_a:?} vs {seeds_b:?}")]
    SeedMismatch {
        a: String,
        b: String,
        seeds_a: Vec<u64>,
        seeds_b: Vec<u64>,
    },
    #[error("run set {0}: number of seeds and reports differ")]
    Malformed(String),
    #[error("paired test needs equal sample sizes, got {0} and {1}")]
    Unpaired(usize, usize),
}

/// One model's reports over repeated splits, in seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub model_name: String,
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
}

impl RunSet {
    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.reports.iter().map(|r| r.get(m)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample (n - 1) standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model_name: String,
    pub n_runs: usize,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; callers guarantee `v.len() >= 2`.
pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn summarize(v: &[f64]) -> Result<MetricSummary, StatsError> {
    if v.len() < 2 {
        return Err(StatsError::TooFewRuns {
            what: "standard deviation".into(),
            got: v.len(),
        });
    }
    Ok(MetricSummary {
        mean: mean(v),
        std: sample_variance(v).sqrt(),
    })
}

pub fn aggregate(runs: &RunSet) -> Result<Aggregate, StatsError> {
    if runs.reports.len() < 2 {
        return Err(StatsError::TooFewRuns {
            what: format!("aggregate of {}", runs.model_name),
            got: runs.reports.len(),
        });
    }
    let metrics = Metric::ALL
        .iter()
        .map(|&m| Ok((m, summarize(&runs.values(m))?)))
        .collect::<Result<_, StatsError>>()?;
    Ok(Aggregate {
        model_name: runs.model_name.clone(),
        n_runs: runs.reports.len(),
        metrics,
    })
}

/// CDF of Student's t with `df` degrees of freedom, through the regularized
/// incomplete beta function `I_x(df/2, 1/2)` with `x = df / (df + t^2)`.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Student's two-sample test with pooled variance.
    #[default]
    Pooled,
    /// Welch's unequal-variance test.
    Welch,
    /// Paired test on per-seed differences.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub metric: Option<Metric>,
    pub kind: TestKind,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
}

fn verdict(kind: TestKind, diff: f64, se: f64, df: f64, alpha: f64) -> TestVerdict {
    let (t, p) = if se > 0.0 {
        let t = diff / se;
        (t, two_sided_p(t, df))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, 0.0)
    };
    TestVerdict {
        metric: None,
        kind,
        t_statistic: t,
        df,
        p_value: p,
        significant: p < alpha,
    }
}

pub fn t_test(a: &[f64], b: &[f64], alpha: f64, kind: TestKind) -> Result<TestVerdict, StatsError> {
    for v in [a, b] {
        if v.len() < 2 {
            return Err(StatsError::TooFewRuns {
                what: "t-test".into(),
                got: v.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(match kind {
        TestKind::Pooled => {
            let df = na + nb - 2.0;
            let pooled =
                ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / df;
            let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
            verdict(kind, mean(a) - mean(b), se, df, alpha)
        }
        TestKind::Welch => {
            let (qa, qb) = (sample_variance(a) / na, sample_variance(b) / nb);
            let se = (qa + qb).sqrt();
            let df = if qa + qb > 0.0 {
                (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            verdict(kind, mean(a) - mean(b), se, df, alpha)
        }
        TestKind::Paired => {
            if a.len() != b.len() {
                return Err(StatsError::Unpaired(a.len(), b.len()));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let se = (sample_variance(&d) / na).sqrt();
            verdict(kind, mean(&d), se, na - 1.0, alpha)
        }
    })
}

/// Verdicts for one model pair, one per metric in [`Metric::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub model_a: String,
    pub model_b: String,
    pub verdicts: Vec<TestVerdict>,
}

impl PairComparison {
    pub fn yn(&self) -> Vec<&'static str> {
        self.verdicts
            .iter()
            .map(|v| if v.significant { "Y" } else { "N" })
            .collect()
    }
}

/// Every unordered pair `(i, j)`, `i < j`, in input order.
pub fn compare_models(
    all_runs: &[RunSet],
    alpha: f64,
    kind: TestKind,
) -> Result<Vec<PairComparison>, StatsError> {
    for r in all_runs {
        if r.seeds.len() != r.reports.len() {
            return Err(StatsError::Malformed(r.model_name.clone()));
        }
    }
    let mut out = Vec::new();
    for (i, a) in all_runs.iter().enumerate() {
        for b in &all_runs[i + 1..] {
            if a.seeds != b.seeds {
                return Err(StatsError::SeedMismatch {
                    a: a.model_name.clone(),
                    b: b.model_name.clone(),
                    seeds_a: a.seeds.clone(),
                    seeds_b: b.seeds.clone(),
                });
            }
            let verdicts = Metric::ALL
                .iter()
                .map(|&m| {
                    let mut v = t_test(&a.values(m), &b.values(m), alpha, kind)?;
                    v.metric = Some(m);
                    Ok(v)
                })
                .collect::<Result<Vec<_>, StatsError>>()?;
            out.push(PairComparison {
                model_a: a.model_name.clone(),
                model_b: b.model_name.clone(),
                verdicts,
            });
        }
    }
    Ok(out)
}
