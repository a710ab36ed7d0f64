//! Random-forest regression: bagged CART trees with variance-reduction
//! splits, plus grid search over forest hyperparameters.
//!
//! Fitting is independent of training-row order. Rows are first put into a
//! canonical order (lexicographic on features, then target), bootstrap
//! indices are drawn against that order and sorted, and every tree draws from
//! its own stream seeded by `derive_seed(config.seed, tree_index)`. Parallel
//! and serial fits therefore produce identical models.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics;
use crate::rng::{derive_seed, DetRng};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("cannot fit on an empty training set")]
    EmptyTrainingSet,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("feature schema mismatch: model has {expected:?}, input has {got:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("grid search needs a non-empty grid")]
    EmptyGrid,
    #[error("grid search needs a non-empty validation set")]
    EmptyValidation,
    #[error("unsupported forest model version {0}")]
    Version(u32),
    #[error("model file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// Every feature is a split candidate at every node.
    All,
    /// `max(1, floor(sqrt(d)))` features drawn per node.
    Sqrt,
}

impl MaxFeatures {
    pub fn count(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1).min(d),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
    /// Off only for single-tree diagnostics.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_estimators == 0 {
            return Err(ForestError::Config("n_estimators must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::Config("min_samples_leaf must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::Config("max_depth must be >= 1 when bounded".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "n_estimators={} max_features={} max_depth={} min_samples_leaf={}",
            self.n_estimators,
            match self.max_features {
                MaxFeatures::All => "all",
                MaxFeatures::Sqrt => "sqrt",
            },
            self.max_depth.map_or("none".to_string(), |d| d.to_string()),
            self.min_samples_leaf
        )
    }
}

/// The 2x2x2x2 baseline grid: trees {200, 400}, features {all, sqrt},
/// depth {10, unbounded}, leaf size {10, 50}.
pub fn baseline_grid(seed: u64) -> Vec<ForestConfig> {
    let mut grid = Vec::with_capacity(16);
    for n_estimators in [200, 400] {
        for max_features in [MaxFeatures::All, MaxFeatures::Sqrt] {
            for max_depth in [Some(10), None] {
                for min_samples_leaf in [10, 50] {
                    grid.push(ForestConfig {
                        n_estimators,
                        max_features,
                        max_depth,
                        min_samples_leaf,
                        seed,
                        bootstrap: true,
                    });
                }
            }
        }
    }
    grid
}

/// Dense row-major feature matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(schema: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, ForestError> {
        let d = schema.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(ForestError::SchemaMismatch {
                    expected: schema.clone(),
                    got: vec![format!("row of {} values", r.len())],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            schema,
            n_rows: rows.len(),
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
    },
    Leaf { value: f64, n_samples: usize },
}

/// Flattened tree; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, n_samples } => Some((*value, *n_samples)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// SHA-256 over the canonically ordered training rows and targets.
    pub data_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub schema: Vec<String>,
    pub config: ForestConfig,
    pub fingerprint: Fingerprint,
    pub target_min: f64,
    pub target_max: f64,
    pub trees: Vec<Tree>,
}

/// Mean of `values` summed in ascending order, clamped to their range.
/// Independent of input order, and exact for constant inputs.
pub fn canonical_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let lo = values[0];
    let hi = values[values.len() - 1];
    (values.iter().sum::<f64>() / n).clamp(lo, hi)
}

fn cmp_rows(x: &FeatureMatrix, y: &[f64], a: usize, b: usize) -> Ordering {
    x.row(a)
        .iter()
        .zip(x.row(b))
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| y[a].total_cmp(&y[b]))
}

struct Canonical {
    x: FeatureMatrix,
    y: Vec<f64>,
}

fn canonicalize(x: &FeatureMatrix, y: &[f64]) -> Canonical {
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    order.sort_by(|&a, &b| cmp_rows(x, y, a, b));
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
    Canonical {
        x: FeatureMatrix::from_rows(x.schema.clone(), &rows).expect("same width"),
        y: order.iter().map(|&i| y[i]).collect(),
    }
}

fn fingerprint(c: &Canonical, seed: u64) -> Fingerprint {
    let mut h = Sha256::new();
    for name in &c.x.schema {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    for v in c.x.data.iter().chain(&c.y) {
        h.update(v.to_le_bytes());
    }
    Fingerprint {
        data_sha256: hex::encode(h.finalize()),
        seed,
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Number of samples going left once sorted on `feature`.
    cut: usize,
    children_sse: f64,
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    config: &'a ForestConfig,
    rng: DetRng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&self, samples: &[usize]) -> Node {
        let mut vals: Vec<f64> = samples.iter().map(|&i| self.y[i]).collect();
        Node::Leaf {
            value: canonical_mean(&mut vals),
            n_samples: samples.len(),
        }
    }

    /// Scan candidate features for the split with the smallest summed child
    /// SSE. Earlier features and lower thresholds win ties within `tol`.
    fn best_split(&mut self, samples: &mut [usize], tol: f64) -> Option<BestSplit> {
        let d = self.x.n_cols();
        let min_leaf = self.config.min_samples_leaf;
        let n = samples.len();
        let features: Vec<usize> = match self.config.max_features {
            MaxFeatures::All => (0..d).collect(),
            MaxFeatures::Sqrt => {
                let mut f = self.rng.sample_indices(d, self.config.max_features.count(d));
                f.sort_unstable();
                f
            }
        };
        let mut best: Option<BestSplit> = None;
        for f in features {
            samples.sort_by(|&a, &b| self.x.at(a, f).total_cmp(&self.x.at(b, f)).then(a.cmp(&b)));
            let total: f64 = samples.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = samples.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            for cut in 1..n {
                let yi = self.y[samples[cut - 1]];
                sum_l += yi;
                sq_l += yi * yi;
                if cut < min_leaf || n - cut < min_leaf {
                    continue;
                }
                let lo = self.x.at(samples[cut - 1], f);
                let hi = self.x.at(samples[cut], f);
                if lo >= hi {
                    continue;
                }
                let nl = cut as f64;
                let nr = (n - cut) as f64;
                let sum_r = total - sum_l;
                let sq_r = total_sq - sq_l;
                let sse = (sq_l - sum_l * sum_l / nl).max(0.0) + (sq_r - sum_r * sum_r / nr).max(0.0);
                if best.as_ref().is_none_or(|b| sse < b.children_sse - tol) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        cut,
                        children_sse: sse,
                    });
                }
            }
        }
        best
    }

    fn build(mut self, root_samples: Vec<usize>) -> Tree {
        self.nodes.push(Node::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        let mut stack = vec![(0usize, root_samples, 0usize)];
        while let Some((slot, mut samples, depth)) = stack.pop() {
            let n = samples.len();
            let depth_ok = self.config.max_depth.is_none_or(|m| depth < m);
            let size_ok = n >= 2 * self.config.min_samples_leaf && n >= 2;
            let split = if depth_ok && size_ok {
                let sum: f64 = samples.iter().map(|&i| self.y[i]).sum();
                let sq: f64 = samples.iter().map(|&i| self.y[i] * self.y[i]).sum();
                let parent_sse = (sq - sum * sum / n as f64).max(0.0);
                let tol = 1e-12 * (1.0 + sq);
                self.best_split(&mut samples, tol)
                    .filter(|b| parent_sse - b.children_sse > tol)
            } else {
                None
            };
            match split {
                None => self.nodes[slot] = self.leaf(&samples),
                Some(b) => {
                    let f = b.feature;
                    samples.sort_by(|&a, &c| {
                        self.x.at(a, f).total_cmp(&self.x.at(c, f)).then(a.cmp(&c))
                    });
                    let right_samples = samples.split_off(b.cut);
                    let left = self.nodes.len();
                    let right = left + 1;
                    let placeholder = Node::Leaf {
                        value: 0.0,
                        n_samples: 0,
                    };
                    self.nodes.push(placeholder.clone());
                    self.nodes.push(placeholder);
                    self.nodes[slot] = Node::Split {
                        feature: f,
                        threshold: b.threshold,
                        left,
                        right,
                        n_samples: n,
                    };
                    stack.push((right, right_samples, depth + 1));
                    stack.push((left, samples, depth + 1));
                }
            }
        }
        Tree { nodes: self.nodes }
    }
}

pub fn fit_forest(
    x: &FeatureMatrix,
    y: &[f64],
    config: &ForestConfig,
) -> Result<ForestModel, ForestError> {
    config.validate()?;
    if x.n_rows() != y.len() {
        return Err(ForestError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    if y.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if !x.data.iter().all(|v| v.is_finite()) {
        return Err(ForestError::NonFinite("features"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(ForestError::NonFinite("targets"));
    }

    let canon = canonicalize(x, y);
    let n = y.len();
    let trees: Vec<Tree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = DetRng::new(derive_seed(config.seed, t as u64));
            let samples: Vec<usize> = if config.bootstrap {
                let mut s: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
                s.sort_unstable();
                s
            } else {
                (0..n).collect()
            };
            TreeBuilder {
                x: &canon.x,
                y: &canon.y,
                config,
                rng,
                nodes: Vec::new(),
            }
            .build(samples)
        })
        .collect();

    let target_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let target_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        format_version: FOREST_FORMAT_VERSION,
        schema: x.schema.clone(),
        fingerprint: fingerprint(&canon, config.seed),
        config: config.clone(),
        target_min,
        target_max,
        trees,
    })
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        (sum / self.trees.len() as f64).clamp(self.target_min, self.target_max)
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        let body = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, body).map_err(|e| ForestError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        let err = |message: String| ForestError::File {
            path: path.display().to_string(),
            message,
        };
        let body = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let model: ForestModel = serde_json::from_str(&body).map_err(|e| err(e.to_string()))?;
        if model.format_version != FOREST_FORMAT_VERSION {
            return Err(ForestError::Version(model.format_version));
        }
        Ok(model)
    }
}

pub fn predict_forest(model: &ForestModel, x: &FeatureMatrix) -> Result<Vec<f64>, ForestError> {
    if x.schema != model.schema {
        return Err(ForestError::SchemaMismatch {
            expected: model.schema.clone(),
            got: x.schema.clone(),
        });
    }
    Ok((0..x.n_rows())
        .into_par_iter()
        .map(|i| model.predict_row(x.row(i)))
        .collect())
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: ForestConfig,
    pub model: ForestModel,
    /// Validation RMSE per grid point, in grid order.
    pub scores: Vec<(ForestConfig, f64)>,
}

/// Fit every config on `train`, score RMSE on `val`, keep the first minimum.
pub fn grid_search(
    train: (&FeatureMatrix, &[f64]),
    val: (&FeatureMatrix, &[f64]),
    grid: &[ForestConfig],
) -> Result<GridSearchResult, ForestError> {
    if grid.is_empty() {
        return Err(ForestError::EmptyGrid);
    }
    if val.1.is_empty() || val.0.n_rows() == 0 {
        return Err(ForestError::EmptyValidation);
    }
    let mut best: Option<(usize, f64, ForestModel)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for (i, config) in grid.iter().enumerate() {
        let model = fit_forest(train.0, train.1, config)?;
        let pred = predict_forest(&model, val.0)?;
        let score = metrics::rmse(val.1, &pred).map_err(|e| ForestError::Config(e.to_string()))?;
        log::debug!("grid point {}: val rmse {score:.6}", config.label());
        scores.push((config.clone(), score));
        if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            best = Some((i, score, model));
        }
    }
    let (i, _, model) = best.expect("grid is non-empty");
    Ok(GridSearchResult {
        best: grid[i].clone(),
        model,
        scores,
    })
}
