//! Multi-seed experiments over categories and models.
//!
//! An experiment is a grid of (category, model, seed) cells. Every cell is
//! fitted and scored independently on a worker pool; a failing cell is
//! recorded with its error and does not stop the others. Aggregates and
//! significance tests are computed afterwards from the successful cells.

pub mod pipeline;
pub mod report;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest, read_corpus, write_corpus, Corpus};
use crate::embed_io::{load_embeddings, EmbeddingFile};
use crate::features::Lexicon;
use crate::forest::{ForestConfig, MaxFeatures};
use crate::head::HeadConfig;
use crate::metrics::{evaluate, MetricsReport, DEFAULT_K};
use crate::splitter::{materialize, split_by_product, SplitSpec, DEFAULT_SEEDS};
use crate::stats::{aggregate, compare_models, Aggregate, PairComparison, RunSet, TestKind, DEFAULT_ALPHA};

pub use report::{emit_report, format_half_even, verify_manifest, write_manifest, ReportFormat};

pub const THREADS_ENV: &str = "HELPRANK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rf")]
    Rf,
    #[serde(rename = "head")]
    Head,
    #[serde(rename = "head+side")]
    HeadSide,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Head => "head",
            ModelKind::HeadSide => "head+side",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" => Ok(ModelKind::Rf),
            "head" => Ok(ModelKind::Head),
            "head+side" => Ok(ModelKind::HeadSide),
            other => Err(format!("unknown model {other:?} (expected rf, head or head+side)")),
        }
    }
}

/// One category's inputs. Exactly one of `dataset` (raw dump, filtered on
/// load) or `corpus` (already ingested) is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryConfig {
    pub dataset: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Producer name -> embedding file.
    #[serde(default)]
    pub embeddings: BTreeMap<String, PathBuf>,
}

/// Forest hyperparameter grid; the cross product is searched. A
/// `max_depth` of 0 means unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![200, 400],
            max_features: vec![MaxFeatures::All, MaxFeatures::Sqrt],
            max_depth: vec![10, 0],
            min_samples_leaf: vec![10, 50],
        }
    }
}

impl ForestGrid {
    pub fn configs(&self, seed: u64) -> Vec<ForestConfig> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_features in &self.max_features {
                for &depth in &self.max_depth {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        out.push(ForestConfig {
                            n_estimators,
                            max_features,
                            max_depth: (depth > 0).then_some(depth),
                            min_samples_leaf,
                            seed,
                            bootstrap: true,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Head hyperparameters shared by every head cell; the input width comes
/// from the embedding file and the seed from the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSettings {
    pub hidden_dim: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for HeadSettings {
    fn default() -> Self {
        let d = HeadConfig::default();
        Self {
            hidden_dim: d.hidden_dim,
            peak_lr: d.peak_lr,
            batch_size: d.batch_size,
            epochs: d.epochs,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
        }
    }
}

impl HeadSettings {
    pub fn config(&self, side: bool, seed: u64) -> HeadConfig {
        HeadConfig {
            input_dim: HeadConfig::default().input_dim,
            use_side_features: side,
            hidden_dim: self.hidden_dim,
            peak_lr: self.peak_lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Rf, ModelKind::Head, ModelKind::HeadSide]
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Experiment description, read from TOML. Relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub categories: BTreeMap<String, CategoryConfig>,
    #[serde(default)]
    pub forest: ForestGrid,
    #[serde(default)]
    pub head: HeadSettings,
}

impl ExperimentConfig {
    pub fn from_toml(body: &str, base: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = toml::from_str(body).context("parsing experiment config")?;
        c.resolve_paths(base);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&body, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(l) = self.lexicon.as_mut() {
            fix(l);
        }
        for c in self.categories.values_mut() {
            c.dataset.as_mut().map(fix);
            c.corpus.as_mut().map(fix);
            c.embeddings.values_mut().for_each(fix);
        }
    }

    /// Checks the config for internal consistency and that every referenced
    /// file exists.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            bail!("seed {s} is listed twice");
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must be in (0, 1)");
        }
        if self.categories.is_empty() {
            bail!("no categories configured");
        }
        let needs_lexicon = self.models.contains(&ModelKind::Rf);
        let needs_embeddings = self.models.iter().any(|m| *m != ModelKind::Rf);
        let mut missing = Vec::new();
        let mut check = |p: &Path| {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        };
        match (&self.lexicon, needs_lexicon) {
            (Some(l), _) => check(l),
            (None, true) => bail!("model rf needs a lexicon path"),
            (None, false) => {}
        }
        for (name, c) in &self.categories {
            match (&c.dataset, &c.corpus) {
                (Some(p), None) | (None, Some(p)) => check(p),
                _ => bail!("category {name}: set exactly one of dataset or corpus"),
            }
            if needs_embeddings && c.embeddings.is_empty() {
                bail!("category {name}: head models need at least one embedding file");
            }
            c.embeddings.values().for_each(|p| check(p));
        }
        if !missing.is_empty() {
            bail!("missing input files: {}", missing.join(", "));
        }
        if self.models.is_empty() {
            log::warn!("no models configured; only splits will be produced");
        }
        Ok(())
    }

    /// Model names in report order: rf, then head and head+side per producer.
    pub fn model_names(&self, category: &str) -> Vec<(String, ModelKind, Option<String>)> {
        let producers: Vec<&String> = self
            .categories
            .get(category)
            .map(|c| c.embeddings.keys().collect())
            .unwrap_or_default();
        let mut kinds = self.models.clone();
        kinds.sort();
        kinds.dedup();
        let mut out = Vec::new();
        for kind in kinds {
            match kind {
                ModelKind::Rf => out.push(("rf".to_string(), kind, None)),
                _ => {
                    for p in &producers {
                        out.push((format!("{}/{p}", kind.as_str()), kind, Some(p.to_string())));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { report: MetricsReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub category: String,
    pub model: String,
    pub seed: u64,
    /// Directory of the cell's artifacts, relative to the output directory.
    pub dir: String,
    pub outcome: CellOutcome,
}

impl CellRecord {
    pub fn report(&self) -> Option<&MetricsReport> {
        match &self.outcome {
            CellOutcome::Ok { report } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSet {
    pub category: String,
    pub kind: TestKind,
    pub pairs: Vec<PairComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub alpha: f64,
    /// Category -> model names in report order.
    pub models: BTreeMap<String, Vec<String>>,
    pub cells: Vec<CellRecord>,
    /// Category -> aggregates of models with at least two successful runs.
    pub aggregates: BTreeMap<String, Vec<Aggregate>>,
    pub verdicts: Vec<VerdictSet>,
    /// Things that were skipped, such as tests on models with failed runs.
    pub notes: Vec<String>,
}

impl ExperimentResult {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.report().is_none()).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("result serializes");
        std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
    }
}

/// `head+side/roberta` -> `head+side__roberta`.
pub fn model_slug(model: &str) -> String {
    model.replace('/', "__")
}

pub fn cell_dir(category: &str, model: &str, seed: u64) -> String {
    format!("cells/{category}/{}/seed-{seed}", model_slug(model))
}

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

struct CategoryInputs {
    corpus: Corpus,
    embeddings: BTreeMap<String, EmbeddingFile>,
    splits: BTreeMap<u64, SplitSpec>,
}

struct CellJob<'a> {
    category: &'a str,
    model: String,
    kind: ModelKind,
    producer: Option<String>,
    seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run_cell(job: &CellJob, inputs: &CategoryInputs, lexicon: Option<&Lexicon>, config: &ExperimentConfig, dir: &Path) -> Result<MetricsReport> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let split = &inputs.splits[&job.seed];
    let data = materialize(&inputs.corpus, split)?;
    let scored = match job.kind {
        ModelKind::Rf => {
            let lexicon = lexicon.context("rf needs a lexicon")?;
            let grid = config.forest.configs(job.seed);
            let out = pipeline::run_rf(&data, lexicon, &grid)?;
            let mut w = csv::Writer::from_path(dir.join("grid.csv"))?;
            w.write_record(["config", "val_rmse", "selected"])?;
            for (c, score) in &out.search.scores {
                w.write_record([c.label(), score.to_string(), (*c == out.search.best).to_string()])?;
            }
            w.flush()?;
            write_json(&dir.join("selected_config.json"), &out.search.best)?;
            out.test
        }
        ModelKind::Head | ModelKind::HeadSide => {
            let producer = job.producer.as_deref().expect("head cells have a producer");
            let emb = &inputs.embeddings[producer];
            let hc = config.head.config(job.kind == ModelKind::HeadSide, job.seed);
            let out = pipeline::run_head(&data, emb, &hc)?;
            out.log.write_csv(std::fs::File::create(dir.join("train_log.csv"))?)?;
            out.model.save(&dir.join("head.json"))?;
            if let Some(n) = &out.normalizer {
                write_json(&dir.join("normalizer.json"), n)?;
            }
            out.test
        }
    };
    scored.write_csv(std::fs::File::create(dir.join("predictions.csv"))?)?;
    let report = evaluate(&scored, config.k)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with a non-string payload".into()
    }
}

fn load_category(name: &str, c: &CategoryConfig, seeds: &[u64], out: &Path) -> Result<CategoryInputs> {
    let corpus = match (&c.dataset, &c.corpus) {
        (Some(raw), _) => ingest(raw, name)?,
        (None, Some(p)) => read_corpus(p)?,
        (None, None) => bail!("category {name} has no data"),
    };
    log::info!(
        "{name}: {} of {} reviews kept",
        corpus.provenance.stats.kept,
        corpus.provenance.stats.input
    );
    let corpus_dir = out.join("corpora");
    std::fs::create_dir_all(&corpus_dir)?;
    write_json(&corpus_dir.join(format!("{name}.stats.json")), &corpus.provenance.stats)?;
    let split_dir = out.join("splits").join(name);
    std::fs::create_dir_all(&split_dir)?;
    let mut splits = BTreeMap::new();
    for &seed in seeds {
        let spec = split_by_product(&corpus, seed)?;
        spec.write(&split_dir.join(format!("seed-{seed}.json")))?;
        splits.insert(seed, spec);
    }
    let mut embeddings = BTreeMap::new();
    for (producer, path) in &c.embeddings {
        let f = load_embeddings(path).with_context(|| format!("loading {}", path.display()))?;
        embeddings.insert(producer.clone(), f);
    }
    Ok(CategoryInputs {
        corpus,
        embeddings,
        splits,
    })
}

/// Run every cell, then aggregate and compare. Artifacts go under
/// `config.output_dir`: per-cell directories, `results.json`, the reports
/// and a manifest of content hashes. The pool size comes from
/// `HELPRANK_THREADS` (0 or unset: one per core).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_threads(config, thread_count())
}

pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let lexicon = match &config.lexicon {
        Some(p) if config.models.contains(&ModelKind::Rf) => Some(Lexicon::load(p)?),
        _ => None,
    };

    let mut inputs = BTreeMap::new();
    for (name, c) in &config.categories {
        inputs.insert(name.as_str(), load_category(name, c, &config.seeds, out)?);
    }

    let mut jobs = Vec::new();
    let mut models = BTreeMap::new();
    for name in config.categories.keys() {
        let names = config.model_names(name);
        models.insert(name.clone(), names.iter().map(|n| n.0.clone()).collect::<Vec<_>>());
        for (model, kind, producer) in names {
            for &seed in &config.seeds {
                jobs.push(CellJob {
                    category: name,
                    model: model.clone(),
                    kind,
                    producer: producer.clone(),
                    seed,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building worker pool")?;
    let cells: Vec<CellRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let rel = cell_dir(job.category, &job.model, job.seed);
                let dir = out.join(&rel);
                let res = catch_unwind(AssertUnwindSafe(|| {
                    run_cell(job, &inputs[job.category], lexicon.as_ref(), config, &dir)
                }));
                let outcome = match res {
                    Ok(Ok(report)) => CellOutcome::Ok { report },
                    Ok(Err(e)) => CellOutcome::Failed {
                        error: format!("{e:#}"),
                    },
                    Err(p) => CellOutcome::Failed {
                        error: format!("panicked: {}", panic_message(p)),
                    },
                };
                if let CellOutcome::Failed { error } = &outcome {
                    log::error!("cell {rel} failed: {error}");
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(dir.join("error.txt"), format!("{error}\n"));
                }
                CellRecord {
                    category: job.category.to_string(),
                    model: job.model.clone(),
                    seed: job.seed,
                    dir: rel,
                    outcome,
                }
            })
            .collect()
    });

    let result = summarize_cells(config, models, cells);
    result.write(&out.join("results.json"))?;
    emit_report(&result, ReportFormat::Markdown, out)?;
    emit_report(&result, ReportFormat::Csv, out)?;
    write_manifest(out)?;
    Ok(result)
}

/// Aggregates and verdicts from finished cells.
pub fn summarize_cells(
    config: &ExperimentConfig,
    models: BTreeMap<String, Vec<String>>,
    cells: Vec<CellRecord>,
) -> ExperimentResult {
    let mut aggregates = BTreeMap::new();
    let mut verdicts = Vec::new();
    let mut notes = Vec::new();
    for (category, names) in &models {
        let mut complete = Vec::new();
        let mut aggs = Vec::new();
        for model in names {
            let mut seeds = Vec::new();
            let mut reports = Vec::new();
            for seed in &config.seeds {
                let cell = cells
                    .iter()
                    .find(|c| &c.category == category && &c.model == model && c.seed == *seed);
                if let Some(r) = cell.and_then(|c| c.report()) {
                    seeds.push(*seed);
                    reports.push(r.clone());
                }
            }
            let runs = RunSet {
                model_name: model.clone(),
                seeds,
                reports,
            };
            match aggregate(&runs) {
                Ok(a) => aggs.push(a),
                Err(e) => notes.push(format!("{category}/{model}: no aggregate ({e})")),
            }
            if runs.seeds.len() == config.seeds.len() {
                complete.push(runs);
            } else {
                notes.push(format!(
                    "{category}/{model}: {} of {} runs succeeded; excluded from significance tests",
                    runs.seeds.len(),
                    config.seeds.len()
                ));
            }
        }
        aggregates.insert(category.clone(), aggs);
        if complete.len() >= 2 && config.seeds.len() >= 2 {
            for kind in [TestKind::Pooled, TestKind::Paired] {
                match compare_models(&complete, config.alpha, kind) {
                    Ok(pairs) => verdicts.push(VerdictSet {
                        category: category.clone(),
                        kind,
                        pairs,
                    }),
                    Err(e) => notes.push(format!("{category}: {kind:?} comparison failed ({e})")),
                }
            }
        }
    }
    ExperimentResult {
        seeds: config.seeds.clone(),
        k: config.k,
        alpha: config.alpha,
        models,
        cells,
        aggregates,
        verdicts,
        notes,
    }
}

/// Ingest and write a corpus plus its stats sidecar.
pub fn ingest_to(path: &Path, category: &str, out: &Path) -> Result<Corpus> {
    let corpus = ingest(path, category)?;
    write_corpus(&corpus, out)?;
    Ok(corpus)
}
