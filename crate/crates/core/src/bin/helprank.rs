use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use helprank::corpus::read_corpus;
use helprank::embed_io::load_embeddings;
use helprank::features::{extract_lexicon_features, side_features, write_feature_csv, FeatureVector, Lexicon};
use helprank::forest::MaxFeatures;
use helprank::head::HeadConfig;
use helprank::metrics::{evaluate, Metric, ScoredEntry, ScoredSet, DEFAULT_K};
use helprank::runner::{
    emit_report, ingest_to, pipeline, run_experiment_with_threads, verify_manifest, write_manifest,
    ExperimentConfig, ExperimentResult, ForestGrid, ModelKind, ReportFormat, THREADS_ENV,
};
use helprank::splitter::{materialize, split_by_product, SplitSpec};
use helprank::stats::{compare_models, RunSet, TestKind, DEFAULT_ALPHA};

#[derive(Parser)]
#[command(name = "helprank", version, about = "Review helpfulness prediction and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Pooled,
    Welch,
    Paired,
}

impl From<TestArg> for TestKind {
    fn from(t: TestArg) -> Self {
        match t {
            TestArg::Pooled => TestKind::Pooled,
            TestArg::Welch => TestKind::Welch,
            TestArg::Paired => TestKind::Paired,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter a raw JSON-lines dump into a labeled corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Product-wise train/validation/test split of a corpus.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lexicon and side features as CSV.
    Features {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "partition")]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        partition: Part,
    },
    /// Grid-search a random forest on lexicon features.
    TrainRf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Where to save the selected model (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Test-partition predictions as a scored-set CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        n_estimators: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        max_features: Option<Vec<String>>,
        /// 0 means unlimited.
        #[arg(long, value_delimiter = ',')]
        max_depth: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        min_samples_leaf: Option<Vec<usize>>,
    },
    /// Train a regressor head on precomputed embeddings.
    TrainHead {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Checkpoint path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Append normalized star rating and word count.
        #[arg(long)]
        side: bool,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        peak_lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score an external predictions CSV (review_id,prediction) against a corpus.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Evaluate a scored-set CSV (review_id,product_id,target,prediction).
    Evaluate {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Head-to-head t-tests between run sets (JSON files).
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "pooled")]
        test: TestArg,
    },
    /// Rebuild reports from a run-all output directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Check files against the manifest instead of rewriting reports.
        #[arg(long)]
        verify: bool,
    },
    /// Run a whole experiment from a config file.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, env = THREADS_ENV, default_value_t = 0)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_max_features(v: &[String]) -> Result<Vec<MaxFeatures>> {
    v.iter()
        .map(|s| match s.as_str() {
            "all" => Ok(MaxFeatures::All),
            "sqrt" => Ok(MaxFeatures::Sqrt),
            other => bail!("max_features must be all or sqrt, got {other}"),
        })
        .collect()
}

fn load_split(corpus: &Path, split: &Path) -> Result<helprank::splitter::SplitData> {
    let corpus = read_corpus(corpus)?;
    let spec = SplitSpec::read(split)?;
    Ok(materialize(&corpus, &spec)?)
}

#[derive(Deserialize)]
struct PredictionRow {
    review_id: String,
    prediction: f64,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { input, category, out } => {
            let c = ingest_to(&input, &category, &out)?;
            print_json(&c.provenance.stats)?;
        }
        Command::Split { corpus, seed, out } => {
            let corpus = read_corpus(&corpus)?;
            let spec = split_by_product(&corpus, seed)?;
            spec.write(&out)?;
            eprintln!(
                "{} train / {} validation / {} test products",
                spec.train_products.len(),
                spec.val_products.len(),
                spec.test_products.len()
            );
        }
        Command::Features { corpus, lexicon, out, split, partition } => {
            let lexicon = Lexicon::load(&lexicon)?;
            let examples = match split {
                None => read_corpus(&corpus)?.examples,
                Some(s) => {
                    let d = load_split(&corpus, &s)?;
                    match partition {
                        Part::All => [d.train, d.val, d.test].concat(),
                        Part::Train => d.train,
                        Part::Val => d.val,
                        Part::Test => d.test,
                    }
                }
            };
            let mut schema = lexicon.schema();
            schema.extend(helprank::features::side_schema());
            let rows = examples
                .iter()
                .map(|e| {
                    let mut values = extract_lexicon_features(&e.review.text, &lexicon).values;
                    values.extend(side_features(e).values);
                    Ok((e.review_id().to_string(), FeatureVector::new(values, schema.clone())?))
                })
                .collect::<Result<Vec<_>>>()?;
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_feature_csv(f, &schema, &rows)?;
        }
        Command::TrainRf {
            corpus,
            split,
            lexicon,
            out,
            predictions,
            n_estimators,
            max_features,
            max_depth,
            min_samples_leaf,
        } => {
            let data = load_split(&corpus, &split)?;
            let lexicon = Lexicon::load(&lexicon)?;
            let mut grid = ForestGrid::default();
            if let Some(v) = n_estimators {
                grid.n_estimators = v;
            }
            if let Some(v) = max_features {
                grid.max_features = parse_max_features(&v)?;
            }
            if let Some(v) = max_depth {
                grid.max_depth = v;
            }
            if let Some(v) = min_samples_leaf {
                grid.min_samples_leaf = v;
            }
            let seed = SplitSpec::read(&split)?.seed;
            let res = pipeline::run_rf(&data, &lexicon, &grid.configs(seed))?;
            res.search.model.save(&out)?;
            if let Some(p) = predictions {
                res.test.write_csv(File::create(&p)?)?;
            }
            for (c, score) in &res.search.scores {
                eprintln!("{}: val rmse {score:.6}", c.label());
            }
            eprintln!("selected {}", res.search.best.label());
            print_json(&evaluate(&res.test, DEFAULT_K)?)?;
        }
        Command::TrainHead {
            corpus,
            split,
            embeddings,
            out,
            side,
            log,
            predictions,
            epochs,
            peak_lr,
            batch_size,
            hidden_dim,
            seed,
        } => {
            let data = load_split(&corpus, &split)?;
            let emb = load_embeddings(&embeddings)?;
            let d = HeadConfig::default();
            let config = HeadConfig {
                use_side_features: side,
                epochs: epochs.unwrap_or(d.epochs),
                peak_lr: peak_lr.unwrap_or(d.peak_lr),
                batch_size: batch_size.unwrap_or(d.batch_size),
                hidden_dim: hidden_dim.unwrap_or(d.hidden_dim),
                seed: match seed {
                    Some(s) => s,
                    None => SplitSpec::read(&split)?.seed,
                },
                ..d
            };
            let res = pipeline::run_head(&data, &emb, &config)?;
            res.model.save(&out)?;
            if let Some(p) = log {
                res.log.write_csv(File::create(&p)?)?;
            }
            if let Some(p) = predictions {
                res.test.write_csv(File::create(&p)?)?;
            }
            eprintln!("best epoch {}", res.log.best_epoch);
            print_json(&evaluate(&res.test, DEFAULT_K)?)?;
        }
        Command::Score { predictions, corpus, k } => {
            let corpus = read_corpus(&corpus)?;
            let by_id: HashMap<&str, _> = corpus.examples.iter().map(|e| (e.review_id(), e)).collect();
            let mut rdr = csv::Reader::from_path(&predictions)
                .with_context(|| format!("opening {}", predictions.display()))?;
            let mut entries = Vec::new();
            let mut unknown = Vec::new();
            for row in rdr.deserialize() {
                let row: PredictionRow = row?;
                match by_id.get(row.review_id.as_str()) {
                    Some(e) => entries.push(ScoredEntry {
                        review_id: row.review_id,
                        product_id: e.product_id().to_string(),
                        target: e.target,
                        prediction: row.prediction,
                    }),
                    None => unknown.push(row.review_id),
                }
            }
            if !unknown.is_empty() {
                bail!("{} predicted ids are not in the corpus: {}", unknown.len(), unknown.join(", "));
            }
            print_json(&evaluate(&ScoredSet::new(entries)?, k)?)?;
        }
        Command::Evaluate { scored, k } => {
            let f = File::open(&scored).with_context(|| format!("opening {}", scored.display()))?;
            print_json(&evaluate(&ScoredSet::read_csv(BufReader::new(f))?, k)?)?;
        }
        Command::Compare { runs, alpha, test } => {
            let sets = runs
                .iter()
                .map(|p| {
                    let body = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<RunSet>(&body).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let pairs = compare_models(&sets, alpha, test.into())?;
            let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
            println!("| Pair | {} |", names.join(" | "));
            println!("|---|{}", "---|".repeat(names.len()));
            for p in &pairs {
                println!("| {} vs {} | {} |", p.model_a, p.model_b, p.yn().join(" | "));
            }
        }
        Command::Report { results, verify } => {
            if verify {
                let bad = verify_manifest(&results)?;
                if bad.is_empty() {
                    eprintln!("all files match the manifest");
                } else {
                    for b in &bad {
                        eprintln!("changed: {b}");
                    }
                    return Ok(ExitCode::FAILURE);
                }
            } else {
                let result = ExperimentResult::read(&results.join("results.json"))?;
                emit_report(&result, ReportFormat::Markdown, &results)?;
                emit_report(&result, ReportFormat::Csv, &results)?;
                write_manifest(&results)?;
            }
        }
        Command::RunAll { config, out, seeds, models, k, threads } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(m) = models {
                cfg.models = m;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            let result = run_experiment_with_threads(&cfg, threads)?;
            let failed = result.failed_cells();
            eprintln!(
                "{} cells, {failed} failed; results in {}",
                result.cells.len(),
                cfg.output_dir.display()
            );
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
