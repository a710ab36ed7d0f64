//! Single-model fit-and-score steps shared by `run-all` and the CLI verbs.

use anyhow::{bail, Context, Result};

use crate::corpus::LabeledExample;
use crate::embed_io::{join, EmbeddingFile, JoinedRow};
use crate::features::{
    extract_lexicon_features, fit_normalizer, normalize, side_features, Lexicon, Normalizer,
};
use crate::forest::{grid_search, predict_forest, FeatureMatrix, ForestConfig, GridSearchResult};
use crate::head::{train_head, HeadConfig, HeadModel, HeadSample, TrainLog};
use crate::metrics::{ScoredEntry, ScoredSet};
use crate::splitter::SplitData;

pub fn lexicon_matrix(examples: &[LabeledExample], lexicon: &Lexicon) -> Result<(FeatureMatrix, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| extract_lexicon_features(&e.review.text, lexicon).values)
        .collect();
    let x = FeatureMatrix::from_rows(lexicon.schema(), &rows)?;
    Ok((x, examples.iter().map(|e| e.target).collect()))
}

pub fn scored_set(examples: &[LabeledExample], predictions: &[f64]) -> Result<ScoredSet> {
    if examples.len() != predictions.len() {
        bail!("{} examples but {} predictions", examples.len(), predictions.len());
    }
    let entries = examples
        .iter()
        .zip(predictions)
        .map(|(e, &p)| ScoredEntry {
            review_id: e.review_id().to_string(),
            product_id: e.product_id().to_string(),
            target: e.target,
            prediction: p,
        })
        .collect();
    Ok(ScoredSet::new(entries)?)
}

pub struct RfOutcome {
    pub search: GridSearchResult,
    pub test: ScoredSet,
}

/// Grid search on train/validation, then score the selected model on test.
pub fn run_rf(data: &SplitData, lexicon: &Lexicon, grid: &[ForestConfig]) -> Result<RfOutcome> {
    let (xt, yt) = lexicon_matrix(&data.train, lexicon)?;
    let (xv, yv) = lexicon_matrix(&data.val, lexicon)?;
    let (xs, _) = lexicon_matrix(&data.test, lexicon)?;
    let search = grid_search((&xt, &yt), (&xv, &yv), grid)?;
    let pred = predict_forest(&search.model, &xs)?;
    let test = scored_set(&data.test, &pred)?;
    Ok(RfOutcome { search, test })
}

/// Joined rows turned into head inputs, side features normalized with
/// `normalizer` when given.
pub fn head_samples(rows: &[JoinedRow], normalizer: Option<&Normalizer>) -> Result<Vec<HeadSample>> {
    rows.iter()
        .map(|r| {
            let side = match normalizer {
                Some(n) => Some(normalize(&r.side, n)?.values),
                None => None,
            };
            Ok(HeadSample {
                embedding: r.embedding.clone(),
                side,
                target: r.target,
            })
        })
        .collect()
}

pub struct HeadOutcome {
    pub model: HeadModel,
    pub log: TrainLog,
    pub normalizer: Option<Normalizer>,
    pub test: ScoredSet,
}

/// Train on the train partition with validation-best restore and score on
/// test. `config.input_dim` is taken from the embedding file.
pub fn run_head(data: &SplitData, embeddings: &EmbeddingFile, config: &HeadConfig) -> Result<HeadOutcome> {
    let config = HeadConfig {
        input_dim: embeddings.dim(),
        ..config.clone()
    };
    let train_rows = join(&data.train, embeddings).context("joining train partition")?;
    let val_rows = join(&data.val, embeddings).context("joining validation partition")?;
    let test_rows = join(&data.test, embeddings).context("joining test partition")?;
    let normalizer = if config.use_side_features {
        let side: Vec<_> = data.train.iter().map(side_features).collect();
        Some(fit_normalizer(&side)?)
    } else {
        None
    };
    let train = head_samples(&train_rows, normalizer.as_ref())?;
    let val = head_samples(&val_rows, normalizer.as_ref())?;
    let test = head_samples(&test_rows, normalizer.as_ref())?;
    let (model, log) = train_head(&train, &val, &config)?;
    let pred = model.predict_all(&test)?;
    Ok(HeadOutcome {
        model,
        log,
        normalizer,
        test: scored_set(&data.test, &pred)?,
    })
}
