//! Regressor head over fixed text embeddings.
//!
//! Without side features the head is one affine map `embedding -> score`.
//! With side features the normalized `[stars, word_count]` pair is appended
//! to the embedding and fed through `affine -> ReLU -> affine`. Training
//! minimizes MSE with Adam under a linear warmup / linear decay schedule and
//! returns the parameters from the epoch with the lowest validation RMSE.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::rng::{derive_seed, DetRng};

pub const SIDE_DIM: usize = 2;
pub const HEAD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite gradient at parameter {0}; step aborted")]
    NonFiniteGradient(usize),
    #[error("non-finite training loss at epoch {epoch}, step {step} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, step: usize, lr: f64 },
    #[error("training needs non-empty {0} data")]
    Empty(&'static str),
    #[error("invalid head config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub use_side_features: bool,
    pub hidden_dim: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            input_dim: 768,
            use_side_features: false,
            hidden_dim: 64,
            peak_lr: 1e-4,
            batch_size: 16,
            epochs: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
        }
    }
}

impl HeadConfig {
    fn validate(&self) -> Result<(), HeadError> {
        let bad = |m: &str| Err(HeadError::Config(m.into()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.use_side_features && self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.peak_lr.is_nan() || self.peak_lr < 0.0 {
            return bad("peak_lr must be non-negative");
        }
        Ok(())
    }
}

/// One training or evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSample {
    pub embedding: Vec<f64>,
    /// Normalized side features; present iff the head uses them.
    pub side: Option<Vec<f64>>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub input_dim: usize,
    /// `None` for the single affine layer.
    pub hidden_dim: Option<usize>,
    /// Flat parameters. Linear: `w[input_dim], b`. Two-layer: `w1[hidden][input_dim + 2]`
    /// row-major, `b1[hidden]`, `w2[hidden]`, `b2`.
    pub params: Vec<f64>,
}

pub fn param_count(input_dim: usize, hidden_dim: Option<usize>) -> usize {
    match hidden_dim {
        None => input_dim + 1,
        Some(h) => h * (input_dim + SIDE_DIM) + 2 * h + 1,
    }
}

impl HeadModel {
    pub fn zeros(input_dim: usize, hidden_dim: Option<usize>) -> Self {
        Self {
            input_dim,
            hidden_dim,
            params: vec![0.0; param_count(input_dim, hidden_dim)],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)` per layer.
    pub fn init(config: &HeadConfig) -> Self {
        let hidden = config.use_side_features.then_some(config.hidden_dim);
        let mut m = Self::zeros(config.input_dim, hidden);
        let mut rng = DetRng::new(derive_seed(config.seed, 0));
        match hidden {
            None => {
                let bound = 1.0 / (config.input_dim as f64).sqrt();
                m.params.iter_mut().for_each(|p| *p = rng.uniform(-bound, bound));
            }
            Some(h) => {
                let d = config.input_dim + SIDE_DIM;
                let first = h * d + h;
                let b1 = 1.0 / (d as f64).sqrt();
                let b2 = 1.0 / (h as f64).sqrt();
                for (i, p) in m.params.iter_mut().enumerate() {
                    let bound = if i < first { b1 } else { b2 };
                    *p = rng.uniform(-bound, bound);
                }
            }
        }
        m
    }

    pub fn uses_side_features(&self) -> bool {
        self.hidden_dim.is_some()
    }

    fn check(&self, embedding: &[f64], side: Option<&[f64]>) -> Result<(), HeadError> {
        if embedding.len() != self.input_dim {
            return Err(HeadError::Dimension(format!(
                "embedding has {} components, head expects {}",
                embedding.len(),
                self.input_dim
            )));
        }
        match (self.hidden_dim, side) {
            (None, None) => Ok(()),
            (Some(_), Some(s)) if s.len() == SIDE_DIM => Ok(()),
            (Some(_), Some(s)) => Err(HeadError::Dimension(format!(
                "{} side features, expected {SIDE_DIM}",
                s.len()
            ))),
            (None, Some(_)) => Err(HeadError::Dimension(
                "side features given to a text-only head".into(),
            )),
            (Some(_), None) => Err(HeadError::Dimension(
                "head expects side features".into(),
            )),
        }
    }

    /// Raw (unclamped) output, plus hidden pre-activations for backprop.
    fn forward_inner(&self, embedding: &[f64], side: Option<&[f64]>, pre: &mut Vec<f64>) -> f64 {
        let d_in = self.input_dim;
        match self.hidden_dim {
            None => {
                let w = &self.params[..d_in];
                dot(w, embedding) + self.params[d_in]
            }
            Some(h) => {
                let side = side.expect("checked");
                let d = d_in + SIDE_DIM;
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                pre.clear();
                let mut out = b2[0];
                for j in 0..h {
                    let row = &w1[j * d..(j + 1) * d];
                    let z = dot(&row[..d_in], embedding) + dot(&row[d_in..], side) + b1[j];
                    pre.push(z);
                    out += w2[j] * z.max(0.0);
                }
                out
            }
        }
    }

    pub fn forward(&self, embedding: &[f64], side: Option<&[f64]>) -> Result<f64, HeadError> {
        self.check(embedding, side)?;
        Ok(self.forward_inner(embedding, side, &mut Vec::new()))
    }

    /// Inference output, clamped to `[0, 1]`.
    pub fn predict(&self, embedding: &[f64], side: Option<&[f64]>) -> Result<f64, HeadError> {
        Ok(self.forward(embedding, side)?.clamp(0.0, 1.0))
    }

    pub fn predict_all(&self, samples: &[HeadSample]) -> Result<Vec<f64>, HeadError> {
        samples
            .iter()
            .map(|s| self.predict(&s.embedding, s.side.as_deref()))
            .collect()
    }

    /// Mean squared error of the raw outputs over `batch` and its gradient
    /// with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[HeadSample]) -> Result<(f64, Vec<f64>), HeadError> {
        if batch.is_empty() {
            return Err(HeadError::Empty("batch"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut pre = Vec::new();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            let side = s.side.as_deref();
            self.check(&s.embedding, side)?;
            let out = self.forward_inner(&s.embedding, side, &mut pre);
            let err = out - s.target;
            loss += err * err;
            let g = 2.0 * err / n;
            let d_in = self.input_dim;
            match self.hidden_dim {
                None => {
                    for (gw, x) in grad[..d_in].iter_mut().zip(&s.embedding) {
                        *gw += g * x;
                    }
                    grad[d_in] += g;
                }
                Some(h) => {
                    let side = side.expect("checked");
                    let d = d_in + SIDE_DIM;
                    let w2_off = h * d + h;
                    for j in 0..h {
                        let z = pre[j];
                        grad[w2_off + j] += g * z.max(0.0);
                        if z > 0.0 {
                            let dz = g * self.params[w2_off + j];
                            let row = &mut grad[j * d..(j + 1) * d];
                            for (gw, x) in row[..d_in].iter_mut().zip(&s.embedding) {
                                *gw += dz * x;
                            }
                            for (gw, x) in row[d_in..].iter_mut().zip(side) {
                                *gw += dz * x;
                            }
                            grad[h * d + j] += dz;
                        }
                    }
                    grad[w2_off + h] += g;
                }
            }
        }
        Ok((loss / n, grad))
    }

    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        let ck = Checkpoint::from_model(self);
        let body = serde_json::to_string(&ck).expect("checkpoint serializes");
        std::fs::write(path, body).map_err(|e| HeadError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        let err = |message: String| HeadError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let body = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&body).map_err(|e| err(e.to_string()))?;
        ck.into_model().map_err(err)
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, HeadError> {
    if pred.is_empty() {
        return Err(HeadError::Empty("loss"));
    }
    if pred.len() != target.len() {
        return Err(HeadError::Dimension(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct Layer {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk form: named row-major tensors with explicit shapes.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    input_dim: usize,
    hidden_dim: Option<usize>,
    layers: Vec<Layer>,
}

impl Checkpoint {
    fn shapes(input_dim: usize, hidden_dim: Option<usize>) -> Vec<(&'static str, Vec<usize>)> {
        match hidden_dim {
            None => vec![("weight", vec![1, input_dim]), ("bias", vec![1])],
            Some(h) => vec![
                ("hidden.weight", vec![h, input_dim + SIDE_DIM]),
                ("hidden.bias", vec![h]),
                ("out.weight", vec![1, h]),
                ("out.bias", vec![1]),
            ],
        }
    }

    fn from_model(m: &HeadModel) -> Self {
        let mut off = 0;
        let layers = Self::shapes(m.input_dim, m.hidden_dim)
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let values = m.params[off..off + len].to_vec();
                off += len;
                Layer {
                    name: name.into(),
                    shape,
                    values,
                }
            })
            .collect();
        Self {
            format_version: HEAD_FORMAT_VERSION,
            input_dim: m.input_dim,
            hidden_dim: m.hidden_dim,
            layers,
        }
    }

    fn into_model(self) -> Result<HeadModel, String> {
        if self.format_version != HEAD_FORMAT_VERSION {
            return Err(format!("unsupported version {}", self.format_version));
        }
        let expected = Self::shapes(self.input_dim, self.hidden_dim);
        if expected.len() != self.layers.len() {
            return Err("wrong number of layers".into());
        }
        let mut params = Vec::with_capacity(param_count(self.input_dim, self.hidden_dim));
        for ((name, shape), layer) in expected.into_iter().zip(self.layers) {
            if layer.name != name || layer.shape != shape {
                return Err(format!("layer {} has unexpected name or shape", layer.name));
            }
            if layer.values.len() != shape.iter().product::<usize>() {
                return Err(format!("layer {} has wrong value count", layer.name));
            }
            params.extend(layer.values);
        }
        Ok(HeadModel {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&HeadConfig> for AdamParams {
    fn from(c: &HeadConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<(), HeadError> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(HeadError::Dimension("adam shapes disagree".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(HeadError::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Learning rate at optimizer step `step` (0-based): linear warmup from 0 to
/// `peak_lr` over the first epoch, then linear decay to 0 at
/// `epochs * steps_per_epoch`.
pub fn lr_at(step: usize, steps_per_epoch: usize, config: &HeadConfig) -> f64 {
    let warm = steps_per_epoch.max(1);
    let total = (config.epochs * steps_per_epoch).max(warm);
    let peak = config.peak_lr;
    if step < warm {
        peak * (step as f64 / warm as f64)
    } else if step >= total {
        if total == warm && step == warm {
            peak
        } else {
            0.0
        }
    } else {
        peak * ((total - step) as f64 / (total - warm) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_rmse", "best"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_rmse.to_string(),
                (e.epoch == self.best_epoch).to_string(),
            ])?;
        }
        w.flush()
    }
}

pub fn train_head(
    train: &[HeadSample],
    val: &[HeadSample],
    config: &HeadConfig,
) -> Result<(HeadModel, TrainLog), HeadError> {
    config.validate()?;
    if train.is_empty() {
        return Err(HeadError::Empty("training"));
    }
    if val.is_empty() {
        return Err(HeadError::Empty("validation"));
    }
    let mut model = HeadModel::init(config);
    for s in train.iter().chain(val) {
        model.check(&s.embedding, s.side.as_deref())?;
    }
    let hp = AdamParams::from(config);
    let mut state = AdamState::new(model.params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = DetRng::new(derive_seed(config.seed, 1));
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let val_targets: Vec<f64> = val.iter().map(|s| s.target).collect();

    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        lr_trace: Vec::with_capacity(steps_per_epoch * config.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut step = 0usize;
    let mut batch: Vec<HeadSample> = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let lr = lr_at(step, steps_per_epoch, config);
            let (loss, grad) = model.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(HeadError::NonFiniteLoss { epoch, step, lr });
            }
            adam_step(&mut model.params, &grad, &mut state, lr, hp)?;
            log.lr_trace.push(lr);
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let preds = model.predict_all(val)?;
        let val_rmse = metrics::rmse(&val_targets, &preds).expect("validation is non-empty");
        log::debug!("epoch {epoch}: train mse {:.6}, val rmse {val_rmse:.6}", loss_sum / train.len() as f64);
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_rmse,
        });
        if best.as_ref().is_none_or(|(b, _)| val_rmse < *b) {
            best = Some((val_rmse, model.params.clone()));
            log.best_epoch = epoch;
        }
    }
    model.params = best.expect("at least one epoch").1;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(input_dim: usize, side: bool) -> HeadConfig {
        HeadConfig {
            input_dim,
            use_side_features: side,
            hidden_dim: 4,
            ..HeadConfig::default()
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(HeadModel::init(&cfg(768, false)).params.len(), 769);
        assert_eq!(
            HeadModel::init(&HeadConfig { use_side_features: true, ..HeadConfig::default() })
                .params
                .len(),
            64 * 770 + 64 + 64 + 1
        );
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = HeadModel::zeros(3, None);
        assert_eq!(m.forward(&[0.3, -1.0, 9.0], None).unwrap(), 0.0);
        let m = HeadModel::zeros(3, Some(5));
        assert_eq!(m.forward(&[0.3, -1.0, 9.0], Some(&[1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn basis_vector_picks_component() {
        let mut m = HeadModel::zeros(4, None);
        m.params[0] = 1.0;
        assert_eq!(m.forward(&[0.37, 0.5, -2.0, 8.0], None).unwrap(), 0.37);
    }

    #[test]
    fn dimension_errors() {
        let m = HeadModel::zeros(3, None);
        assert!(m.forward(&[1.0, 2.0], None).is_err());
        assert!(m.forward(&[1.0, 2.0, 3.0], Some(&[1.0, 1.0])).is_err());
        let m = HeadModel::zeros(3, Some(2));
        assert!(m.forward(&[1.0, 2.0, 3.0], None).is_err());
        assert!(m.forward(&[1.0, 2.0, 3.0], Some(&[1.0])).is_err());
    }

    #[test]
    fn predict_clamps_but_forward_does_not() {
        let mut m = HeadModel::zeros(1, None);
        m.params[1] = 1.7;
        assert_eq!(m.forward(&[0.0], None).unwrap(), 1.7);
        assert_eq!(m.predict(&[0.0], None).unwrap(), 1.0);
        m.params[1] = -0.2;
        assert_eq!(m.predict(&[0.0], None).unwrap(), 0.0);
        // Loss sees the raw output.
        let s = HeadSample { embedding: vec![0.0], side: None, target: 0.0 };
        let (loss, _) = m.loss_and_grad(&[s]).unwrap();
        assert!((loss - 0.04).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        let hp = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        adam_step(&mut p, &[1.0], &mut st, 0.001, hp).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr() {
        let hp = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = [0.5, -0.5];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.1, hp).unwrap();
        assert_eq!(p, [0.5, -0.5]);
        adam_step(&mut p, &[3.0, -1.0], &mut st, 0.0, hp).unwrap();
        assert_eq!(p, [0.5, -0.5]);
        assert_eq!(st.step, 2);
        assert!(st.m[0] != 0.0 && st.v[1] != 0.0);
    }

    #[test]
    fn adam_rejects_nan() {
        let hp = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = [0.5];
        let mut st = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut st, 0.1, hp),
            Err(HeadError::NonFiniteGradient(0))
        ));
        assert_eq!((p[0], st.step), (0.5, 0));
    }

    #[test]
    fn schedule_points() {
        let c = HeadConfig { epochs: 5, peak_lr: 1e-4, ..HeadConfig::default() };
        assert_eq!(lr_at(0, 10, &c), 0.0);
        assert_eq!(lr_at(10, 10, &c), 1e-4);
        assert!((lr_at(5, 10, &c) - 5e-5).abs() < 1e-20);
        assert_eq!(lr_at(50, 10, &c), 0.0);
        assert!((lr_at(30, 10, &c) - 5e-5).abs() < 1e-20);
    }

    #[test]
    fn mse_loss_examples() {
        assert_eq!(mse_loss(&[0.3, 0.6], &[0.3, 0.6]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!((mse_loss(&[0.2, 0.4], &[0.0, 1.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn mse_examples() {
        let s = |t| HeadSample { embedding: vec![0.0], side: None, target: t };
        let mut m = HeadModel::zeros(1, None);
        // pred = target
        m.params[1] = 0.3;
        assert_eq!(m.loss_and_grad(&[s(0.3)]).unwrap().0, 0.0);
        // pred [0.2, 0.4] vs [0.0, 1.0]: two single-sample halves
        let mut a = HeadModel::zeros(1, None);
        a.params[0] = 0.2;
        let batch = [
            HeadSample { embedding: vec![1.0], side: None, target: 0.0 },
            HeadSample { embedding: vec![2.0], side: None, target: 1.0 },
        ];
        assert!((a.loss_and_grad(&batch).unwrap().0 - 0.2).abs() < 1e-15);
        assert!(m.loss_and_grad(&[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = HeadModel::init(&cfg(5, true));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("head.json");
        m.save(&p).unwrap();
        assert_eq!(HeadModel::load(&p).unwrap(), m);
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<HeadSample> = (0..40)
            .map(|i| {
                let x = i as f64 / 40.0;
                HeadSample { embedding: vec![x, 1.0 - x], side: None, target: 0.5 * x }
            })
            .collect();
        let c = HeadConfig { input_dim: 2, peak_lr: 1e-2, ..HeadConfig::default() };
        let a = train_head(&data, &data[..8], &c).unwrap();
        let b = train_head(&data, &data[..8], &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.lr_trace.len(), 5 * 3);
        assert!(train_head(&[], &data, &c).is_err());
        assert!(train_head(&data, &[], &c).is_err());
    }

    #[test]
    fn single_sample_overfit() {
        let s = vec![HeadSample { embedding: vec![0.5, -0.25], side: None, target: 0.6 }];
        let c = HeadConfig { input_dim: 2, peak_lr: 0.05, batch_size: 1, epochs: 200, ..HeadConfig::default() };
        let (m, log) = train_head(&s, &s, &c).unwrap();
        let best = log.epochs.iter().map(|e| e.val_rmse).fold(f64::INFINITY, f64::min);
        assert_eq!(log.epochs[log.best_epoch - 1].val_rmse, best);
        assert!(best < 0.02, "best {best}");
        let again = metrics::rmse(&[0.6], &m.predict_all(&s).unwrap()).unwrap();
        assert_eq!(again, best);
    }
}
