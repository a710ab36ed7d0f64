//! Brute-force reference implementations used by the property and
//! acceptance tests. They share no code with the library.

#![allow(dead_code)]

use std::path::PathBuf;

use helprank::head::{HeadModel, HeadSample};
use helprank::metrics::ScoredEntry;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixture")
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Tau-b by enumerating every pair.
pub fn kendall_brute(y: &[f64], p: &[f64]) -> Option<f64> {
    let n = y.len();
    let (mut net, mut tied_y, mut tied_p) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let a = sign(y[i] - y[j]);
            let b = sign(p[i] - p[j]);
            net += a * b;
            tied_y += u64::from(a == 0);
            tied_p += u64::from(b == 0);
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as u64;
    let (a, b) = (pairs - tied_y, pairs - tied_p);
    if a == 0 || b == 0 {
        return None;
    }
    Some(net as f64 / ((a as f64) * (b as f64)).sqrt())
}

/// 1 + (values below) + (ties including self - 1) / 2.
pub fn ranks_brute(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|w| *w < x).count() as f64;
            let equal = v.iter().filter(|w| *w == x).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Selection-order DCG/IDCG for one product.
pub fn ndcg_brute(group: &[ScoredEntry], k: usize) -> f64 {
    let mut left: Vec<&ScoredEntry> = group.iter().collect();
    let mut dcg = 0.0;
    let mut pos = 0;
    while !left.is_empty() && pos < k {
        let mut best = 0;
        for (i, e) in left.iter().enumerate() {
            let b = left[best];
            if e.prediction > b.prediction || (e.prediction == b.prediction && e.review_id < b.review_id) {
                best = i;
            }
        }
        dcg += left.remove(best).target / (pos as f64 + 2.0).log2();
        pos += 1;
    }
    let mut gains: Vec<f64> = group.iter().map(|e| e.target).collect();
    let mut idcg = 0.0;
    pos = 0;
    while !gains.is_empty() && pos < k {
        let mut best = 0;
        for (i, g) in gains.iter().enumerate() {
            if *g > gains[best] {
                best = i;
            }
        }
        idcg += gains.remove(best) / (pos as f64 + 2.0).log2();
        pos += 1;
    }
    if idcg == 0.0 {
        1.0
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StumpOracle {
    pub feature: usize,
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
}

fn sse(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m).powi(2)).sum()
}

/// Best single split by exhaustive search: every feature, every midpoint
/// between consecutive distinct values, both sides at least `min_leaf`.
/// Earlier (feature, threshold) wins among equal errors. `None` when no
/// split lowers the error.
pub fn best_stump(rows: &[Vec<f64>], y: &[f64], min_leaf: usize) -> Option<StumpOracle> {
    let d = rows.first().map_or(0, |r| r.len());
    let total = sse(y);
    let scale = 1e-12 * (1.0 + y.iter().map(|v| v * v).sum::<f64>());
    let mut cands = Vec::new();
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let left: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] <= thr).map(|(_, v)| *v).collect();
            let right: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] > thr).map(|(_, v)| *v).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            cands.push((sse(&left) + sse(&right), f, thr, mean(&left), mean(&right)));
        }
    }
    let min = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    if !(total - min > scale) {
        return None;
    }
    let c = cands.iter().find(|c| c.0 <= min + scale)?;
    Some(StumpOracle {
        feature: c.1,
        threshold: c.2,
        left_value: c.3,
        right_value: c.4,
    })
}

fn gamma_half(n2: u32) -> f64 {
    // Gamma(n2 / 2) for positive integers n2.
    let mut g = if n2 % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if n2 % 2 == 0 { 1.0 } else { 0.5 };
    while x < n2 as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

pub fn t_density(x: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0)
}

/// Two-sided p-value, 1 - 2 * integral of the density over [0, |t|],
/// by composite Simpson's rule.
pub fn two_sided_p_integrated(t: f64, df: u32) -> f64 {
    let a = t.abs();
    if a == 0.0 {
        return 1.0;
    }
    let n = 200_000usize;
    let h = a / n as f64;
    let mut s = t_density(0.0, df) + t_density(a, df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Straight-line forward pass, written from the architecture description.
pub fn forward_oracle(m: &HeadModel, emb: &[f64], side: Option<&[f64]>) -> f64 {
    let d = m.input_dim;
    match m.hidden_dim {
        None => {
            let mut acc = m.params[d];
            for i in 0..d {
                acc += m.params[i] * emb[i];
            }
            acc
        }
        Some(h) => {
            let mut input = emb.to_vec();
            input.extend_from_slice(side.unwrap());
            let cols = input.len();
            let b1 = h * cols;
            let w2 = b1 + h;
            let b2 = w2 + h;
            let mut out = m.params[b2];
            for j in 0..h {
                let mut z = m.params[b1 + j];
                for c in 0..cols {
                    z += m.params[j * cols + c] * input[c];
                }
                out += m.params[w2 + j] * if z > 0.0 { z } else { 0.0 };
            }
            out
        }
    }
}

pub fn mse_oracle(m: &HeadModel, batch: &[HeadSample]) -> f64 {
    batch
        .iter()
        .map(|s| (forward_oracle(m, &s.embedding, s.side.as_deref()) - s.target).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

/// Central differences of the batch MSE with step `h`.
pub fn numeric_grad(m: &HeadModel, batch: &[HeadSample], h: f64) -> Vec<f64> {
    let mut probe = m.clone();
    (0..m.params.len())
        .map(|i| {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = mse_oracle(&probe, batch);
            probe.params[i] = orig - h;
            let down = mse_oracle(&probe, batch);
            probe.params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / (|a| + |b|)` in the Euclidean norm; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}

/// Fits one unbootstrapped depth-1 tree and compares it with [`best_stump`].
pub fn stump_matches_oracle(rows: &[Vec<f64>], y: &[f64], min_leaf: usize) -> Result<(), String> {
    use helprank::forest::{fit_forest, FeatureMatrix, ForestConfig, MaxFeatures, Node};
    let d = rows[0].len();
    let x = FeatureMatrix::from_rows((0..d).map(|i| format!("f{i}")).collect(), rows).map_err(|e| e.to_string())?;
    let config = ForestConfig {
        n_estimators: 1,
        max_features: MaxFeatures::All,
        max_depth: Some(1),
        min_samples_leaf: min_leaf,
        seed: 0,
        bootstrap: false,
    };
    let model = fit_forest(&x, y, &config).map_err(|e| e.to_string())?;
    let nodes = &model.trees[0].nodes;
    let leaf = |i: usize| match nodes[i] {
        Node::Leaf { value, .. } => Ok(value),
        _ => Err(format!("node {i} is not a leaf")),
    };
    match (best_stump(rows, y, min_leaf), &nodes[0]) {
        (None, Node::Leaf { value, .. }) => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            if *value == mean {
                Ok(())
            } else {
                Err(format!("root leaf {value} vs mean {mean}"))
            }
        }
        (Some(o), Node::Split { feature, threshold, left, right, .. }) => {
            let got = (*feature, *threshold, leaf(*left)?, leaf(*right)?);
            let want = (o.feature, o.threshold, o.left_value, o.right_value);
            if got == want {
                Ok(())
            } else {
                Err(format!("tree {got:?} vs oracle {want:?}"))
            }
        }
        (o, n) => Err(format!("oracle {o:?} vs root {n:?}")),
    }
}

/// Random small head plus batch with every hidden pre-activation at least
/// 0.05 away from the ReLU kink, so a 1e-3 step never crosses it.
pub fn random_head_instance(rng: &mut helprank::rng::DetRng, side: bool) -> (HeadModel, Vec<HeadSample>) {
    use helprank::head::HeadConfig;
    loop {
        let input_dim = 1 + rng.below(6) as usize;
        let config = HeadConfig {
            input_dim,
            use_side_features: side,
            hidden_dim: 1 + rng.below(5) as usize,
            seed: rng.next_u64(),
            ..HeadConfig::default()
        };
        let model = HeadModel::init(&config);
        let batch: Vec<HeadSample> = (0..1 + rng.below(6))
            .map(|_| HeadSample {
                embedding: (0..input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                side: side.then(|| vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)]),
                target: rng.unit_f64(),
            })
            .collect();
        if let Some(h) = model.hidden_dim {
            let cols = input_dim + 2;
            let near_kink = batch.iter().any(|s| {
                let mut input = s.embedding.clone();
                input.extend_from_slice(s.side.as_ref().unwrap());
                (0..h).any(|j| {
                    let z = model.params[h * cols + j]
                        + (0..cols).map(|c| model.params[j * cols + c] * input[c]).sum::<f64>();
                    z.abs() < 0.05
                })
            });
            if near_kink {
                continue;
            }
        }
        return (model, batch);
    }
}

/// Largest relative gradient error over `count` random instances.
pub fn worst_gradient_error(side: bool, count: usize, seed: u64) -> f64 {
    let mut rng = helprank::rng::DetRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (m, batch) = random_head_instance(&mut rng, side);
        let (_, analytic) = m.loss_and_grad(&batch).unwrap();
        let numeric = numeric_grad(&m, &batch, 1e-3);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Noiseless `y = w . x` on 2-d embeddings.
pub fn linear_data(n: usize, seed: u64) -> Vec<HeadSample> {
    let mut rng = helprank::rng::DetRng::new(seed);
    let w = [0.3, 0.5];
    (0..n)
        .map(|_| {
            let x = vec![rng.unit_f64(), rng.unit_f64()];
            HeadSample {
                target: w[0] * x[0] + w[1] * x[1],
                embedding: x,
                side: None,
            }
        })
        .collect()
}
