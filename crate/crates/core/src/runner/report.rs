//! Markdown and CSV reports, and the output manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CellOutcome, ExperimentResult};
use crate::metrics::Metric;
use crate::stats::TestKind;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Rounds the shortest decimal form of `x` to `places` digits, ties to even.
/// This is the value a reader of the full-precision CSV would get by
/// rounding by hand.
pub fn format_half_even(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let repr = x.abs().to_string();
    let (int, frac) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes().chain(std::iter::repeat(b'0')).take(places)).map(|b| b - b'0').collect();
    if frac.len() > places {
        let rest = &frac.as_bytes()[places..];
        let first = rest[0] - b'0';
        let beyond = rest[1..].iter().any(|&b| b != b'0');
        let last_odd = digits.last().is_some_and(|d| d % 2 == 1);
        if first > 5 || (first == 5 && (beyond || last_odd)) {
            let mut i = digits.len();
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
    }
    let split = digits.len() - places;
    let mut s = String::new();
    if x < 0.0 && digits.iter().any(|&d| d != 0) {
        s.push('-');
    }
    s.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if places > 0 {
        s.push('.');
        s.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    s
}

fn mean_std_cell(mean: f64, std: f64) -> String {
    format!("{} ({})", format_half_even(mean, 4), format_half_even(std, 4))
}

fn kind_label(kind: TestKind) -> &'static str {
    match kind {
        TestKind::Pooled => "pooled",
        TestKind::Welch => "welch",
        TestKind::Paired => "paired",
    }
}

fn table_header(first: &str) -> String {
    let mut s = format!("| {first} |");
    for m in Metric::ALL {
        let _ = write!(s, " {} |", m.name());
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(Metric::ALL.len()));
    s.push('\n');
    s
}

fn markdown(result: &ExperimentResult) -> String {
    let mut s = String::from("# Results\n\n");
    let seeds: Vec<String> = result.seeds.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(
        s,
        "Seeds: {}. NDCG at k = {}. Cells show mean (sample std) over runs.\n",
        seeds.join(", "),
        result.k
    );
    for (category, models) in &result.models {
        let _ = writeln!(s, "## {category}\n");
        s.push_str(&table_header("Model"));
        let aggs = result.aggregates.get(category);
        for model in models {
            let agg = aggs.and_then(|a| a.iter().find(|a| &a.model_name == model));
            let _ = write!(s, "| {model} |");
            for m in Metric::ALL {
                let cell = match agg.and_then(|a| a.metrics.get(&m)) {
                    Some(sum) => mean_std_cell(sum.mean, sum.std),
                    None => {
                        // Fewer than two runs: show the single value if there is one.
                        let mut ok = result
                            .cells
                            .iter()
                            .filter(|c| &c.category == category && &c.model == model)
                            .filter_map(|c| c.report());
                        match (ok.next(), ok.next()) {
                            (Some(r), None) => format_half_even(r.get(m), 4),
                            _ => "n/a".into(),
                        }
                    }
                };
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
        s.push('\n');
        for set in result.verdicts.iter().filter(|v| &v.category == category) {
            let _ = writeln!(
                s,
                "### Significance ({} t-test, alpha {})\n",
                kind_label(set.kind),
                result.alpha
            );
            s.push_str(&table_header("Pair"));
            for pair in &set.pairs {
                let _ = write!(s, "| {} vs {} |", pair.model_a, pair.model_b);
                for yn in pair.yn() {
                    let _ = write!(s, " {yn} |");
                }
                s.push('\n');
            }
            s.push('\n');
        }
    }
    let failed: Vec<_> = result.cells.iter().filter(|c| c.report().is_none()).collect();
    if !failed.is_empty() {
        s.push_str("## Failed cells\n\n| Category | Model | Seed | Error |\n|---|---|---|---|\n");
        for c in failed {
            if let CellOutcome::Failed { error } = &c.outcome {
                let error = error.replace('|', "\\|").replace('\n', " ");
                let _ = writeln!(s, "| {} | {} | {} | {error} |", c.category, c.model, c.seed);
            }
        }
        s.push('\n');
    }
    if !result.notes.is_empty() {
        s.push_str("## Notes\n\n");
        for n in &result.notes {
            let _ = writeln!(s, "- {n}");
        }
    }
    s
}

fn write_csvs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let cells_path = dir.join("cells.csv");
    let mut w = csv::Writer::from_path(&cells_path)?;
    let mut header = vec!["category", "model", "seed", "status"];
    header.extend(Metric::ALL.iter().map(|m| m.name()));
    header.push("error");
    w.write_record(&header)?;
    for c in &result.cells {
        let mut row = vec![c.category.clone(), c.model.clone(), c.seed.to_string()];
        match &c.outcome {
            CellOutcome::Ok { report } => {
                row.push("ok".into());
                row.extend(Metric::ALL.iter().map(|&m| report.get(m).to_string()));
                row.push(String::new());
            }
            CellOutcome::Failed { error } => {
                row.push("failed".into());
                row.extend(Metric::ALL.iter().map(|_| String::new()));
                row.push(error.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let agg_path = dir.join("aggregates.csv");
    let mut w = csv::Writer::from_path(&agg_path)?;
    w.write_record(["category", "model", "metric", "mean", "std", "n_runs"])?;
    for (category, aggs) in &result.aggregates {
        for a in aggs {
            for (m, sum) in &a.metrics {
                w.write_record([
                    category.clone(),
                    a.model_name.clone(),
                    m.name().to_string(),
                    sum.mean.to_string(),
                    sum.std.to_string(),
                    a.n_runs.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let verdict_path = dir.join("verdicts.csv");
    let mut w = csv::Writer::from_path(&verdict_path)?;
    w.write_record([
        "category", "test", "model_a", "model_b", "metric", "t", "df", "p", "significant",
    ])?;
    for set in &result.verdicts {
        for pair in &set.pairs {
            for (v, yn) in pair.verdicts.iter().zip(pair.yn()) {
                w.write_record([
                    set.category.clone(),
                    kind_label(set.kind).to_string(),
                    pair.model_a.clone(),
                    pair.model_b.clone(),
                    v.metric.map_or("", |m| m.name()).to_string(),
                    v.t_statistic.to_string(),
                    v.df.to_string(),
                    v.p_value.to_string(),
                    yn.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(vec![cells_path, agg_path, verdict_path])
}

/// Writes `report.md`, or `cells.csv`, `aggregates.csv` and `verdicts.csv`,
/// into `dir`. Returns the paths written.
pub fn emit_report(result: &ExperimentResult, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Markdown => {
            let path = dir.join("report.md");
            std::fs::write(&path, markdown(result)).with_context(|| format!("writing {}", path.display()))?;
            Ok(vec![path])
        }
        ReportFormat::Csv => write_csvs(result, dir),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_unix: u64,
    pub files: Vec<ManifestEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root).map_or(true, |p| p != Path::new(MANIFEST)) {
            out.push(path);
        }
    }
    Ok(())
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn entries(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files).with_context(|| format!("listing {}", dir.display()))?;
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(dir).expect("under root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let (sha256, bytes) = hash_file(&f)?;
        out.push(ManifestEntry { path: rel, sha256, bytes });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Hashes every file under `dir` into `dir/manifest.json`.
pub fn write_manifest(dir: &Path) -> Result<Manifest> {
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        created_unix,
        files: entries(dir)?,
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST), body + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let body = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}

/// Paths whose current content no longer matches the manifest, including
/// listed files that are gone.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut bad = Vec::new();
    for e in &manifest.files {
        match hash_file(&dir.join(&e.path)) {
            Ok((h, n)) if h == e.sha256 && n == e.bytes => {}
            _ => bad.push(e.path.clone()),
        }
    }
    Ok(bad)
}
