//! Product-wise train/validation/test partitioning.
//!
//! Product ids are sorted, shuffled with [`DetRng`] and sliced: the first
//! `round(0.20 * n)` go to test, the next `round(0.125 * (n - test))` to
//! validation, the rest to train. Rounding is half-up.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabeledExample};
use crate::rng::DetRng;

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("need at least 3 distinct products to split, found {0}")]
    TooFewProducts(usize),
    #[error("products missing from split spec: {0:?}")]
    UncoveredProducts(Vec<String>),
    #[error("split spec is not a partition: {0:?} assigned more than once")]
    Overlap(Vec<String>),
    #[error("split file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_products: BTreeSet<String>,
    pub val_products: BTreeSet<String>,
    pub train_products: BTreeSet<String>,
}

/// Materialized partitions; each keeps corpus order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitData {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// `round(num / den)` with halves rounded up.
fn round_half_up(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// `(test, val, train)` partition sizes for `n` products.
///
/// For `n` of 3 or 4 the rounded validation (and for 3 the test) count would
/// be zero; those are raised to one so all three partitions are populated.
pub fn partition_sizes(n: usize) -> (usize, usize, usize) {
    let mut test = round_half_up(n, 5);
    let mut val = round_half_up(n - test, 8);
    if n >= 3 {
        test = test.max(1);
        val = val.max(1);
    }
    (test, val, n - test - val)
}

pub fn split_products(products: &[String], seed: u64) -> Result<SplitSpec, SplitError> {
    let mut ids: Vec<String> = products.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(SplitError::TooFewProducts(ids.len()));
    }
    DetRng::new(seed).shuffle(&mut ids);
    let (test, val, _) = partition_sizes(ids.len());
    let mut it = ids.into_iter();
    let test_products = it.by_ref().take(test).collect();
    let val_products = it.by_ref().take(val).collect();
    let train_products = it.collect();
    Ok(SplitSpec {
        seed,
        test_products,
        val_products,
        train_products,
    })
}

pub fn split_by_product(corpus: &Corpus, seed: u64) -> Result<SplitSpec, SplitError> {
    split_products(&corpus.product_ids(), seed)
}

impl SplitSpec {
    pub fn partition_of(&self, product_id: &str) -> Option<Partition> {
        if self.test_products.contains(product_id) {
            Some(Partition::Test)
        } else if self.val_products.contains(product_id) {
            Some(Partition::Validation)
        } else if self.train_products.contains(product_id) {
            Some(Partition::Train)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for id in self
            .test_products
            .iter()
            .chain(&self.val_products)
            .chain(&self.train_products)
        {
            *seen.entry(id).or_default() += 1;
        }
        let mut dup: Vec<String> = seen
            .into_iter()
            .filter(|(_, c)| *c > 1)
            .map(|(id, _)| id.to_string())
            .collect();
        if dup.is_empty() {
            Ok(())
        } else {
            dup.sort();
            Err(SplitError::Overlap(dup))
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), SplitError> {
        let body = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, body + "\n").map_err(|e| SplitError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, SplitError> {
        let file_err = |message: String| SplitError::File {
            path: path.display().to_string(),
            message,
        };
        let body = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let spec: SplitSpec = serde_json::from_str(&body).map_err(|e| file_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn materialize(corpus: &Corpus, spec: &SplitSpec) -> Result<SplitData, SplitError> {
    spec.validate()?;
    let mut out = SplitData::default();
    let mut uncovered = BTreeSet::new();
    for ex in &corpus.examples {
        match spec.partition_of(ex.product_id()) {
            Some(Partition::Train) => out.train.push(ex.clone()),
            Some(Partition::Validation) => out.val.push(ex.clone()),
            Some(Partition::Test) => out.test.push(ex.clone()),
            None => {
                uncovered.insert(ex.product_id().to_string());
            }
        }
    }
    if uncovered.is_empty() {
        Ok(out)
    } else {
        Err(SplitError::UncoveredProducts(uncovered.into_iter().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, Review};

    fn example(id: &str, product: &str) -> LabeledExample {
        LabeledExample {
            review: Review {
                review_id: id.into(),
                product_id: product.into(),
                text: "text".into(),
                stars: 4.0,
                helpful_votes: 5,
                total_votes: 20,
            },
            target: 0.25,
            word_count: 1,
        }
    }

    fn corpus(pairs: &[(&str, &str)]) -> Corpus {
        Corpus {
            category: "t".into(),
            examples: pairs.iter().map(|(i, p)| example(i, p)).collect(),
            provenance: Provenance::default(),
        }
    }

    fn products(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    #[test]
    fn ten_products_sizes() {
        for seed in [0, 1, 99] {
            let s = split_products(&products(10), seed).unwrap();
            assert_eq!(s.test_products.len(), 2);
            assert_eq!(s.val_products.len(), 1);
            assert_eq!(s.train_products.len(), 7);
        }
    }

    #[test]
    fn sizes_round_half_up() {
        assert_eq!(partition_sizes(10), (2, 1, 7));
        assert_eq!(partition_sizes(50), (10, 5, 35));
        // 0.2 * 5 = 1, 0.125 * 4 = 0.5 -> 1
        assert_eq!(partition_sizes(5), (1, 1, 3));
        // 0.2 * 100 = 20, 0.125 * 80 = 10
        assert_eq!(partition_sizes(100), (20, 10, 70));
        // 0.2 * 12 = 2.4 -> 2, 0.125 * 10 = 1.25 -> 1
        assert_eq!(partition_sizes(12), (2, 1, 9));
        assert_eq!(partition_sizes(3), (1, 1, 1));
        assert_eq!(partition_sizes(4), (1, 1, 2));
    }

    #[test]
    fn deterministic() {
        let a = split_products(&products(30), 5).unwrap();
        let b = split_products(&products(30), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_give_different_test_sets() {
        let a = split_products(&products(100), 1).unwrap();
        let b = split_products(&products(100), 2).unwrap();
        let overlap = a.test_products.intersection(&b.test_products).count();
        assert!(overlap < a.test_products.len());
    }

    #[test]
    fn too_few_products() {
        assert!(matches!(
            split_products(&products(2), 1),
            Err(SplitError::TooFewProducts(2))
        ));
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut p = products(40);
        let a = split_products(&p, 8).unwrap();
        p.reverse();
        let b = split_products(&p, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn materialize_two_products() {
        let c = corpus(&[("1", "A"), ("2", "B"), ("3", "A"), ("4", "A"), ("5", "B")]);
        let spec = SplitSpec {
            seed: 0,
            test_products: ["B".to_string()].into(),
            val_products: BTreeSet::new(),
            train_products: ["A".to_string()].into(),
        };
        let d = materialize(&c, &spec).unwrap();
        let ids = |v: &[LabeledExample]| v.iter().map(|e| e.review_id().to_string()).collect::<Vec<_>>();
        assert_eq!(ids(&d.test), ["2", "5"]);
        assert_eq!(ids(&d.train), ["1", "3", "4"]);
        assert!(d.val.is_empty());
    }

    #[test]
    fn materialize_hand_built_spec() {
        // 20 reviews over 5 products, cycling A..E.
        let names = ["A", "B", "C", "D", "E"];
        let pairs: Vec<(String, &str)> =
            (0..20).map(|i| (i.to_string(), names[i % 5])).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(i, p)| (i.as_str(), *p)).collect();
        let c = corpus(&refs);
        let spec = SplitSpec {
            seed: 0,
            test_products: ["C".to_string()].into(),
            val_products: ["E".to_string()].into(),
            train_products: ["A", "B", "D"].iter().map(|s| s.to_string()).collect(),
        };
        let d = materialize(&c, &spec).unwrap();
        let ids = |v: &[LabeledExample]| v.iter().map(|e| e.review_id().to_string()).collect::<Vec<_>>();
        assert_eq!(ids(&d.test), ["2", "7", "12", "17"]);
        assert_eq!(ids(&d.val), ["4", "9", "14", "19"]);
        assert_eq!(
            ids(&d.train),
            ["0", "1", "3", "5", "6", "8", "10", "11", "13", "15", "16", "18"]
        );
    }

    #[test]
    fn materialize_uncovered_product() {
        let c = corpus(&[("1", "A"), ("2", "Z")]);
        let spec = SplitSpec {
            seed: 0,
            test_products: BTreeSet::new(),
            val_products: BTreeSet::new(),
            train_products: ["A".to_string()].into(),
        };
        match materialize(&c, &spec) {
            Err(SplitError::UncoveredProducts(p)) => assert_eq!(p, ["Z"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let s = split_products(&products(12), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        s.write(&p).unwrap();
        assert_eq!(SplitSpec::read(&p).unwrap(), s);
    }
}
