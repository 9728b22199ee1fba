use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bilstm::{top_k, train_bilstm, BiLstmModel, TrainConfig};
use super::features::FeatureSequence;
use crate::error::{domain, Result};
use crate::scalar::Scalar;
use crate::seed;

pub const DEFAULT_SEQ_LEN: usize = 1600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LabeledItem<S: Scalar> {
    /// Exactly the dataset's common length.
    pub values: Vec<S>,
    pub label: usize,
    /// Windows at the end that are padding rather than measurement.
    pub padded: usize,
}

/// Feature sequences with class labels, cut or padded to one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LabeledDataset<S: Scalar> {
    pub labels: Vec<String>,
    pub items: Vec<LabeledItem<S>>,
    pub seq_len: usize,
    pub window_ms: f64,
}

impl<S: Scalar> LabeledDataset<S> {
    /// Sequences must carry a label. Labels are indexed in sorted order.
    /// Short sequences are padded with their last value.
    pub fn new(sequences: Vec<FeatureSequence<S>>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return domain("sequence length must be positive");
        }
        let Some(first) = sequences.first() else {
            return domain("dataset is empty");
        };
        let window_ms = first.window_ms;
        let mut names: Vec<String> = Vec::new();
        for s in &sequences {
            let Some(l) = &s.label else {
                return domain("every sequence needs a label");
            };
            if s.window_ms != window_ms {
                return domain("sequences use different window sizes");
            }
            if s.values.is_empty() {
                return domain(format!("sequence for {l} is empty"));
            }
            names.push(l.clone());
        }
        names.sort();
        names.dedup();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let items = sequences
            .iter()
            .map(|s| {
                let mut values: Vec<S> = s.values.iter().take(seq_len).copied().collect();
                let padded = seq_len - values.len();
                let last = *values.last().expect("non-empty");
                values.resize(seq_len, last);
                LabeledItem {
                    values,
                    label: index[s.label.as_deref().expect("checked")],
                    padded,
                }
            })
            .collect();
        Ok(LabeledDataset {
            labels: names,
            items,
            seq_len,
            window_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.labels.len()];
        for it in &self.items {
            c[it.label] += 1;
        }
        c
    }
}

/// Mean-pooling and z-scoring applied before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    /// Consecutive windows averaged into one step.
    pub pool: usize,
    pub mean: f64,
    pub stddev: f64,
}

impl Preprocess {
    /// Pooling factor `pool` with z-score statistics from `train`.
    pub fn fit<S: Scalar>(train: &[&[S]], pool: usize) -> Result<Self> {
        if pool == 0 {
            return domain("pooling factor must be positive");
        }
        let pooled: Vec<Vec<f64>> = train.iter().map(|x| mean_pool(x, pool)).collect();
        let n: usize = pooled.iter().map(Vec::len).sum();
        if n == 0 {
            return domain("no training data for normalization");
        }
        let mean = pooled.iter().flatten().sum::<f64>() / n as f64;
        let var = pooled.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(Preprocess {
            pool,
            mean,
            stddev: var.sqrt().max(1e-9),
        })
    }

    pub fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        mean_pool(x, self.pool)
            .into_iter()
            .map(|v| S::of((v - self.mean) / self.stddev))
            .collect()
    }
}

fn mean_pool<S: Scalar>(x: &[S], pool: usize) -> Vec<f64> {
    x.chunks(pool)
        .map(|c| c.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / c.len() as f64)
        .collect()
}

/// A trained model with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Classifier<S: Scalar> {
    pub labels: Vec<String>,
    pub preprocess: Preprocess,
    pub model: BiLstmModel<S>,
    pub loss_curve: Vec<f64>,
}

impl<S: Scalar> Classifier<S> {
    /// Class probabilities for raw window features.
    pub fn predict(&self, features: &[S]) -> Result<Vec<S>> {
        self.model.predict(&self.preprocess.apply(features))
    }
}

/// Trains on the whole dataset, or on `subset` of its items.
pub fn train_classifier<S: Scalar>(
    data: &LabeledDataset<S>,
    subset: Option<&[usize]>,
    pool: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Classifier<S>> {
    let all: Vec<usize>;
    let idx = match subset {
        Some(s) => s,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let raw: Vec<&[S]> = idx.iter().map(|&i| data.items[i].values.as_slice()).collect();
    let pre = Preprocess::fit(&raw, pool)?;
    let xs: Vec<Vec<S>> = raw.iter().map(|x| pre.apply(x)).collect();
    let ys: Vec<usize> = idx.iter().map(|&i| data.items[i].label).collect();
    let out = train_bilstm(&xs, &ys, data.labels.len(), cfg, seed)?;
    Ok(Classifier {
        labels: data.labels.clone(),
        preprocess: pre,
        model: out.model,
        loss_curve: out.loss_curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_items: usize,
    pub top1: f64,
    pub top3: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub labels: Vec<String>,
    pub folds: Vec<FoldReport>,
    /// Fold of each dataset item.
    pub assignment: Vec<usize>,
    /// Over all held-out predictions.
    pub top1: f64,
    pub top3: f64,
    /// `confusion[truth][predicted]`, Top-1 predictions.
    pub confusion: Vec<Vec<u32>>,
}

fn content_key<S: Scalar>(item: &LabeledItem<S>) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in &item.values {
        h.update(v.to_f64_lossy().to_bits().to_le_bytes());
    }
    h.update((item.padded as u64).to_le_bytes());
    h.finalize().into()
}

/// Stratified fold of each item. Items are placed by content, so the
/// assignment does not depend on dataset order.
pub fn stratified_folds<S: Scalar>(data: &LabeledDataset<S>, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return domain("cross-validation needs k >= 2");
    }
    let counts = data.counts();
    if let Some((l, c)) = counts.iter().enumerate().find(|(_, &c)| c < k) {
        return domain(format!("label {} has {c} items, fewer than k = {k}", data.labels[l]));
    }
    let keys: Vec<[u8; 32]> = data.items.iter().map(content_key).collect();
    let mut assignment = vec![0; data.len()];
    for label in 0..data.labels.len() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.items[i].label == label).collect();
        members.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
        members.shuffle(&mut seed::rng(seed::derive(seed, seed::stream::FOLDS, label as u64)));
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = j % k;
        }
    }
    Ok(assignment)
}

/// k-fold cross-validation; folds train in parallel.
pub fn cross_validate<S: Scalar>(
    data: &LabeledDataset<S>,
    k: usize,
    pool: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CvReport> {
    let assignment = stratified_folds(data, k, seed)?;
    let keys: Vec<[u8; 32]> = data.items.iter().map(content_key).collect();
    let results: Vec<Result<(FoldReport, Vec<(usize, usize)>)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let mut train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != fold).collect();
            train.sort_by(|&a, &b| (data.items[a].label, keys[a]).cmp(&(data.items[b].label, keys[b])));
            let test: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == fold).collect();
            let clf = train_classifier(data, Some(&train), pool, cfg, seed::derive(seed, seed::stream::TRAINING, fold as u64))?;
            let mut hits1 = 0;
            let mut hits3 = 0;
            let mut pairs = Vec::with_capacity(test.len());
            for &i in &test {
                let p = clf.predict(&data.items[i].values)?;
                let top = top_k(&p, 3);
                let y = data.items[i].label;
                hits1 += (top[0] == y) as usize;
                hits3 += top.contains(&y) as usize;
                pairs.push((y, top[0]));
            }
            let n = test.len().max(1) as f64;
            Ok((
                FoldReport {
                    fold,
                    test_items: test.len(),
                    top1: hits1 as f64 / n,
                    top3: hits3 as f64 / n,
                    final_loss: *clf.loss_curve.last().unwrap_or(&f64::NAN),
                },
                pairs,
            ))
        })
        .collect();

    let c = data.labels.len();
    let mut confusion = vec![vec![0u32; c]; c];
    let mut folds = Vec::with_capacity(k);
    let (mut h1, mut h3, mut n) = (0.0, 0.0, 0usize);
    for r in results {
        let (fold, pairs) = r?;
        h1 += fold.top1 * fold.test_items as f64;
        h3 += fold.top3 * fold.test_items as f64;
        n += fold.test_items;
        for (y, p) in pairs {
            confusion[y][p] += 1;
        }
        folds.push(fold);
    }
    Ok(CvReport {
        k,
        labels: data.labels.clone(),
        folds,
        assignment,
        top1: h1 / n as f64,
        top3: h3 / n as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(label: &str, v: Vec<f64>) -> FeatureSequence<f64> {
        FeatureSequence {
            values: v,
            window_ms: 5.0,
            label: Some(label.into()),
        }
    }

    fn dataset(per_label: usize) -> LabeledDataset<f64> {
        let mut s = vec![];
        for (li, l) in ["a", "b", "c"].iter().enumerate() {
            for j in 0..per_label {
                s.push(seq(l, (0..12).map(|t| (li as f64 - 1.0) * 3.0 + j as f64 * 0.001 + t as f64 * 0.01).collect()));
            }
        }
        LabeledDataset::new(s, 12).unwrap()
    }

    #[test]
    fn pads_and_truncates() {
        let d = LabeledDataset::new(vec![seq("x", vec![1.0, 2.0]), seq("y", vec![1.0, 2.0, 3.0, 4.0])], 3).unwrap();
        assert_eq!(d.items[0].values, vec![1.0, 2.0, 2.0]);
        assert_eq!(d.items[0].padded, 1);
        assert_eq!(d.items[1].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(d.labels, vec!["x", "y"]);
        assert!(LabeledDataset::<f64>::new(vec![], 3).is_err());
    }

    #[test]
    fn folds_are_stratified_and_order_free() {
        let d = dataset(150);
        let a = stratified_folds(&d, 5, 9).unwrap();
        for fold in 0..5 {
            for label in 0..3 {
                let n = (0..d.len()).filter(|&i| a[i] == fold && d.items[i].label == label).count();
                assert_eq!(n, 30);
            }
        }
        let mut rev = d.clone();
        rev.items.reverse();
        let b = stratified_folds(&rev, 5, 9).unwrap();
        let n = d.len();
        assert!((0..n).all(|i| a[i] == b[n - 1 - i]));
        assert!(stratified_folds(&dataset(4), 5, 9).is_err());
    }

    #[test]
    fn preprocessing_pools_and_standardizes() {
        let x = [1.0, 3.0, 5.0, 7.0, 9.0];
        let p = Preprocess::fit(&[&x[..]], 2).unwrap();
        let out: Vec<f64> = p.apply(&x);
        assert_eq!(out.len(), 3);
        let mean: f64 = out.iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn cv_on_separable_data() {
        let d = dataset(10);
        let cfg = TrainConfig {
            hidden: 4,
            epochs: 150,
            learning_rate: 0.3,
            batch_size: 4,
            clip_norm: 5.0,
        };
        let r = cross_validate(&d, 5, 3, &cfg, 2).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert!(r.folds.iter().all(|f| f.top3 >= f.top1));
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.confusion.iter().flatten().sum::<u32>(), 30);
        let mut shuffled = d.clone();
        shuffled.items.reverse();
        let r2 = cross_validate(&shuffled, 5, 3, &cfg, 2).unwrap();
        assert_eq!((r.top1, r.top3), (r2.top1, r2.top3));
    }
}
