use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;
use crate::scenarios::BurstAnnotation;
use crate::trace::{SpyTrace, TrafficTimeline};

pub const DEFAULT_WINDOW_MS: f64 = 5.0;

/// Per-window maximum spy delay, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureSequence<S: Scalar> {
    pub values: Vec<S>,
    pub window_ms: f64,
    #[serde(default)]
    pub label: Option<String>,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

fn window_us(window_ms: f64) -> Result<u64> {
    if !(window_ms > 0.0) {
        return domain(format!("window must be positive, got {window_ms} ms"));
    }
    Ok(((window_ms * 1000.0).round() as u64).max(1))
}

/// Windows start at t = 0 and run through the last record.
pub fn featurize<S: Scalar>(spy: &SpyTrace, window_ms: f64) -> Result<FeatureSequence<S>> {
    let w = window_us(window_ms)?;
    if spy.is_empty() {
        return domain("cannot featurize an empty trace");
    }
    let n = (spy.end_us() / w) as usize + 1;
    featurize_len(spy, window_ms, n)
}

/// Like [`featurize`] but with exactly `n_windows` windows; records past the
/// last window are ignored.
pub fn featurize_len<S: Scalar>(spy: &SpyTrace, window_ms: f64, n_windows: usize) -> Result<FeatureSequence<S>> {
    let w = window_us(window_ms)?;
    if spy.is_empty() {
        return domain("cannot featurize an empty trace");
    }
    let mut delays: Vec<u64> = spy.delays_us().collect();
    delays.sort_unstable();
    let baseline = delays[delays.len() / 2];
    let mut max: Vec<Option<u64>> = vec![None; n_windows];
    for r in &spy.records {
        let i = (r.t_us / w) as usize;
        if i < n_windows {
            max[i] = Some(max[i].map_or(r.delay_us, |m| m.max(r.delay_us)));
        }
    }
    Ok(FeatureSequence {
        values: max
            .into_iter()
            .map(|m| S::of(m.unwrap_or(baseline) as f64 / 1000.0))
            .collect(),
        window_ms,
        label: None,
    })
}

/// Truth bytes per window, aligned with [`featurize`] windows.
pub fn bin_truth(truth: &TrafficTimeline, window_ms: f64, n_windows: usize) -> Result<Vec<f64>> {
    Ok(truth.binned(window_us(window_ms)?, n_windows))
}

/// Pearson correlation, or `None` when either series is constant.
pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<Option<S>> {
    if x.len() != y.len() {
        return domain(format!("series lengths differ: {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Ok(None);
    }
    let n = S::of(x.len() as f64);
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let (mut sxy, mut sxx, mut syy) = (S::zero(), S::zero(), S::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= S::zero() || syy <= S::zero() {
        return Ok(None);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(Some(r.max(-S::one()).min(S::one())))
}

/// Correlation between spy features and the truth binned to the same
/// windows.
pub fn correlate<S: Scalar>(features: &FeatureSequence<S>, truth: &TrafficTimeline) -> Result<Option<S>> {
    let bins: Vec<S> = bin_truth(truth, features.window_ms, features.len())?
        .into_iter()
        .map(S::of)
        .collect();
    pearson(&features.values, &bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstDetectConfig {
    /// Detection threshold above the idle baseline, in idle median absolute
    /// deviations.
    pub mad_multiplier: f64,
    /// Lower bound on the threshold, in milliseconds.
    pub min_threshold_ms: f64,
}

impl Default for BurstDetectConfig {
    fn default() -> Self {
        BurstDetectConfig {
            mad_multiplier: 3.0,
            min_threshold_ms: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDetection {
    pub size_bytes: u64,
    pub detected: u32,
    pub bursts: u32,
}

impl SizeDetection {
    pub fn rate(&self) -> f64 {
        if self.bursts == 0 {
            0.0
        } else {
            self.detected as f64 / self.bursts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstDetection {
    pub baseline_ms: f64,
    pub threshold_ms: f64,
    /// Ascending by size.
    pub per_size: Vec<SizeDetection>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A burst counts as detected when a window overlapping its annotation
/// exceeds the idle baseline by the threshold. Idle windows are those
/// overlapping no annotation.
pub fn detect_bursts<S: Scalar>(
    features: &FeatureSequence<S>,
    annotations: &[BurstAnnotation],
    cfg: &BurstDetectConfig,
) -> Result<BurstDetection> {
    let w = window_us(features.window_ms)?;
    let n = features.len();
    let window_range = |a: &BurstAnnotation| {
        let lo = (a.start_us / w) as usize;
        let hi = ((a.end_us / w) as usize).min(n.saturating_sub(1));
        lo..=hi
    };
    let mut busy = vec![false; n];
    for a in annotations {
        if (a.start_us / w) as usize >= n {
            return domain(format!("burst at {} us lies past the trace", a.start_us));
        }
        for i in window_range(a) {
            busy[i] = true;
        }
    }
    let mut idle: Vec<f64> = (0..n)
        .filter(|&i| !busy[i])
        .map(|i| features.values[i].to_f64_lossy())
        .collect();
    if idle.is_empty() {
        return domain("no idle windows to estimate the baseline");
    }
    let baseline = median(&mut idle);
    let mut dev: Vec<f64> = idle.iter().map(|v| (v - baseline).abs()).collect();
    let threshold = (cfg.mad_multiplier * median(&mut dev)).max(cfg.min_threshold_ms);

    let mut per: BTreeMap<u64, SizeDetection> = BTreeMap::new();
    for a in annotations {
        let hit = window_range(a).any(|i| features.values[i].to_f64_lossy() > baseline + threshold);
        let e = per.entry(a.size_bytes).or_insert(SizeDetection {
            size_bytes: a.size_bytes,
            detected: 0,
            bursts: 0,
        });
        e.bursts += 1;
        e.detected += hit as u32;
    }
    Ok(BurstDetection {
        baseline_ms: baseline,
        threshold_ms: threshold,
        per_size: per.into_values().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{SpyRecord, TrafficPoint};

    fn spy(pairs: &[(u64, u64)]) -> SpyTrace {
        SpyTrace {
            records: pairs.iter().map(|&(t_us, delay_us)| SpyRecord { t_us, delay_us }).collect(),
            meta: Default::default(),
        }
    }

    #[test]
    fn window_max() {
        let t = spy(&[(0, 1000), (2000, 5000), (6000, 2000)]);
        let f: FeatureSequence<f64> = featurize(&t, 5.0).unwrap();
        assert_eq!(f.values, vec![5.0, 2.0]);
        assert!(featurize::<f64>(&t, 0.0).is_err());
        assert!(featurize::<f64>(&t, -5.0).is_err());
    }

    #[test]
    fn uniform_delays_give_constant_features() {
        let recs: Vec<(u64, u64)> = (0..100).map(|i| (i * 1000, 1000)).collect();
        let f: FeatureSequence<f32> = featurize(&spy(&recs), 5.0).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_windows_take_the_baseline() {
        let t = spy(&[(0, 1000), (1000, 1000), (12_000, 3000)]);
        let f: FeatureSequence<f64> = featurize(&t, 5.0).unwrap();
        assert_eq!(f.values, vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn pearson_identities() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let aff: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&aff, &x).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[3.0; 5]).unwrap(), None);
        assert!(pearson(&x, &[1.0]).is_err());
    }

    #[test]
    fn correlate_against_binned_truth() {
        let t = spy(&[(0, 125), (5000, 250), (10_000, 125), (15_000, 250)]);
        let f: FeatureSequence<f64> = featurize(&t, 5.0).unwrap();
        let truth = TrafficTimeline {
            points: vec![
                TrafficPoint { t_us: 5100, bytes: 3000 },
                TrafficPoint { t_us: 15_100, bytes: 3000 },
            ],
        };
        assert!((correlate(&f, &truth).unwrap().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn burst_detection_rates() {
        let mut recs: Vec<(u64, u64)> = (0..800).map(|i| (i * 125, 125 + (i % 3) * 10)).collect();
        recs[400].1 = 250;
        let f: FeatureSequence<f64> = featurize(&spy(&recs), 5.0).unwrap();
        let ann = [
            BurstAnnotation { size_bytes: 64, repeat: 0, start_us: 20_000, end_us: 30_000 },
            BurstAnnotation { size_bytes: 4096, repeat: 0, start_us: 45_000, end_us: 55_000 },
        ];
        let d = detect_bursts(&f, &ann, &BurstDetectConfig::default()).unwrap();
        assert_eq!(d.per_size[0].detected, 0);
        assert_eq!(d.per_size[1].detected, 1);
        assert_eq!(d.baseline_ms, 0.145);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn record_order_within_window_is_irrelevant(
                delays in proptest::collection::vec(100u64..5000, 10..200), rot in 0usize..5) {
                let recs: Vec<(u64, u64)> = delays.iter().enumerate().map(|(i, &d)| (i as u64 * 500, d)).collect();
                let a: FeatureSequence<f64> = featurize(&spy(&recs), 5.0).unwrap();
                // Permute delays within each 10-record window.
                let mut permuted = recs.clone();
                for chunk in permuted.chunks_mut(10) {
                    let mut ds: Vec<u64> = chunk.iter().map(|r| r.1).collect();
                    let k = rot % ds.len();
                    ds.rotate_left(k);
                    for (r, d) in chunk.iter_mut().zip(ds) { r.1 = d; }
                }
                let b: FeatureSequence<f64> = featurize(&spy(&permuted), 5.0).unwrap();
                prop_assert_eq!(&a.values, &b.values);
                let again: FeatureSequence<f64> = featurize(&spy(&recs), 5.0).unwrap();
                prop_assert_eq!(a, again);
            }

            #[test]
            fn pearson_symmetric_and_affine_invariant(
                xy in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
                scale in 0.1f64..10.0, shift in -50.0f64..50.0) {
                let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
                let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
                let r = pearson(&x, &y).unwrap();
                prop_assert_eq!(r, pearson(&y, &x).unwrap());
                let xs: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                if let (Some(a), Some(b)) = (r, pearson(&xs, &y).unwrap()) {
                    prop_assert!((a - b).abs() < 1e-9);
                    prop_assert!((-1.0..=1.0).contains(&a));
                }
            }
        }
    }
}
