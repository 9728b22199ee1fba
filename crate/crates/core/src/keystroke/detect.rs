use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::trace::{KeyAction, KeyEventTrace, SpyTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Spy delays at or above this mark a key event.
    pub event_threshold_ms: f64,
    /// A release following a press closer than this is read as an
    /// overlapping keystroke.
    pub overlap_threshold_ms: f64,
    /// Detections closer than this collapse into one event.
    pub merge_window_ms: f64,
    /// When set, detections with no other detection within this window are
    /// discarded as noise.
    #[serde(default)]
    pub companion_window_ms: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            event_threshold_ms: 1.8,
            overlap_threshold_ms: 50.0,
            merge_window_ms: 0.5,
            companion_window_ms: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.event_threshold_ms > 0.0 && self.overlap_threshold_ms > 0.0 && self.merge_window_ms > 0.0) {
            return domain("detector thresholds must be positive");
        }
        if self.overlap_threshold_ms <= self.event_threshold_ms {
            return domain("overlap threshold must exceed the event threshold");
        }
        if matches!(self.companion_window_ms, Some(w) if !(w > 0.0)) {
            return domain("companion window must be positive");
        }
        Ok(())
    }
}

fn ms_to_us(ms: f64) -> f64 {
    ms * 1000.0
}

/// Timestamps (µs) of spy records whose delay crosses the event threshold,
/// after merging and optional isolated-spike removal.
pub fn detect_key_events(spy: &SpyTrace, cfg: &DetectorConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    if spy.is_empty() {
        return domain("cannot detect events in an empty trace");
    }
    let threshold = ms_to_us(cfg.event_threshold_ms);
    let hits: Vec<u64> = spy
        .records
        .iter()
        .filter(|r| r.delay_us as f64 >= threshold)
        .map(|r| r.t_us)
        .collect();

    let merge = ms_to_us(cfg.merge_window_ms);
    let mut merged: Vec<u64> = Vec::with_capacity(hits.len());
    let mut last_hit = None;
    for t in hits {
        match last_hit {
            Some(prev) if (t - prev) as f64 <= merge => {}
            _ => merged.push(t),
        }
        last_hit = Some(t);
    }

    let Some(window) = cfg.companion_window_ms.map(ms_to_us) else {
        return Ok(merged);
    };
    let keep = |i: usize| {
        let near = |j: usize| (merged[i] as f64 - merged[j] as f64).abs() <= window;
        (i > 0 && near(i - 1)) || (i + 1 < merged.len() && near(i + 1))
    };
    Ok((0..merged.len()).filter(|&i| keep(i)).map(|i| merged[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub detected: usize,
    pub actual: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Matches detections to truth events one-to-one. A detection matches a
/// truth event when it lies within `[truth, truth + tolerance]`; the spy
/// sees an event no earlier than it happens.
pub fn detection_score(estimates: &[u64], truth: &KeyEventTrace, tolerance_ms: f64) -> DetectionScore {
    let mut truth_t: Vec<u64> = truth.events.iter().map(|e| e.t_us).collect();
    truth_t.sort_unstable();
    let tol = ms_to_us(tolerance_ms).round() as u64;
    let mut used = vec![false; truth_t.len()];
    let mut tp = 0;
    let mut lo = 0;
    for &e in estimates {
        while lo < truth_t.len() && truth_t[lo] + tol < e {
            lo += 1;
        }
        if let Some(j) = (lo..truth_t.len()).take_while(|&j| truth_t[j] <= e).find(|&j| !used[j]) {
            used[j] = true;
            tp += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, estimates.len());
    let recall = ratio(tp, truth_t.len());
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    DetectionScore {
        true_positives: tp,
        detected: estimates.len(),
        actual: truth_t.len(),
        precision,
        recall,
        f1,
    }
}

/// Press/release labels inferred from detection times alone.
///
/// Events alternate press, release. A release followed by a press sooner
/// than the overlap threshold is read as an overlapping keystroke: the pair
/// is swapped so the later key's press comes first.
pub fn infer_labels(estimates: &[u64], cfg: &DetectorConfig) -> Vec<KeyAction> {
    let overlap = ms_to_us(cfg.overlap_threshold_ms);
    let mut labels: Vec<KeyAction> = (0..estimates.len())
        .map(|i| if i % 2 == 0 { KeyAction::Press } else { KeyAction::Release })
        .collect();
    let mut i = 1;
    while i + 1 < estimates.len() {
        if labels[i] == KeyAction::Release && ((estimates[i + 1] - estimates[i]) as f64) < overlap {
            labels.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub t_us: u64,
    pub label: KeyAction,
    /// Index into the truth trace's events of the nearest truth event.
    pub truth: Option<usize>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub events: Vec<LabeledEvent>,
    /// Correct labels over the larger of the estimate and truth counts.
    pub accuracy: f64,
    pub overlaps_flagged: usize,
    /// No estimates were supplied.
    pub empty: bool,
}

/// Labels detections and scores them against the nearest truth events.
pub fn label_events(estimates: &[u64], truth: &KeyEventTrace, cfg: &DetectorConfig) -> LabelReport {
    if estimates.is_empty() {
        return LabelReport {
            events: vec![],
            accuracy: 0.0,
            overlaps_flagged: 0,
            empty: true,
        };
    }
    let labels = infer_labels(estimates, cfg);
    let overlaps_flagged = labels
        .windows(2)
        .enumerate()
        .filter(|(i, w)| i % 2 == 0 && w[0] == KeyAction::Press && w[1] == KeyAction::Press)
        .count();
    let mut used = vec![false; truth.events.len()];
    let mut correct_n = 0;
    let events: Vec<LabeledEvent> = estimates
        .iter()
        .zip(&labels)
        .map(|(&t, &label)| {
            let nearest = (0..truth.events.len())
                .filter(|&j| !used[j])
                .min_by_key(|&j| (truth.events[j].t_us.abs_diff(t), j));
            let correct = nearest.is_some_and(|j| truth.events[j].action == label);
            if let Some(j) = nearest {
                used[j] = true;
            }
            correct_n += correct as usize;
            LabeledEvent {
                t_us: t,
                label,
                truth: nearest,
                correct,
            }
        })
        .collect();
    LabelReport {
        events,
        accuracy: correct_n as f64 / estimates.len().max(truth.events.len()) as f64,
        overlaps_flagged,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{KeyEvent, SpyRecord};

    fn spy(delays_ms: &[f64]) -> SpyTrace {
        SpyTrace {
            records: delays_ms
                .iter()
                .enumerate()
                .map(|(i, d)| SpyRecord {
                    t_us: 1000 * (i as u64 + 1),
                    delay_us: (d * 1000.0) as u64,
                })
                .collect(),
            meta: Default::default(),
        }
    }

    #[test]
    fn single_crossing() {
        let t = spy(&[1.0, 1.0, 2.1, 1.0]);
        assert_eq!(detect_key_events(&t, &DetectorConfig::default()).unwrap(), vec![3000]);
    }

    #[test]
    fn flat_trace_has_no_events() {
        let t = spy(&[1.0; 50]);
        assert!(detect_key_events(&t, &DetectorConfig::default()).unwrap().is_empty());
        assert!(detect_key_events(&spy(&[]), &DetectorConfig::default()).is_err());
    }

    #[test]
    fn merge_window_collapses_neighbours() {
        let t = spy(&[1.0, 2.0, 2.0, 1.0]);
        let cfg = DetectorConfig {
            merge_window_ms: 3.0,
            ..DetectorConfig::default()
        };
        assert_eq!(detect_key_events(&t, &cfg).unwrap(), vec![2000]);
        assert_eq!(detect_key_events(&t, &DetectorConfig::default()).unwrap(), vec![2000, 3000]);
    }

    #[test]
    fn companion_rule_drops_isolated_spikes() {
        let mut d = vec![1.0; 200];
        d[10] = 2.0;
        d[100] = 2.0;
        d[120] = 2.0;
        let cfg = DetectorConfig {
            companion_window_ms: Some(50.0),
            ..DetectorConfig::default()
        };
        assert_eq!(detect_key_events(&spy(&d), &cfg).unwrap(), vec![101_000, 121_000]);
    }

    fn keys(spec: &[(u64, KeyAction, usize)], word: &str) -> KeyEventTrace {
        let chars: Vec<char> = word.chars().collect();
        KeyEventTrace {
            events: spec
                .iter()
                .map(|&(t, action, index)| KeyEvent {
                    t_us: t,
                    action,
                    ch: chars[index],
                    index,
                })
                .collect(),
            word: word.into(),
        }
    }

    #[test]
    fn overlap_swap_rule() {
        use KeyAction::*;
        // a down, b down 200 ms later, a up 20 ms after that, b up, c down/up.
        let truth = keys(
            &[
                (0, Press, 0),
                (200_000, Press, 1),
                (220_000, Release, 0),
                (290_000, Release, 1),
                (500_000, Press, 2),
                (580_000, Release, 2),
            ],
            "abc",
        );
        let est: Vec<u64> = truth.events.iter().map(|e| e.t_us + 1000).collect();
        let r = label_events(&est, &truth, &DetectorConfig::default());
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.overlaps_flagged, 1);
        let labels: Vec<KeyAction> = r.events.iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![Press, Press, Release, Release, Press, Release]);
    }

    #[test]
    fn empty_estimates_are_flagged() {
        let truth = keys(&[(0, KeyAction::Press, 0), (90_000, KeyAction::Release, 0)], "a");
        let r = label_events(&[], &truth, &DetectorConfig::default());
        assert!(r.empty);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn score_counts_late_detections_only() {
        let truth = keys(&[(5000, KeyAction::Press, 0), (90_000, KeyAction::Release, 0)], "a");
        let s = detection_score(&[6000, 89_000, 200_000], &truth, 1.5);
        assert_eq!(s.true_positives, 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }
}
