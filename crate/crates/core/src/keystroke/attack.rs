use serde::{Deserialize, Serialize};

use super::detect::{detect_key_events, detection_score, infer_labels, label_events, DetectionScore, DetectorConfig, LabelReport};
use super::hmm::extract_digram_latencies;
use crate::error::Result;
use crate::sim::{run_simulation, TraceBundle, Workload};
use crate::trace::{KeyAction, KeyEventTrace};
use crate::usb::{HubConfig, FRAME_US};

/// Spy trace time after the last key event.
const TAIL_US: u64 = 200 * FRAME_US;

/// What the attacker recovers from one typed word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeObservation {
    pub bundle: TraceBundle,
    pub estimates_us: Vec<u64>,
    pub labels: Vec<KeyAction>,
    pub press_times_us: Vec<u64>,
    /// Press-to-press latencies; empty when fewer than two presses were seen.
    pub latencies_ms: Vec<f64>,
}

impl KeystrokeObservation {
    pub fn label_report(&self, detector: &DetectorConfig) -> LabelReport {
        label_events(&self.estimates_us, self.truth(), detector)
    }

    pub fn detection(&self, tolerance_ms: f64) -> DetectionScore {
        detection_score(&self.estimates_us, self.truth(), tolerance_ms)
    }

    fn truth(&self) -> &KeyEventTrace {
        self.bundle.key_truth.as_ref().expect("keystroke bundles carry truth")
    }
}

/// Simulates the spy while `keys` are typed, then runs detection, labeling
/// and latency extraction.
pub fn observe_keystrokes(
    hub: &HubConfig,
    keys: &KeyEventTrace,
    detector: &DetectorConfig,
    jitter_us: u64,
    seed: u64,
) -> Result<KeystrokeObservation> {
    let end = keys.events.iter().map(|e| e.t_us).max().unwrap_or(0);
    let workload = Workload::keystroke(keys, jitter_us);
    let bundle = run_simulation(hub, &workload, end + TAIL_US, seed)?;
    let estimates_us = detect_key_events(&bundle.spy, detector)?;
    let labels = infer_labels(&estimates_us, detector);
    let press_times_us: Vec<u64> = estimates_us
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == KeyAction::Press)
        .map(|(t, _)| *t)
        .collect();
    let latencies_ms = extract_digram_latencies(&press_times_us).unwrap_or_default();
    Ok(KeystrokeObservation {
        bundle,
        estimates_us,
        labels,
        press_times_us,
        latencies_ms,
    })
}
