//! Observed and ground-truth timelines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One spy completion: timestamp and time since the previous completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpyRecord {
    pub t_us: u64,
    pub delay_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub seed: u64,
    pub hub_digest: String,
    pub jitter_us: u64,
    /// Extra `key=value` pairs carried through the trace header.
    pub extra: Vec<(String, String)>,
}

/// Inter-completion delays observed by the spy device.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpyTrace {
    pub records: Vec<SpyRecord>,
    pub meta: TraceMeta,
}

impl SpyTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Time of the unrecorded baseline completion preceding the first record.
    pub fn start_us(&self) -> u64 {
        self.records
            .first()
            .map(|r| r.t_us - r.delay_us)
            .unwrap_or(0)
    }

    pub fn end_us(&self) -> u64 {
        self.records.last().map(|r| r.t_us).unwrap_or(0)
    }

    pub fn delays_us(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.delay_us)
    }

    /// Checks the record invariants: strictly increasing timestamps, positive
    /// delays, and delays equal to consecutive timestamp differences.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.delay_us == 0 {
                return Err(Error::Domain(format!("record {i} has zero delay")));
            }
            if r.delay_us > r.t_us {
                return Err(Error::Domain(format!("record {i} delay precedes time zero")));
            }
            if i > 0 {
                let prev = self.records[i - 1].t_us;
                if r.t_us <= prev || r.t_us - prev != r.delay_us {
                    return Err(Error::Domain(format!(
                        "record {i} inconsistent with predecessor ({prev} -> {} / {})",
                        r.t_us, r.delay_us
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyAction {
    Press,
    Release,
}

impl KeyAction {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyAction::Press => "press",
            KeyAction::Release => "release",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub t_us: u64,
    pub action: KeyAction,
    pub ch: char,
    /// Position of the keystroke within the typed word.
    pub index: usize,
}

/// Ground-truth key events for one typed word, in time order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyEventTrace {
    pub events: Vec<KeyEvent>,
    pub word: String,
}

impl KeyEventTrace {
    pub fn presses(&self) -> impl Iterator<Item = &KeyEvent> {
        self.events.iter().filter(|e| e.action == KeyAction::Press)
    }

    pub fn press_times_us(&self) -> Vec<u64> {
        let mut p: Vec<&KeyEvent> = self.presses().collect();
        p.sort_by_key(|e| e.index);
        p.iter().map(|e| e.t_us).collect()
    }

    /// Number of keystrokes whose press precedes the previous key's release.
    pub fn overlap_count(&self) -> usize {
        let n = self.word.chars().count();
        let mut press = vec![0u64; n];
        let mut release = vec![0u64; n];
        for e in &self.events {
            match e.action {
                KeyAction::Press => press[e.index] = e.t_us,
                KeyAction::Release => release[e.index] = e.t_us,
            }
        }
        (1..n).filter(|&i| press[i] < release[i - 1]).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.word.chars().count();
        if self.events.len() != 2 * n {
            return Err(Error::Domain(format!(
                "expected {} events for {n} keystrokes, found {}",
                2 * n,
                self.events.len()
            )));
        }
        let chars: Vec<char> = self.word.chars().collect();
        let mut press: Vec<Option<u64>> = vec![None; n];
        for w in self.events.windows(2) {
            if w[1].t_us < w[0].t_us {
                return Err(Error::Domain("key events out of time order".into()));
            }
        }
        for e in &self.events {
            if e.index >= n || chars[e.index] != e.ch {
                return Err(Error::Domain(format!("event {e:?} does not match word")));
            }
            match e.action {
                KeyAction::Press => press[e.index] = Some(e.t_us),
                KeyAction::Release => match press[e.index] {
                    Some(p) if p < e.t_us => {}
                    _ => {
                        return Err(Error::Domain(format!(
                            "release of key {} without earlier press",
                            e.index
                        )))
                    }
                },
            }
        }
        let times: Vec<u64> = press.iter().map(|p| p.unwrap_or(0)).collect();
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("presses not in word order".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficPoint {
    pub t_us: u64,
    pub bytes: u64,
}

/// Victim byte volume over time, e.g. packets received by a network adapter.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficTimeline {
    pub points: Vec<TrafficPoint>,
}

impl TrafficTimeline {
    pub fn total_bytes(&self) -> u64 {
        self.points.iter().map(|p| p.bytes).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| p.bytes == 0) {
            return Err(Error::Domain("traffic point with zero bytes".into()));
        }
        if self.points.windows(2).any(|w| w[1].t_us < w[0].t_us) {
            return Err(Error::Domain("traffic timestamps decrease".into()));
        }
        Ok(())
    }

    /// Sum of bytes per `window_us` window over `[0, n_windows * window_us)`.
    pub fn binned(&self, window_us: u64, n_windows: usize) -> Vec<f64> {
        let mut bins = vec![0.0; n_windows];
        for p in &self.points {
            let i = (p.t_us / window_us) as usize;
            if i < n_windows {
                bins[i] += p.bytes as f64;
            }
        }
        bins
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spy_trace_validation() {
        let ok = SpyTrace {
            records: vec![
                SpyRecord { t_us: 1000, delay_us: 1000 },
                SpyRecord { t_us: 3000, delay_us: 2000 },
            ],
            meta: TraceMeta::default(),
        };
        ok.validate().unwrap();
        assert_eq!(ok.start_us(), 0);
        let mut bad = ok.clone();
        bad.records[1].delay_us = 1500;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn binning_sums_per_window() {
        let tl = TrafficTimeline {
            points: vec![
                TrafficPoint { t_us: 0, bytes: 10 },
                TrafficPoint { t_us: 4999, bytes: 5 },
                TrafficPoint { t_us: 5000, bytes: 7 },
                TrafficPoint { t_us: 99_000, bytes: 1 },
            ],
        };
        assert_eq!(tl.binned(5000, 3), vec![15.0, 7.0, 0.0]);
    }
}
