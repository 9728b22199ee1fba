use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::sim::TraceBundle;
use crate::trace::SpyTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanitizeConfig {
    /// Traces shorter than this fraction of their scenario's median record
    /// count are rejected.
    pub min_length_fraction: f64,
    /// Traces whose delay standard deviation is below this fraction of their
    /// median delay are rejected.
    pub stddev_floor_fraction: f64,
}

impl Default for SanitizeConfig {
    fn default() -> Self {
        SanitizeConfig {
            min_length_fraction: 0.5,
            stddev_floor_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    Short,
    NoDeviation,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Short => "short",
            RejectReason::NoDeviation => "no deviation",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sanitized {
    /// Indices into the input, in input order.
    pub kept: Vec<usize>,
    pub rejected: Vec<Rejection>,
}

impl AsRef<SpyTrace> for SpyTrace {
    fn as_ref(&self) -> &SpyTrace {
        self
    }
}

impl AsRef<SpyTrace> for TraceBundle {
    fn as_ref(&self) -> &SpyTrace {
        &self.spy
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The per-trace statistics sanitization looks at, so large datasets can
/// be screened without keeping every trace in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub scenario: String,
    pub records: usize,
    pub delay_stddev_us: f64,
    pub delay_median_us: f64,
}

impl TraceSummary {
    pub fn of(t: &SpyTrace) -> Self {
        let mut d: Vec<f64> = t.delays_us().map(|d| d as f64).collect();
        let n = d.len().max(1) as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        TraceSummary {
            scenario: t.meta.scenario.clone(),
            records: t.len(),
            delay_stddev_us: sd,
            delay_median_us: median(&mut d),
        }
    }
}

/// Drops truncated and flat traces. Length medians are taken per
/// `meta.scenario`.
pub fn sanitize_traces<T: AsRef<SpyTrace>>(traces: &[T], config: &SanitizeConfig) -> Result<Sanitized> {
    let summaries: Vec<TraceSummary> = traces.iter().map(|t| TraceSummary::of(t.as_ref())).collect();
    sanitize_summaries(&summaries, config)
}

pub fn sanitize_summaries(traces: &[TraceSummary], config: &SanitizeConfig) -> Result<Sanitized> {
    if traces.is_empty() {
        return domain("cannot sanitize an empty dataset");
    }
    let mut lengths: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in traces {
        lengths.entry(t.scenario.as_str()).or_default().push(t.records as f64);
    }
    let medians: BTreeMap<&str, f64> = lengths.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect();

    let mut out = Sanitized::default();
    for (index, t) in traces.iter().enumerate() {
        let med_len = medians[t.scenario.as_str()];
        let reason = if (t.records as f64) < config.min_length_fraction * med_len || t.records == 0 {
            Some(RejectReason::Short)
        } else {
            (t.delay_stddev_us <= config.stddev_floor_fraction * t.delay_median_us).then_some(RejectReason::NoDeviation)
        };
        match reason {
            Some(reason) => out.rejected.push(Rejection { index, reason }),
            None => out.kept.push(index),
        }
    }
    Ok(out)
}
