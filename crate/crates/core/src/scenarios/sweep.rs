use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::web::{pace_burst, Delivery};
use crate::error::{domain, Result};
use crate::seed;
use crate::trace::{TrafficPoint, TrafficTimeline};
use crate::usb::{BulkLimits, FRAME_US};

/// How each sweep burst is put on the wire.
pub type SweepShape = Delivery;

/// Where one sweep burst sits in the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstAnnotation {
    pub size_bytes: u64,
    pub repeat: u32,
    pub start_us: u64,
    /// Conservative end of the burst's service on the bus.
    pub end_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepWorkload {
    pub timeline: TrafficTimeline,
    pub annotations: Vec<BurstAnnotation>,
    pub duration_us: u64,
}

/// Powers of two from 16 B to 4 MiB.
pub fn default_sweep_sizes() -> Vec<u64> {
    (4..=22).map(|p| 1u64 << p).collect()
}

/// Each size is sent `repeats` times, one burst every `gap_ms`, starting one
/// gap into the trace. Bursts start at a random phase within their first
/// frame. The annotated end assumes the victim gets at least half the bus.
pub fn burst_sweep_workload(
    sizes: &[u64],
    repeats: u32,
    gap_ms: u64,
    shape: &SweepShape,
    limits: &BulkLimits,
    seed: u64,
) -> Result<SweepWorkload> {
    if sizes.is_empty() {
        return domain("burst sweep needs at least one size");
    }
    if repeats == 0 || gap_ms == 0 {
        return domain("burst sweep needs repeats > 0 and gap_ms > 0");
    }
    if sizes.contains(&0) {
        return domain("burst sizes must be positive");
    }
    let gap_us = gap_ms * 1000;
    let half_rate = (limits.bytes_per_second / 2).max(1);
    let mut rng = seed::rng(seed::derive(seed, seed::stream::SWEEP, 0));
    let mut points = Vec::new();
    let mut annotations = Vec::new();
    let mut slot = gap_us;
    for &size in sizes {
        for repeat in 0..repeats {
            let start = slot + rng.random_range(0..FRAME_US);
            let burst = match shape {
                Delivery::Instant => vec![TrafficPoint {
                    t_us: start,
                    bytes: size,
                }],
                Delivery::Paced(model) => pace_burst(start, size, model, &mut rng),
            };
            let last = burst.iter().map(|p| p.t_us).max().unwrap_or(start);
            let service = (size * 1_000_000).div_ceil(half_rate);
            annotations.push(BurstAnnotation {
                size_bytes: size,
                repeat,
                start_us: start,
                end_us: last + service + FRAME_US,
            });
            points.extend(burst);
            slot += gap_us;
        }
    }
    points.sort_by_key(|p| p.t_us);
    let duration_us = slot.max(annotations.last().map_or(0, |a| a.end_us + FRAME_US));
    Ok(SweepWorkload {
        timeline: TrafficTimeline { points },
        annotations,
        duration_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_simulation, Workload};
    use crate::usb::{bulk_limits, HubConfig, PayloadSize};

    #[test]
    fn full_sweep_has_95_bursts() {
        let sizes = default_sweep_sizes();
        assert_eq!(sizes.len(), 19);
        assert_eq!((sizes[0], sizes[18]), (16, 4 << 20));
        let w = burst_sweep_workload(&sizes, 5, 1000, &Delivery::default(), &bulk_limits(PayloadSize::MAX), 1)
            .unwrap();
        assert_eq!(w.annotations.len(), 95);
        assert_eq!(w.timeline.total_bytes(), 5 * sizes.iter().sum::<u64>());
        w.timeline.validate().unwrap();
    }

    #[test]
    fn single_burst() {
        let w = burst_sweep_workload(&[4096], 1, 1000, &Delivery::Instant, &bulk_limits(PayloadSize::MAX), 1)
            .unwrap();
        assert_eq!(w.annotations.len(), 1);
        assert_eq!(w.timeline.points.len(), 1);
        assert!((1_000_000..1_001_000).contains(&w.annotations[0].start_us));
    }

    #[test]
    fn empty_sizes_rejected() {
        assert!(burst_sweep_workload(&[], 1, 1000, &Delivery::Instant, &bulk_limits(PayloadSize::MAX), 1).is_err());
    }

    #[test]
    fn annotations_disjoint_and_cover_service() {
        let hub = HubConfig::default();
        let sizes = default_sweep_sizes();
        let w = burst_sweep_workload(&sizes, 2, 1000, &Delivery::default(), &hub.limits(), 4).unwrap();
        for pair in w.annotations.windows(2) {
            assert!(pair[0].end_us <= pair[1].start_us, "{pair:?}");
        }
        // Every elevated spy delay lies inside some annotated window.
        let bundle = run_simulation(&hub, &Workload::web(&w.timeline, 0), w.duration_us, 9).unwrap();
        for r in &bundle.spy.records {
            if r.delay_us > 125 {
                assert!(
                    w.annotations.iter().any(|a| r.t_us >= a.start_us && r.t_us <= a.end_us),
                    "delay {} at {} outside annotations",
                    r.delay_us,
                    r.t_us
                );
            }
        }
    }
}
