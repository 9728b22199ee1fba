use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::seed::{self, Rng};
use crate::trace::{TrafficPoint, TrafficTimeline};

/// Paced TCP-like delivery of a burst to the victim's network adapter.
///
/// The burst is cut into `mss_bytes` segments sent in rounds. Round `i`
/// carries up to `initial_window * 2^i` segments, spaced evenly so that a
/// full round spans one `rtt_us`, but never faster than the bottleneck rate.
/// Each segment's arrival gets uniform jitter in `[0, jitter_us]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacingModel {
    pub mss_bytes: u32,
    pub initial_window: u32,
    pub rtt_us: u64,
    pub bottleneck_bytes_per_sec: u64,
    pub jitter_us: u64,
}

impl Default for PacingModel {
    fn default() -> Self {
        PacingModel {
            mss_bytes: 1448,
            initial_window: 10,
            rtt_us: 5000,
            bottleneck_bytes_per_sec: 25_000_000,
            jitter_us: 90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delivery {
    /// The whole burst is one timeline point.
    Instant,
    Paced(PacingModel),
}

impl Default for Delivery {
    fn default() -> Self {
        Delivery::Paced(PacingModel::default())
    }
}

impl Delivery {
    fn pacing(&self) -> Option<PacingModel> {
        match self {
            Delivery::Instant => None,
            Delivery::Paced(p) => Some(*p),
        }
    }
}

/// Packet arrivals for one burst starting at `start_us`.
pub fn pace_burst(start_us: u64, bytes: u64, model: &PacingModel, rng: &mut Rng) -> Vec<TrafficPoint> {
    let mss = model.mss_bytes.max(1) as u64;
    let max_rate = model.bottleneck_bytes_per_sec as f64 / 1e6;
    let mut out = Vec::with_capacity(bytes.div_ceil(mss) as usize);
    let mut remaining = bytes;
    let mut round_start = start_us as f64;
    let mut cwnd = model.initial_window.max(1) as u64;
    while remaining > 0 {
        let segs = cwnd.min(remaining.div_ceil(mss));
        let rate = (cwnd as f64 * mss as f64 / model.rtt_us.max(1) as f64).min(max_rate);
        let gap = mss as f64 / rate;
        for s in 0..segs {
            let b = remaining.min(mss);
            remaining -= b;
            let jitter = if model.jitter_us > 0 {
                rng.random_range(0..=model.jitter_us)
            } else {
                0
            };
            let t = (round_start + s as f64 * gap).round() as u64 + jitter;
            out.push(TrafficPoint { t_us: t, bytes: b });
        }
        round_start += (model.rtt_us as f64).max(segs as f64 * gap);
        cwnd = cwnd.saturating_mul(2);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstTemplate {
    pub offset_ms: f64,
    pub size_bytes: u64,
}

/// Traffic shape of one website load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub label: String,
    pub bursts: Vec<BurstTemplate>,
    /// Per-load standard deviation of each burst's start.
    #[serde(default)]
    pub offset_jitter_ms: f64,
    /// Per-load log-normal sigma applied to each burst's size.
    #[serde(default)]
    pub size_jitter: f64,
    /// Bounds on the total bytes of one load; sampled sizes are rescaled
    /// into this range.
    pub total_bytes: (u64, u64),
    #[serde(default)]
    pub delivery: Delivery,
}

/// Template knobs for synthetic site corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteCorpusParams {
    pub bursts: (usize, usize),
    /// First burst start: the page load begins here.
    pub first_offset_ms: (f64, f64),
    /// Remaining bursts start uniformly within this span.
    pub span_ms: (f64, f64),
    pub size_bytes: (u64, u64),
    pub offset_jitter_ms: f64,
    pub size_jitter: f64,
    pub pacing: PacingModel,
}

impl Default for SiteCorpusParams {
    fn default() -> Self {
        SiteCorpusParams {
            bursts: (3, 7),
            first_offset_ms: (1000.0, 1200.0),
            span_ms: (1300.0, 7200.0),
            size_bytes: (256 * 1024, 3 * 1024 * 1024),
            offset_jitter_ms: 30.0,
            size_jitter: 0.15,
            pacing: PacingModel::default(),
        }
    }
}

impl SiteProfile {
    /// Fixed single burst with no per-load variation.
    pub fn fixed(label: &str, offset_ms: f64, size_bytes: u64, delivery: Delivery) -> Self {
        SiteProfile {
            label: label.into(),
            bursts: vec![BurstTemplate {
                offset_ms,
                size_bytes,
            }],
            offset_jitter_ms: 0.0,
            size_jitter: 0.0,
            total_bytes: (size_bytes, size_bytes),
            delivery,
        }
    }

    /// Seeded site template number `index`.
    pub fn synthetic(index: usize, params: &SiteCorpusParams, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, seed::stream::SITE_TEMPLATE, index as u64));
        let n = rng.random_range(params.bursts.0..=params.bursts.1);
        let (lo, hi) = (params.size_bytes.0 as f64, params.size_bytes.1 as f64);
        let size = |rng: &mut Rng| (lo * (hi / lo).powf(rng.random::<f64>())).round() as u64;
        let mut bursts = vec![BurstTemplate {
            offset_ms: rng.random_range(params.first_offset_ms.0..params.first_offset_ms.1),
            size_bytes: size(&mut rng),
        }];
        for _ in 1..n {
            bursts.push(BurstTemplate {
                offset_ms: rng.random_range(params.span_ms.0..params.span_ms.1),
                size_bytes: size(&mut rng),
            });
        }
        bursts.sort_by(|a, b| a.offset_ms.total_cmp(&b.offset_ms));
        let total: u64 = bursts.iter().map(|b| b.size_bytes).sum();
        SiteProfile {
            label: format!("site{index:03}"),
            bursts,
            offset_jitter_ms: params.offset_jitter_ms,
            size_jitter: params.size_jitter,
            total_bytes: (total / 2, total * 2),
            delivery: Delivery::Paced(params.pacing),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bursts.iter().any(|b| b.size_bytes == 0) {
            return domain(format!("site {} has an empty burst", self.label));
        }
        if self.bursts.iter().any(|b| !(b.offset_ms >= 0.0)) {
            return domain(format!("site {} has a negative burst offset", self.label));
        }
        if self.total_bytes.0 > self.total_bytes.1 {
            return domain(format!("site {} has an inverted byte range", self.label));
        }
        Ok(())
    }
}

/// Samples one page load of `site`. Points at or past `duration_us` are
/// dropped.
pub fn gen_web_traffic(site: &SiteProfile, duration_us: u64, seed: u64) -> Result<TrafficTimeline> {
    site.validate()?;
    if let Some(b) = site.bursts.iter().find(|b| (b.offset_ms * 1000.0) as u64 >= duration_us) {
        return domain(format!(
            "burst at {} ms lies outside the {} us trace",
            b.offset_ms, duration_us
        ));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::SITE_TRIAL, 0));
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sampled: Vec<(u64, f64)> = site
        .bursts
        .iter()
        .map(|b| {
            let off = (b.offset_ms + site.offset_jitter_ms * gauss.sample(&mut rng)).max(0.0);
            let size = b.size_bytes as f64 * (site.size_jitter * gauss.sample(&mut rng)).exp();
            ((off * 1000.0).round() as u64, size.max(1.0))
        })
        .collect();
    let total: f64 = sampled.iter().map(|s| s.1).sum();
    let (lo, hi) = (site.total_bytes.0 as f64, site.total_bytes.1 as f64);
    let scale = if total < lo {
        lo / total
    } else if total > hi {
        hi / total
    } else {
        1.0
    };
    for s in sampled.iter_mut() {
        s.1 = (s.1 * scale).round().max(1.0);
    }

    let mut points = Vec::new();
    for (start, size) in sampled {
        let size = size as u64;
        match site.delivery.pacing() {
            None => points.push(TrafficPoint {
                t_us: start,
                bytes: size,
            }),
            Some(model) => points.extend(pace_burst(start, size, &model, &mut rng)),
        }
    }
    points.sort_by_key(|p| p.t_us);
    if let Some(model) = site.delivery.pacing() {
        share_link(&mut points, model.bottleneck_bytes_per_sec);
    }
    points.retain(|p| p.t_us < duration_us);
    Ok(TrafficTimeline { points })
}

/// Overlapping bursts share one link: packets leave in arrival order, no
/// faster than the bottleneck rate.
fn share_link(points: &mut [TrafficPoint], bytes_per_sec: u64) {
    let rate = bytes_per_sec.max(1) as f64 / 1e6;
    let mut free_at = 0.0f64;
    for p in points.iter_mut() {
        let t = (p.t_us as f64).max(free_at);
        p.t_us = t.round() as u64;
        free_at = t + p.bytes as f64 / rate;
    }
}

/// Expected bytes per `bin_ms` bin of a site's template schedule, used to
/// compare site definitions.
pub fn site_signature(site: &SiteProfile, bin_ms: f64, duration_ms: f64) -> Vec<f64> {
    let n = (duration_ms / bin_ms).ceil() as usize;
    let mut sig = vec![0.0; n];
    for b in &site.bursts {
        let i = (b.offset_ms / bin_ms) as usize;
        if i < n {
            sig[i] += b.size_bytes as f64;
        }
    }
    sig
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VpnParams {
    pub per_packet_overhead_bytes: u64,
    pub added_latency_ms: f64,
    pub jitter_ms: f64,
}

/// Tunnels a timeline: every point grows by the per-packet overhead and is
/// delayed by the added latency plus uniform jitter in `[0, jitter_ms]`.
pub fn vpn_transform(timeline: &TrafficTimeline, params: &VpnParams, seed: u64) -> Result<TrafficTimeline> {
    timeline.validate()?;
    if !(params.added_latency_ms >= 0.0) || !(params.jitter_ms >= 0.0) {
        return domain("VPN latency and jitter must be non-negative");
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::VPN, 0));
    let shift = (params.added_latency_ms * 1000.0).round() as u64;
    let jitter = (params.jitter_ms * 1000.0).round() as u64;
    let mut points: Vec<TrafficPoint> = timeline
        .points
        .iter()
        .map(|p| {
            let j = if jitter > 0 { rng.random_range(0..=jitter) } else { 0 };
            TrafficPoint {
                t_us: p.t_us + shift + j,
                bytes: p.bytes + params.per_packet_overhead_bytes,
            }
        })
        .collect();
    points.sort_by_key(|p| p.t_us);
    Ok(TrafficTimeline { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_instant_burst_is_one_point() {
        let site = SiteProfile::fixed("x", 1000.0, 4 * 1024 * 1024, Delivery::Instant);
        let tl = gen_web_traffic(&site, 8_000_000, 3).unwrap();
        assert_eq!(
            tl.points,
            vec![TrafficPoint {
                t_us: 1_000_000,
                bytes: 4_194_304
            }]
        );
    }

    #[test]
    fn same_seed_same_timeline() {
        let site = SiteProfile::synthetic(3, &SiteCorpusParams::default(), 42);
        let a = gen_web_traffic(&site, 8_000_000, 5).unwrap();
        assert_eq!(a, gen_web_traffic(&site, 8_000_000, 5).unwrap());
        assert_ne!(a, gen_web_traffic(&site, 8_000_000, 6).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn paced_burst_conserves_bytes() {
        let mut rng = seed::rng(1);
        for bytes in [16u64, 1448, 64 * 1024, 128 * 1024, 4 << 20] {
            let pts = pace_burst(1000, bytes, &PacingModel::default(), &mut rng);
            assert_eq!(pts.iter().map(|p| p.bytes).sum::<u64>(), bytes);
        }
    }

    #[test]
    fn slow_start_doubles_round_rate() {
        let model = PacingModel {
            jitter_us: 0,
            ..PacingModel::default()
        };
        let mut rng = seed::rng(1);
        let pts = pace_burst(0, 1448 * 30, &model, &mut rng);
        // Round 0: 10 segments over one RTT; round 1: 20 segments over one RTT.
        assert_eq!(pts[1].t_us - pts[0].t_us, 500);
        assert_eq!(pts[10].t_us, 5000);
        assert_eq!(pts[11].t_us - pts[10].t_us, 250);
    }

    #[test]
    fn bottleneck_caps_rate() {
        let model = PacingModel {
            jitter_us: 0,
            ..PacingModel::default()
        };
        let mut rng = seed::rng(1);
        let pts = pace_burst(0, 4 << 20, &model, &mut rng);
        let span = pts.last().unwrap().t_us - pts[0].t_us;
        let rate = (4u64 << 20) as f64 / span as f64;
        assert!(rate <= 25.0 * 1.01, "{rate} B/us");
    }

    #[test]
    fn synthetic_corpus_signatures_are_distinct() {
        let p = SiteCorpusParams::default();
        let sigs: Vec<Vec<f64>> = (0..100)
            .map(|i| site_signature(&SiteProfile::synthetic(i, &p, 7), 100.0, 8000.0))
            .collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                let d: f64 = sigs[i].iter().zip(&sigs[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 0.0, "sites {i} and {j} share a signature");
            }
        }
    }

    #[test]
    fn vpn_arithmetic() {
        let tl = TrafficTimeline {
            points: vec![TrafficPoint { t_us: 7000, bytes: 1000 }],
        };
        let p = VpnParams {
            per_packet_overhead_bytes: 80,
            added_latency_ms: 20.0,
            jitter_ms: 0.0,
        };
        let out = vpn_transform(&tl, &p, 1).unwrap();
        assert_eq!(out.points, vec![TrafficPoint { t_us: 27_000, bytes: 1080 }]);
    }

    #[test]
    fn zero_vpn_is_identity() {
        let site = SiteProfile::synthetic(1, &SiteCorpusParams::default(), 2);
        let tl = gen_web_traffic(&site, 8_000_000, 1).unwrap();
        assert_eq!(vpn_transform(&tl, &VpnParams::default(), 3).unwrap(), tl);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vpn_jitter_keeps_order_and_count(
                mut ts in proptest::collection::vec((0u64..1_000_000, 1u64..5000), 1..60),
                jitter in 0.0f64..30.0, seed in any::<u64>()) {
                ts.sort();
                let tl = TrafficTimeline {
                    points: ts.iter().map(|&(t, b)| TrafficPoint { t_us: t, bytes: b }).collect(),
                };
                let p = VpnParams { per_packet_overhead_bytes: 60, added_latency_ms: 5.0, jitter_ms: jitter };
                let out = vpn_transform(&tl, &p, seed).unwrap();
                prop_assert_eq!(out.points.len(), tl.points.len());
                out.validate().unwrap();
                prop_assert_eq!(out.total_bytes(), tl.total_bytes() + 60 * tl.points.len() as u64);
            }
        }
    }
}
