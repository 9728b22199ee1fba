//! Discrete-time simulator of a hub's device layer.
//!
//! Time is kept in integer microseconds. Interrupt endpoints behind a
//! transaction translator (TT) are scheduled once per 1 ms frame; bulk
//! endpoints compete for the slots of each 125 µs microframe. A completion is
//! stamped with the start time of the frame or microframe that serviced it,
//! the granularity at which a host observes USB completions. Spy timestamps
//! then receive optional uniform jitter.
//!
//! Transactions that arrive at time `t` are eligible in the interval
//! containing `t`. An endpoint carries at most one outstanding transaction
//! into each scheduling decision; event reports queue behind it.

mod arbiter;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use arbiter::{
    bulk_schedule_microframe, tt_schedule_frame, Arbiter, FrameSchedule, InterruptTxn, TxnClass,
};

use crate::error::{Error, Result};
use crate::seed;
use crate::trace::{KeyEventTrace, SpyRecord, SpyTrace, TraceMeta, TrafficTimeline};
use crate::usb::{DeviceId, HubConfig, FRAME_US, MICROFRAMES_PER_FRAME, MICROFRAME_US};

/// Device ids used by the stock scenario workloads.
pub const MOUSE_SPY: DeviceId = DeviceId(0);
pub const KEYBOARD: DeviceId = DeviceId(1);
pub const DISK_SPY: DeviceId = DeviceId(0);
pub const NETWORK_ADAPTER: DeviceId = DeviceId(1);

/// Default read size of the disk spy.
pub const SPY_READ_BYTES: u64 = 4096;
/// Default timestamp jitter bound.
pub const DEFAULT_JITTER_US: u64 = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterruptSource {
    /// Endpoint with data at every poll.
    Periodic { interval_us: u64 },
    /// One report per event time, e.g. key presses and releases.
    Events { times_us: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptDevice {
    pub id: DeviceId,
    pub source: InterruptSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkRequest {
    pub t_us: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BulkSource {
    /// Issues a new read of `request_bytes` as soon as the previous one
    /// completes; the next read is eligible in the following microframe.
    ClosedLoop { request_bytes: u64 },
    /// Open-loop transfers enqueued at their timestamps.
    Requests(Vec<BulkRequest>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkDevice {
    pub id: DeviceId,
    pub source: BulkSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Workload {
    pub scenario: String,
    pub interrupt_devices: Vec<InterruptDevice>,
    pub bulk_devices: Vec<BulkDevice>,
    /// Device whose completions are timestamped.
    pub spy: DeviceId,
    /// Upper bound of the uniform jitter added to spy timestamps.
    pub jitter_us: u64,
    pub key_truth: Option<KeyEventTrace>,
    pub traffic_truth: Option<TrafficTimeline>,
}

impl Workload {
    /// Mouse jiggler polled every frame sharing a TT with a keyboard that
    /// sends one report per press and per release.
    pub fn keystroke(keys: &KeyEventTrace, jitter_us: u64) -> Self {
        let mut times: Vec<u64> = keys.events.iter().map(|e| e.t_us).collect();
        times.sort_unstable();
        Workload {
            scenario: "keystroke".into(),
            interrupt_devices: vec![
                InterruptDevice {
                    id: MOUSE_SPY,
                    source: InterruptSource::Periodic { interval_us: FRAME_US },
                },
                InterruptDevice {
                    id: KEYBOARD,
                    source: InterruptSource::Events { times_us: times },
                },
            ],
            bulk_devices: vec![],
            spy: MOUSE_SPY,
            jitter_us,
            key_truth: Some(keys.clone()),
            traffic_truth: None,
        }
    }

    /// Disk spy issuing back-to-back 4 KiB reads next to a network adapter
    /// that delivers the victim's traffic.
    pub fn web(traffic: &TrafficTimeline, jitter_us: u64) -> Self {
        let requests = traffic
            .points
            .iter()
            .map(|p| BulkRequest {
                t_us: p.t_us,
                bytes: p.bytes,
            })
            .collect();
        Workload {
            scenario: "website".into(),
            interrupt_devices: vec![],
            bulk_devices: vec![
                BulkDevice {
                    id: DISK_SPY,
                    source: BulkSource::ClosedLoop {
                        request_bytes: SPY_READ_BYTES,
                    },
                },
                BulkDevice {
                    id: NETWORK_ADAPTER,
                    source: BulkSource::Requests(requests),
                },
            ],
            spy: DISK_SPY,
            jitter_us,
            key_truth: None,
            traffic_truth: Some(traffic.clone()),
        }
    }

    pub fn with_scenario(mut self, label: impl Into<String>) -> Self {
        self.scenario = label.into();
        self
    }

    fn spy_is_bulk(&self) -> bool {
        self.bulk_devices.iter().any(|d| d.id == self.spy)
    }

    pub fn validate(&self, duration_us: u64) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let mut ids = BTreeSet::new();
        for id in self
            .interrupt_devices
            .iter()
            .map(|d| d.id)
            .chain(self.bulk_devices.iter().map(|d| d.id))
        {
            if !ids.insert(id) {
                return cfg(format!("device {id} listed twice"));
            }
        }
        if !ids.contains(&self.spy) {
            return cfg(format!("spy device {} is not part of the workload", self.spy));
        }
        if self.key_truth.is_some() && self.traffic_truth.is_some() {
            return cfg("a workload carries at most one truth channel".into());
        }
        for d in &self.interrupt_devices {
            match &d.source {
                InterruptSource::Periodic { interval_us } => {
                    if *interval_us == 0 || interval_us % FRAME_US != 0 {
                        return cfg(format!(
                            "poll interval of {} must be a positive multiple of {FRAME_US} us",
                            d.id
                        ));
                    }
                }
                InterruptSource::Events { times_us } => {
                    if d.id == self.spy {
                        return cfg("an interrupt spy must be a periodic endpoint".into());
                    }
                    check_sorted(times_us.iter().copied(), duration_us, d.id)?;
                }
            }
        }
        for d in &self.bulk_devices {
            match &d.source {
                BulkSource::ClosedLoop { request_bytes } => {
                    if *request_bytes == 0 {
                        return cfg(format!("closed-loop device {} reads zero bytes", d.id));
                    }
                }
                BulkSource::Requests(reqs) => {
                    if d.id == self.spy {
                        return cfg("a bulk spy must be a closed-loop reader".into());
                    }
                    check_sorted(reqs.iter().map(|r| r.t_us), duration_us, d.id)?;
                }
            }
        }
        let spacing = if self.spy_is_bulk() { MICROFRAME_US } else { FRAME_US };
        if self.jitter_us >= spacing {
            return cfg(format!(
                "jitter {} us must stay below the spy's completion spacing of {spacing} us",
                self.jitter_us
            ));
        }
        Ok(())
    }
}

fn check_sorted(times: impl Iterator<Item = u64>, duration_us: u64, id: DeviceId) -> Result<()> {
    let mut prev = 0;
    for t in times {
        if t < prev {
            return Err(Error::Config(format!("stream of {id} is not time-sorted")));
        }
        if t >= duration_us {
            return Err(Error::Config(format!(
                "stream of {id} extends past the simulated duration ({t} >= {duration_us})"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// Spy observations plus the ground truth they were produced from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub spy: SpyTrace,
    pub key_truth: Option<KeyEventTrace>,
    pub traffic_truth: Option<TrafficTimeline>,
    pub noise_seed: u64,
}

/// Counters collected alongside a run, used to check scheduler invariants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub frames: u64,
    pub microframes: u64,
    /// Largest number of bulk slots granted in any one microframe.
    pub max_slots_per_microframe: u64,
    /// Microframes in which a slot stayed idle while work was pending.
    pub idle_slots_with_backlog: u64,
    pub bulk_slots_served: BTreeMap<DeviceId, u64>,
    pub interrupt_served: BTreeMap<DeviceId, u64>,
    /// Spy completion times before jitter.
    pub spy_completions_us: Vec<u64>,
}

pub fn run_simulation(
    hub: &HubConfig,
    workload: &Workload,
    duration_us: u64,
    seed: u64,
) -> Result<TraceBundle> {
    run_simulation_with_stats(hub, workload, duration_us, seed).map(|(b, _)| b)
}

struct IntState {
    id: DeviceId,
    tt: usize,
    periodic_frames: Option<u64>,
    outstanding: Option<InterruptTxn>,
    events: Vec<u64>,
    next_event: usize,
    queue: VecDeque<InterruptTxn>,
    seq: u64,
}

impl IntState {
    fn head(&self) -> Option<InterruptTxn> {
        self.outstanding.or_else(|| self.queue.front().copied())
    }

    fn pop(&mut self) {
        if self.outstanding.take().is_none() {
            self.queue.pop_front();
        }
    }
}

struct BulkState {
    closed_loop: Option<u64>,
    next_issue_uframe: u64,
    requests: Vec<BulkRequest>,
    next_request: usize,
    /// Remaining transactions per queued request, FIFO.
    queue: VecDeque<u64>,
    demand: u64,
}

pub fn run_simulation_with_stats(
    hub: &HubConfig,
    workload: &Workload,
    duration_us: u64,
    seed: u64,
) -> Result<(TraceBundle, SimStats)> {
    hub.validate()?;
    if duration_us < FRAME_US {
        return Err(Error::Config(format!(
            "duration {duration_us} us is shorter than one frame"
        )));
    }
    workload.validate(duration_us)?;

    let payload = hub.bulk_payload;
    let limits = hub.limits();
    let tt_count = hub.tt_count as usize;
    let mut arbiter = Arbiter::new(&hub.arbitration, seed);
    let mut stats = SimStats::default();

    let mut ints: Vec<IntState> = workload
        .interrupt_devices
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (periodic_frames, events) = match &d.source {
                InterruptSource::Periodic { interval_us } => (Some(interval_us / FRAME_US), vec![]),
                InterruptSource::Events { times_us } => (None, times_us.clone()),
            };
            IntState {
                id: d.id,
                tt: i % tt_count,
                periodic_frames,
                outstanding: None,
                events,
                next_event: 0,
                queue: VecDeque::new(),
                seq: 0,
            }
        })
        .collect();

    let bulk_ids: Vec<DeviceId> = workload.bulk_devices.iter().map(|d| d.id).collect();
    let mut bulks: Vec<BulkState> = workload
        .bulk_devices
        .iter()
        .map(|d| {
            let (closed_loop, requests) = match &d.source {
                BulkSource::ClosedLoop { request_bytes } => {
                    (Some(payload.transactions_for(*request_bytes)), vec![])
                }
                BulkSource::Requests(r) => (None, r.clone()),
            };
            BulkState {
                closed_loop,
                next_issue_uframe: 0,
                requests,
                next_request: 0,
                queue: VecDeque::new(),
                demand: 0,
            }
        })
        .collect();

    let frames = duration_us / FRAME_US;
    let mut completions: Vec<u64> = Vec::new();
    let mut demand = vec![0u64; bulks.len()];

    for frame in 0..frames {
        let frame_start = frame * FRAME_US;
        if !ints.is_empty() {
            for d in ints.iter_mut() {
                if let Some(every) = d.periodic_frames {
                    if frame % every == 0 && d.outstanding.is_none() {
                        d.outstanding = Some(InterruptTxn {
                            device: d.id,
                            arrival_frame: frame,
                            class: TxnClass::Poll,
                            seq: d.seq,
                        });
                        d.seq += 1;
                    }
                }
                while d.next_event < d.events.len() && d.events[d.next_event] < frame_start + FRAME_US
                {
                    d.queue.push_back(InterruptTxn {
                        device: d.id,
                        arrival_frame: frame,
                        class: TxnClass::Event,
                        seq: d.seq,
                    });
                    d.seq += 1;
                    d.next_event += 1;
                }
            }
            for tt in 0..tt_count {
                let pending: Vec<InterruptTxn> = ints
                    .iter()
                    .filter(|d| d.tt == tt)
                    .filter_map(|d| d.head())
                    .collect();
                if pending.is_empty() {
                    continue;
                }
                let sched = tt_schedule_frame(&pending, hub.tt_frame_capacity, &mut arbiter);
                for t in &sched.served {
                    let d = ints
                        .iter_mut()
                        .find(|d| d.id == t.device)
                        .expect("served transaction belongs to a device");
                    d.pop();
                    *stats.interrupt_served.entry(t.device).or_default() += 1;
                    if t.device == workload.spy {
                        completions.push(frame_start);
                    }
                }
            }
        }

        if bulks.is_empty() {
            continue;
        }
        for sub in 0..MICROFRAMES_PER_FRAME {
            let uframe = frame * MICROFRAMES_PER_FRAME + sub;
            let uf_start = uframe * MICROFRAME_US;
            let uf_end = uf_start + MICROFRAME_US;
            for (i, b) in bulks.iter_mut().enumerate() {
                if let Some(tx) = b.closed_loop {
                    if b.queue.is_empty() && b.next_issue_uframe <= uframe {
                        b.queue.push_back(tx);
                        b.demand += tx;
                    }
                }
                while b.next_request < b.requests.len() && b.requests[b.next_request].t_us < uf_end {
                    let tx = payload.transactions_for(b.requests[b.next_request].bytes);
                    if tx > 0 {
                        b.queue.push_back(tx);
                        b.demand += tx;
                    }
                    b.next_request += 1;
                }
                demand[i] = b.demand;
            }
            let grant = bulk_schedule_microframe(&bulk_ids, &demand, &limits, &mut arbiter);
            let granted: u64 = grant.iter().sum();
            let wanted: u64 = demand.iter().sum::<u64>().min(limits.transfers_per_microframe as u64);
            if granted < wanted {
                stats.idle_slots_with_backlog += 1;
            }
            stats.max_slots_per_microframe = stats.max_slots_per_microframe.max(granted);
            stats.microframes += 1;
            for (i, b) in bulks.iter_mut().enumerate() {
                let mut slots = grant[i];
                if slots == 0 {
                    continue;
                }
                *stats.bulk_slots_served.entry(bulk_ids[i]).or_default() += slots;
                b.demand -= slots;
                while slots > 0 {
                    let head = b.queue.front_mut().expect("grant never exceeds demand");
                    let take = slots.min(*head);
                    *head -= take;
                    slots -= take;
                    if *head == 0 {
                        b.queue.pop_front();
                        if bulk_ids[i] == workload.spy {
                            completions.push(uf_start);
                        }
                        if b.closed_loop.is_some() {
                            b.next_issue_uframe = uframe + 1;
                        }
                    }
                }
            }
        }
    }
    stats.frames = frames;

    let noise_seed = seed::derive(seed, seed::stream::SIM_NOISE, 0);
    let mut rng = seed::rng(noise_seed);
    let stamped: Vec<u64> = completions
        .iter()
        .map(|&t| {
            if workload.jitter_us == 0 {
                t
            } else {
                t + rng.random_range(0..=workload.jitter_us)
            }
        })
        .collect();
    let records = stamped
        .windows(2)
        .map(|w| SpyRecord {
            t_us: w[1],
            delay_us: w[1] - w[0],
        })
        .collect();
    stats.spy_completions_us = completions;

    let spy = SpyTrace {
        records,
        meta: TraceMeta {
            scenario: workload.scenario.clone(),
            seed,
            hub_digest: hub.digest(),
            jitter_us: workload.jitter_us,
            extra: vec![
                ("policy".into(), hub.arbitration.name().into()),
                ("speed_class".into(), hub.speed_class.to_string()),
            ],
        },
    };
    Ok((
        TraceBundle {
            spy,
            key_truth: workload.key_truth.clone(),
            traffic_truth: workload.traffic_truth.clone(),
            noise_seed,
        },
        stats,
    ))
}
