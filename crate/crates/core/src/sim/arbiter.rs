//! Per-interval arbitration: which interrupt transactions a transaction
//! translator forwards in a frame, and how bulk slots in a microframe are
//! split among devices.

use rand::Rng as _;

use crate::seed::{self, Rng};
use crate::usb::{ArbitrationPolicy, BulkLimits, DeviceId};

/// What produced an interrupt transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxnClass {
    /// A report triggered by an input event (key press or release).
    Event,
    /// A periodic poll of an endpoint that always has data (mouse jiggler).
    Poll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterruptTxn {
    pub device: DeviceId,
    /// Frame in which the transaction first became pending.
    pub arrival_frame: u64,
    pub class: TxnClass,
    /// Per-device sequence number.
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameSchedule {
    pub served: Vec<InterruptTxn>,
    pub deferred: Vec<InterruptTxn>,
}

/// Policy plus the mutable state it needs across intervals: the seeded
/// stream for randomized allocation and the round-robin rotation.
#[derive(Debug, Clone)]
pub struct Arbiter {
    policy: ArbitrationPolicy,
    rng: Rng,
    rotation: usize,
}

impl Arbiter {
    /// `run_seed` is mixed into the policy's own seed so that independent
    /// trials draw independent allocation streams.
    pub fn new(policy: &ArbitrationPolicy, run_seed: u64) -> Self {
        let base = match policy {
            ArbitrationPolicy::RandomizedAllocation { seed } => *seed,
            _ => 0,
        };
        Arbiter {
            policy: policy.clone(),
            rng: seed::rng(seed::derive(base, seed::stream::POLICY, run_seed)),
            rotation: 0,
        }
    }

    pub fn policy(&self) -> &ArbitrationPolicy {
        &self.policy
    }
}

/// Chooses up to `capacity` of the pending transactions for this frame.
/// Everything else is deferred and keeps its original arrival frame.
pub fn tt_schedule_frame(
    pending: &[InterruptTxn],
    capacity: u32,
    arbiter: &mut Arbiter,
) -> FrameSchedule {
    let mut order: Vec<InterruptTxn> = pending.to_vec();
    match &arbiter.policy {
        ArbitrationPolicy::FairRoundRobin => {
            order.sort_by_key(|t| (t.arrival_frame, t.class, t.device, t.seq));
        }
        ArbitrationPolicy::UnfairPriority { .. } => {
            let p = arbiter.policy.clone();
            order.sort_by_key(|t| (p.priority_rank(t.device), t.arrival_frame, t.seq));
        }
        ArbitrationPolicy::RandomizedAllocation { .. } => {
            order.sort_by_key(|t| (t.device, t.seq));
            // Partial Fisher-Yates: the first `capacity` slots are a uniform
            // draw without replacement.
            let k = (capacity as usize).min(order.len());
            for i in 0..k {
                let j = arbiter.rng.random_range(i..order.len());
                order.swap(i, j);
            }
            order[k..].sort_by_key(|t| (t.arrival_frame, t.device, t.seq));
        }
    }
    let k = (capacity as usize).min(order.len());
    let deferred = order.split_off(k);
    FrameSchedule {
        served: order,
        deferred,
    }
}

/// Splits the microframe's bulk slots among devices.
///
/// `demand[i]` is the number of pending transactions of device `devices[i]`.
/// Returns the slots granted to each device, in the same order. The total is
/// `min(sum(demand), limits.transfers_per_microframe)` for every policy.
pub fn bulk_schedule_microframe(
    devices: &[DeviceId],
    demand: &[u64],
    limits: &BulkLimits,
    arbiter: &mut Arbiter,
) -> Vec<u64> {
    assert_eq!(devices.len(), demand.len());
    let n = devices.len();
    let mut grant = vec![0u64; n];
    if n == 0 {
        return grant;
    }
    let capacity = limits.transfers_per_microframe as u64;
    let total: u64 = demand.iter().sum();
    if total <= capacity {
        grant.copy_from_slice(demand);
        advance_rotation(arbiter, n);
        return grant;
    }
    let mut remaining: Vec<u64> = demand.to_vec();
    let mut slots = capacity;
    match &arbiter.policy {
        ArbitrationPolicy::FairRoundRobin => {
            let mut i = arbiter.rotation % n;
            while slots > 0 {
                if remaining[i] > 0 {
                    remaining[i] -= 1;
                    grant[i] += 1;
                    slots -= 1;
                }
                i = (i + 1) % n;
            }
        }
        ArbitrationPolicy::UnfairPriority { .. } => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| arbiter.policy.priority_rank(devices[i]));
            for i in idx {
                let take = remaining[i].min(slots);
                grant[i] = take;
                slots -= take;
            }
        }
        ArbitrationPolicy::RandomizedAllocation { .. } => {
            // The split is drawn without looking at demand: n - 1 uniform
            // cut points over the slots. Shares a device cannot use are
            // handed out one slot at a time to random devices with work left.
            let mut cuts: Vec<u64> = (0..n - 1).map(|_| arbiter.rng.random_range(0..=capacity)).collect();
            cuts.sort_unstable();
            cuts.push(capacity);
            let mut prev = 0;
            for (i, &cut) in cuts.iter().enumerate() {
                let take = (cut - prev).min(remaining[i]);
                prev = cut;
                remaining[i] -= take;
                grant[i] += take;
                slots -= take;
            }
            while slots > 0 {
                let live: Vec<usize> = (0..n).filter(|&i| remaining[i] > 0).collect();
                let i = live[arbiter.rng.random_range(0..live.len())];
                remaining[i] -= 1;
                grant[i] += 1;
                slots -= 1;
            }
        }
    }
    advance_rotation(arbiter, n);
    grant
}

fn advance_rotation(arbiter: &mut Arbiter, n: usize) {
    arbiter.rotation = (arbiter.rotation + 1) % n.max(1);
}
