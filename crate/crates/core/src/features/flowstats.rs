use crate::ingest::{Direction, PacketEvent};
use crate::util::summary_stats;
use crate::windowing::TimeWindow;

/// Per-window flow statistics. Each `[f64; 4]` is `(mean, min, max, std)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStats {
    pub total_forward: u64,
    pub total_backward: u64,
    pub bytes_per_sec: f64,
    pub total_bytes_forward: u64,
    pub total_bytes_backward: u64,
    pub fiat: [f64; 4],
    pub biat: [f64; 4],
    pub flow_iat: [f64; 4],
    pub active: [f64; 4],
    pub idle: [f64; 4],
}

pub const FLOW_STAT_COUNT: usize = 25;

pub(crate) const FLOW_STAT_NAMES: [&str; FLOW_STAT_COUNT] = [
    "total_forward",
    "total_backward",
    "bytes_per_sec",
    "total_bytes_forward",
    "total_bytes_backward",
    "fiat_mean",
    "fiat_min",
    "fiat_max",
    "fiat_std",
    "biat_mean",
    "biat_min",
    "biat_max",
    "biat_std",
    "flow_iat_mean",
    "flow_iat_min",
    "flow_iat_max",
    "flow_iat_std",
    "active_mean",
    "active_min",
    "active_max",
    "active_std",
    "idle_mean",
    "idle_min",
    "idle_max",
    "idle_std",
];

impl FlowStats {
    pub fn to_array(&self) -> [f64; FLOW_STAT_COUNT] {
        let mut out = [0.0; FLOW_STAT_COUNT];
        out[0] = self.total_forward as f64;
        out[1] = self.total_backward as f64;
        out[2] = self.bytes_per_sec;
        out[3] = self.total_bytes_forward as f64;
        out[4] = self.total_bytes_backward as f64;
        for (g, group) in [self.fiat, self.biat, self.flow_iat, self.active, self.idle]
            .iter()
            .enumerate()
        {
            out[5 + 4 * g..9 + 4 * g].copy_from_slice(group);
        }
        out
    }
}

fn gaps<'a>(times: impl Iterator<Item = &'a PacketEvent>) -> Vec<f64> {
    let ts: Vec<f64> = times.map(|e| e.timestamp).collect();
    ts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Splits the event sequence at gaps longer than `idle_threshold`. Each
/// resulting run contributes its duration to the active set; each
/// separating gap goes to the idle set.
pub fn active_idle_periods(events: &[PacketEvent], idle_threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let mut active = Vec::new();
    let mut idle = Vec::new();
    let Some(first) = events.first() else {
        return (active, idle);
    };
    let mut run_start = first.timestamp;
    let mut prev = first.timestamp;
    for ev in &events[1..] {
        let gap = ev.timestamp - prev;
        if gap > idle_threshold {
            active.push(prev - run_start);
            idle.push(gap);
            run_start = ev.timestamp;
        }
        prev = ev.timestamp;
    }
    active.push(prev - run_start);
    (active, idle)
}

/// Flow statistics over one window. `bytes_per_sec` divides by the full
/// window length.
pub fn compute_flow_stats(window: &TimeWindow, idle_threshold: f64) -> FlowStats {
    let events = &window.events;
    let fwd = || events.iter().filter(|e| e.direction == Direction::Forward);
    let bwd = || events.iter().filter(|e| e.direction == Direction::Backward);
    let bytes = |it: &mut dyn Iterator<Item = &PacketEvent>| -> u64 {
        it.map(|e| u64::from(e.payload_size)).sum()
    };
    let total_bytes_forward = bytes(&mut fwd());
    let total_bytes_backward = bytes(&mut bwd());
    let (active, idle) = active_idle_periods(events, idle_threshold);

    FlowStats {
        total_forward: fwd().count() as u64,
        total_backward: bwd().count() as u64,
        bytes_per_sec: (total_bytes_forward + total_bytes_backward) as f64 / window.duration(),
        total_bytes_forward,
        total_bytes_backward,
        fiat: summary_stats(&gaps(fwd())),
        biat: summary_stats(&gaps(bwd())),
        flow_iat: summary_stats(&gaps(events.iter())),
        active: summary_stats(&active),
        idle: summary_stats(&idle),
    }
}
