//! Fixed-length time windows over a connection.
//!
//! Windows sit on a grid anchored at the connection's first packet. All
//! binning is done on integer microseconds so that bin membership is exact:
//! a packet at offset `t` lands in bin `n` iff `n·Δt ≤ t < (n+1)·Δt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    micros_to_seconds, seconds_to_micros, Connection, Direction, FlowKey, PacketEvent,
};
use crate::util::short_hash;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window/bin ratio {0} is not a power of two")]
    NotPowerOfTwo(f64),
    #[error("bin width {0} s is not a positive whole number of microseconds")]
    BadBinWidth(f64),
    #[error("min_packets must be at least 1")]
    ZeroMinPackets,
    #[error("window record was produced with config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
}

/// Validated window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowConfigRepr", into = "WindowConfigRepr")]
pub struct WindowConfig {
    window_seconds: f64,
    bin_seconds: f64,
    min_packets: usize,
    bin_micros: u64,
    levels: u32,
}

#[derive(Serialize, Deserialize)]
struct WindowConfigRepr {
    window_seconds: f64,
    bin_seconds: f64,
    min_packets: usize,
}

impl TryFrom<WindowConfigRepr> for WindowConfig {
    type Error = WindowError;
    fn try_from(r: WindowConfigRepr) -> Result<Self, WindowError> {
        WindowConfig::new(r.window_seconds, r.bin_seconds, r.min_packets)
    }
}

impl From<WindowConfig> for WindowConfigRepr {
    fn from(c: WindowConfig) -> Self {
        Self {
            window_seconds: c.window_seconds,
            bin_seconds: c.bin_seconds,
            min_packets: c.min_packets,
        }
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self::new(40.96, 0.01, 20).expect("default window config is valid")
    }
}

impl WindowConfig {
    pub fn new(
        window_seconds: f64,
        bin_seconds: f64,
        min_packets: usize,
    ) -> Result<Self, WindowError> {
        if min_packets == 0 {
            return Err(WindowError::ZeroMinPackets);
        }
        if !(bin_seconds.is_finite() && bin_seconds > 0.0) {
            return Err(WindowError::BadBinWidth(bin_seconds));
        }
        let bin_micros = seconds_to_micros(bin_seconds);
        if bin_micros == 0 || (bin_micros as f64 * 1e-6 - bin_seconds).abs() > 1e-9 * bin_seconds {
            return Err(WindowError::BadBinWidth(bin_seconds));
        }
        let ratio = window_seconds / bin_seconds;
        let n = ratio.round();
        if !ratio.is_finite() || n < 2.0 || (ratio - n).abs() > 1e-9 * n {
            return Err(WindowError::NotPowerOfTwo(ratio));
        }
        let n = n as u64;
        if !n.is_power_of_two() {
            return Err(WindowError::NotPowerOfTwo(ratio));
        }
        Ok(Self {
            window_seconds,
            bin_seconds,
            min_packets,
            bin_micros,
            levels: n.trailing_zeros(),
        })
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    pub fn bin_seconds(&self) -> f64 {
        self.bin_seconds
    }

    pub fn min_packets(&self) -> usize {
        self.min_packets
    }

    /// Bins per window, `N = 2^K`.
    pub fn num_bins(&self) -> usize {
        1usize << self.levels
    }

    /// `K` in `N = 2^K`.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn bin_micros(&self) -> u64 {
        self.bin_micros
    }

    pub fn window_micros(&self) -> u64 {
        self.bin_micros << self.levels
    }

    pub fn hash(&self) -> String {
        short_hash(&format!(
            "window_us={};bin_us={};min_packets={}",
            self.window_micros(),
            self.bin_micros,
            self.min_packets
        ))
    }
}

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSource {
    pub key: FlowKey,
    pub index: usize,
    pub source_file: String,
}

/// One window of a connection with per-direction byte signals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    pub label: Option<String>,
    pub forward_signal: Vec<f64>,
    pub backward_signal: Vec<f64>,
    /// Timestamps rebased to the window start.
    pub events: Vec<PacketEvent>,
    pub source: WindowSource,
    bin_micros: u64,
}

impl TimeWindow {
    /// Builds a window from rebased events, binning byte counts per direction.
    pub fn from_events(
        events: Vec<PacketEvent>,
        config: &WindowConfig,
        label: Option<String>,
        source: WindowSource,
    ) -> Self {
        let mut w = Self {
            label,
            forward_signal: Vec::new(),
            backward_signal: Vec::new(),
            events,
            source,
            bin_micros: config.bin_micros(),
        };
        w.rebin(config.num_bins());
        w
    }

    pub(crate) fn rebin(&mut self, n: usize) {
        let mut fwd = vec![0.0; n];
        let mut bwd = vec![0.0; n];
        for ev in &self.events {
            let bin = (seconds_to_micros(ev.timestamp) / self.bin_micros) as usize;
            debug_assert!(bin < n, "event outside window");
            let bin = bin.min(n - 1);
            match ev.direction {
                Direction::Forward => fwd[bin] += f64::from(ev.payload_size),
                Direction::Backward => bwd[bin] += f64::from(ev.payload_size),
            }
        }
        self.forward_signal = fwd;
        self.backward_signal = bwd;
    }

    pub fn num_bins(&self) -> usize {
        self.forward_signal.len()
    }

    /// Window length in seconds.
    pub fn duration(&self) -> f64 {
        micros_to_seconds(self.bin_micros * self.num_bins() as u64)
    }

    pub fn to_record(&self, config: &WindowConfig) -> WindowRecord {
        WindowRecord {
            label: self.label.clone(),
            source: self.source.clone(),
            events: self.events.clone(),
            config_hash: config.hash(),
        }
    }

    pub fn from_record(record: WindowRecord, config: &WindowConfig) -> Result<Self, WindowError> {
        let expected = config.hash();
        if record.config_hash != expected {
            return Err(WindowError::ConfigMismatch {
                expected,
                found: record.config_hash,
            });
        }
        Ok(Self::from_events(
            record.events,
            config,
            record.label,
            record.source,
        ))
    }
}

/// Compact serialized window: bins are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub label: Option<String>,
    pub source: WindowSource,
    pub events: Vec<PacketEvent>,
    pub config_hash: String,
}

/// Splits a connection into grid-aligned windows, dropping windows with
/// fewer than `min_packets` events.
pub fn segment(connection: &Connection, config: &WindowConfig) -> Vec<TimeWindow> {
    let Some(first) = connection.packets.first() else {
        return Vec::new();
    };
    let origin = seconds_to_micros(first.timestamp);
    let window_us = config.window_micros();

    let mut out = Vec::new();
    let mut current: Option<(u64, Vec<PacketEvent>)> = None;
    let flush = |slot: Option<(u64, Vec<PacketEvent>)>, out: &mut Vec<TimeWindow>| {
        if let Some((index, events)) = slot {
            if events.len() >= config.min_packets() {
                out.push(TimeWindow::from_events(
                    events,
                    config,
                    connection.label.clone(),
                    WindowSource {
                        key: connection.key,
                        index: index as usize,
                        source_file: connection.source_file.clone(),
                    },
                ));
            }
        }
    };

    for p in &connection.packets {
        let offset = seconds_to_micros(p.timestamp).saturating_sub(origin);
        let index = offset / window_us;
        let rebased = offset - index * window_us;
        if current.as_ref().map(|(i, _)| *i) != Some(index) {
            flush(current.take(), &mut out);
            current = Some((index, Vec::new()));
        }
        if let Some((_, events)) = current.as_mut() {
            events.push(PacketEvent {
                timestamp: micros_to_seconds(rebased),
                ..*p
            });
        }
    }
    flush(current.take(), &mut out);
    out
}
