//! Packet capture ingestion.
//!
//! Captures are read into flat [`PacketRecord`]s, grouped into bidirectional
//! [`Connection`]s keyed by a canonical five-tuple, and labeled from the
//! capture filename through a [`LabelManifest`].

mod flow;
mod manifest;
mod pcap;

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub use flow::assemble_flows;
pub use manifest::{label_from_filename, LabelManifest, ManifestError};
pub use pcap::{parse_pcap, parse_pcap_bytes, write_pcap, write_pcap_to, PcapError, PcapWriter};

/// Transport protocol of a flow. Only TCP and UDP are tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn ip_number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// A single packet observation inside a connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketEvent {
    /// Seconds, microsecond precision.
    pub timestamp: f64,
    /// Transport-layer payload length in bytes.
    pub payload_size: u32,
    pub direction: Direction,
}

/// One transport endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub addr: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(addr: Ipv4Addr, port: u16) -> Self {
        Self { addr, port }
    }
}

/// Canonical five-tuple of a bidirectional flow.
///
/// `forward` is the source endpoint of the first packet seen on the flow;
/// `backward` is its peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub forward: Endpoint,
    pub backward: Endpoint,
    pub protocol: Protocol,
}

impl FlowKey {
    /// Direction-independent lookup key: both orientations of a flow map to
    /// the same value.
    pub(crate) fn unordered(&self) -> (Endpoint, Endpoint, Protocol) {
        let (a, b) = if self.forward <= self.backward {
            (self.forward, self.backward)
        } else {
            (self.backward, self.forward)
        };
        (a, b, self.protocol)
    }

    pub fn reversed(&self) -> Self {
        Self {
            forward: self.backward,
            backward: self.forward,
            protocol: self.protocol,
        }
    }
}

impl std::fmt::Display for FlowKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let proto = match self.protocol {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        };
        write!(
            f,
            "{}:{}-{}:{}/{}",
            self.forward.addr, self.forward.port, self.backward.addr, self.backward.port, proto
        )
    }
}

/// One parsed IPv4 TCP/UDP packet, before flow assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub timestamp: f64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub protocol: Protocol,
    pub payload_size: u32,
}

/// A bidirectional flow with its time-ordered packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub key: FlowKey,
    pub packets: Vec<PacketEvent>,
    pub label: Option<String>,
    pub source_file: String,
}

impl Connection {
    pub fn total_bytes(&self) -> u64 {
        self.packets.iter().map(|p| u64::from(p.payload_size)).sum()
    }

    /// Flat records for this connection, suitable for [`write_pcap`].
    pub fn to_records(&self) -> Vec<PacketRecord> {
        self.packets
            .iter()
            .map(|p| {
                let (src, dst) = match p.direction {
                    Direction::Forward => (self.key.forward, self.key.backward),
                    Direction::Backward => (self.key.backward, self.key.forward),
                };
                PacketRecord {
                    timestamp: p.timestamp,
                    src,
                    dst,
                    protocol: self.key.protocol,
                    payload_size: p.payload_size,
                }
            })
            .collect()
    }
}

/// Converts an integer microsecond timestamp to seconds. Parsing and
/// synthetic generation both go through this so written captures re-read
/// bit-identically.
pub fn micros_to_seconds(micros: u64) -> f64 {
    (micros / 1_000_000) as f64 + (micros % 1_000_000) as f64 / 1e6
}

/// Inverse of [`micros_to_seconds`], rounding to the nearest microsecond.
pub fn seconds_to_micros(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}
