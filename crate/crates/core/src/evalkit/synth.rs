use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::{
    micros_to_seconds, write_pcap, Connection, Direction, Endpoint, FlowKey, PacketEvent,
    PcapError, Protocol,
};
use crate::util::short_hash;
use crate::windowing::{segment, TimeWindow, WindowConfig};

/// Base capture time for generated traffic (2023-11-14T22:13:20Z).
const EPOCH_MICROS: u64 = 1_700_000_000_000_000;

/// Rounded, clamped normal distribution over payload sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub mean: f64,
    pub sd: f64,
    pub min: u32,
    pub max: u32,
}

impl SizeDist {
    pub const fn new(mean: f64, sd: f64, min: u32, max: u32) -> Self {
        Self { mean, sd, min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let v = if self.sd > 0.0 {
            Normal::new(self.mean, self.sd)
                .expect("valid size sd")
                .sample(rng)
        } else {
            self.mean
        };
        (v.round().max(0.0) as u32).clamp(self.min, self.max)
    }
}

/// Request/response exchanges separated by idle waits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    /// Inclusive range of forward packets per request.
    pub request_packets: (u32, u32),
    /// Mean exponential gap between request packets, seconds.
    pub request_gap: f64,
    pub request_size: SizeDist,
    /// Chance that a request packet is echoed back after one round trip.
    pub echo_probability: f64,
    /// Mean exponential delay before the response (and before echoes).
    pub response_delay: f64,
    pub response_packets: (u32, u32),
    pub response_gap: f64,
    pub response_size: SizeDist,
    /// Uniform idle time after each exchange, seconds.
    pub wait: (f64, f64),
}

/// Two independent constant-cadence streams, one per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duplex {
    pub interval: f64,
    /// Standard deviation of each inter-packet interval.
    pub interval_jitter: f64,
    pub size: SizeDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    Exchange(Exchange),
    Duplex(Duplex),
}

/// Generator for one traffic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub name: String,
    /// Category label attached to generated connections.
    pub label: String,
    /// Substring placed in exported file names so the default manifest
    /// recovers `label`.
    pub file_keyword: String,
    pub protocol: Protocol,
    pub server_port: u16,
    /// Uniform session length range, seconds.
    pub session_seconds: (f64, f64),
    pub pattern: Pattern,
    /// Divides every gap, delay and wait.
    pub rate_scale: f64,
    /// Each packet is delayed by a uniform amount in `[0, jitter)` seconds.
    pub jitter: f64,
}

impl SynthProfile {
    /// A "new network" variant: faster by `rate_scale` with added timing
    /// jitter.
    pub fn perturbed(&self, rate_scale: f64, jitter: f64) -> Self {
        Self {
            rate_scale: self.rate_scale * rate_scale,
            jitter: self.jitter + jitter,
            ..self.clone()
        }
    }

    fn seed_base(&self) -> u64 {
        u64::from_str_radix(&short_hash(&self.name), 16).expect("hex digest")
    }
}

/// Five profiles echoing the default manifest categories.
pub fn default_profiles() -> Vec<SynthProfile> {
    let profile =
        |name: &str, label: &str, keyword: &str, protocol, port, session, pattern| SynthProfile {
            name: name.into(),
            label: label.into(),
            file_keyword: keyword.into(),
            protocol,
            server_port: port,
            session_seconds: session,
            pattern,
            rate_scale: 1.0,
            jitter: 0.0,
        };
    vec![
        // segment fetches: a small request, then a large downstream burst
        profile(
            "streaming",
            "STREAMING",
            "netflix",
            Protocol::Tcp,
            443,
            (120.0, 300.0),
            Pattern::Exchange(Exchange {
                request_packets: (1, 3),
                request_gap: 0.002,
                request_size: SizeDist::new(350.0, 80.0, 60, 1460),
                echo_probability: 0.0,
                response_delay: 0.03,
                response_packets: (80, 240),
                response_gap: 0.0015,
                response_size: SizeDist::new(1380.0, 60.0, 200, 1460),
                wait: (1.0, 4.0),
            }),
        ),
        profile(
            "voip",
            "VOIP",
            "voip",
            Protocol::Udp,
            5004,
            (90.0, 300.0),
            Pattern::Duplex(Duplex {
                interval: 0.02,
                interval_jitter: 0.001,
                size: SizeDist::new(172.0, 6.0, 120, 220),
            }),
        ),
        // short message bursts with long pauses
        profile(
            "chat",
            "CHAT",
            "chat",
            Protocol::Tcp,
            5222,
            (150.0, 600.0),
            Pattern::Exchange(Exchange {
                request_packets: (2, 8),
                request_gap: 0.3,
                request_size: SizeDist::new(220.0, 120.0, 40, 1200),
                echo_probability: 0.0,
                response_delay: 0.15,
                response_packets: (2, 8),
                response_gap: 0.3,
                response_size: SizeDist::new(220.0, 120.0, 40, 1200),
                wait: (2.0, 10.0),
            }),
        ),
        // typed commands echoed per keystroke, a response, then 1–60 s of thought
        profile(
            "c2",
            "C2",
            "ssh",
            Protocol::Tcp,
            22,
            (180.0, 900.0),
            Pattern::Exchange(Exchange {
                request_packets: (6, 40),
                request_gap: 0.18,
                request_size: SizeDist::new(36.0, 0.0, 36, 36),
                echo_probability: 0.95,
                response_delay: 0.04,
                response_packets: (4, 120),
                response_gap: 0.004,
                response_size: SizeDist::new(600.0, 400.0, 36, 1460),
                wait: (1.0, 60.0),
            }),
        ),
        // bulk upload of one file, then a 60 s pause before the next
        profile(
            "file_transfer",
            "FILE_TRANSFER",
            "scp",
            Protocol::Tcp,
            22,
            (180.0, 600.0),
            Pattern::Exchange(Exchange {
                request_packets: (1500, 6000),
                request_gap: 0.0008,
                request_size: SizeDist::new(1448.0, 10.0, 1200, 1460),
                echo_probability: 0.0,
                response_delay: 0.02,
                response_packets: (1, 3),
                response_gap: 0.01,
                response_size: SizeDist::new(52.0, 8.0, 36, 120),
                wait: (55.0, 65.0),
            }),
        ),
    ]
}

fn exp_gap<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Exp::new(1.0 / mean).expect("positive rate").sample(rng)
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn packets_in<R: Rng>(rng: &mut R, (lo, hi): (u32, u32)) -> u32 {
    rng.random_range(lo..=hi.max(lo))
}

/// `(offset seconds, size, direction)` before jitter and quantization.
fn exchange_events<R: Rng>(
    p: &Exchange,
    scale: f64,
    session: f64,
    rng: &mut R,
) -> Vec<(f64, u32, Direction)> {
    let mut out = Vec::new();
    let mut t = 0.0;
    while t < session {
        for i in 0..packets_in(rng, p.request_packets) {
            if i > 0 {
                t += exp_gap(rng, p.request_gap / scale);
            }
            let size = p.request_size.sample(rng);
            out.push((t, size, Direction::Forward));
            if p.echo_probability > 0.0 && rng.random::<f64>() < p.echo_probability {
                out.push((
                    t + exp_gap(rng, p.response_delay / scale),
                    size,
                    Direction::Backward,
                ));
            }
        }
        t += exp_gap(rng, p.response_delay / scale);
        for i in 0..packets_in(rng, p.response_packets) {
            if i > 0 {
                t += exp_gap(rng, p.response_gap / scale);
            }
            out.push((t, p.response_size.sample(rng), Direction::Backward));
        }
        t += uniform(rng, p.wait) / scale;
    }
    out
}

fn duplex_events<R: Rng>(
    p: &Duplex,
    scale: f64,
    session: f64,
    rng: &mut R,
) -> Vec<(f64, u32, Direction)> {
    let interval = p.interval / scale;
    let jitter = Normal::new(0.0, p.interval_jitter / scale).expect("valid jitter");
    let mut out = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        let mut t = rng.random_range(0.0..interval);
        while t < session {
            out.push((t, p.size.sample(rng), dir));
            t += (interval + jitter.sample(rng)).max(interval * 0.1);
        }
    }
    out
}

/// Connection number `index` of `profile`; depends only on
/// `(profile.name, seed, index)` and the profile parameters.
pub fn generate_connection(profile: &SynthProfile, seed: u64, index: u32) -> Connection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ profile.seed_base());
    rng.set_stream(u64::from(index));

    let session = uniform(&mut rng, profile.session_seconds);
    let start_us = EPOCH_MICROS + rng.random_range(0..3_600_000_000u64);
    let raw = match &profile.pattern {
        Pattern::Exchange(p) => exchange_events(p, profile.rate_scale, session, &mut rng),
        Pattern::Duplex(p) => duplex_events(p, profile.rate_scale, session, &mut rng),
    };
    let mut timed: Vec<(u64, u32, Direction)> = raw
        .into_iter()
        .map(|(t, size, dir)| {
            let jitter = if profile.jitter > 0.0 {
                rng.random_range(0.0..profile.jitter)
            } else {
                0.0
            };
            (start_us + ((t + jitter) * 1e6).round() as u64, size, dir)
        })
        .collect();
    timed.sort_by_key(|&(t, _, _)| t);

    let h = profile.seed_base();
    let server = Endpoint::new(
        Ipv4Addr::new(172, 16, (h % 250) as u8, ((h >> 8) % 250 + 1) as u8),
        profile.server_port,
    );
    let client = Endpoint::new(
        Ipv4Addr::new(
            10,
            ((h >> 16) % 250) as u8,
            ((index / 250) % 256) as u8,
            (index % 250 + 1) as u8,
        ),
        40_000 + (index % 20_000) as u16,
    );
    Connection {
        key: FlowKey {
            forward: client,
            backward: server,
            protocol: profile.protocol,
        },
        packets: timed
            .into_iter()
            .map(|(t, payload_size, direction)| PacketEvent {
                timestamp: micros_to_seconds(t),
                payload_size,
                direction,
            })
            .collect(),
        label: Some(profile.label.clone()),
        source_file: format!("synth:{}", profile.name),
    }
}

pub fn generate_connections(profile: &SynthProfile, count: u32, seed: u64) -> Vec<Connection> {
    (0..count)
        .map(|i| generate_connection(profile, seed, i))
        .collect()
}

/// Consecutive connections of `profile` until their sessions cover at
/// least `duration` seconds.
pub fn generate_profile(profile: &SynthProfile, duration: f64, seed: u64) -> Vec<Connection> {
    let mut out = Vec::new();
    let mut covered = 0.0;
    let mut index = 0;
    while covered < duration {
        let c = generate_connection(profile, seed, index);
        if let (Some(a), Some(b)) = (c.packets.first(), c.packets.last()) {
            covered += b.timestamp - a.timestamp;
        }
        out.push(c);
        index += 1;
    }
    out
}

/// [`generate_profile`] for every profile, in parallel, concatenated in
/// input order.
pub fn generate_synthetic(
    profiles: &[SynthProfile],
    duration: f64,
    seed: u64,
) -> Result<Vec<Connection>, EvalError> {
    if profiles.len() < 2 {
        return Err(EvalError::TooFewProfiles(profiles.len()));
    }
    let per_profile: Vec<Vec<Connection>> = profiles
        .par_iter()
        .map(|p| generate_profile(p, duration, seed))
        .collect();
    Ok(per_profile.into_iter().flatten().collect())
}

/// The first `target` windows produced by consecutive connections of
/// `profile`.
pub fn generate_windows(
    profile: &SynthProfile,
    target: usize,
    config: &WindowConfig,
    seed: u64,
) -> Vec<TimeWindow> {
    let mut out = Vec::with_capacity(target);
    let mut index = 0;
    while out.len() < target {
        out.extend(segment(&generate_connection(profile, seed, index), config));
        index += 1;
    }
    out.truncate(target);
    out
}

/// Writes `connections` as one capture named after the profile keyword,
/// e.g. `synth_netflix.pcap`.
pub fn write_profile_pcap(
    dir: &Path,
    profile: &SynthProfile,
    connections: &[Connection],
) -> Result<PathBuf, PcapError> {
    let mut records: Vec<_> = connections
        .iter()
        .flat_map(Connection::to_records)
        .collect();
    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let path = dir.join(format!("synth_{}.pcap", profile.file_keyword));
    write_pcap(&path, &records)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_ordered() {
        let p = &default_profiles()[2];
        let a = generate_connection(p, 9, 3);
        assert_eq!(a, generate_connection(p, 9, 3));
        assert_ne!(a, generate_connection(p, 9, 4));
        assert!(a
            .packets
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn rejects_single_profile() {
        let p = default_profiles();
        assert_eq!(
            generate_synthetic(&p[..1], 10.0, 0),
            Err(EvalError::TooFewProfiles(1))
        );
    }
}
