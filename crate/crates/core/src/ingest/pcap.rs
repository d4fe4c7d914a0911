//! Classic libpcap reader and writer (Ethernet link layer, IPv4 TCP/UDP).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use super::{micros_to_seconds, seconds_to_micros, Endpoint, PacketRecord, Protocol};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const LINKTYPE_ETHERNET: u32 = 1;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pcap global header: {0}")]
    MalformedHeader(String),
    #[error("unsupported link type {0} (only Ethernet is supported)")]
    UnsupportedLinkType(u32),
    #[error("truncated packet record at byte offset {offset}")]
    TruncatedPacket { offset: usize },
    #[error("malformed packet at byte offset {offset}: {reason}")]
    MalformedPacket { offset: usize, reason: &'static str },
    #[error("IPv6 packet at byte offset {offset}; only IPv4 captures are supported")]
    Ipv6Unsupported { offset: usize },
    #[error("payload of {0} bytes does not fit in an IPv4 packet")]
    PayloadTooLarge(u32),
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Reads a classic pcap file from disk.
pub fn parse_pcap(path: impl AsRef<Path>) -> Result<Vec<PacketRecord>, PcapError> {
    let bytes = std::fs::read(path)?;
    parse_pcap_bytes(&bytes)
}

/// Parses an in-memory classic pcap capture.
///
/// Non-IP frames, non-TCP/UDP IPv4 packets, and non-initial fragments are
/// skipped. IPv6 frames are rejected.
pub fn parse_pcap_bytes(data: &[u8]) -> Result<Vec<PacketRecord>, PcapError> {
    if data.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::MalformedHeader(format!(
            "expected {GLOBAL_HEADER_LEN} bytes, found {}",
            data.len()
        )));
    }
    let raw_magic = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let (endian, nanos) = match raw_magic {
        MAGIC_MICROS => (Endian::Little, false),
        MAGIC_NANOS => (Endian::Little, true),
        m if m.swap_bytes() == MAGIC_MICROS => (Endian::Big, false),
        m if m.swap_bytes() == MAGIC_NANOS => (Endian::Big, true),
        m => return Err(PcapError::MalformedHeader(format!("bad magic {m:#010x}"))),
    };
    let linktype = endian.u32(&data[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }

    let mut records = Vec::new();
    let mut offset = GLOBAL_HEADER_LEN;
    while offset < data.len() {
        if data.len() - offset < RECORD_HEADER_LEN {
            return Err(PcapError::TruncatedPacket { offset });
        }
        let hdr = &data[offset..offset + RECORD_HEADER_LEN];
        let ts_sec = u64::from(endian.u32(&hdr[0..4]));
        let ts_frac = u64::from(endian.u32(&hdr[4..8]));
        let incl_len = endian.u32(&hdr[8..12]) as usize;
        let frame_start = offset + RECORD_HEADER_LEN;
        if data.len() - frame_start < incl_len {
            return Err(PcapError::TruncatedPacket { offset });
        }
        let micros = if nanos {
            ts_sec * 1_000_000 + ts_frac / 1000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        let frame = &data[frame_start..frame_start + incl_len];
        if let Some(rec) = parse_ethernet(frame, micros_to_seconds(micros), offset)? {
            records.push(rec);
        }
        offset = frame_start + incl_len;
    }
    Ok(records)
}

fn parse_ethernet(
    frame: &[u8],
    timestamp: f64,
    offset: usize,
) -> Result<Option<PacketRecord>, PcapError> {
    if frame.len() < 14 {
        return Ok(None);
    }
    let mut ethertype = be16(&frame[12..14]);
    let mut l3 = 14;
    while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
        if frame.len() < l3 + 4 {
            return Ok(None);
        }
        ethertype = be16(&frame[l3 + 2..l3 + 4]);
        l3 += 4;
    }
    match ethertype {
        ETHERTYPE_IPV4 => parse_ipv4(&frame[l3..], timestamp, offset),
        ETHERTYPE_IPV6 => Err(PcapError::Ipv6Unsupported { offset }),
        _ => Ok(None),
    }
}

fn parse_ipv4(ip: &[u8], timestamp: f64, offset: usize) -> Result<Option<PacketRecord>, PcapError> {
    let malformed = |reason| PcapError::MalformedPacket { offset, reason };
    if ip.len() < 20 {
        return Err(malformed("IPv4 header cut short"));
    }
    if ip[0] >> 4 != 4 {
        return Err(malformed("IP version field is not 4"));
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(malformed("invalid IPv4 header length"));
    }
    let total_len = usize::from(be16(&ip[2..4]));
    if total_len < ihl {
        return Err(malformed("IPv4 total length smaller than header"));
    }
    let frag_offset = be16(&ip[6..8]) & 0x1fff;
    if frag_offset != 0 {
        return Ok(None);
    }
    let protocol = match ip[9] {
        6 => Protocol::Tcp,
        17 => Protocol::Udp,
        _ => return Ok(None),
    };
    let src_addr = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_addr = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let l4 = &ip[ihl..];
    let (src_port, dst_port, l4_header) = match protocol {
        Protocol::Tcp => {
            if l4.len() < 20 {
                return Err(malformed("TCP header cut short"));
            }
            let data_offset = usize::from(l4[12] >> 4) * 4;
            if data_offset < 20 {
                return Err(malformed("invalid TCP data offset"));
            }
            (be16(&l4[0..2]), be16(&l4[2..4]), data_offset)
        }
        Protocol::Udp => {
            if l4.len() < 8 {
                return Err(malformed("UDP header cut short"));
            }
            (be16(&l4[0..2]), be16(&l4[2..4]), 8)
        }
    };
    let payload = total_len
        .checked_sub(ihl + l4_header)
        .ok_or_else(|| malformed("transport header exceeds IPv4 total length"))?;
    Ok(Some(PacketRecord {
        timestamp,
        src: Endpoint::new(src_addr, src_port),
        dst: Endpoint::new(dst_addr, dst_port),
        protocol,
        payload_size: payload as u32,
    }))
}

/// Streaming classic-pcap writer producing little-endian, microsecond
/// captures with zero-filled payloads.
pub struct PcapWriter<W: Write> {
    out: W,
    frame: Vec<u8>,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> Result<Self, PcapError> {
        let mut hdr = Vec::with_capacity(GLOBAL_HEADER_LEN);
        hdr.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
        hdr.extend_from_slice(&2u16.to_le_bytes());
        hdr.extend_from_slice(&4u16.to_le_bytes());
        hdr.extend_from_slice(&0i32.to_le_bytes());
        hdr.extend_from_slice(&0u32.to_le_bytes());
        hdr.extend_from_slice(&65535u32.to_le_bytes());
        hdr.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        out.write_all(&hdr)?;
        Ok(Self {
            out,
            frame: Vec::with_capacity(1600),
        })
    }

    pub fn write_record(&mut self, rec: &PacketRecord) -> Result<(), PcapError> {
        let l4_len = match rec.protocol {
            Protocol::Tcp => 20usize,
            Protocol::Udp => 8usize,
        };
        let ip_total = 20 + l4_len + rec.payload_size as usize;
        if ip_total > usize::from(u16::MAX) {
            return Err(PcapError::PayloadTooLarge(rec.payload_size));
        }

        let f = &mut self.frame;
        f.clear();
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
        f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

        let ip_start = f.len();
        f.push(0x45);
        f.push(0);
        f.extend_from_slice(&(ip_total as u16).to_be_bytes());
        f.extend_from_slice(&[0, 0, 0x40, 0]);
        f.push(64);
        f.push(rec.protocol.ip_number());
        f.extend_from_slice(&[0, 0]);
        f.extend_from_slice(&rec.src.addr.octets());
        f.extend_from_slice(&rec.dst.addr.octets());
        let csum = ipv4_checksum(&f[ip_start..ip_start + 20]);
        f[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

        f.extend_from_slice(&rec.src.port.to_be_bytes());
        f.extend_from_slice(&rec.dst.port.to_be_bytes());
        match rec.protocol {
            Protocol::Tcp => {
                f.extend_from_slice(&[0; 8]);
                f.push(5 << 4);
                f.push(0x18);
                f.extend_from_slice(&[0xff, 0xff, 0, 0, 0, 0]);
            }
            Protocol::Udp => {
                f.extend_from_slice(&((8 + rec.payload_size) as u16).to_be_bytes());
                f.extend_from_slice(&[0, 0]);
            }
        }
        f.resize(f.len() + rec.payload_size as usize, 0);

        let micros = seconds_to_micros(rec.timestamp);
        let sec = u32::try_from(micros / 1_000_000)
            .map_err(|_| PcapError::MalformedHeader("timestamp beyond 32-bit seconds".into()))?;
        let usec = (micros % 1_000_000) as u32;
        let len = f.len() as u32;
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        hdr[0..4].copy_from_slice(&sec.to_le_bytes());
        hdr[4..8].copy_from_slice(&usec.to_le_bytes());
        hdr[8..12].copy_from_slice(&len.to_le_bytes());
        hdr[12..16].copy_from_slice(&len.to_le_bytes());
        self.out.write_all(&hdr)?;
        self.out.write_all(f)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, PcapError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Writes records, in the given order, as a capture file.
pub fn write_pcap(path: impl AsRef<Path>, records: &[PacketRecord]) -> Result<(), PcapError> {
    let file = BufWriter::new(File::create(path)?);
    write_pcap_to(file, records)?;
    Ok(())
}

pub fn write_pcap_to<W: Write>(out: W, records: &[PacketRecord]) -> Result<W, PcapError> {
    let mut w = PcapWriter::new(out)?;
    for rec in records {
        w.write_record(rec)?;
    }
    w.finish()
}
