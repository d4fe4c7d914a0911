use std::net::Ipv4Addr;

use proptest::prelude::*;
use trafficlens::ingest::{
    assemble_flows, micros_to_seconds, parse_pcap, parse_pcap_bytes, write_pcap, write_pcap_to,
    Direction, Endpoint, PacketRecord, Protocol,
};
use trafficlens::windowing::{segment, WindowConfig};

fn record(t_us: u64, forward: bool, size: u32, protocol: Protocol) -> PacketRecord {
    let a = Endpoint::new(Ipv4Addr::new(10, 0, 0, 1), 50_000);
    let b = Endpoint::new(Ipv4Addr::new(93, 184, 216, 34), 443);
    let (src, dst) = if forward { (a, b) } else { (b, a) };
    PacketRecord {
        timestamp: micros_to_seconds(t_us),
        src,
        dst,
        protocol,
        payload_size: size,
    }
}

#[test]
fn pcap_round_trip_is_exact() {
    let records: Vec<PacketRecord> = (0..200u64)
        .map(|i| {
            record(
                1_600_000_000_000_000 + i * 12_345,
                i % 3 != 0,
                (i * 37 % 1400) as u32,
                Protocol::Tcp,
            )
        })
        .collect();
    let bytes = write_pcap_to(Vec::new(), &records).unwrap();
    assert_eq!(parse_pcap_bytes(&bytes).unwrap(), records);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pcap");
    write_pcap(&path, &records).unwrap();
    assert_eq!(parse_pcap(&path).unwrap(), records);
}

#[test]
fn truncated_capture_is_an_error() {
    let records = vec![record(1_000_000, true, 100, Protocol::Udp); 3];
    let bytes = write_pcap_to(Vec::new(), &records).unwrap();
    assert!(parse_pcap_bytes(&bytes[..bytes.len() - 5]).is_err());
    assert!(parse_pcap_bytes(&bytes[..10]).is_err());
}

#[test]
fn flows_are_bidirectional() {
    let records = vec![
        record(0, true, 10, Protocol::Tcp),
        record(5, false, 20, Protocol::Tcp),
        record(9, true, 30, Protocol::Udp),
    ];
    let flows = assemble_flows(&records, "f.pcap");
    assert_eq!(flows.len(), 2);
    let tcp = flows
        .iter()
        .find(|c| c.key.protocol == Protocol::Tcp)
        .unwrap();
    let dirs: Vec<Direction> = tcp.packets.iter().map(|p| p.direction).collect();
    assert_eq!(dirs, [Direction::Forward, Direction::Backward]);
    assert_eq!(tcp.source_file, "f.pcap");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segments_partition_kept_packets(gaps in proptest::collection::vec(1u64..3_000_000, 1..400), min in 1usize..30) {
        let mut t = 0u64;
        let mut records = Vec::new();
        for (i, g) in gaps.iter().enumerate() {
            records.push(record(t, i % 2 == 0, 100 + i as u32, Protocol::Tcp));
            t += g;
        }
        let flows = assemble_flows(&records, "p.pcap");
        prop_assert_eq!(flows.len(), 1);
        let config = WindowConfig::new(40.96, 0.01, min).unwrap();
        let windows = segment(&flows[0], &config);
        let mut last_index = None;
        let mut kept = 0;
        for w in &windows {
            prop_assert!(w.events.len() >= min);
            prop_assert_eq!(w.num_bins(), 4096);
            prop_assert!(last_index.is_none_or(|l| w.source.index > l));
            last_index = Some(w.source.index);
            for e in &w.events {
                prop_assert!(e.timestamp >= 0.0 && e.timestamp < 40.96);
            }
            let bytes: f64 = w.forward_signal.iter().chain(&w.backward_signal).sum();
            let expected: f64 = w.events.iter().map(|e| f64::from(e.payload_size)).sum();
            prop_assert_eq!(bytes, expected);
            kept += w.events.len();
        }
        prop_assert!(kept <= records.len());
        if min == 1 {
            prop_assert_eq!(kept, records.len());
        }
    }
}
