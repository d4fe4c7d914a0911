use std::collections::HashMap;

use super::{Connection, Direction, FlowKey, PacketEvent, PacketRecord};

/// Groups records into bidirectional connections.
///
/// Connections are returned in order of their first packet. A packet is
/// `Forward` when its source matches the source of the connection's first
/// packet. No idle timeout is applied; a five-tuple is one connection for
/// the whole capture.
pub fn assemble_flows(records: &[PacketRecord], source_file: &str) -> Vec<Connection> {
    let mut index = HashMap::new();
    let mut conns: Vec<Connection> = Vec::new();

    let mut order: Vec<&PacketRecord> = records.iter().collect();
    // stable: equal timestamps keep capture order
    order.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    for rec in order {
        let key = FlowKey {
            forward: rec.src,
            backward: rec.dst,
            protocol: rec.protocol,
        };
        let slot = *index.entry(key.unordered()).or_insert_with(|| {
            conns.push(Connection {
                key,
                packets: Vec::new(),
                label: None,
                source_file: source_file.to_string(),
            });
            conns.len() - 1
        });
        let conn = &mut conns[slot];
        let direction = if rec.src == conn.key.forward {
            Direction::Forward
        } else {
            Direction::Backward
        };
        conn.packets.push(PacketEvent {
            timestamp: rec.timestamp,
            payload_size: rec.payload_size,
            direction,
        });
    }
    conns
}
