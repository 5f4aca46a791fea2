//! PCAP capture → CSI record.

use csi_fusion_core::data::{assemble_record, CsiFrame, CsiRecord};
use log::{info, warn};

use crate::error::{Error, Result};
use crate::nexmon::decode_nexmon_frame;
use crate::packet::extract_csi_udp;
use crate::pcap::{parse_pcap, LINKTYPE_ETHERNET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestStats {
    pub records: usize,
    pub csi_packets: usize,
    pub rejected: usize,
}

/// Every decodable CSI frame sent to `port`, in capture order.
pub fn frames_from_pcap(
    bytes: &[u8],
    port: u16,
    subcarriers: usize,
) -> Result<(Vec<CsiFrame>, IngestStats)> {
    let pcap = parse_pcap(bytes)?;
    if pcap.linktype != LINKTYPE_ETHERNET {
        return Err(Error::decode(
            "pcap",
            20,
            format!("link type {} is not Ethernet", pcap.linktype),
        ));
    }
    let mut stats = IngestStats {
        records: pcap.records.len(),
        ..Default::default()
    };
    let mut frames = Vec::new();
    for (i, rec) in pcap.records.iter().enumerate() {
        let Some(payload) = extract_csi_udp(&rec.payload, port) else {
            continue;
        };
        stats.csi_packets += 1;
        match decode_nexmon_frame(payload, subcarriers) {
            Ok(f) => frames.push(f),
            Err(e) => {
                stats.rejected += 1;
                warn!("record {i}: {e}");
            }
        }
    }
    info!(
        "{} records, {} on port {port}, {} rejected",
        stats.records, stats.csi_packets, stats.rejected
    );
    Ok((frames, stats))
}

pub fn ingest_pcap(
    bytes: &[u8],
    port: u16,
    subcarriers: usize,
    receiver_id: u16,
    label: u16,
) -> Result<CsiRecord> {
    let (frames, _) = frames_from_pcap(bytes, port, subcarriers)?;
    if frames.is_empty() {
        return Err(Error::decode(
            "pcap",
            0,
            format!("no CSI frames on UDP port {port}"),
        ));
    }
    Ok(assemble_record(&frames, receiver_id, label)?)
}
