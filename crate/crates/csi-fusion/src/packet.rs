//! Ethernet II / IPv4 / UDP demultiplexing.

use log::warn;

pub const DEFAULT_CSI_PORT: u16 = 5500;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const PROTO_UDP: u8 = 17;

/// UDP payload of an Ethernet frame iff it is IPv4/UDP to `port`.
pub fn extract_csi_udp(frame: &[u8], port: u16) -> Option<&[u8]> {
    if frame.len() < 14 {
        return None;
    }
    let mut off = 12;
    let mut ethertype = u16::from_be_bytes([frame[off], frame[off + 1]]);
    if ethertype == ETHERTYPE_VLAN && frame.len() >= 18 {
        off += 4;
        ethertype = u16::from_be_bytes([frame[off], frame[off + 1]]);
    }
    if ethertype != ETHERTYPE_IPV4 {
        return None;
    }
    let ip = &frame[off + 2..];
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = usize::from(ip[0] & 0x0F) * 4;
    if ihl < 20 || ihl > ip.len() {
        warn!(
            "skipping IPv4 packet with header length {ihl} of {} bytes",
            ip.len()
        );
        return None;
    }
    if ip[9] != PROTO_UDP {
        return None;
    }
    let total = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    let ip = if total >= ihl && total <= ip.len() {
        &ip[..total]
    } else {
        ip
    };
    let udp = &ip[ihl..];
    if udp.len() < 8 {
        return None;
    }
    let dst = u16::from_be_bytes([udp[2], udp[3]]);
    if dst != port {
        return None;
    }
    let len = usize::from(u16::from_be_bytes([udp[4], udp[5]]));
    let end = if len >= 8 && len <= udp.len() {
        len
    } else {
        udp.len()
    };
    Some(&udp[8..end])
}

/// Ethernet/IPv4/UDP frame carrying `payload`, for fixtures and replay.
pub fn build_udp_frame(src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(42 + payload.len());
    f.extend_from_slice(&[0xFF; 6]);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    let total = (20 + 8 + payload.len()) as u16;
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&total.to_be_bytes());
    ip[8] = 64;
    ip[9] = PROTO_UDP;
    ip[12..16].copy_from_slice(&[10, 10, 10, 10]);
    ip[16..20].copy_from_slice(&[255, 255, 255, 255]);
    let sum = ip_checksum(&ip);
    ip[10..12].copy_from_slice(&sum.to_be_bytes());
    f.extend_from_slice(&ip);
    f.extend_from_slice(&src_port.to_be_bytes());
    f.extend_from_slice(&dst_port.to_be_bytes());
    f.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(payload);
    f
}

fn ip_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}
