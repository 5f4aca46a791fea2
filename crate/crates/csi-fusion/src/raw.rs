//! "CSR1" raw amplitude records as produced by `ingest` and `synth --raw`.
//!
//! Layout, little-endian: magic, u16 receiver, u16 label, u32 S, u32 K,
//! K × i32 RSSI, K·S × f64 amplitudes.

use std::path::Path;

use csi_fusion_core::data::CsiRecord;

use crate::error::{read_file, write_file, Error, Reader, Result};

pub const MAGIC: &[u8; 4] = b"CSR1";

pub fn encode_record(record: &CsiRecord) -> Vec<u8> {
    let k = record.packets();
    let s = record.subcarriers();
    let mut out = Vec::with_capacity(16 + 4 * k + 8 * k * s);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&record.receiver_id().to_le_bytes());
    out.extend_from_slice(&record.label().to_le_bytes());
    out.extend_from_slice(&(s as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for r in record.rssi() {
        out.extend_from_slice(&r.to_le_bytes());
    }
    for a in record.amplitudes() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

pub fn decode_record(bytes: &[u8]) -> Result<CsiRecord> {
    let mut r = Reader::new(bytes, "CSR1 record");
    if r.take(4)? != MAGIC {
        return Err(Error::decode("CSR1 record", 0, "bad magic"));
    }
    let receiver = r.u16_le()?;
    let label = r.u16_le()?;
    let s = r.u32_le()? as usize;
    let k = r.u32_le()? as usize;
    let need = k
        .checked_mul(s)
        .and_then(|ks| ks.checked_mul(8))
        .and_then(|b| b.checked_add(4 * k))
        .filter(|&b| b <= r.remaining())
        .ok_or_else(|| {
            r.err(format!(
                "{k} x {s} record exceeds the {} remaining bytes",
                r.remaining()
            ))
        })?;
    let body = r.take(need)?;
    if !r.is_empty() {
        return Err(r.err("trailing bytes"));
    }
    let (rssi_bytes, amp_bytes) = body.split_at(4 * k);
    let rssi = rssi_bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().expect("sized")))
        .collect();
    let amps = amp_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("sized")))
        .collect();
    Ok(CsiRecord::new(receiver, s, amps, rssi, label)?)
}

pub fn write_record(path: &Path, record: &CsiRecord) -> Result<()> {
    write_file(path, &encode_record(record))
}

pub fn read_record(path: &Path) -> Result<CsiRecord> {
    decode_record(&read_file(path)?)
}
