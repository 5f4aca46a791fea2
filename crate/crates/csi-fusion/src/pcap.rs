//! Classic libpcap capture files, either byte order.

use crate::error::{Error, Reader, Result};

pub const MAGIC: u32 = 0xA1B2_C3D4;
pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub ts_sec: u32,
    pub ts_usec: u32,
    /// Length on the wire; may exceed `payload.len()` for truncated captures.
    pub orig_len: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapFile {
    pub big_endian: bool,
    pub version: (u16, u16),
    pub snaplen: u32,
    pub linktype: u32,
    pub records: Vec<PcapRecord>,
}

/// Parses the global header and every record in file order.
pub fn parse_pcap(bytes: &[u8]) -> Result<PcapFile> {
    let mut r = Reader::new(bytes, "pcap");
    let raw = r.u32_le()?;
    let big_endian = match raw {
        MAGIC => false,
        m if m.swap_bytes() == MAGIC => true,
        m => {
            return Err(Error::decode("pcap", 0, format!("bad magic {m:#010x}")));
        }
    };
    let u16_ = |r: &mut Reader| -> Result<u16> {
        r.u16_le()
            .map(|v| if big_endian { v.swap_bytes() } else { v })
    };
    let u32_ = |r: &mut Reader| -> Result<u32> {
        r.u32_le()
            .map(|v| if big_endian { v.swap_bytes() } else { v })
    };
    let version = (u16_(&mut r)?, u16_(&mut r)?);
    let _thiszone = u32_(&mut r)?;
    let _sigfigs = u32_(&mut r)?;
    let snaplen = u32_(&mut r)?;
    let linktype = u32_(&mut r)?;
    let mut records = Vec::new();
    while !r.is_empty() {
        let index = records.len();
        let at = r.pos() as u64;
        let header = (|| -> Result<(u32, u32, u32, u32)> {
            Ok((u32_(&mut r)?, u32_(&mut r)?, u32_(&mut r)?, u32_(&mut r)?))
        })()
        .map_err(|_| Error::decode("pcap", at, format!("truncated header of record {index}")))?;
        let (ts_sec, ts_usec, incl_len, orig_len) = header;
        let at = r.pos() as u64;
        let payload = r
            .take(incl_len as usize)
            .map_err(|_| {
                Error::decode(
                    "pcap",
                    at,
                    format!("record {index} claims {incl_len} bytes beyond end of file"),
                )
            })?
            .to_vec();
        records.push(PcapRecord {
            ts_sec,
            ts_usec,
            orig_len,
            payload,
        });
    }
    Ok(PcapFile {
        big_endian,
        version,
        snaplen,
        linktype,
        records,
    })
}

/// Serializes a capture in the requested byte order.
pub fn write_pcap(file: &PcapFile) -> Vec<u8> {
    let mut out = Vec::new();
    let be = file.big_endian;
    let u32_ = |out: &mut Vec<u8>, v: u32| {
        out.extend_from_slice(&if be { v.to_be_bytes() } else { v.to_le_bytes() })
    };
    u32_(&mut out, MAGIC);
    let v16 = |v: u16| if be { v.to_be_bytes() } else { v.to_le_bytes() };
    out.extend_from_slice(&v16(file.version.0));
    out.extend_from_slice(&v16(file.version.1));
    u32_(&mut out, 0);
    u32_(&mut out, 0);
    u32_(&mut out, file.snaplen);
    u32_(&mut out, file.linktype);
    for rec in &file.records {
        u32_(&mut out, rec.ts_sec);
        u32_(&mut out, rec.ts_usec);
        u32_(&mut out, rec.payload.len() as u32);
        u32_(&mut out, rec.orig_len);
        out.extend_from_slice(&rec.payload);
    }
    out
}

impl PcapFile {
    pub fn ethernet(records: Vec<PcapRecord>) -> Self {
        Self {
            big_endian: false,
            version: (2, 4),
            snaplen: 65_535,
            linktype: LINKTYPE_ETHERNET,
            records,
        }
    }
}
