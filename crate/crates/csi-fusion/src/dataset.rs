//! "CSD1" dataset files.
//!
//! Little-endian. Header: magic, then u32 L, N, T_w, S', train count, test
//! count. Each bundle: u16 label, u32 segment index, then per receiver the
//! T_w·S' CSI values followed by the T_w RSSI values, all f32.

use std::path::Path;

use csi_fusion_core::data::{DatasetSplit, SampleBundle, Segment};

use crate::error::{put_f32s, read_file, write_file, Error, Reader, Result};

pub const MAGIC: &[u8; 4] = b"CSD1";
const WHAT: &str = "CSD1 dataset";

pub fn encode_dataset(split: &DatasetSplit) -> Result<Vec<u8>> {
    let (n, t_w, s) = split.dims()?.unwrap_or((0, 0, 0));
    let per_bundle = 6 + n * (t_w * s + t_w) * 4;
    let mut out = Vec::with_capacity(28 + per_bundle * (split.train.len() + split.test.len()));
    out.extend_from_slice(MAGIC);
    for v in [
        split.n_classes,
        n,
        t_w,
        s,
        split.train.len(),
        split.test.len(),
    ] {
        let v = u32::try_from(v).map_err(|_| Error::Usage(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for b in split.train.iter().chain(&split.test) {
        out.extend_from_slice(&b.label().to_le_bytes());
        out.extend_from_slice(&b.segment_index().to_le_bytes());
        for seg in b.segments() {
            put_f32s(&mut out, &seg.csi_window);
            put_f32s(&mut out, &seg.rssi_window);
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetSplit> {
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != MAGIC {
        return Err(Error::decode(WHAT, 0, "bad magic, expected \"CSD1\""));
    }
    let mut h = [0usize; 6];
    for v in &mut h {
        *v = r.u32_le()? as usize;
    }
    let [l, n, t_w, s, n_train, n_test] = h;
    let bundle_bytes = t_w
        .checked_mul(s)
        .and_then(|ts| ts.checked_add(t_w))
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(6));
    let total = bundle_bytes.and_then(|b| b.checked_mul(n_train.checked_add(n_test)?));
    match total {
        Some(t) if t <= r.remaining() => {}
        Some(t) => {
            return Err(r.err(format!(
                "truncated: {t} bytes of bundles declared, {} present",
                r.remaining()
            )));
        }
        None => return Err(Error::decode(WHAT, 4, "dimension overflow")),
    }
    if n == 0 && n_train + n_test > 0 {
        return Err(Error::decode(WHAT, 8, "bundles without receivers"));
    }
    let mut read_bundles = |count: usize| -> Result<Vec<SampleBundle>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos() as u64;
            let label = r.u16_le()?;
            let index = r.u32_le()?;
            let segments = (0..n)
                .map(|rx| {
                    let csi = r.f32s(t_w * s)?;
                    let rssi = r.f32s(t_w)?;
                    Ok(Segment::new(rx as u16, index, label, s, csi, rssi)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let b =
                SampleBundle::new(segments).map_err(|e| Error::decode(WHAT, at, e.to_string()))?;
            if usize::from(label) >= l {
                return Err(Error::decode(
                    WHAT,
                    at,
                    format!("label {label} outside {l} classes"),
                ));
            }
            out.push(b);
        }
        Ok(out)
    };
    let train = read_bundles(n_train)?;
    let test = read_bundles(n_test)?;
    if !r.is_empty() {
        return Err(r.err("trailing bytes after the last bundle"));
    }
    Ok(DatasetSplit {
        train,
        test,
        n_classes: l,
    })
}

pub fn write_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(split)?)
}

pub fn read_dataset(path: &Path) -> Result<DatasetSplit> {
    decode_dataset(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(label: u16, index: u32) -> SampleBundle {
        let segs = (0..2)
            .map(|n| {
                let csi = (0..6)
                    .map(|i| (i as f32) * 0.5 + f32::from(label) + n as f32)
                    .collect();
                Segment::new(n, index, label, 3, csi, vec![-40.0, -41.5]).unwrap()
            })
            .collect();
        SampleBundle::new(segs).unwrap()
    }

    #[test]
    fn empty_test_list_round_trips() {
        let split = DatasetSplit {
            train: vec![bundle(0, 0), bundle(1, 0)],
            test: vec![],
            n_classes: 2,
        };
        let bytes = encode_dataset(&split).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), split);
        assert_eq!(
            encode_dataset(&decode_dataset(&bytes).unwrap()).unwrap(),
            bytes
        );
    }

    #[test]
    fn corrupt_magic_names_offset_zero() {
        let split = DatasetSplit {
            train: vec![bundle(0, 0)],
            test: vec![bundle(0, 1)],
            n_classes: 1,
        };
        let mut bytes = encode_dataset(&split).unwrap();
        bytes[0] ^= 0xFF;
        let err = decode_dataset(&bytes).unwrap_err();
        assert!(matches!(err, Error::Decode { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncation_and_overflow() {
        let split = DatasetSplit {
            train: vec![bundle(0, 0)],
            test: vec![],
            n_classes: 1,
        };
        let bytes = encode_dataset(&split).unwrap();
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        let mut big = bytes.clone();
        big[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        big[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_dataset(&big).is_err());
    }
}
