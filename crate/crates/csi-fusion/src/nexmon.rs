//! Nexmon-style CSI UDP payloads: an 18-byte little-endian header followed by
//! `S` (i16 real, i16 imag) pairs in FFT order.

use csi_fusion_core::data::{CsiFrame, Iq};

use crate::error::{Error, Reader, Result};

pub const MAGIC: u16 = 0x1111;
pub const HEADER_LEN: usize = 18;

/// Centered position of FFT bin `i`.
pub fn centered_index(i: usize, s: usize) -> usize {
    (i + s / 2) % s
}

pub fn decode_nexmon_frame(payload: &[u8], subcarriers: usize) -> Result<CsiFrame> {
    let expected = HEADER_LEN + 4 * subcarriers;
    if payload.len() != expected {
        return Err(Error::decode(
            "nexmon frame",
            0,
            format!(
                "length {} does not match expected {expected} for {subcarriers} subcarriers",
                payload.len()
            ),
        ));
    }
    let mut r = Reader::new(payload, "nexmon frame");
    let magic = r.u16_le()?;
    if magic != MAGIC {
        return Err(Error::decode(
            "nexmon frame",
            0,
            format!("bad magic {magic:#06x}"),
        ));
    }
    let rssi_dbm = r.u8()? as i8;
    let frame_control = r.u8()?;
    let source_mac: [u8; 6] = r.take(6)?.try_into().expect("sized");
    let seq = r.u16_le()?;
    let core_spatial = r.u16_le()?;
    let chanspec = r.u16_le()?;
    let chip_version = r.u16_le()?;
    let mut csi = vec![Iq::default(); subcarriers];
    for i in 0..subcarriers {
        let re = r.i16_le()?;
        let im = r.i16_le()?;
        csi[centered_index(i, subcarriers)] = Iq::new(re, im);
    }
    Ok(CsiFrame {
        source_mac,
        seq,
        rssi_dbm,
        frame_control,
        chanspec,
        core_spatial,
        chip_version,
        csi,
    })
}

/// Inverse of [`decode_nexmon_frame`].
pub fn encode_nexmon_frame(frame: &CsiFrame) -> Vec<u8> {
    let s = frame.csi.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * s);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(frame.rssi_dbm as u8);
    out.push(frame.frame_control);
    out.extend_from_slice(&frame.source_mac);
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.core_spatial.to_le_bytes());
    out.extend_from_slice(&frame.chanspec.to_le_bytes());
    out.extend_from_slice(&frame.chip_version.to_le_bytes());
    for i in 0..s {
        let iq = frame.csi[centered_index(i, s)];
        out.extend_from_slice(&iq.re.to_le_bytes());
        out.extend_from_slice(&iq.im.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(s: usize) -> CsiFrame {
        CsiFrame {
            source_mac: [1, 2, 3, 4, 5, 6],
            seq: 9,
            rssi_dbm: -40,
            frame_control: 0x08,
            chanspec: 0xE02A,
            core_spatial: 0,
            chip_version: 0x4345,
            csi: vec![Iq::default(); s],
        }
    }

    #[test]
    fn rssi_byte_is_twos_complement() {
        let mut bytes = encode_nexmon_frame(&frame(256));
        bytes[2] = 0xD8;
        assert_eq!(decode_nexmon_frame(&bytes, 256).unwrap().rssi_dbm, -40);
    }

    #[test]
    fn zero_csi_decodes_to_zero_amplitudes() {
        let bytes = encode_nexmon_frame(&frame(256));
        let f = decode_nexmon_frame(&bytes, 256).unwrap();
        assert!(f.csi.iter().all(|iq| iq.amplitude() == 0.0));
    }

    #[test]
    fn fft_bin_zero_lands_at_center() {
        let mut bytes = encode_nexmon_frame(&frame(256));
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&[3, 0, 4, 0]);
        let f = decode_nexmon_frame(&bytes, 256).unwrap();
        assert_eq!(f.csi[128], Iq::new(3, 4));
        assert_eq!(f.csi[128].amplitude(), 5.0);
    }

    #[test]
    fn half_shift_twice_is_identity() {
        for s in [64, 128, 256] {
            assert!((0..s).all(|i| centered_index(centered_index(i, s), s) == i));
        }
    }

    #[test]
    fn length_and_magic_errors() {
        let bytes = encode_nexmon_frame(&frame(64));
        let err = decode_nexmon_frame(&bytes, 128).unwrap_err().to_string();
        assert!(err.contains("274") && err.contains("530"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(decode_nexmon_frame(&bad, 64)
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }
}
