//! "CSIF" frames exchanged between receivers and the edge server.
//!
//! Header (16 bytes, big-endian): magic, u8 version, u8 type, u16 receiver,
//! u32 segment index, u32 payload length. Tensor payloads use big-endian
//! rank and dims with little-endian f32 values.

use std::io::{Read, Write};

use csi_fusion_core::nn::Tensor;

use crate::error::{put_f32s, Error, Reader, Result};

pub const MAGIC: &[u8; 4] = b"CSIF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const MAX_PAYLOAD: usize = 64 << 20;
const WHAT: &str = "CSIF frame";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Hello = 1,
    Features = 2,
    Prediction = 3,
    Bye = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Hello,
            2 => MsgType::Features,
            3 => MsgType::Prediction,
            4 => MsgType::Bye,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub version: u8,
    pub msg_type: MsgType,
    pub receiver_id: u16,
    pub segment_index: u32,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn new(msg_type: MsgType, receiver_id: u16, segment_index: u32, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            msg_type,
            receiver_id,
            segment_index,
            payload,
        }
    }
}

pub fn encode_frame(frame: &WireFrame) -> Result<Vec<u8>> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload of {} bytes exceeds the {MAX_PAYLOAD} byte limit",
            frame.payload.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(MAGIC);
    out.push(frame.version);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&frame.receiver_id.to_be_bytes());
    out.extend_from_slice(&frame.segment_index.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

struct Header {
    version: u8,
    msg_type: MsgType,
    receiver_id: u16,
    segment_index: u32,
    len: usize,
}

fn decode_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader::new(bytes, WHAT);
    if r.take(4)? != MAGIC {
        return Err(Error::decode(WHAT, 0, "bad magic, expected \"CSIF\""));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::decode(
            WHAT,
            4,
            format!("unsupported version {version}"),
        ));
    }
    let t = r.u8()?;
    let msg_type = MsgType::from_u8(t)
        .ok_or_else(|| Error::decode(WHAT, 5, format!("unknown message type {t}")))?;
    let receiver_id = r.u16_be()?;
    let segment_index = r.u32_be()?;
    let len = r.u32_be()? as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::decode(
            WHAT,
            12,
            format!("payload length {len} exceeds {MAX_PAYLOAD}"),
        ));
    }
    Ok(Header {
        version,
        msg_type,
        receiver_id,
        segment_index,
        len,
    })
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame> {
    let h = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < h.len {
        return Err(Error::decode(
            WHAT,
            bytes.len() as u64,
            format!("truncated payload: {} of {} bytes", body.len(), h.len),
        ));
    }
    if body.len() > h.len {
        return Err(Error::decode(
            WHAT,
            (HEADER_LEN + h.len) as u64,
            "trailing bytes",
        ));
    }
    Ok(WireFrame {
        version: h.version,
        msg_type: h.msg_type,
        receiver_id: h.receiver_id,
        segment_index: h.segment_index,
        payload: body.to_vec(),
    })
}

/// Reads one frame from a stream; `Ok(None)` on a clean end of stream.
pub fn read_frame(stream: &mut impl Read) -> Result<Option<WireFrame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match stream.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::decode(
                    WHAT,
                    got as u64,
                    "stream ended inside a header",
                ))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = decode_header(&header)?;
    let mut payload = vec![0u8; h.len];
    stream.read_exact(&mut payload).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::decode(WHAT, HEADER_LEN as u64, "stream ended inside a payload")
        } else {
            e.into()
        }
    })?;
    Ok(Some(WireFrame {
        version: h.version,
        msg_type: h.msg_type,
        receiver_id: h.receiver_id,
        segment_index: h.segment_index,
        payload,
    }))
}

pub fn write_frame(stream: &mut impl Write, frame: &WireFrame) -> Result<()> {
    stream.write_all(&encode_frame(frame)?)?;
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.rank() as u32).to_be_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    put_f32s(out, t.data());
}

fn get_tensor(r: &mut Reader) -> Result<Tensor<f32>> {
    let rank = r.u32_be()? as usize;
    if rank > 8 {
        return Err(r.err(format!("tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32_be()? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|c| c.checked_mul(4).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| r.err(format!("tensor {shape:?} exceeds payload")))?;
    Ok(Tensor::from_vec(&shape, r.f32s(count)?)?)
}

/// CSI and RSSI features of one segment from one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePayload {
    pub csi_feat: Tensor<f32>,
    pub rssi_feat: Tensor<f32>,
}

impl FeaturePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * (self.csi_feat.len() + self.rssi_feat.len()) + 40);
        put_tensor(&mut out, &self.csi_feat);
        put_tensor(&mut out, &self.rssi_feat);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "feature payload");
        let csi_feat = get_tensor(&mut r)?;
        let rssi_feat = get_tensor(&mut r)?;
        if !r.is_empty() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Self {
            csi_feat,
            rssi_feat,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: u16,
    pub confidence: f32,
}

impl Prediction {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.class.to_be_bytes().to_vec();
        out.extend_from_slice(&self.confidence.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "prediction payload");
        let class = r.u16_be()?;
        let confidence = r.f32_le()?;
        if !r.is_empty() {
            return Err(r.err("trailing bytes"));
        }
        Ok(Self { class, confidence })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_is_sixteen_bytes() {
        let f = WireFrame::new(MsgType::Hello, 1, 0, vec![]);
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..6], b"CSIF\x01\x01");
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let f = WireFrame::new(MsgType::Features, 0, 9, vec![7; 10]);
        let bytes = encode_frame(&f).unwrap();
        let err = decode_frame(&bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Decode { offset: 20, .. }), "{err}");
    }

    #[test]
    fn rejects_unknown_type_version_and_size() {
        let mut bytes = encode_frame(&WireFrame::new(MsgType::Bye, 0, 0, vec![])).unwrap();
        bytes[5] = 9;
        assert!(decode_frame(&bytes).is_err());
        bytes[5] = 4;
        bytes[4] = 2;
        assert!(decode_frame(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
        bytes[4] = 1;
        bytes[12..16].copy_from_slice(&((MAX_PAYLOAD + 1) as u32).to_be_bytes());
        assert!(decode_frame(&bytes)
            .unwrap_err()
            .to_string()
            .contains("exceeds"));
    }

    #[test]
    fn payloads_round_trip() {
        let p = FeaturePayload {
            csi_feat: Tensor::from_vec(&[2, 1, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, f32::MAX])
                .unwrap(),
            rssi_feat: Tensor::from_vec(&[2, 1], vec![0.25, -0.5]).unwrap(),
        };
        assert_eq!(FeaturePayload::decode(&p.encode()).unwrap(), p);
        let q = Prediction {
            class: 3,
            confidence: 0.75,
        };
        assert_eq!(Prediction::decode(&q.encode()).unwrap(), q);
    }

    #[test]
    fn stream_reading() {
        let a = WireFrame::new(MsgType::Hello, 2, 0, vec![]);
        let b = WireFrame::new(MsgType::Features, 2, 5, vec![1, 2, 3]);
        let mut buf = encode_frame(&a).unwrap();
        buf.extend(encode_frame(&b).unwrap());
        let mut cur = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cur).unwrap(), Some(a));
        assert_eq!(read_frame(&mut cur).unwrap(), Some(b));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }
}
