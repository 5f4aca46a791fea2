//! Domain types shared by every stage: decoded packets, per-receiver records,
//! model-ready segments and train/test splits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Passenger-count classes 0..=20.
pub const DEFAULT_CLASSES: usize = 21;

/// One raw in-phase/quadrature CSI value as reported by the extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Iq {
    pub re: i16,
    pub im: i16,
}

impl Iq {
    pub fn new(re: i16, im: i16) -> Self {
        Self { re, im }
    }

    pub fn amplitude(self) -> f64 {
        let (re, im) = (f64::from(self.re), f64::from(self.im));
        (re * re + im * im).sqrt()
    }
}

/// One decoded CSI packet. `csi` is in centered subcarrier order: position 0
/// holds subcarrier -S/2, position S-1 holds subcarrier S/2-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsiFrame {
    pub source_mac: [u8; 6],
    pub seq: u16,
    pub rssi_dbm: i8,
    pub frame_control: u8,
    pub chanspec: u16,
    pub core_spatial: u16,
    pub chip_version: u16,
    pub csi: Vec<Iq>,
}

impl CsiFrame {
    pub fn subcarriers(&self) -> usize {
        self.csi.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.csi.len(), 64 | 128 | 256) {
            return Err(Error::InvalidArgument(format!(
                "unsupported subcarrier count {}",
                self.csi.len()
            )));
        }
        if self.rssi_dbm > 0 {
            return Err(Error::InvalidArgument(format!(
                "rssi {} dBm is positive",
                self.rssi_dbm
            )));
        }
        Ok(())
    }
}

/// Amplitude matrix of one receiver over K packets and S subcarriers, with the
/// per-packet RSSI and the scene label.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecord {
    receiver_id: u16,
    subcarriers: usize,
    amplitudes: Vec<f64>,
    rssi: Vec<i32>,
    label: u16,
}

impl CsiRecord {
    pub fn new(
        receiver_id: u16,
        subcarriers: usize,
        amplitudes: Vec<f64>,
        rssi: Vec<i32>,
        label: u16,
    ) -> Result<Self> {
        if subcarriers == 0 {
            return Err(Error::InvalidArgument("zero subcarriers".into()));
        }
        if amplitudes.len() != rssi.len() * subcarriers {
            return Err(Error::Shape(format!(
                "{} amplitudes for {} packets x {} subcarriers",
                amplitudes.len(),
                rssi.len(),
                subcarriers
            )));
        }
        if let Some(pos) = amplitudes.iter().position(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "amplitude at flat index {pos} is negative or NaN"
            )));
        }
        Ok(Self {
            receiver_id,
            subcarriers,
            amplitudes,
            rssi,
            label,
        })
    }

    pub fn receiver_id(&self) -> u16 {
        self.receiver_id
    }

    pub fn label(&self) -> u16 {
        self.label
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn packets(&self) -> usize {
        self.rssi.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn rssi(&self) -> &[i32] {
        &self.rssi
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.amplitudes[k * self.subcarriers..(k + 1) * self.subcarriers]
    }

    pub fn into_parts(self) -> (u16, usize, Vec<f64>, Vec<i32>, u16) {
        (
            self.receiver_id,
            self.subcarriers,
            self.amplitudes,
            self.rssi,
            self.label,
        )
    }
}

/// Builds a record from decoded frames: rows ordered by sequence number
/// (stable), duplicate sequence numbers keep their first occurrence.
pub fn assemble_record(frames: &[CsiFrame], receiver_id: u16, label: u16) -> Result<CsiRecord> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to assemble".into()))?;
    let s = first.csi.len();
    if let Some(bad) = frames.iter().find(|f| f.csi.len() != s) {
        return Err(Error::Shape(format!(
            "frame seq {} has {} subcarriers, expected {s}",
            bad.seq,
            bad.csi.len()
        )));
    }
    let mut order: Vec<&CsiFrame> = frames.iter().collect();
    order.sort_by_key(|f| f.seq);
    order.dedup_by_key(|f| f.seq);

    let mut amplitudes = Vec::with_capacity(order.len() * s);
    let mut rssi = Vec::with_capacity(order.len());
    for f in order {
        amplitudes.extend(f.csi.iter().map(|iq| iq.amplitude()));
        rssi.push(i32::from(f.rssi_dbm));
    }
    CsiRecord::new(receiver_id, s, amplitudes, rssi, label)
}

/// A `t_w x s` window of preprocessed amplitudes and its RSSI trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub receiver_id: u16,
    pub segment_index: u32,
    pub label: u16,
    pub t_w: usize,
    pub subcarriers: usize,
    pub csi_window: Vec<f32>,
    pub rssi_window: Vec<f32>,
}

impl Segment {
    pub fn new(
        receiver_id: u16,
        segment_index: u32,
        label: u16,
        subcarriers: usize,
        csi_window: Vec<f32>,
        rssi_window: Vec<f32>,
    ) -> Result<Self> {
        let t_w = rssi_window.len();
        if t_w == 0 || subcarriers == 0 || csi_window.len() != t_w * subcarriers {
            return Err(Error::Shape(format!(
                "csi window of {} values does not match {t_w} rows x {subcarriers} subcarriers",
                csi_window.len()
            )));
        }
        Ok(Self {
            receiver_id,
            segment_index,
            label,
            t_w,
            subcarriers,
            csi_window,
            rssi_window,
        })
    }
}

/// Segments from all receivers for one time window. Segment `n` comes from
/// receiver `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBundle {
    segments: Vec<Segment>,
}

impl SampleBundle {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("bundle without segments".into()))?;
        for (n, seg) in segments.iter().enumerate() {
            if usize::from(seg.receiver_id) != n {
                return Err(Error::InvalidArgument(format!(
                    "segment at position {n} belongs to receiver {}",
                    seg.receiver_id
                )));
            }
            if seg.segment_index != first.segment_index || seg.label != first.label {
                return Err(Error::InvalidArgument(format!(
                    "receiver {n} has segment {} label {}, receiver 0 has segment {} label {}",
                    seg.segment_index, seg.label, first.segment_index, first.label
                )));
            }
            if seg.t_w != first.t_w || seg.subcarriers != first.subcarriers {
                return Err(Error::Shape(format!(
                    "receiver {n} window is {}x{}, receiver 0 is {}x{}",
                    seg.t_w, seg.subcarriers, first.t_w, first.subcarriers
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, n: usize) -> &Segment {
        &self.segments[n]
    }

    pub fn n_receivers(&self) -> usize {
        self.segments.len()
    }

    pub fn label(&self) -> u16 {
        self.segments[0].label
    }

    pub fn segment_index(&self) -> u32 {
        self.segments[0].segment_index
    }

    pub fn t_w(&self) -> usize {
        self.segments[0].t_w
    }

    pub fn subcarriers(&self) -> usize {
        self.segments[0].subcarriers
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleBundle>,
    pub test: Vec<SampleBundle>,
    pub n_classes: usize,
}

impl DatasetSplit {
    /// Shared geometry `(n_receivers, t_w, subcarriers)` of every bundle, or
    /// `None` for an empty split.
    pub fn dims(&self) -> Result<Option<(usize, usize, usize)>> {
        let mut dims = None;
        for b in self.train.iter().chain(&self.test) {
            let d = (b.n_receivers(), b.t_w(), b.subcarriers());
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Shape(format!(
                        "bundle geometry {d:?} differs from {prev:?}"
                    )))
                }
                _ => {}
            }
            if usize::from(b.label()) >= self.n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} outside {} classes",
                    b.label(),
                    self.n_classes
                )));
            }
        }
        Ok(dims)
    }
}

/// Per class, the first `floor(train_fraction * count)` bundles by segment
/// index go to train and the rest to test. Contiguous splits keep overlapping
/// windows from straddling the boundary in bulk.
pub fn split_dataset(
    bundles: Vec<SampleBundle>,
    train_fraction: f64,
    n_classes: usize,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("no bundles to split".into()));
    }
    let mut per_class: BTreeMap<u16, Vec<SampleBundle>> = BTreeMap::new();
    for b in bundles {
        if usize::from(b.label()) >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside {n_classes} classes",
                b.label()
            )));
        }
        per_class.entry(b.label()).or_default().push(b);
    }
    if let Some(class) = (0..n_classes as u16).find(|c| !per_class.contains_key(c)) {
        return Err(Error::EmptyClass { class });
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        n_classes,
    };
    for (_, mut group) in per_class {
        group.sort_by_key(|b| b.segment_index());
        let n_train = (train_fraction * group.len() as f64 + 1e-9).floor() as usize;
        let test = group.split_off(n_train);
        split.train.extend(group);
        split.test.extend(test);
    }
    split.dims()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bundle(label: u16, index: u32) -> SampleBundle {
        let seg = Segment::new(0, index, label, 2, vec![0.0; 4], vec![-40.0; 2]).unwrap();
        SampleBundle::new(vec![seg]).unwrap()
    }

    #[test]
    fn split_counts_match_reported_dataset() {
        let bundles: Vec<_> = (0..21)
            .flat_map(|c| (0..790).map(move |i| bundle(c, i)))
            .collect();
        let split = split_dataset(bundles, 0.8, 21).unwrap();
        assert_eq!(split.train.len(), 13_272);
        assert_eq!(split.test.len(), 3_318);
    }

    #[test]
    fn split_halves_contiguously() {
        let bundles: Vec<_> = (0..10).rev().map(|i| bundle(0, i)).collect();
        let split = split_dataset(bundles, 0.5, 1).unwrap();
        let train: Vec<u32> = split.train.iter().map(|b| b.segment_index()).collect();
        assert_eq!(train, vec![0, 1, 2, 3, 4]);
        assert_eq!(split.test.len(), 5);
    }

    #[test]
    fn split_floors_fraction() {
        let bundles: Vec<_> = (0..7).map(|i| bundle(0, i)).collect();
        let split = split_dataset(bundles, 0.8, 1).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (5, 2));
    }

    #[test]
    fn split_reports_empty_class() {
        let bundles = vec![bundle(0, 0), bundle(2, 0)];
        assert_eq!(
            split_dataset(bundles, 0.5, 3),
            Err(Error::EmptyClass { class: 1 })
        );
    }

    #[test]
    fn bundle_rejects_mismatched_receivers() {
        let a = Segment::new(0, 3, 1, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        let b = Segment::new(1, 4, 1, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        assert!(SampleBundle::new(vec![a.clone(), b]).is_err());
        let c = Segment::new(1, 3, 2, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        assert!(SampleBundle::new(vec![a.clone(), c]).is_err());
        let d = Segment::new(0, 3, 1, 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        assert!(SampleBundle::new(vec![a, d]).is_err());
    }

    fn frame(seq: u16, iq: Iq) -> CsiFrame {
        CsiFrame {
            source_mac: [0; 6],
            seq,
            rssi_dbm: -(seq as i8),
            frame_control: 0,
            chanspec: 0,
            core_spatial: 0,
            chip_version: 0,
            csi: vec![iq; 64],
        }
    }

    #[test]
    fn assemble_sorts_by_sequence() {
        let frames = vec![
            frame(2, Iq::new(2, 0)),
            frame(0, Iq::new(0, 0)),
            frame(1, Iq::new(1, 0)),
        ];
        let rec = assemble_record(&frames, 0, 3).unwrap();
        assert_eq!(rec.rssi(), &[0, -1, -2]);
        assert_eq!(rec.row(2)[0], 2.0);
    }

    #[test]
    fn assemble_amplitude_is_modulus() {
        let rec = assemble_record(&[frame(0, Iq::new(1, 1))], 0, 0).unwrap();
        assert!((rec.row(0)[5] - core::f64::consts::SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn assemble_drops_duplicate_sequence_keeping_first() {
        let frames = vec![
            frame(5, Iq::new(3, 4)),
            frame(4, Iq::new(0, 0)),
            frame(5, Iq::new(6, 8)),
        ];
        let rec = assemble_record(&frames, 0, 0).unwrap();
        assert_eq!(rec.packets(), 2);
        assert_eq!(rec.row(1)[0], 5.0);
    }

    #[test]
    fn assemble_rejects_empty() {
        assert!(assemble_record(&[], 0, 0).is_err());
    }
}
