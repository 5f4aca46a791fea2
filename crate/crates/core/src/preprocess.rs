//! Amplitude preprocessing: guard/DC removal, Savitzky-Golay smoothing along
//! time, RSSI-assisted power rescaling and overlapping window segmentation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{CsiRecord, SampleBundle, Segment};
use crate::error::{Error, Result};
use crate::linalg::polyfit_eval_weights;

/// Null subcarriers (centered indices) of the usual OFDM layouts: guard bands
/// at both edges plus DC. 256 and 128 subcarriers lose 14, 64 lose 8. Other
/// sizes drop the lowest guard and DC.
pub fn default_null_indices(subcarriers: usize) -> Vec<i32> {
    let half = (subcarriers / 2) as i32;
    match subcarriers {
        256 => (-128..=-123).chain(-1..=1).chain(123..=127).collect(),
        128 => (-64..=-59).chain(-1..=1).chain(59..=63).collect(),
        64 => (-32..=-29).chain(0..=0).chain(29..=31).collect(),
        _ => vec![-half, 0],
    }
}

/// Order of the smoothing and rescaling stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageOrder {
    /// Smooth first so the power normalisation sees denoised amplitudes.
    #[default]
    FilterThenRescale,
    RescaleThenFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SavGol {
    pub window: usize,
    pub polyorder: usize,
}

impl Default for SavGol {
    fn default() -> Self {
        Self {
            window: 11,
            polyorder: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub null_indices: Vec<i32>,
    /// `None` disables smoothing.
    pub savgol: Option<SavGol>,
    pub t_w: usize,
    pub t_s: usize,
    pub decimation: usize,
    pub order: StageOrder,
}

impl PreprocessConfig {
    pub fn for_subcarriers(subcarriers: usize) -> Self {
        Self {
            null_indices: default_null_indices(subcarriers),
            savgol: Some(SavGol::default()),
            t_w: 300,
            t_s: 150,
            decimation: 1,
            order: StageOrder::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sg) = self.savgol {
            check_savgol(sg.window, sg.polyorder)?;
        }
        if self.t_w == 0 || self.t_s == 0 || self.decimation == 0 {
            return Err(Error::InvalidArgument(format!(
                "t_w={}, t_s={}, decimation={} must all be positive",
                self.t_w, self.t_s, self.decimation
            )));
        }
        Ok(())
    }
}

fn check_savgol(window: usize, polyorder: usize) -> Result<()> {
    if window.is_multiple_of(2) || window <= polyorder {
        return Err(Error::InvalidArgument(format!(
            "savitzky-golay window {window} must be odd and exceed order {polyorder}"
        )));
    }
    Ok(())
}

/// Drops the columns at the given centered subcarrier indices, keeping the
/// survivors in order. RSSI is untouched.
pub fn remove_null_subcarriers(record: &CsiRecord, null_indices: &[i32]) -> Result<CsiRecord> {
    let s = record.subcarriers();
    let half = (s / 2) as i32;
    let (lo, hi) = (-half, s as i32 - half - 1);
    let mut drop = vec![false; s];
    for &idx in null_indices {
        if idx < lo || idx > hi {
            return Err(Error::SubcarrierOutOfRange { index: idx, lo, hi });
        }
        drop[(idx + half) as usize] = true;
    }
    let keep: Vec<usize> = (0..s).filter(|&c| !drop[c]).collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("every subcarrier is null".into()));
    }
    let mut amplitudes = Vec::with_capacity(record.packets() * keep.len());
    for k in 0..record.packets() {
        let row = record.row(k);
        amplitudes.extend(keep.iter().map(|&c| row[c]));
    }
    CsiRecord::new(
        record.receiver_id(),
        keep.len(),
        amplitudes,
        record.rssi().to_vec(),
        record.label(),
    )
}

/// Savitzky-Golay smoothing. Interior points take the centre value of the
/// local least-squares polynomial; the first and last `window / 2` points are
/// evaluated on the polynomial fitted to the first (last) full window.
pub fn sg_filter(series: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    check_savgol(window, polyorder)?;
    let k = series.len();
    if k < window {
        return Err(Error::SeriesTooShort { len: k, window });
    }
    let half = window / 2;
    let xs: Vec<f64> = (0..window).map(|j| j as f64).collect();
    let centre = polyfit_eval_weights(&xs, polyorder, half as f64);
    let dot = |w: &[f64], start: usize| -> f64 {
        w.iter()
            .zip(&series[start..start + window])
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut out = vec![0.0; k];
    for (i, o) in out.iter_mut().enumerate().take(k - half).skip(half) {
        *o = dot(&centre, i - half);
    }
    for i in 0..half {
        out[i] = dot(&polyfit_eval_weights(&xs, polyorder, i as f64), 0);
        let tail = k - half + i;
        let w = polyfit_eval_weights(&xs, polyorder, (window - half + i) as f64);
        out[tail] = dot(&w, k - window);
    }
    Ok(out)
}

/// Applies [`sg_filter`] to every subcarrier column along time.
pub fn sg_filter_record(record: &CsiRecord, window: usize, polyorder: usize) -> Result<CsiRecord> {
    let (k, s) = (record.packets(), record.subcarriers());
    let mut out = vec![0.0; k * s];
    let mut column = vec![0.0; k];
    for c in 0..s {
        for (r, v) in column.iter_mut().enumerate() {
            *v = record.amplitudes()[r * s + c];
        }
        let smooth = sg_filter(&column, window, polyorder)?;
        for (r, v) in smooth.into_iter().enumerate() {
            out[r * s + c] = v.max(0.0);
        }
    }
    CsiRecord::new(
        record.receiver_id(),
        s,
        out,
        record.rssi().to_vec(),
        record.label(),
    )
}

/// RSSI-assisted rescaling: scales the row so its total power equals the
/// packet's RSSI converted from dBm to mW.
pub fn rescale_csi(row: &[f64], rssi_dbm: f64) -> Result<Vec<f64>> {
    let power: f64 = row.iter().map(|a| a * a).sum();
    if !(power > 0.0) {
        return Err(Error::ZeroPowerRow { row: 0 });
    }
    let gain = (10f64.powf(rssi_dbm / 10.0) / power).sqrt();
    Ok(row.iter().map(|a| a * gain).collect())
}

pub fn rescale_record(record: &CsiRecord) -> Result<CsiRecord> {
    let mut out = Vec::with_capacity(record.amplitudes().len());
    for (k, &rssi) in record.rssi().iter().enumerate() {
        let row = rescale_csi(record.row(k), f64::from(rssi))
            .map_err(|_| Error::ZeroPowerRow { row: k })?;
        out.extend(row);
    }
    CsiRecord::new(
        record.receiver_id(),
        record.subcarriers(),
        out,
        record.rssi().to_vec(),
        record.label(),
    )
}

/// Keeps rows `0, factor, 2 * factor, ...`.
pub fn decimate(record: &CsiRecord, factor: usize) -> Result<CsiRecord> {
    if factor == 0 {
        return Err(Error::InvalidArgument("decimation factor 0".into()));
    }
    if factor == 1 {
        return Ok(record.clone());
    }
    let rows: Vec<usize> = (0..record.packets()).step_by(factor).collect();
    let amplitudes = rows
        .iter()
        .flat_map(|&k| record.row(k).iter().copied())
        .collect();
    let rssi = rows.iter().map(|&k| record.rssi()[k]).collect();
    CsiRecord::new(
        record.receiver_id(),
        record.subcarriers(),
        amplitudes,
        rssi,
        record.label(),
    )
}

/// Window count `ceil((K - t_w) / t_s)`.
pub fn segment_count(packets: usize, t_w: usize, t_s: usize) -> usize {
    if packets < t_w || t_s == 0 {
        return 0;
    }
    (packets - t_w).div_ceil(t_s)
}

/// Slides a `t_w`-row window with stride `t_s`; window `p` (0-based) covers
/// rows `[p * t_s, p * t_s + t_w)`.
pub fn segment(record: &CsiRecord, t_w: usize, t_s: usize) -> Result<Vec<Segment>> {
    if t_w == 0 || t_s == 0 {
        return Err(Error::InvalidArgument(
            "window and stride must be positive".into(),
        ));
    }
    let k = record.packets();
    if k < t_w {
        return Err(Error::RecordTooShort {
            rows: k,
            window: t_w,
        });
    }
    let s = record.subcarriers();
    (0..segment_count(k, t_w, t_s))
        .map(|p| {
            let start = p * t_s;
            let csi = record.amplitudes()[start * s..(start + t_w) * s]
                .iter()
                .map(|&a| a as f32)
                .collect();
            let rssi = record.rssi()[start..start + t_w]
                .iter()
                .map(|&r| r as f32)
                .collect();
            Segment::new(record.receiver_id(), p as u32, record.label(), s, csi, rssi)
        })
        .collect()
}

/// decimate -> null removal -> smoothing/rescaling (configured order) ->
/// segmentation.
pub fn preprocess_pipeline(record: &CsiRecord, config: &PreprocessConfig) -> Result<Vec<Segment>> {
    config.validate()?;
    let rec = decimate(record, config.decimation)?;
    let rec = remove_null_subcarriers(&rec, &config.null_indices)?;
    let smooth = |r: &CsiRecord| match config.savgol {
        Some(sg) => sg_filter_record(r, sg.window, sg.polyorder),
        None => Ok(r.clone()),
    };
    let rec = match config.order {
        StageOrder::FilterThenRescale => rescale_record(&smooth(&rec)?)?,
        StageOrder::RescaleThenFilter => smooth(&rescale_record(&rec)?)?,
    };
    segment(&rec, config.t_w, config.t_s)
}

/// Zips per-receiver segment lists (receiver `n` at position `n`) into
/// bundles by segment index. Lists are truncated to the shortest one.
pub fn align_bundles(per_receiver: Vec<Vec<Segment>>) -> Result<Vec<SampleBundle>> {
    let count = per_receiver.iter().map(Vec::len).min().unwrap_or(0);
    let mut iters: Vec<_> = per_receiver.into_iter().map(|v| v.into_iter()).collect();
    (0..count)
        .map(|_| {
            let segs = iters
                .iter_mut()
                .enumerate()
                .map(|(n, it)| {
                    let mut s = it.next().expect("length checked");
                    s.receiver_id = n as u16;
                    s
                })
                .collect();
            SampleBundle::new(segs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, s: usize) -> CsiRecord {
        let amps = (0..k * s).map(|i| (i % 7) as f64 + 1.0).collect();
        CsiRecord::new(0, s, amps, vec![-40; k], 2).unwrap()
    }

    #[test]
    fn default_null_set_leaves_242_of_256() {
        let nulls = default_null_indices(256);
        assert_eq!(nulls.len(), 14);
        let out = remove_null_subcarriers(&record(3, 256), &nulls).unwrap();
        assert_eq!(out.subcarriers(), 242);
        assert_eq!(default_null_indices(128).len(), 14);
        assert_eq!(default_null_indices(64).len(), 8);
    }

    #[test]
    fn empty_null_set_is_identity() {
        let rec = record(4, 8);
        assert_eq!(remove_null_subcarriers(&rec, &[]).unwrap(), rec);
    }

    #[test]
    fn dropping_dc_keeps_column_order() {
        let rec = record(2, 8);
        let out = remove_null_subcarriers(&rec, &[0]).unwrap();
        assert_eq!(out.subcarriers(), 7);
        // Centered index 0 lives at column 4.
        for k in 0..2 {
            let expect: Vec<f64> = (0..8).filter(|&c| c != 4).map(|c| rec.row(k)[c]).collect();
            assert_eq!(out.row(k), &expect[..]);
        }
    }

    #[test]
    fn null_index_out_of_range() {
        assert!(matches!(
            remove_null_subcarriers(&record(1, 8), &[4]),
            Err(Error::SubcarrierOutOfRange { index: 4, .. })
        ));
    }

    #[test]
    fn sg_keeps_constants_and_polynomials() {
        let c = vec![3.25; 40];
        for v in sg_filter(&c, 11, 3).unwrap() {
            assert!((v - 3.25).abs() < 1e-12);
        }
        let p: Vec<f64> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.1;
                0.5 + x - 2.0 * x * x + 0.3 * x * x * x
            })
            .collect();
        for (a, b) in sg_filter(&p, 11, 3).unwrap().iter().zip(&p) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sg_rejects_bad_parameters() {
        assert!(sg_filter(&[0.0; 20], 10, 3).is_err());
        assert!(sg_filter(&[0.0; 20], 3, 3).is_err());
        assert_eq!(
            sg_filter(&[0.0; 5], 11, 3),
            Err(Error::SeriesTooShort { len: 5, window: 11 })
        );
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(
            rescale_csi(&[1.0, 0.0, 0.0], 0.0).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
        let out = rescale_csi(&[1.0; 4], -10.0).unwrap();
        for v in &out {
            assert!((v - 0.158_113_883).abs() < 1e-9);
        }
        let p: f64 = out.iter().map(|v| v * v).sum();
        assert!((p - 0.1).abs() < 1e-15);
        let a = rescale_csi(&[0.3, 1.2, 2.0], -37.0).unwrap();
        let b = rescale_csi(&[3.0, 12.0, 20.0], -37.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1e-300));
        }
        assert!(rescale_csi(&[0.0; 3], -40.0).is_err());
    }

    #[test]
    fn decimate_examples() {
        let rec = record(10, 2);
        assert_eq!(decimate(&rec, 1).unwrap(), rec);
        let one = decimate(&rec, 10).unwrap();
        assert_eq!(one.packets(), 1);
        assert_eq!(one.row(0), rec.row(0));
        let big = CsiRecord::new(0, 1, vec![1.0; 120_000], vec![-50; 120_000], 0).unwrap();
        assert_eq!(decimate(&big, 10).unwrap().packets(), 12_000);
    }

    #[test]
    fn segment_examples() {
        assert_eq!(segment_count(12_000, 300, 150), 78);
        assert_eq!(segment(&record(300, 2), 300, 150).unwrap().len(), 0);
        let rec = record(450, 2);
        let segs = segment(&rec, 300, 150).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].csi_window[0], rec.row(0)[0] as f32);
        assert_eq!(segs[0].csi_window[299 * 2 + 1], rec.row(299)[1] as f32);
        assert!(matches!(
            segment(&record(10, 2), 20, 5),
            Err(Error::RecordTooShort { .. })
        ));
    }

    #[test]
    fn pipeline_identity_config_yields_no_segments() {
        let rec = record(50, 4);
        let cfg = PreprocessConfig {
            null_indices: vec![],
            savgol: None,
            t_w: 50,
            t_s: 10,
            decimation: 1,
            order: StageOrder::default(),
        };
        assert!(preprocess_pipeline(&rec, &cfg).unwrap().is_empty());
    }

    #[test]
    fn pipeline_shapes_and_zero_power() {
        let rec = record(700, 256);
        let cfg = PreprocessConfig::for_subcarriers(256);
        let segs = preprocess_pipeline(&rec, &cfg).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.t_w == 300 && s.subcarriers == 242));

        let zero = CsiRecord::new(0, 8, vec![0.0; 8 * 40], vec![-40; 40], 0).unwrap();
        let cfg = PreprocessConfig {
            null_indices: vec![],
            t_w: 10,
            t_s: 5,
            ..cfg
        };
        assert!(matches!(
            preprocess_pipeline(&zero, &cfg),
            Err(Error::ZeroPowerRow { row: 0 })
        ));
    }
}
