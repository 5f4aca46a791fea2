//! Synthetic multi-receiver CSI/RSSI with passenger-dependent multipath.
//!
//! Each receiver sees a fixed set of environment paths plus `paths_per_person`
//! paths per passenger. Passenger `i` has the same geometry in every class,
//! so class `y` holds passengers `0..y`. Passenger path gains drift by a
//! bounded complex random walk. Stored amplitudes carry a per-packet AGC gain
//! that the RSSI rescaling undoes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{CsiRecord, SampleBundle};
use crate::error::{Error, Result};
use crate::preprocess::{
    align_bundles, default_null_indices, preprocess_pipeline, PreprocessConfig,
};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub n_receivers: usize,
    pub n_classes: usize,
    pub subcarriers: usize,
    pub packets: usize,
    pub paths_per_person: usize,
    pub base_paths: usize,
    /// Random-walk step std of passenger path gains, per packet and complex
    /// component, relative to each path's nominal gain.
    pub fidget_rate: f64,
    /// Mean-reversion time of the walk in packets.
    pub fidget_time: f64,
    /// Std of the complex noise per component, relative to the line-of-sight
    /// amplitude.
    pub noise_std: f64,
    pub agc_range_db: (f64, f64),
    pub rssi_noise_db: f64,
    pub seed: u64,
    /// Mean passenger path power relative to line of sight.
    pub person_power: f64,
    /// Per-receiver std (dB) of passenger path gains; receiver `n` uses entry
    /// `n mod len`.
    pub gain_spread_db: Vec<f64>,
    /// Line-of-sight received power in dBm.
    pub los_power_dbm: f64,
    /// Long-run fraction of packets during which a receiver is shadowed.
    pub shadow_fraction: f64,
    /// Attenuation of every path (not of the noise) while shadowed.
    pub shadow_depth_db: f64,
    /// Mean length of a shadowing episode in packets.
    pub shadow_len: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_receivers: 2,
            n_classes: 21,
            subcarriers: 256,
            packets: 12_000,
            paths_per_person: 2,
            base_paths: 4,
            fidget_rate: 0.06,
            fidget_time: 50.0,
            noise_std: 0.02,
            agc_range_db: (50.0, 60.0),
            rssi_noise_db: 0.5,
            seed: 7,
            person_power: 0.1,
            gain_spread_db: vec![2.0, 6.0],
            los_power_dbm: -50.0,
            shadow_fraction: 0.4,
            shadow_depth_db: 50.0,
            shadow_len: 30.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_receivers", self.n_receivers),
            ("n_classes", self.n_classes),
            ("subcarriers", self.subcarriers),
            ("packets", self.packets),
            ("paths_per_person", self.paths_per_person),
            ("base_paths", self.base_paths),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if self.n_classes > usize::from(u16::MAX) + 1 || self.n_receivers > usize::from(u16::MAX) {
            return Err(Error::InvalidArgument(
                "class or receiver count too large".into(),
            ));
        }
        if !self.subcarriers.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "odd subcarrier count {}",
                self.subcarriers
            )));
        }
        let (lo, hi) = self.agc_range_db;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("AGC range ({lo}, {hi})")));
        }
        let reals = [
            ("fidget_rate", self.fidget_rate),
            ("noise_std", self.noise_std),
            ("rssi_noise_db", self.rssi_noise_db),
            ("person_power", self.person_power),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} = {v}")));
        }
        if !(self.fidget_time.is_finite() && self.fidget_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fidget_time = {}",
                self.fidget_time
            )));
        }
        if !(0.0..1.0).contains(&self.shadow_fraction) {
            return Err(Error::InvalidArgument(format!(
                "shadow fraction {}",
                self.shadow_fraction
            )));
        }
        if !(self.shadow_depth_db.is_finite()
            && self.shadow_depth_db >= 0.0
            && self.shadow_len >= 1.0)
        {
            return Err(Error::InvalidArgument(
                "shadow depth must be >= 0 dB and length >= 1".into(),
            ));
        }
        if self.gain_spread_db.is_empty()
            || self
                .gain_spread_db
                .iter()
                .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "gain spread must be non-empty and non-negative".into(),
            ));
        }
        if !(self.los_power_dbm.is_finite() && self.los_power_dbm < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "line-of-sight power {} dBm",
                self.los_power_dbm
            )));
        }
        Ok(())
    }
}

/// Noise-free references produced alongside a record.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `K x S` channel magnitudes before AGC.
    pub amplitudes: Vec<f64>,
    /// Unrounded, noiseless RSSI in dBm.
    pub rssi_exact: Vec<f64>,
    pub path_count: usize,
}

struct Path {
    gain: Complex64,
    delay: f64,
}

fn draw_path(rng: &mut ChaCha8Rng, power: f64, spread_db: f64) -> Path {
    let db = if spread_db > 0.0 {
        Normal::new(0.0, spread_db).expect("positive").sample(rng)
    } else {
        0.0
    };
    let mag = power.sqrt() * 10f64.powf(db / 20.0);
    let phase = rng.random_range(0.0..core::f64::consts::TAU);
    Path {
        gain: Complex64::from_polar(mag, phase),
        delay: rng.random_range(0.0..0.25),
    }
}

/// Static paths of receiver `n`: line of sight first, then the environment.
fn base_paths(config: &ChannelConfig, receiver: usize, seed: u64) -> Vec<Path> {
    let mut rng = stream(seed, &[0xBA5E, receiver as u64]);
    let mut paths = vec![Path {
        gain: Complex64::new(1.0, 0.0),
        delay: 0.0,
    }];
    for _ in 1..config.base_paths {
        paths.push(draw_path(&mut rng, 0.2, 3.0));
    }
    paths
}

fn person_paths(config: &ChannelConfig, receiver: usize, person: usize, seed: u64) -> Vec<Path> {
    let mut rng = stream(seed, &[0x9E25, receiver as u64, person as u64]);
    let spread = config.gain_spread_db[receiver % config.gain_spread_db.len()];
    let per_path = config.person_power / config.paths_per_person as f64;
    (0..config.paths_per_person)
        .map(|_| draw_path(&mut rng, per_path, spread))
        .collect()
}

/// One record for class `label` at receiver `receiver`. Receiver geometry
/// depends on `(receiver, seed)`; the dynamics also on `label`.
fn bounded(w: Complex64) -> Complex64 {
    let m = w.norm();
    if m > 1.0 {
        w / m
    } else {
        w
    }
}

/// Per-packet approach rate of the shadow attenuation (in dB) to its target.
const SHADOW_RAMP: f64 = 0.05;

pub fn gen_record(
    config: &ChannelConfig,
    label: u16,
    receiver: usize,
    seed: u64,
) -> Result<(CsiRecord, GroundTruth)> {
    config.validate()?;
    if usize::from(label) >= config.n_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside {} classes",
            config.n_classes
        )));
    }
    let (s, k) = (config.subcarriers, config.packets);
    let half = (s / 2) as i64;
    let nulls = default_null_indices(s);
    let is_null: Vec<bool> = (0..s as i64)
        .map(|i| nulls.contains(&((i - half) as i32)))
        .collect();

    let statics = base_paths(config, receiver, seed);
    let people: Vec<Path> = (0..usize::from(label))
        .flat_map(|p| person_paths(config, receiver, p, seed))
        .collect();
    let path_count = statics.len() + people.len();

    // steering[m][s] = exp(-j 2 pi s tau_m), centered subcarrier index
    let steer = |p: &Path| -> Vec<Complex64> {
        (0..s as i64)
            .map(|i| {
                Complex64::from_polar(1.0, -core::f64::consts::TAU * (i - half) as f64 * p.delay)
            })
            .collect()
    };
    let static_sum: Vec<Complex64> = {
        let mut acc = vec![Complex64::new(0.0, 0.0); s];
        for p in &statics {
            for (a, e) in acc.iter_mut().zip(steer(p)) {
                *a += p.gain * e;
            }
        }
        acc
    };
    let person_steer: Vec<Vec<Complex64>> = people.iter().map(steer).collect();

    let mut rng = stream(seed, &[0xD1A6, receiver as u64, u64::from(label)]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let decay = (-1.0 / config.fidget_time).exp();
    let spread = config.fidget_rate / (1.0 - decay * decay).sqrt();
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("positive");
    let rssi_noise =
        Normal::new(0.0, config.rssi_noise_db.max(f64::MIN_POSITIVE)).expect("positive");
    let scale = (10f64.powf(config.los_power_dbm / 10.0) / s as f64).sqrt();
    let mut walk: Vec<Complex64> = (0..people.len())
        .map(|_| bounded(Complex64::new(unit.sample(&mut rng), unit.sample(&mut rng)) * spread))
        .collect();
    // two-state shadowing chain with the configured stationary fraction
    let enter = if config.shadow_fraction > 0.0 {
        config.shadow_fraction / ((1.0 - config.shadow_fraction) * config.shadow_len)
    } else {
        0.0
    };
    let leave = 1.0 / config.shadow_len;
    let mut shadowed = config.shadow_fraction > 0.0 && rng.random_bool(config.shadow_fraction);
    let mut atten_db = if shadowed {
        config.shadow_depth_db
    } else {
        0.0
    };

    let mut amplitudes = Vec::with_capacity(k * s);
    let mut truth = Vec::with_capacity(k * s);
    let mut rssi = Vec::with_capacity(k);
    let mut rssi_exact = Vec::with_capacity(k);
    let mut row = vec![Complex64::new(0.0, 0.0); s];
    for _ in 0..k {
        if config.fidget_rate > 0.0 {
            for w in &mut walk {
                let step = Complex64::new(unit.sample(&mut rng), unit.sample(&mut rng))
                    * config.fidget_rate;
                *w = bounded(*w * decay + step);
            }
        }
        if config.shadow_fraction > 0.0 {
            shadowed = rng.random_bool(if shadowed {
                1.0 - leave
            } else {
                enter.min(1.0)
            });
        }
        let target = if shadowed {
            config.shadow_depth_db
        } else {
            0.0
        };
        atten_db += (target - atten_db) * SHADOW_RAMP;
        let atten = 10f64.powf(-atten_db / 20.0);
        for (i, r) in row.iter_mut().enumerate() {
            *r = if is_null[i] {
                Complex64::new(0.0, 0.0)
            } else {
                static_sum[i] * atten
            };
        }
        for ((p, st), w) in people.iter().zip(&person_steer).zip(&walk) {
            let g = p.gain * (Complex64::new(1.0, 0.0) + w) * atten;
            for (i, r) in row.iter_mut().enumerate() {
                if !is_null[i] {
                    *r += g * st[i];
                }
            }
        }
        if config.noise_std > 0.0 {
            for r in row.iter_mut() {
                *r += Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        let power: f64 = row.iter().map(|h| (h * scale).norm_sqr()).sum();
        let exact = 10.0 * power.max(1e-300).log10();
        let noisy = if config.rssi_noise_db > 0.0 {
            exact + rssi_noise.sample(&mut rng)
        } else {
            exact
        };
        rssi_exact.push(exact);
        rssi.push((noisy.round() as i32).clamp(-128, 0));
        let (lo, hi) = config.agc_range_db;
        let agc_db = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let agc = 10f64.powf(agc_db / 20.0);
        for h in &row {
            let mag = h.norm() * scale;
            truth.push(mag);
            amplitudes.push(mag * agc);
        }
    }
    let record = CsiRecord::new(receiver as u16, s, amplitudes, rssi, label)?;
    Ok((
        record,
        GroundTruth {
            amplitudes: truth,
            rssi_exact,
            path_count,
        },
    ))
}

/// Balanced bundles for every class: one record per `(class, receiver)`,
/// preprocessed and aligned by segment index.
pub fn make_dataset(config: &ChannelConfig, pre: &PreprocessConfig) -> Result<Vec<SampleBundle>> {
    config.validate()?;
    pre.validate()?;
    let mut out = Vec::new();
    for y in 0..config.n_classes {
        let per_receiver = (0..config.n_receivers)
            .map(|n| {
                let (rec, _) = gen_record(config, y as u16, n, config.seed)?;
                preprocess_pipeline(&rec, pre)
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(align_bundles(per_receiver)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{rescale_csi, SavGol};

    fn small() -> ChannelConfig {
        ChannelConfig {
            n_classes: 3,
            subcarriers: 64,
            packets: 50,
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn static_channel_rows_identical_before_agc() {
        let c = ChannelConfig {
            noise_std: 0.0,
            fidget_rate: 0.0,
            shadow_fraction: 0.0,
            ..small()
        };
        let (_, gt) = gen_record(&c, 0, 0, 3).unwrap();
        let row0 = &gt.amplitudes[..64];
        assert!(gt.amplitudes.chunks(64).all(|r| r == row0));
    }

    #[test]
    fn rescaling_with_exact_rssi_recovers_truth() {
        let c = small();
        let (rec, gt) = gen_record(&c, 2, 1, 3).unwrap();
        for k in 0..rec.packets() {
            let got = rescale_csi(rec.row(k), gt.rssi_exact[k]).unwrap();
            for (a, b) in got.iter().zip(&gt.amplitudes[k * 64..(k + 1) * 64]) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12) + 1e-18);
            }
        }
    }

    #[test]
    fn rounded_rssi_recovers_truth_to_quantization() {
        let c = ChannelConfig {
            agc_range_db: (0.0, 0.0),
            rssi_noise_db: 0.0,
            ..small()
        };
        let (rec, gt) = gen_record(&c, 1, 0, 3).unwrap();
        for k in 0..rec.packets() {
            let got = rescale_csi(rec.row(k), f64::from(rec.rssi()[k])).unwrap();
            let ratio = got[5] / gt.amplitudes[k * 64 + 5];
            // half a dB of power rounding
            assert!((ratio.ln()).abs() <= 0.5 * 10f64.ln() / 20.0 + 1e-12);
        }
    }

    #[test]
    fn deterministic_and_path_counts() {
        let c = small();
        assert_eq!(
            gen_record(&c, 2, 0, 9).unwrap(),
            gen_record(&c, 2, 0, 9).unwrap()
        );
        for y in 0..3 {
            let (_, gt) = gen_record(&c, y, 0, 9).unwrap();
            assert_eq!(
                gt.path_count,
                c.base_paths + usize::from(y) * c.paths_per_person
            );
        }
        assert_ne!(
            gen_record(&c, 2, 0, 9).unwrap().0,
            gen_record(&c, 2, 1, 9).unwrap().0
        );
    }

    #[test]
    fn dataset_counts() {
        let c = ChannelConfig {
            n_classes: 2,
            subcarriers: 64,
            packets: 900,
            ..ChannelConfig::default()
        };
        let mut pre = PreprocessConfig::for_subcarriers(64);
        pre.t_w = 300;
        pre.t_s = 150;
        pre.savgol = Some(SavGol::default());
        let bundles = make_dataset(&c, &pre).unwrap();
        assert_eq!(bundles.len(), 8);
        assert_eq!(bundles.iter().filter(|b| b.label() == 1).count(), 4);
        let one = ChannelConfig {
            n_receivers: 1,
            ..c
        };
        assert!(make_dataset(&one, &pre)
            .unwrap()
            .iter()
            .all(|b| b.n_receivers() == 1));
    }

    #[test]
    fn bad_label_rejected() {
        assert!(gen_record(&small(), 3, 0, 1).is_err());
    }
}
