use csi_fusion::wire::{MsgType, WireFrame};
use csi_fusion_core::data::{CsiFrame, DatasetSplit, Iq, SampleBundle, Segment};
use csi_fusion_core::nn::Tensor;
use proptest::prelude::*;

pub fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        -1e6f32..1e6f32,
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE),
        Just(f32::MAX),
    ]
}

pub fn nexmon_frame() -> impl Strategy<Value = CsiFrame> {
    (
        prop::sample::select(vec![64usize, 128, 256]),
        any::<[u8; 6]>(),
        any::<u16>(),
        -128i8..=0,
        any::<u8>(),
        any::<(u16, u16, u16)>(),
        any::<u64>(),
    )
        .prop_map(|(s, mac, seq, rssi, fc, (chanspec, core, chip), seed)| {
            let mut x = seed;
            let csi = (0..s)
                .map(|_| {
                    x = x
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    Iq::new((x >> 16) as i16, (x >> 40) as i16)
                })
                .collect();
            CsiFrame {
                source_mac: mac,
                seq,
                rssi_dbm: rssi,
                frame_control: fc,
                chanspec,
                core_spatial: core,
                chip_version: chip,
                csi,
            }
        })
}

pub fn split() -> impl Strategy<Value = DatasetSplit> {
    (
        1usize..4,
        1usize..5,
        1usize..5,
        1usize..4,
        0usize..5,
        0usize..4,
    )
        .prop_flat_map(|(n, t, s, l, n_train, n_test)| {
            let count = n_train + n_test;
            let values = prop::collection::vec(finite_f32(), count * n * (t * s + t));
            let meta = prop::collection::vec((0..l as u16, any::<u32>()), count);
            (values, meta).prop_map(move |(values, meta)| {
                let mut it = values.into_iter();
                let mut bundles: Vec<SampleBundle> = meta
                    .iter()
                    .map(|&(label, index)| {
                        let segs = (0..n)
                            .map(|r| {
                                let csi: Vec<f32> = it.by_ref().take(t * s).collect();
                                let rssi: Vec<f32> = it.by_ref().take(t).collect();
                                Segment::new(r as u16, index, label, s, csi, rssi).unwrap()
                            })
                            .collect();
                        SampleBundle::new(segs).unwrap()
                    })
                    .collect();
                let test = bundles.split_off(n_train);
                DatasetSplit {
                    train: bundles,
                    test,
                    n_classes: l,
                }
            })
        })
}

pub fn tensor() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0usize..4, 0..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(finite_f32(), n)
            .prop_map(move |d| Tensor::from_vec(&shape, d).unwrap())
    })
}

pub fn wire_frame() -> impl Strategy<Value = WireFrame> {
    (
        prop::sample::select(vec![
            MsgType::Hello,
            MsgType::Features,
            MsgType::Prediction,
            MsgType::Bye,
        ]),
        any::<u16>(),
        any::<u32>(),
        prop::collection::vec(any::<u8>(), 0..300),
    )
        .prop_map(|(t, r, i, p)| WireFrame::new(t, r, i, p))
}
