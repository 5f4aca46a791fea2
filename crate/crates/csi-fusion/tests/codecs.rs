use csi_fusion::checkpoint::{decode_model, decode_weights, encode_model, encode_weights};
use csi_fusion::dataset::{decode_dataset, encode_dataset};
use csi_fusion::nexmon::{centered_index, decode_nexmon_frame, encode_nexmon_frame};
use csi_fusion::packet::{build_udp_frame, extract_csi_udp};
use csi_fusion::pcap::{parse_pcap, write_pcap, PcapFile, PcapRecord};
use csi_fusion::raw::{decode_record, encode_record};
use csi_fusion::wire::{decode_frame, encode_frame, FeaturePayload, Prediction};
use csi_fusion_core::data::{assemble_record, CsiRecord};
use csi_fusion_core::model::{Method, ModelConfig, TrainedModel};
use proptest::prelude::*;

mod common;
use common::{finite_f32, nexmon_frame, split, tensor, wire_frame};

const CASES: u32 = 512;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn nexmon_round_trip(frame in nexmon_frame()) {
        let bytes = encode_nexmon_frame(&frame);
        prop_assert_eq!(bytes.len(), 18 + 4 * frame.csi.len());
        let back = decode_nexmon_frame(&bytes, frame.csi.len()).unwrap();
        prop_assert_eq!(encode_nexmon_frame(&back), bytes);
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn nexmon_amplitude_matches_complex_modulus(frame in nexmon_frame()) {
        let rec = assemble_record(std::slice::from_ref(&frame), 0, 0).unwrap();
        for (a, iq) in rec.amplitudes().iter().zip(&frame.csi) {
            let modulus = num_complex_modulus(iq.re, iq.im);
            prop_assert!(*a >= 0.0);
            prop_assert!((a - modulus).abs() <= 1e-12 * modulus.max(1.0));
        }
    }

    #[test]
    fn dataset_round_trip(split in split()) {
        let bytes = encode_dataset(&split).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
        prop_assert_eq!(back, split);
    }

    #[test]
    fn dataset_truncation_is_an_error(split in split(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_dataset(&split).unwrap();
        let at = cut.index(bytes.len());
        prop_assert!(decode_dataset(&bytes[..at]).is_err());
    }

    #[test]
    fn weights_round_trip(entries in prop::collection::vec(("[a-z.0-9]{0,12}", tensor()), 0..6)) {
        let bytes = encode_weights(&entries);
        let back = decode_weights(&bytes).unwrap();
        prop_assert_eq!(encode_weights(&back), bytes);
        prop_assert_eq!(back, entries);
    }

    #[test]
    fn wire_round_trip(frame in wire_frame()) {
        let bytes = encode_frame(&frame).unwrap();
        prop_assert_eq!(bytes.len(), 16 + frame.payload.len());
        let back = decode_frame(&bytes).unwrap();
        prop_assert_eq!(encode_frame(&back).unwrap(), bytes);
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn wire_truncation_is_an_error(frame in wire_frame(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&frame).unwrap();
        let at = cut.index(bytes.len());
        prop_assert!(decode_frame(&bytes[..at]).is_err());
    }

    #[test]
    fn feature_payload_round_trip(a in tensor(), b in tensor()) {
        let p = FeaturePayload { csi_feat: a, rssi_feat: b };
        let bytes = p.encode();
        let back = FeaturePayload::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back, p);
    }

    #[test]
    fn prediction_round_trip(class in any::<u16>(), confidence in finite_f32()) {
        let p = Prediction { class, confidence };
        prop_assert_eq!(Prediction::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn raw_record_round_trip(
        (s, amps, rssi) in (1usize..6, 0usize..6).prop_flat_map(|(s, k)| (
            Just(s),
            prop::collection::vec(0.0f64..1e9, s * k),
            prop::collection::vec(-128i32..=0, k),
        )),
        receiver in any::<u16>(),
        label in any::<u16>(),
    ) {
        let rec = CsiRecord::new(receiver, s, amps, rssi, label).unwrap();
        let bytes = encode_record(&rec);
        prop_assert_eq!(decode_record(&bytes).unwrap(), rec);
    }

    #[test]
    fn pcap_round_trip(
        big_endian in any::<bool>(),
        records in prop::collection::vec((any::<u32>(), any::<u32>(), prop::collection::vec(any::<u8>(), 0..80)), 0..5),
    ) {
        let mut f = PcapFile::ethernet(
            records
                .into_iter()
                .map(|(s, u, payload)| PcapRecord { ts_sec: s, ts_usec: u, orig_len: payload.len() as u32, payload })
                .collect(),
        );
        f.big_endian = big_endian;
        let bytes = write_pcap(&f);
        prop_assert_eq!(parse_pcap(&bytes).unwrap(), f);
    }

    #[test]
    fn udp_demux(payload in prop::collection::vec(any::<u8>(), 0..1200), port in any::<u16>(), other in any::<u16>()) {
        let frame = build_udp_frame(other, port, &payload);
        prop_assert_eq!(extract_csi_udp(&frame, port), Some(&payload[..]));
        if other != port {
            let miss = build_udp_frame(port, other, &payload);
            prop_assert_eq!(extract_csi_udp(&miss, port), None);
        }
    }

    #[test]
    fn half_shift_is_an_involution(s in prop::sample::select(vec![2usize, 8, 64, 128, 256]), i in any::<prop::sample::Index>()) {
        let i = i.index(s);
        prop_assert_eq!(centered_index(centered_index(i, s), s), i);
    }
}

fn num_complex_modulus(re: i16, im: i16) -> f64 {
    f64::from(re).hypot(f64::from(im))
}

#[test]
fn model_checkpoint_round_trip_for_random_seeds() {
    let config = ModelConfig::new(8, 6, 3, 2).unwrap();
    for seed in 0..8 {
        for method in Method::ALL {
            let model = TrainedModel::new(method, config, seed).unwrap();
            let bytes = encode_model(&model);
            let back = decode_model(&bytes).unwrap();
            assert_eq!(encode_model(&back), bytes);
        }
    }
}
