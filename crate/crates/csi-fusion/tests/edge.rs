use std::io::Write;
use std::net::TcpStream;
use std::time::Duration;

use csi_fusion::edge::{extract_features, run_client, start_server, ClientOptions, ServerOptions};
use csi_fusion::wire::{encode_frame, read_frame, write_frame, MsgType, Prediction, WireFrame};
use csi_fusion_core::data::{SampleBundle, Segment};
use csi_fusion_core::model::{argmax_rows, InputBatch, ModelConfig, NetKind, Network};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_W: usize = 16;
const S: usize = 14;

fn network(seed: u64) -> Network {
    Network::new(
        ModelConfig::new(T_W, S, 5, 2).unwrap(),
        NetKind::Proposed,
        seed,
    )
    .unwrap()
}

fn bundles(count: u32, seed: u64) -> Vec<SampleBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let segs = (0..2)
                .map(|r| {
                    let csi = (0..T_W * S).map(|_| rng.random_range(0.0..1e-3)).collect();
                    let rssi = (0..T_W).map(|_| rng.random_range(-70.0..-40.0)).collect();
                    Segment::new(r, 100 + i, (i % 5) as u16, S, csi, rssi).unwrap()
                })
                .collect();
            SampleBundle::new(segs).unwrap()
        })
        .collect()
}

fn offline(net: &Network, data: &[SampleBundle]) -> Vec<(u32, Prediction)> {
    let refs: Vec<&SampleBundle> = data.iter().collect();
    let probs = net
        .predict(&InputBatch::from_bundles(&refs).unwrap())
        .unwrap();
    data.iter()
        .zip(argmax_rows(&probs))
        .map(|(b, (c, p))| {
            (
                b.segment_index(),
                Prediction {
                    class: c as u16,
                    confidence: p,
                },
            )
        })
        .collect()
}

fn bits(p: &[(u32, Prediction)]) -> Vec<(u32, u16, u32)> {
    p.iter()
        .map(|(i, q)| (*i, q.class, q.confidence.to_bits()))
        .collect()
}

fn fast_client() -> ClientOptions {
    ClientOptions {
        pool: false,
        timeout: Duration::from_secs(5),
    }
}

#[test]
fn online_predictions_match_offline_bit_for_bit() {
    let net = network(3);
    let data = bundles(10, 1);
    let expected = offline(&net, &data);
    let server = start_server(
        net.clone(),
        2,
        "127.0.0.1:0",
        ServerOptions {
            max_sessions: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    let addr = server.local_addr();
    let refs: Vec<&SampleBundle> = data.iter().collect();
    let summaries: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..2u16)
            .map(|r| {
                let (net, refs) = (&net, &refs);
                s.spawn(move || run_client(net, refs, r, addr, &fast_client()).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let stats = server.join();
    assert_eq!(stats.predictions, 10);
    assert_eq!(stats.sessions, 2);
    for s in &summaries {
        assert_eq!(s.frames_sent, 12);
        assert_eq!(bits(&s.predictions), bits(&expected));
    }
}

/// Sends one receiver's frames in the given order over a raw connection and
/// returns the predictions it receives.
fn raw_session(
    addr: std::net::SocketAddr,
    net: &Network,
    data: &[SampleBundle],
    receiver: u16,
    order: &[usize],
) -> Vec<(u32, Prediction)> {
    let mut stream = TcpStream::connect(addr).unwrap();
    write_frame(
        &mut stream,
        &WireFrame::new(MsgType::Hello, receiver, 0, vec![]),
    )
    .unwrap();
    for &i in order {
        let f = extract_features(net, &data[i], usize::from(receiver), false).unwrap();
        write_frame(
            &mut stream,
            &WireFrame::new(
                MsgType::Features,
                receiver,
                data[i].segment_index(),
                f.encode(),
            ),
        )
        .unwrap();
    }
    stream.flush().unwrap();
    let mut out = Vec::new();
    while out.len() < order.len() {
        let f = read_frame(&mut stream).unwrap().expect("prediction");
        assert_eq!(f.msg_type, MsgType::Prediction);
        assert_eq!(f.receiver_id, receiver);
        out.push((f.segment_index, Prediction::decode(&f.payload).unwrap()));
    }
    write_frame(
        &mut stream,
        &WireFrame::new(MsgType::Bye, receiver, 0, vec![]),
    )
    .unwrap();
    let bye = read_frame(&mut stream).unwrap().expect("bye");
    assert_eq!(bye.msg_type, MsgType::Bye);
    assert!(bye.payload.is_empty());
    out.sort_by_key(|(i, _)| *i);
    out
}

#[test]
fn shuffled_arrival_gives_the_same_predictions() {
    let net = network(5);
    let data = bundles(10, 2);
    let expected = offline(&net, &data);
    let server = start_server(
        net.clone(),
        2,
        "127.0.0.1:0",
        ServerOptions {
            max_sessions: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    let addr = server.local_addr();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let orders: Vec<Vec<usize>> = (0..2)
        .map(|_| {
            let mut o: Vec<usize> = (0..data.len()).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    let got: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..2u16)
            .map(|r| {
                let (net, data, order) = (&net, &data, &orders[usize::from(r)]);
                s.spawn(move || raw_session(addr, net, data, r, order))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    server.join();
    for g in got {
        assert_eq!(bits(&g), bits(&expected));
    }
}

#[test]
fn silent_receiver_times_out_without_predictions() {
    let net = network(1);
    let data = bundles(3, 3);
    let server = start_server(
        net.clone(),
        2,
        "127.0.0.1:0",
        ServerOptions {
            timeout: Duration::from_millis(200),
            max_sessions: Some(1),
        },
    )
    .unwrap();
    let refs: Vec<&SampleBundle> = data.iter().collect();
    let opts = ClientOptions {
        pool: false,
        timeout: Duration::from_millis(800),
    };
    let summary = run_client(&net, &refs, 0, server.local_addr(), &opts).unwrap();
    assert!(summary.predictions.is_empty());
    let stats = server.join();
    assert_eq!(stats.predictions, 0);
    assert_eq!(stats.timed_out, 3);
}

#[test]
fn duplicate_and_out_of_range_receivers_are_rejected() {
    let net = network(1);
    let server = start_server(net.clone(), 2, "127.0.0.1:0", ServerOptions::default()).unwrap();
    let addr = server.local_addr();
    let mut first = TcpStream::connect(addr).unwrap();
    write_frame(&mut first, &WireFrame::new(MsgType::Hello, 0, 0, vec![])).unwrap();
    std::thread::sleep(Duration::from_millis(100));

    let data = bundles(1, 4);
    let refs: Vec<&SampleBundle> = data.iter().collect();
    let err = run_client(&net, &refs, 0, addr, &fast_client())
        .unwrap_err()
        .to_string();
    assert!(err.contains("duplicate"), "{err}");
    assert!(run_client(&net, &refs, 7, addr, &fast_client()).is_err());

    let mut far = TcpStream::connect(addr).unwrap();
    write_frame(&mut far, &WireFrame::new(MsgType::Hello, 7, 0, vec![])).unwrap();
    let nack = read_frame(&mut far).unwrap().expect("nack");
    assert!(String::from_utf8_lossy(&nack.payload).contains("outside"));

    let mut bad = TcpStream::connect(addr).unwrap();
    let mut hello = encode_frame(&WireFrame::new(MsgType::Hello, 1, 0, vec![])).unwrap();
    hello[4] = 2;
    bad.write_all(&hello).unwrap();
    let nack = read_frame(&mut bad).unwrap().expect("nack");
    assert_eq!(nack.msg_type, MsgType::Bye);
    assert!(String::from_utf8_lossy(&nack.payload).contains("version"));

    drop(first);
    server.shutdown();
    let stats = server.join();
    assert_eq!(stats.rejected, 3);
}

#[test]
fn pooled_features_are_served() {
    let net = network(2);
    let data = bundles(2, 5);
    let server = start_server(
        net.clone(),
        1,
        "127.0.0.1:0",
        ServerOptions {
            max_sessions: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let one: Vec<SampleBundle> = data
        .iter()
        .map(|b| SampleBundle::new(vec![b.segment(0).clone()]).unwrap())
        .collect();
    let refs: Vec<&SampleBundle> = one.iter().collect();
    let opts = ClientOptions {
        pool: true,
        timeout: Duration::from_secs(5),
    };
    let s = run_client(&net, &refs, 0, server.local_addr(), &opts).unwrap();
    assert_eq!(s.predictions.len(), 2);
    let full = extract_features(&net, &one[0], 0, false)
        .unwrap()
        .encode()
        .len();
    assert!(s.payload_bytes_sent < full);
    server.join();
}
