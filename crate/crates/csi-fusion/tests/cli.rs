use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csi_fusion::nexmon::encode_nexmon_frame;
use csi_fusion::packet::build_udp_frame;
use csi_fusion::pcap::{write_pcap, PcapFile, PcapRecord};
use csi_fusion_core::data::{CsiFrame, Iq};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csi-fusion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const TINY: &[&str] = &[
    "--classes",
    "3",
    "--receivers",
    "2",
    "--packets",
    "44",
    "--subcarriers",
    "16",
    "--tw",
    "8",
    "--ts",
    "4",
    "--sg-window",
    "5",
    "--sg-order",
    "2",
];

fn synth(dir: &Path, name: &str, seed: &str) -> String {
    let out = p(dir, name);
    let mut args = vec!["synth", "--out", &out, "--seed", seed];
    args.extend_from_slice(TINY);
    ok(&args);
    out
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--data"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    for sub in [
        "ingest",
        "preprocess",
        "synth",
        "train",
        "eval",
        "compare",
        "analyze",
        "flops",
        "serve",
        "send",
        "plot",
    ] {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
}

#[test]
fn missing_data_exits_two_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "nope.csd1");
    let out = run(&[
        "train",
        "--data",
        &missing,
        "--out",
        &p(dir.path(), "x.wts1"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.csd1", "7");
    let b = synth(dir.path(), "b.csd1", "7");
    let c = synth(dir.path(), "c.csd1", "8");
    let read = |f: &str| std::fs::read(f).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn train_eval_compare_analyze_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csd1", "7");
    let ckpt = p(dir.path(), "m.wts1");
    let log = p(dir.path(), "run.csv");
    ok(&[
        "train",
        "--data",
        &data,
        "--method",
        "proposed",
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--out",
        &ckpt,
        "--log",
        &log,
    ]);
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 4);

    let eval = ok(&["eval", "--ckpt", &ckpt, "--data", &data]);
    assert!(
        eval.contains("accuracy") && eval.contains("macro F1"),
        "{eval}"
    );

    let table = p(dir.path(), "table.md");
    let logs = p(dir.path(), "logs");
    ok(&[
        "compare",
        "--data",
        &data,
        "--epochs",
        "2",
        "--seeds",
        "2",
        "--batch-size",
        "8",
        "--out",
        &table,
        "--log-dir",
        &logs,
    ]);
    let t = std::fs::read_to_string(&table).unwrap();
    assert_eq!(
        t.lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| Method"))
            .count(),
        6,
        "{t}"
    );
    assert!(t.contains('±'));
    assert_eq!(std::fs::read_dir(&logs).unwrap().count(), 12);

    let var = p(dir.path(), "variance.md");
    ok(&["analyze", "--ckpt", &ckpt, "--data", &data, "--out", &var]);
    assert!(std::fs::read_to_string(&var)
        .unwrap()
        .contains("RSSI-weighted"));

    let other = PathBuf::from(&logs).join("concat_seed8.csv");
    let chart = p(dir.path(), "chart.txt");
    ok(&[
        "plot",
        "--log",
        &log,
        other.to_str().unwrap(),
        "--out",
        &chart,
        "--metric",
        "test_acc",
    ]);
    let c = std::fs::read_to_string(&chart).unwrap();
    assert!(
        c.contains("  * run") && c.contains("  o concat_seed8"),
        "{c}"
    );

    let empty = p(dir.path(), "empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(run(&["plot", "--log", &empty]).status.code(), Some(2));

    let wrong = p(dir.path(), "c.wts1");
    ok(&[
        "train", "--data", &data, "--method", "concat", "--epochs", "1", "--out", &wrong,
    ]);
    assert_eq!(
        run(&["analyze", "--ckpt", &wrong, "--data", &data])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn flops_reports_all_methods_and_comm() {
    let out = ok(&["flops", "--comm"]);
    for m in [
        "receiver1",
        "receiver2",
        "prob_avg",
        "reweighted_avg",
        "concat",
        "proposed",
    ] {
        assert!(out.contains(&format!("| {m} |")), "{out}");
    }
    assert!(
        out.contains("raw 291600") && out.contains("features 1190400"),
        "{out}"
    );
    let one = ok(&[
        "flops",
        "--method",
        "concat",
        "--layers",
        "--tw",
        "16",
        "--subcarriers",
        "14",
        "--classes",
        "5",
    ]);
    assert!(one.contains("| concat |") && !one.contains("| proposed |"));
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csd1", "7");
    let cfg = p(dir.path(), "run.cfg");
    std::fs::write(
        &cfg,
        "# tiny run\nepochs = 2\nbatch_size = 8\nmethod = concat\n",
    )
    .unwrap();
    let log = p(dir.path(), "run.csv");
    let ckpt = p(dir.path(), "m.wts1");
    ok(&[
        "train", "--config", &cfg, "--data", &data, "--epochs", "1", "--out", &ckpt, "--log", &log,
    ]);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    assert!(ok(&["eval", "--ckpt", &ckpt, "--data", &data]).contains("method concat"));

    std::fs::write(&cfg, "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", &cfg, "--data", &data, "--out", &ckpt]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning-rate"));
}

fn frame(seq: u16, label: u16, receiver: u16) -> CsiFrame {
    let csi = (0..64)
        .map(|s| {
            let v = 200
                + 37 * ((s + i32::from(seq) * (1 + i32::from(label)) + 5 * i32::from(receiver))
                    % 23);
            Iq::new(v as i16, (v / 3) as i16)
        })
        .collect();
    CsiFrame {
        source_mac: [2, 0, 0, 0, 0, receiver as u8],
        seq,
        rssi_dbm: -45 - label as i8,
        frame_control: 0x08,
        chanspec: 0xE02A,
        core_spatial: 0,
        chip_version: 0x4345,
        csi,
    }
}

#[test]
fn ingest_then_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let mut raws = Vec::new();
    for label in 0..2u16 {
        for receiver in 0..2u16 {
            let records = (0..24u16)
                .rev()
                .map(|seq| {
                    let payload = build_udp_frame(
                        5500,
                        5500,
                        &encode_nexmon_frame(&frame(seq, label, receiver)),
                    );
                    PcapRecord {
                        ts_sec: 1,
                        ts_usec: u32::from(seq),
                        orig_len: payload.len() as u32,
                        payload,
                    }
                })
                .collect();
            let mut pcap = PcapFile::ethernet(records);
            pcap.big_endian = receiver == 1;
            let path = p(dir.path(), &format!("y{label}_r{receiver}.pcap"));
            std::fs::write(&path, write_pcap(&pcap)).unwrap();
            let raw = p(dir.path(), &format!("y{label}_r{receiver}.csr1"));
            let out = ok(&[
                "ingest",
                "--pcap",
                &path,
                "--port",
                "5500",
                "--subcarriers",
                "64",
                "--label",
                &label.to_string(),
                "--receiver",
                &receiver.to_string(),
                "--out",
                &raw,
            ]);
            assert!(out.contains("24 packets x 64 subcarriers"), "{out}");
            raws.push(raw);
        }
    }
    let data = p(dir.path(), "d.csd1");
    let mut args = vec![
        "preprocess",
        "--out",
        &data,
        "--tw",
        "8",
        "--ts",
        "4",
        "--sg-window",
        "5",
        "--sg-order",
        "2",
        "--in",
    ];
    args.extend(raws.iter().map(String::as_str));
    let out = ok(&args);
    assert!(out.contains("2 classes, 2 receivers, window 8x56"), "{out}");

    let bad = p(dir.path(), "garbage.pcap");
    std::fs::write(&bad, b"not a capture").unwrap();
    let out = run(&[
        "ingest",
        "--pcap",
        &bad,
        "--label",
        "0",
        "--receiver",
        "0",
        "--out",
        &p(dir.path(), "x.csr1"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_raw_records_feed_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let raw_dir = p(dir.path(), "raw");
    let direct = p(dir.path(), "direct.csd1");
    let mut args = vec!["synth", "--out", &direct, "--raw-dir", &raw_dir];
    args.extend_from_slice(TINY);
    ok(&args);
    let mut raws: Vec<String> = std::fs::read_dir(&raw_dir)
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    raws.sort();
    assert_eq!(raws.len(), 6);
    let via = p(dir.path(), "via.csd1");
    let mut args = vec![
        "preprocess",
        "--out",
        &via,
        "--tw",
        "8",
        "--ts",
        "4",
        "--sg-window",
        "5",
        "--sg-order",
        "2",
        "--in",
    ];
    args.extend(raws.iter().map(String::as_str));
    ok(&args);
    assert_eq!(
        std::fs::read(&direct).unwrap(),
        std::fs::read(&via).unwrap()
    );
}

#[test]
fn serve_and_send() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csd1", "7");
    let ckpt = p(dir.path(), "m.wts1");
    ok(&["train", "--data", &data, "--epochs", "1", "--out", &ckpt]);
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let server = bin()
        .args([
            "serve",
            "--ckpt",
            &ckpt,
            "--receivers",
            "2",
            "--listen",
            &addr,
            "--sessions",
            "2",
        ])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    let senders: Vec<_> = (0..2)
        .map(|r| {
            bin()
                .args([
                    "send",
                    "--data",
                    &data,
                    "--ckpt",
                    &ckpt,
                    "--receiver",
                    &r.to_string(),
                    "--class",
                    "1",
                    "--server",
                    &addr,
                ])
                .stdout(std::process::Stdio::piped())
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    for s in senders {
        let s = s.wait_with_output().unwrap();
        assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
        assert!(String::from_utf8_lossy(&s.stdout).contains("predictions are class 1"));
    }
    let out = server.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("sessions 2") && text.contains("predictions 2"),
        "{text}"
    );
}
