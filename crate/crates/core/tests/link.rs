mod common;

use std::net::UdpSocket;
use std::thread;
use std::time::Duration;

use common::{random_image, random_toy_model};
use scait_core::kb::load_kb;
use scait_core::link::{
    decode_wire, encode_wire, run_transmitter, FrameType, ReceiveRecord, Receiver, ReceiverConfig, TransmitterConfig,
    TxMode, WireFrame,
};
use scait_core::nn::fingerprint;
use scait_core::pipeline::{semantic_classify, semantic_encode};
use scait_core::semantic::select_maps;
use scait_core::{CompressionRatio, Error, Image, KnowledgeBase, Model};

fn kb_for(model: &Model) -> KnowledgeBase {
    let k = model.spec().cut_maps();
    let c = model.spec().classes;
    let weights = (0..k * c).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    KnowledgeBase::from_weights(k, c, weights, fingerprint(model)).unwrap()
}

fn images(n: u64) -> Vec<Image> {
    (0..n).map(|i| random_image(8, 8, 300 + i)).collect()
}

fn quick(mode: TxMode) -> TransmitterConfig {
    TransmitterConfig {
        ack_timeout: Duration::from_millis(100),
        retries: 1,
        ..TransmitterConfig::new(mode, None)
    }
}

/// Binds a receiver on an ephemeral port and serves it on a thread.
fn serve(model: &Model, config: ReceiverConfig) -> (String, thread::JoinHandle<Vec<ReceiveRecord>>) {
    let receiver = Receiver::bind("127.0.0.1:0").unwrap();
    let addr = receiver.local_addr().unwrap().to_string();
    let model = model.clone();
    let handle = thread::spawn(move || receiver.run(&model, &config).unwrap());
    (addr, handle)
}

#[test]
fn loopback_predictions_match_local_decoding() {
    let model = random_toy_model(3);
    let kb = kb_for(&model);
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("rx.csv");
    let kb_path = dir.path().join("kb.txt");
    let (addr, rx) = serve(
        &model,
        ReceiverConfig {
            kb_path: Some(kb_path.clone()),
            max_frames: Some(5),
            idle_timeout: Some(Duration::from_secs(10)),
            log_path: Some(log_path.clone()),
            ..ReceiverConfig::default()
        },
    );
    let cr = CompressionRatio::new(0.5).unwrap();
    let imgs = images(5);
    let sent = run_transmitter(&addr, &model, &kb, &imgs, &quick(TxMode::Semantic(cr))).unwrap();
    let records = rx.join().unwrap();
    assert_eq!(sent.dropped(), 0);
    assert_eq!(sent.records.len(), 6);

    let indices = select_maps(&kb.ranking(), cr, model.spec().cut_maps());
    let expected: Vec<Option<usize>> = imgs
        .iter()
        .map(|img| Some(semantic_classify(&model, &semantic_encode(&model, img, &indices).unwrap()).unwrap()))
        .collect();
    let got: Vec<Option<usize>> = records.iter().filter(|r| r.frame_type == "semantic").map(|r| r.predicted_class).collect();
    assert_eq!(got, expected);

    assert_eq!(load_kb(&kb_path).unwrap().to_text(), kb.to_text());
    let log = std::fs::read_to_string(&log_path).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "seq,frame_type,bytes,predicted_class,latency_ms");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,kb_sync,"));
}

#[test]
fn mismatched_kb_is_refused_before_sending() {
    let model = random_toy_model(3);
    let kb = kb_for(&random_toy_model(4));
    let err = run_transmitter("127.0.0.1:9", &model, &kb, &images(1), &quick(TxMode::Baseline { quality: 50 })).unwrap_err();
    assert!(matches!(err, Error::Setup(_)), "{err}");
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let model = random_toy_model(3);
    let err = run_transmitter(
        &format!("127.0.0.1:{port}"),
        &model,
        &kb_for(&model),
        &images(1),
        &quick(TxMode::Semantic(CompressionRatio::new(0.0).unwrap())),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
}

#[test]
fn image_frames_without_baseline_model_are_dropped() {
    let model = random_toy_model(3);
    let (addr, rx) = serve(
        &model,
        ReceiverConfig {
            idle_timeout: Some(Duration::from_millis(600)),
            ..ReceiverConfig::default()
        },
    );
    let sent = run_transmitter(&addr, &model, &kb_for(&model), &images(2), &quick(TxMode::Baseline { quality: 50 })).unwrap();
    let records = rx.join().unwrap();
    assert_eq!(sent.dropped(), 2);
    assert!(sent.records[1..].iter().all(|r| r.attempts == 2));
    assert_eq!(records.len(), 1);
}

#[test]
fn duplicate_frames_are_acked_but_classified_once() {
    let model = random_toy_model(3);
    let (addr, rx) = serve(
        &model,
        ReceiverConfig {
            max_frames: Some(2),
            idle_timeout: Some(Duration::from_secs(5)),
            ..ReceiverConfig::default()
        },
    );
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.connect(&addr).unwrap();
    sock.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let body = semantic_encode(&model, &images(1)[0], &[0, 2]).unwrap().to_bytes();
    let mut buf = [0u8; 64];
    for seq in [0u16, 0, 0, 1] {
        let mut payload = seq.to_le_bytes().to_vec();
        payload.extend(&body);
        let frame = WireFrame {
            frame_type: FrameType::Semantic,
            task_id: 9,
            payload,
        };
        sock.send(&encode_wire(&frame).unwrap()).unwrap();
        let n = sock.recv(&mut buf).unwrap();
        let ack = decode_wire(&buf[..n]).unwrap();
        assert_eq!((ack.frame_type, ack.task_id, ack.payload), (FrameType::Ack, 9, seq.to_le_bytes().to_vec()));
    }
    let records = rx.join().unwrap();
    assert_eq!(records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![0, 1]);
}
