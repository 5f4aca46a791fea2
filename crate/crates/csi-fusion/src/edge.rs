//! Receiver → edge server feature streaming over TCP.

use std::collections::{HashMap, HashSet};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use csi_fusion_core::data::SampleBundle;
use csi_fusion_core::model::{argmax_rows, Fusion, NetKind, Network};
use csi_fusion_core::nn::Tensor;
use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::wire::{read_frame, write_frame, FeaturePayload, MsgType, Prediction, WireFrame};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub timeout: Duration,
    /// Stop once this many sessions have finished.
    pub max_sessions: Option<usize>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_sessions: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub sessions: usize,
    pub rejected: usize,
    pub predictions: usize,
    pub timed_out: usize,
}

struct Pending {
    first_seen: Instant,
    feats: Vec<Option<FeaturePayload>>,
}

struct Shared {
    net: Network,
    n: usize,
    pending: Mutex<HashMap<u32, Pending>>,
    writers: Mutex<HashMap<u16, Arc<Mutex<BufWriter<TcpStream>>>>>,
    stats: Mutex<ServerStats>,
    stop: AtomicBool,
    streams: Mutex<Vec<TcpStream>>,
    /// Serializes fusion and classification.
    classify: Mutex<()>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    /// Waits for the server to stop on its own (see `max_sessions`) or after
    /// [`shutdown`](Self::shutdown).
    pub fn join(self) -> ServerStats {
        let _ = self.thread.join();
        self.shared.stats.lock().expect("stats").clone()
    }
}

/// Starts an edge server for a proposed-method network expecting `n`
/// receivers.
pub fn start_server(
    net: Network,
    n: usize,
    listen: impl ToSocketAddrs,
    opts: ServerOptions,
) -> Result<ServerHandle> {
    if net.kind() != NetKind::Proposed {
        return Err(Error::Usage(
            "the edge server needs a proposed-method checkpoint".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Usage("at least one receiver is required".into()));
    }
    let listener = TcpListener::bind(listen).map_err(|e| Error::Network(format!("bind: {e}")))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        net,
        n,
        pending: Mutex::new(HashMap::new()),
        writers: Mutex::new(HashMap::new()),
        stats: Mutex::new(ServerStats::default()),
        stop: AtomicBool::new(false),
        streams: Mutex::new(Vec::new()),
        classify: Mutex::new(()),
    });
    let sh = Arc::clone(&shared);
    let thread = thread::spawn(move || accept_loop(listener, sh, opts));
    info!("edge server listening on {addr} for {n} receivers");
    Ok(ServerHandle {
        addr,
        shared,
        thread,
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, opts: ServerOptions) {
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    let finished = Arc::new(Mutex::new(0usize));
    while !shared.stop.load(Ordering::SeqCst) {
        expire(&shared, opts.timeout);
        if let Some(max) = opts.max_sessions {
            if *finished.lock().expect("count") >= max {
                break;
            }
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("connection from {peer}");
                if let Ok(clone) = stream.try_clone() {
                    shared.streams.lock().expect("streams").push(clone);
                }
                let sh = Arc::clone(&shared);
                let done = Arc::clone(&finished);
                sessions.push(thread::spawn(move || {
                    let accepted = match session(stream, &sh) {
                        Ok(accepted) => accepted,
                        Err(e) => {
                            warn!("session with {peer}: {e}");
                            true
                        }
                    };
                    if accepted {
                        *done.lock().expect("count") += 1;
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept: {e}");
                thread::sleep(POLL);
            }
        }
    }
    shared.stop.store(true, Ordering::SeqCst);
    for s in shared.streams.lock().expect("streams").drain(..) {
        let _ = s.shutdown(Shutdown::Both);
    }
    for s in sessions {
        let _ = s.join();
    }
    expire(&shared, Duration::ZERO);
}

fn expire(shared: &Shared, timeout: Duration) {
    let mut pending = shared.pending.lock().expect("pending");
    let before = pending.len();
    pending.retain(|index, p| {
        let keep = p.first_seen.elapsed() < timeout;
        if !keep {
            let have = p.feats.iter().filter(|f| f.is_some()).count();
            warn!(
                "segment {index} dropped after timeout with {have} of {} receivers",
                shared.n
            );
        }
        keep
    });
    let dropped = before - pending.len();
    drop(pending);
    if dropped > 0 {
        shared.stats.lock().expect("stats").timed_out += dropped;
    }
}

fn nack(stream: &TcpStream, receiver: u16, reason: &str) {
    warn!("rejecting receiver {receiver}: {reason}");
    let mut w = stream;
    let _ = write_frame(
        &mut w,
        &WireFrame::new(MsgType::Bye, receiver, 0, reason.as_bytes().to_vec()),
    );
    let _ = w.flush();
    let _ = stream.shutdown(Shutdown::Both);
}

/// Runs one receiver session; `Ok(false)` when the receiver was rejected.
fn session(stream: TcpStream, shared: &Shared) -> Result<bool> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let hello = match read_frame(&mut reader) {
        Ok(f) => f,
        Err(e) => {
            nack(&stream, 0, &e.to_string());
            shared.stats.lock().expect("stats").rejected += 1;
            return Ok(false);
        }
    };
    let Some(hello) = hello else { return Ok(false) };
    let id = hello.receiver_id;
    if hello.msg_type != MsgType::Hello {
        nack(&stream, id, "expected HELLO");
        shared.stats.lock().expect("stats").rejected += 1;
        return Ok(false);
    }
    let writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    {
        let mut writers = shared.writers.lock().expect("writers");
        let reason = if usize::from(id) >= shared.n {
            Some(format!("receiver id {id} outside 0..{}", shared.n))
        } else if writers.contains_key(&id) {
            Some(format!("duplicate receiver id {id}"))
        } else if writers.len() >= shared.n {
            Some(format!("more than {} receivers", shared.n))
        } else {
            None
        };
        if let Some(reason) = reason {
            drop(writers);
            nack(&stream, id, &reason);
            shared.stats.lock().expect("stats").rejected += 1;
            return Ok(false);
        }
        writers.insert(id, Arc::clone(&writer));
    }
    shared.stats.lock().expect("stats").sessions += 1;
    info!("receiver {id} connected");
    let result = serve_frames(&mut reader, id, shared);
    shared.writers.lock().expect("writers").remove(&id);
    if let Err(e) = &result {
        let mut w = writer.lock().expect("writer");
        let _ = write_frame(
            &mut *w,
            &WireFrame::new(MsgType::Bye, id, 0, e.to_string().into_bytes()),
        );
        let _ = w.flush();
    }
    let _ = stream.shutdown(Shutdown::Both);
    info!("receiver {id} disconnected");
    result.map(|_| true)
}

fn serve_frames(reader: &mut BufReader<TcpStream>, id: u16, shared: &Shared) -> Result<()> {
    loop {
        let frame = match read_frame(reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(_) if shared.stop.load(Ordering::SeqCst) => return Ok(()),
            Err(e) => return Err(e),
        };
        match frame.msg_type {
            MsgType::Bye => {
                let mut w = shared.writers.lock().expect("writers").get(&id).cloned();
                if let Some(w) = w.take() {
                    let mut w = w.lock().expect("writer");
                    write_frame(&mut *w, &WireFrame::new(MsgType::Bye, id, 0, vec![]))?;
                    w.flush()?;
                }
                return Ok(());
            }
            MsgType::Features => {
                if frame.receiver_id != id {
                    return Err(Error::Protocol(format!(
                        "features for receiver {} on the session of receiver {id}",
                        frame.receiver_id
                    )));
                }
                let feats = FeaturePayload::decode(&frame.payload)?;
                submit(shared, id, frame.segment_index, feats)?;
            }
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected {other:?} from receiver {id}"
                )))
            }
        }
    }
}

fn submit(shared: &Shared, id: u16, index: u32, feats: FeaturePayload) -> Result<()> {
    let complete = {
        let mut pending = shared.pending.lock().expect("pending");
        let entry = pending.entry(index).or_insert_with(|| Pending {
            first_seen: Instant::now(),
            feats: vec![None; shared.n],
        });
        if entry.feats[usize::from(id)].replace(feats).is_some() {
            warn!("receiver {id} resent segment {index}; keeping the latest");
        }
        if entry.feats.iter().all(Option::is_some) {
            pending.remove(&index)
        } else {
            None
        }
    };
    let Some(done) = complete else { return Ok(()) };
    let feats: Vec<FeaturePayload> = done
        .feats
        .into_iter()
        .map(|f| f.expect("complete"))
        .collect();
    let pred = {
        let _guard = shared.classify.lock().expect("classify");
        classify(&shared.net, &feats)?
    };
    shared.stats.lock().expect("stats").predictions += 1;
    let writers: Vec<(u16, Arc<Mutex<BufWriter<TcpStream>>>)> = shared
        .writers
        .lock()
        .expect("writers")
        .iter()
        .map(|(k, v)| (*k, Arc::clone(v)))
        .collect();
    for (rx, w) in writers {
        let mut w = w.lock().expect("writer");
        let sent = write_frame(
            &mut *w,
            &WireFrame::new(MsgType::Prediction, rx, index, pred.encode()),
        )
        .and_then(|_| w.flush().map_err(Error::from));
        if let Err(e) = sent {
            warn!("prediction {index} to receiver {rx}: {e}");
        }
    }
    Ok(())
}

/// Fuses one segment's per-receiver features and classifies it.
pub fn classify(net: &Network, feats: &[FeaturePayload]) -> Result<Prediction> {
    let shape = net.config().csi_feature_shape();
    let csi = feats
        .iter()
        .map(|f| unpool(&f.csi_feat, shape))
        .collect::<Result<Vec<_>>>()?;
    let rssi: Vec<Tensor<f32>> = feats.iter().map(|f| f.rssi_feat.clone()).collect();
    let probs = net.classify_features(&csi, &rssi, Fusion::Learned)?;
    let (class, confidence) = argmax_rows(&probs)[0];
    Ok(Prediction {
        class: class as u16,
        confidence,
    })
}

/// Channel-mean pooled `[1, 1, T', S']` features become `C` identical
/// channels; full features pass through.
fn unpool(t: &Tensor<f32>, shape: [usize; 3]) -> Result<Tensor<f32>> {
    let [c, tp, sp] = shape;
    match t.shape() {
        [1, 1, a, b] if (*a, *b) == (tp, sp) && c != 1 => {
            let mut data = Vec::with_capacity(c * tp * sp);
            for _ in 0..c {
                data.extend_from_slice(t.data());
            }
            Ok(Tensor::from_vec(&[1, c, tp, sp], data)?)
        }
        [1, a, b, d] if [*a, *b, *d] == shape => Ok(t.clone()),
        s => Err(Error::Protocol(format!(
            "feature shape {s:?}, expected [1, {c}, {tp}, {sp}]"
        ))),
    }
}

/// Mean over the channel axis of a `[1, C, T', S']` feature map.
pub fn channel_mean_pool(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(Error::Usage(format!("cannot pool features of shape {s:?}")));
    }
    let (c, plane) = (s[1], s[2] * s[3]);
    let mut out = vec![0f32; plane];
    for ch in t.data().chunks(plane) {
        for (o, v) in out.iter_mut().zip(ch) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= c as f32;
    }
    Ok(Tensor::from_vec(&[1, 1, s[2], s[3]], out)?)
}

/// Per-segment features computed on the receiver side.
pub fn extract_features(
    net: &Network,
    bundle: &SampleBundle,
    receiver: usize,
    pool: bool,
) -> Result<FeaturePayload> {
    let seg = bundle.segment(receiver);
    let csi = Tensor::from_vec(&[1, 1, seg.t_w, seg.subcarriers], seg.csi_window.clone())?;
    let rssi = Tensor::from_vec(&[1, 1, seg.t_w], seg.rssi_window.clone())?;
    let (f, r) = net.extract(&csi, &rssi)?;
    let r = r.ok_or_else(|| Error::Usage("checkpoint has no RSSI extractor".into()))?;
    let f = if pool { channel_mean_pool(&f)? } else { f };
    Ok(FeaturePayload {
        csi_feat: f,
        rssi_feat: r,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionSummary {
    pub frames_sent: usize,
    pub frames_received: usize,
    pub payload_bytes_sent: usize,
    pub predictions: Vec<(u32, Prediction)>,
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub pool: bool,
    /// How long to wait for outstanding predictions after the last send.
    pub timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            pool: false,
            timeout: DEFAULT_TIMEOUT * 2,
        }
    }
}

enum Inbound {
    Prediction(u32, Prediction),
    Nack(String),
    Closed,
    Failed(Error),
}

/// Streams the receiver's features for every bundle, in segment order, and
/// collects the server's predictions.
pub fn run_client(
    net: &Network,
    bundles: &[&SampleBundle],
    receiver: u16,
    server: impl ToSocketAddrs,
    opts: &ClientOptions,
) -> Result<SessionSummary> {
    if let Some(b) = bundles
        .iter()
        .find(|b| usize::from(receiver) >= b.n_receivers())
    {
        return Err(Error::Usage(format!(
            "segment {} has no data for receiver {receiver}",
            b.segment_index()
        )));
    }
    let stream = TcpStream::connect(server).map_err(|e| Error::Network(format!("connect: {e}")))?;
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::channel();
    let mut reader = BufReader::new(stream.try_clone()?);
    let reader_thread = thread::spawn(move || loop {
        let msg = match read_frame(&mut reader) {
            Ok(Some(f)) => match f.msg_type {
                MsgType::Prediction => match Prediction::decode(&f.payload) {
                    Ok(p) => Inbound::Prediction(f.segment_index, p),
                    Err(e) => Inbound::Failed(e),
                },
                MsgType::Bye if f.payload.is_empty() => Inbound::Closed,
                MsgType::Bye => Inbound::Nack(String::from_utf8_lossy(&f.payload).into_owned()),
                other => {
                    Inbound::Failed(Error::Protocol(format!("unexpected {other:?} from server")))
                }
            },
            Ok(None) => Inbound::Closed,
            Err(e) => Inbound::Failed(e),
        };
        let last = !matches!(msg, Inbound::Prediction(..));
        if tx.send(msg).is_err() || last {
            return;
        }
    });

    let mut sorted: Vec<&SampleBundle> = bundles.to_vec();
    sorted.sort_by_key(|b| b.segment_index());
    let mut summary = SessionSummary::default();
    let mut writer = BufWriter::new(stream.try_clone()?);
    let send = |w: &mut BufWriter<TcpStream>, f: WireFrame, s: &mut SessionSummary| -> Result<()> {
        s.frames_sent += 1;
        s.payload_bytes_sent += f.payload.len();
        write_frame(w, &f)
    };
    send(
        &mut writer,
        WireFrame::new(MsgType::Hello, receiver, 0, vec![]),
        &mut summary,
    )?;
    writer.flush()?;
    let mut expected: HashSet<u32> = HashSet::new();
    let mut early = Vec::new();
    for b in &sorted {
        let feats = extract_features(net, b, usize::from(receiver), opts.pool)?;
        let index = b.segment_index();
        expected.insert(index);
        send(
            &mut writer,
            WireFrame::new(MsgType::Features, receiver, index, feats.encode()),
            &mut summary,
        )?;
        writer.flush()?;
        while let Ok(msg) = rx.try_recv() {
            early.push(msg);
        }
    }
    let mut outcome = Ok(());
    let deadline = Instant::now() + opts.timeout;
    let handle = |msg: Inbound,
                  summary: &mut SessionSummary,
                  expected: &mut HashSet<u32>|
     -> Option<Result<()>> {
        match msg {
            Inbound::Prediction(i, p) => {
                summary.frames_received += 1;
                expected.remove(&i);
                summary.predictions.push((i, p));
                None
            }
            Inbound::Nack(reason) => Some(Err(Error::Network(format!(
                "server rejected receiver {receiver}: {reason}"
            )))),
            Inbound::Closed => Some(Ok(())),
            Inbound::Failed(e) => Some(Err(e)),
        }
    };
    for msg in early {
        if let Some(r) = handle(msg, &mut summary, &mut expected) {
            outcome = r;
        }
    }
    while outcome.is_ok() && !expected.is_empty() {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(msg) => {
                if let Some(r) = handle(msg, &mut summary, &mut expected) {
                    outcome = r;
                    break;
                }
            }
            Err(_) => {
                warn!(
                    "{} predictions missing after {:?}",
                    expected.len(),
                    opts.timeout
                );
                break;
            }
        }
    }
    if outcome.is_ok() {
        let _ = send(
            &mut writer,
            WireFrame::new(MsgType::Bye, receiver, 0, vec![]),
            &mut summary,
        );
        let _ = writer.flush();
        while let Ok(msg) = rx.recv_timeout(opts.timeout) {
            match msg {
                Inbound::Prediction(i, p) => {
                    summary.frames_received += 1;
                    summary.predictions.push((i, p));
                }
                Inbound::Closed => {
                    summary.frames_received += 1;
                    break;
                }
                Inbound::Nack(_) | Inbound::Failed(_) => break,
            }
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader_thread.join();
    outcome?;
    summary.predictions.sort_by_key(|(i, _)| *i);
    Ok(summary)
}
