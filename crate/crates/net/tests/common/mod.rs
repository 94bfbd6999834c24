//! Scenario drivers and oracles shared by the networking tests and the
//! acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signcast_core::video::{Clip, Frame, CLIP_LEN};
use signcast_net::capture::WindowClassifier;
use signcast_net::protocol::{decode, encode, CaptionEvent, Member, Message, ProtocolError, Role};
use signcast_net::{Client, Server, ServerConfig};

pub const WAIT: Duration = Duration::from_secs(10);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- protocol ------------------------------------------------------------

const ALPHABET: &[char] = &[
    'a', 'z', 'Q', '0', ' ', '"', '\\', '\n', '\t', '\u{0}', '\u{7f}', 'é', 'ß', '手', '🤟', '/',
];

pub fn random_text(rng: &mut impl Rng, min_len: usize) -> String {
    let len = rng.random_range(min_len..min_len + 12);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

pub fn random_room(rng: &mut impl Rng) -> String {
    const ROOM: &[u8] = b"abcXYZ019_-";
    let len = rng.random_range(1..=64);
    (0..len)
        .map(|_| ROOM[rng.random_range(0..ROOM.len())] as char)
        .collect()
}

fn random_u64(rng: &mut impl Rng) -> u64 {
    match rng.random_range(0..4) {
        0 => 0,
        1 => u64::MAX,
        2 => rng.random_range(0..1000),
        _ => rng.random(),
    }
}

fn random_confidence(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..5) {
        0 => 0.0,
        1 => 1.0,
        2 => f64::MIN_POSITIVE,
        3 => 1.0 - f64::EPSILON / 2.0,
        _ => rng.random::<f64>(),
    }
}

fn random_role(rng: &mut impl Rng) -> Role {
    if rng.random() {
        Role::Publisher
    } else {
        Role::Viewer
    }
}

pub fn random_caption(rng: &mut impl Rng) -> CaptionEvent {
    CaptionEvent {
        word: random_text(rng, 1),
        confidence: random_confidence(rng),
        seq: random_u64(rng),
        ts_ms: random_u64(rng),
    }
}

/// A valid message of a uniformly chosen type.
pub fn random_message(rng: &mut impl Rng) -> Message {
    match rng.random_range(0..9) {
        0 => Message::Join {
            room: random_room(rng),
            role: random_role(rng),
            name: random_text(rng, 0),
        },
        1 => Message::Caption(random_caption(rng)),
        2 => Message::Ping,
        3 => Message::Welcome {
            room: random_room(rng),
            peer_id: random_u64(rng),
            members: (0..rng.random_range(0..5))
                .map(|_| Member {
                    peer_id: random_u64(rng),
                    name: random_text(rng, 0),
                    role: random_role(rng),
                })
                .collect(),
        },
        4 => Message::CaptionBroadcast {
            room: random_room(rng),
            speaker: random_u64(rng),
            name: random_text(rng, 0),
            caption: random_caption(rng),
            server_ts_ms: random_u64(rng),
        },
        5 => Message::PeerJoined {
            peer_id: random_u64(rng),
            name: random_text(rng, 0),
            role: random_role(rng),
        },
        6 => Message::PeerLeft {
            peer_id: random_u64(rng),
        },
        7 => Message::Error {
            code: random_text(rng, 1),
            message: random_text(rng, 0),
        },
        _ => Message::Pong,
    }
}

/// Encodes and decodes `n` random messages; returns the failures.
pub fn round_trip_failures(n: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    for _ in 0..n {
        let msg = random_message(&mut rng);
        match encode(&msg).and_then(|text| {
            if text.contains('\n') {
                return Err(ProtocolError::Malformed("multi-line encoding".into()));
            }
            decode(&text)
        }) {
            Ok(back) if back == msg => {}
            Ok(back) => failures.push(format!("{msg:?} came back as {back:?}")),
            Err(e) => failures.push(format!("{msg:?}: {e}")),
        }
    }
    failures
}

/// Malformed payloads and the error each must produce. For `Malformed`
/// only the variant is compared.
pub fn malformed_cases() -> Vec<(&'static str, ProtocolError)> {
    use ProtocolError::*;
    vec![
        ("", Malformed(String::new())),
        ("{not json", Malformed(String::new())),
        ("[1,2]", Malformed(String::new())),
        ("\"caption\"", Malformed(String::new())),
        (
            r#"{"type":"caption","word":"hi"}  trailing"#,
            Malformed(String::new()),
        ),
        (r#"{"room":"a"}"#, MissingField("type")),
        (r#"{"type":"shout"}"#, UnknownType("shout".into())),
        (r#"{"type":"CAPTION"}"#, UnknownType("CAPTION".into())),
        (
            r#"{"type":"caption","confidence":0.5,"seq":1,"ts_ms":0}"#,
            MissingField("word"),
        ),
        (
            r#"{"type":"caption","word":"hi","seq":1,"ts_ms":0}"#,
            MissingField("confidence"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":0.5,"ts_ms":0}"#,
            MissingField("seq"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":0.5,"seq":1}"#,
            MissingField("ts_ms"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":1.5,"seq":1,"ts_ms":0}"#,
            OutOfRange("confidence"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":-0.1,"seq":1,"ts_ms":0}"#,
            OutOfRange("confidence"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":0.5,"seq":-3,"ts_ms":0}"#,
            OutOfRange("seq"),
        ),
        (
            r#"{"type":"caption","word":"hi","confidence":0.5,"seq":1.5,"ts_ms":0}"#,
            OutOfRange("seq"),
        ),
        (
            r#"{"type":"caption","word":"","confidence":0.5,"seq":1,"ts_ms":0}"#,
            EmptyWord,
        ),
        (
            r#"{"type":"join","room":"bad room","role":"viewer","name":"x"}"#,
            InvalidRoom("bad room".into()),
        ),
        (
            r#"{"type":"join","room":"","role":"viewer","name":"x"}"#,
            InvalidRoom(String::new()),
        ),
        (
            r#"{"type":"join","role":"viewer","name":"x"}"#,
            MissingField("room"),
        ),
        (
            r#"{"type":"join","room":"r","role":"admin","name":"x"}"#,
            InvalidField {
                field: "role",
                reason: "unknown role \"admin\"".into(),
            },
        ),
        (
            r#"{"type":"caption","word":7,"confidence":0.5,"seq":1,"ts_ms":0}"#,
            InvalidField {
                field: "word",
                reason: "expected a string, got a number".into(),
            },
        ),
        (
            r#"{"type":"peer_left","peer_id":"7"}"#,
            InvalidField {
                field: "peer_id",
                reason: "expected an unsigned integer, got a string".into(),
            },
        ),
        (
            r#"{"type":7}"#,
            InvalidField {
                field: "type",
                reason: "expected a string, got a number".into(),
            },
        ),
    ]
}

/// Returns descriptions of the malformed cases that did not yield their
/// designated error.
pub fn malformed_mismatches() -> Vec<String> {
    malformed_cases()
        .into_iter()
        .filter_map(|(payload, want)| {
            let got = decode(payload);
            let ok = match (&got, &want) {
                (Err(ProtocolError::Malformed(_)), ProtocolError::Malformed(_)) => true,
                (Err(e), w) => e == w,
                (Ok(_), _) => false,
            };
            (!ok).then(|| format!("{payload:?}: wanted {want:?}, got {got:?}"))
        })
        .collect()
}

// ---- broadcast -----------------------------------------------------------

pub async fn start_server(config: ServerConfig) -> Server {
    Server::bind(ServerConfig {
        bind: "127.0.0.1:0".into(),
        ..config
    })
    .await
    .expect("bind loopback")
}

pub fn caption(word: impl Into<String>, seq: u64) -> Message {
    Message::Caption(CaptionEvent {
        word: word.into(),
        confidence: 0.9,
        seq,
        ts_ms: signcast_net::hub::now_ms(),
    })
}

/// Receives until `n` caption broadcasts have arrived, recording each with
/// its arrival time. Other messages are ignored.
pub async fn collect_captions(client: &mut Client, n: usize) -> Vec<(u64, CaptionEvent, Instant)> {
    let mut got = Vec::with_capacity(n);
    let run = async {
        while got.len() < n {
            match client.recv().await.expect("recv") {
                Some(Message::CaptionBroadcast {
                    speaker, caption, ..
                }) => got.push((speaker, caption, Instant::now())),
                Some(_) => {}
                None => break,
            }
        }
    };
    let _ = tokio::time::timeout(WAIT, run).await;
    got
}

#[derive(Debug)]
pub struct BroadcastOutcome {
    /// Sequence numbers seen by each viewer, in arrival order.
    pub per_viewer: Vec<Vec<u64>>,
    pub echoed: Vec<u64>,
    /// Publish-to-deliver latency for every (viewer, caption) pair.
    pub latencies_ms: Vec<f64>,
}

impl BroadcastOutcome {
    pub fn p95_ms(&self) -> f64 {
        percentile(&self.latencies_ms, 0.95)
    }

    /// Every viewer saw exactly 1..=n in order.
    pub fn complete_and_ordered(&self, n: u64) -> bool {
        let want: Vec<u64> = (1..=n).collect();
        self.per_viewer.iter().all(|seqs| *seqs == want) && self.echoed == want
    }
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// One publisher and `viewers` viewers in `room`; the publisher sends
/// captions 1..=n spaced by `gap`.
pub async fn broadcast_run(
    url: &str,
    room: &str,
    viewers: usize,
    n: u64,
    gap: Duration,
) -> BroadcastOutcome {
    let mut handles = Vec::new();
    for v in 0..viewers {
        let client = Client::join(url, room, Role::Viewer, &format!("viewer{v}"))
            .await
            .expect("viewer join");
        handles.push(tokio::spawn(async move {
            let mut client = client;
            let got = collect_captions(&mut client, n as usize).await;
            let _ = client.close().await;
            got
        }));
    }
    let mut publisher = Client::join(url, room, Role::Publisher, "signer")
        .await
        .expect("publisher join");
    let sent_at: Arc<Mutex<HashMap<u64, Instant>>> = Arc::default();
    let echo = {
        let mut publisher_rx = Vec::new();
        for seq in 1..=n {
            sent_at.lock().unwrap().insert(seq, Instant::now());
            publisher
                .send(&caption(format!("w{seq}"), seq))
                .await
                .expect("send");
            if !gap.is_zero() {
                tokio::time::sleep(gap).await;
            }
        }
        publisher_rx.extend(
            collect_captions(&mut publisher, n as usize)
                .await
                .into_iter()
                .map(|(_, c, _)| c.seq),
        );
        publisher_rx
    };
    let _ = publisher.close().await;
    let sent_at = sent_at.lock().unwrap().clone();
    let mut per_viewer = Vec::new();
    let mut latencies_ms = Vec::new();
    for h in handles {
        let got = h.await.expect("viewer task");
        for (_, c, at) in &got {
            if let Some(t0) = sent_at.get(&c.seq) {
                latencies_ms.push(at.duration_since(*t0).as_secs_f64() * 1e3);
            }
        }
        per_viewer.push(got.into_iter().map(|(_, c, _)| c.seq).collect());
    }
    BroadcastOutcome {
        per_viewer,
        echoed: echo,
        latencies_ms,
    }
}

#[derive(Debug)]
pub struct IsolationOutcome {
    pub leaks: usize,
    pub complete: bool,
}

/// Runs `rooms` concurrent rooms of one publisher and two viewers; each
/// publisher tags its words with its room. Counts captions that reach a
/// member of another room.
pub async fn isolation_run(url: &str, rooms: usize, n: u64) -> IsolationOutcome {
    let mut tasks = Vec::new();
    for r in 0..rooms {
        let url = url.to_string();
        tasks.push(tokio::spawn(async move {
            let room = format!("room{r}");
            let mut viewers = Vec::new();
            for v in 0..2 {
                viewers.push(
                    Client::join(&url, &room, Role::Viewer, &format!("v{v}"))
                        .await
                        .expect("viewer join"),
                );
            }
            (room, viewers)
        }));
    }
    let mut rooms_with_viewers = Vec::new();
    for t in tasks {
        rooms_with_viewers.push(t.await.expect("join task"));
    }
    let mut readers = Vec::new();
    for (room, viewers) in rooms_with_viewers {
        for mut viewer in viewers {
            let room = room.clone();
            readers.push(tokio::spawn(async move {
                // Each viewer should get exactly its room's n captions, so
                // read a little longer to catch any strays.
                let got = collect_captions(&mut viewer, n as usize).await;
                let extra = tokio::time::timeout(Duration::from_millis(200), viewer.recv()).await;
                let stray = matches!(extra, Ok(Ok(Some(Message::CaptionBroadcast { .. }))));
                let _ = viewer.close().await;
                (room, got, stray)
            }));
        }
    }
    let mut publishers = Vec::new();
    for r in 0..rooms {
        let url = url.to_string();
        publishers.push(tokio::spawn(async move {
            let room = format!("room{r}");
            let mut p = Client::join(&url, &room, Role::Publisher, "signer")
                .await
                .expect("publisher join");
            for seq in 1..=n {
                p.send(&caption(format!("{room}:{seq}"), seq))
                    .await
                    .expect("send");
            }
            collect_captions(&mut p, n as usize).await;
            let _ = p.close().await;
        }));
    }
    for p in publishers {
        p.await.expect("publisher task");
    }
    let mut leaks = 0;
    let mut complete = true;
    for r in readers {
        let (room, got, stray) = r.await.expect("reader task");
        leaks += got
            .iter()
            .filter(|(_, c, _)| !c.word.starts_with(&format!("{room}:")))
            .count();
        leaks += stray as usize;
        complete &= got.len() == n as usize;
    }
    IsolationOutcome { leaks, complete }
}

/// Polls until the server holds no connections and no rooms.
pub async fn server_drains(server: &Server) -> bool {
    let deadline = Instant::now() + WAIT;
    while Instant::now() < deadline {
        if server.hub().connection_count() == 0 && server.hub().room_count() == 0 {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    false
}

// ---- capture -------------------------------------------------------------

/// Solid-colour frames whose red channel encodes a class index.
pub fn coded_frames(classes: &[usize], per_class: usize, size: usize) -> Vec<Frame> {
    classes
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, per_class))
        .enumerate()
        .map(|(i, c)| {
            Frame::filled(size, size, [c as u8 * 40, 0, 0])
                .expect("valid frame")
                .with_source_index(i)
        })
        .collect()
}

/// Names the majority class in a window of [`coded_frames`]; the
/// confidence is the majority's share of the window.
pub struct MajorityClassifier {
    pub words: Vec<String>,
}

impl WindowClassifier for MajorityClassifier {
    fn classify(&self, clip: &Clip) -> Result<(String, f64), signcast_core::model::ModelError> {
        let mut counts = vec![0usize; self.words.len()];
        for f in clip.frames() {
            counts[f.pixel(0, 0)[0] as usize / 40] += 1;
        }
        let (best, n) =
            counts
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
        Ok((
            self.words[best].clone(),
            n as f64 / clip.frames().len() as f64,
        ))
    }
}

/// Frame indices of every window the sliding policy evaluates over a
/// stream of `len` frames: one per `stride` new frames over the trailing
/// 12, each stretched to 12 by `round(i (n - 1) / 11)`; a stream that yields
/// no window at all gets one over everything it has.
pub fn window_plan(len: usize, stride: usize) -> Vec<Vec<usize>> {
    let mut ends: Vec<usize> = (1..=len).filter(|e| e % stride == 0).collect();
    if ends.is_empty() && len > 0 {
        ends.push(len);
    }
    ends.into_iter()
        .map(|end| {
            let start = end.saturating_sub(CLIP_LEN);
            let n = end - start;
            (0..CLIP_LEN)
                .map(|i| {
                    start + ((i * (n - 1)) as f64 / (CLIP_LEN - 1) as f64 + 0.5).floor() as usize
                })
                .collect()
        })
        .collect()
}

/// Applies the debounce policy to per-window predictions from scratch:
/// emit iff the probability clears `threshold` and the word is new or at
/// least `gap` windows have gone by since the last emission.
pub fn simulate_debounce(
    predictions: &[(String, f64)],
    threshold: f64,
    gap: u64,
) -> Vec<(u64, String, f64)> {
    let mut out: Vec<(u64, String, f64)> = Vec::new();
    let mut last_at: Option<usize> = None;
    for (w, (word, p)) in predictions.iter().enumerate() {
        if *p < threshold {
            continue;
        }
        let fresh = match (out.last(), last_at) {
            (Some((_, last, _)), Some(at)) => last != word || (w - at) as u64 >= gap,
            _ => true,
        };
        if fresh {
            out.push((out.len() as u64 + 1, word.clone(), *p));
            last_at = Some(w);
        }
    }
    out
}

/// Predictions for every planned window, computed with `classifier` on
/// windows assembled directly from `frames`.
pub fn oracle_predictions(
    frames: &[Frame],
    stride: usize,
    classifier: &dyn WindowClassifier,
) -> Vec<(String, f64)> {
    window_plan(frames.len(), stride)
        .into_iter()
        .map(|idx| {
            let clip = Clip::new(
                idx.iter().map(|&i| frames[i].clone()).collect(),
                "oracle",
                frames.len(),
            )
            .expect("12 frames");
            classifier.classify(&clip).expect("classify")
        })
        .collect()
}
