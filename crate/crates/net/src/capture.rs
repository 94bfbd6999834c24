//! Capture client: plays frames from disk at a fixed rate, classifies a
//! sliding 12-frame window, debounces the predicted words and publishes
//! them to a room.
//!
//! Prediction runs on a blocking thread and hands events to the network
//! sender through a bounded queue that drops its oldest entry when full, so
//! a slow network never stalls the classifier.

use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use signcast_core::model::{ModelError, SignModel};
use signcast_core::video::{self, Clip, Frame, VideoError, CLIP_LEN};
use thiserror::Error;
use tokio::sync::Notify;
use tracing::{info, warn};

use crate::client::{Client, ClientError};
use crate::hub::now_ms;
use crate::protocol::{valid_room, CaptionEvent, Message, Role};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("invalid capture config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("could not reach {url} after {attempts} attempts: {last}")]
    ConnectionFailed {
        url: String,
        attempts: usize,
        last: String,
    },
    #[error("server rejected join: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("prediction thread failed: {0}")]
    Worker(String),
}

/// Reconnection schedule: one initial attempt plus `retries` more, waiting
/// `base`, `2 base`, `4 base`, ... in between.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub retries: usize,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureConfig {
    pub source: PathBuf,
    pub model: PathBuf,
    pub server: String,
    pub room: String,
    pub name: String,
    /// New frames between consecutive windows.
    pub stride: usize,
    pub min_confidence: f64,
    /// Windows that must pass before the same word may be emitted again.
    pub repeat_gap: u64,
    /// Playback rate; zero plays as fast as the classifier allows.
    pub fps: f64,
    pub transcript: Option<PathBuf>,
    pub queue_capacity: usize,
    pub retry: RetryPolicy,
    /// How long to wait for the server to echo the final caption.
    pub echo_timeout: Duration,
}

impl CaptureConfig {
    pub fn new(
        source: impl Into<PathBuf>,
        model: impl Into<PathBuf>,
        server: impl Into<String>,
        room: impl Into<String>,
        name: impl Into<String>,
    ) -> Self {
        Self {
            source: source.into(),
            model: model.into(),
            server: server.into(),
            room: room.into(),
            name: name.into(),
            stride: 6,
            min_confidence: 0.6,
            repeat_gap: 3,
            fps: 24.0,
            transcript: None,
            queue_capacity: 64,
            retry: RetryPolicy::default(),
            echo_timeout: Duration::from_secs(5),
        }
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        let bad = |m: String| Err(CaptureError::Config(m));
        if !(1..=CLIP_LEN).contains(&self.stride) {
            return bad(format!("stride {} outside 1..={CLIP_LEN}", self.stride));
        }
        if !(self.min_confidence > 0.0 && self.min_confidence < 1.0) {
            return bad(format!(
                "confidence threshold {} outside (0, 1)",
                self.min_confidence
            ));
        }
        if self.repeat_gap < 1 {
            return bad("repeat gap must be at least 1".into());
        }
        if !(self.fps >= 0.0 && self.fps.is_finite()) {
            return bad(format!(
                "fps {} must be a finite non-negative number",
                self.fps
            ));
        }
        if !valid_room(&self.room) {
            return bad(format!("invalid room id {:?}", self.room));
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be positive".into());
        }
        Ok(())
    }
}

/// Debounce memory carried across windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionState {
    pub last_word: Option<String>,
    pub windows_since: u64,
    pub next_seq: u64,
}

impl Default for EmissionState {
    fn default() -> Self {
        Self {
            last_word: None,
            windows_since: 0,
            next_seq: 1,
        }
    }
}

impl EmissionState {
    /// Counts one window, then emits iff `confidence >= threshold` and the
    /// word differs from the last emission or `repeat_gap` windows have
    /// passed since it. Returns the sequence number of an emission.
    pub fn debounce(
        &mut self,
        word: &str,
        confidence: f64,
        threshold: f64,
        repeat_gap: u64,
    ) -> Option<u64> {
        self.windows_since = self.windows_since.saturating_add(1);
        if confidence < threshold {
            return None;
        }
        let repeat = self.last_word.as_deref() == Some(word);
        if repeat && self.windows_since < repeat_gap {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.windows_since = 0;
        self.last_word = Some(word.to_string());
        Some(seq)
    }
}

/// Rolling frame buffer that yields a 12-frame window every `stride` new
/// frames, resampling when fewer than 12 frames are buffered.
#[derive(Debug)]
pub struct Windower {
    stride: usize,
    buffer: VecDeque<Frame>,
    pending: usize,
    windows: usize,
}

impl Windower {
    pub fn new(stride: usize) -> Self {
        Self {
            stride: stride.max(1),
            buffer: VecDeque::with_capacity(CLIP_LEN),
            pending: 0,
            windows: 0,
        }
    }

    pub fn push(&mut self, frame: Frame) -> Result<Option<Clip>, VideoError> {
        if self.buffer.len() == CLIP_LEN {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.pending += 1;
        if self.pending < self.stride {
            return Ok(None);
        }
        self.pending = 0;
        self.window().map(Some)
    }

    /// A final window for streams too short to have produced any.
    pub fn finish(&mut self) -> Result<Option<Clip>, VideoError> {
        if self.windows > 0 || self.buffer.is_empty() {
            return Ok(None);
        }
        self.window().map(Some)
    }

    fn window(&mut self) -> Result<Clip, VideoError> {
        self.windows += 1;
        let frames: Vec<Frame> = self.buffer.iter().cloned().collect();
        video::resample_to_length(&frames, format!("window-{}", self.windows))
    }
}

/// Anything that names the word shown in a window and how sure it is.
pub trait WindowClassifier: Send + Sync {
    fn classify(&self, clip: &Clip) -> Result<(String, f64), ModelError>;
}

impl WindowClassifier for SignModel {
    fn classify(&self, clip: &Clip) -> Result<(String, f64), ModelError> {
        let p = self.predict_clip(clip)?;
        Ok((self.label_word(p.label).to_string(), p.confidence() as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    /// Index of the newest frame in the window.
    pub end_frame: usize,
    pub word: String,
    pub confidence: f64,
    pub emitted: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaptureReport {
    pub frames: usize,
    pub windows: Vec<WindowRecord>,
    /// Events handed to the network, in order.
    pub published: Vec<CaptionEvent>,
    /// Sequence numbers discarded because the send queue overflowed.
    pub dropped: Vec<u64>,
    /// Highest sequence number echoed back by the server.
    pub acknowledged: Option<u64>,
    pub reconnects: usize,
}

impl CaptureReport {
    pub fn transcript(&self) -> String {
        self.published.iter().map(transcript_line).collect()
    }
}

/// `seq<TAB>word<TAB>confidence<TAB>ts_ms` plus newline.
pub fn transcript_line(e: &CaptionEvent) -> String {
    format!("{}\t{}\t{}\t{}\n", e.seq, e.word, e.confidence, e.ts_ms)
}

struct EventQueue {
    items: Mutex<VecDeque<CaptionEvent>>,
    capacity: usize,
    dropped: Mutex<Vec<u64>>,
    closed: AtomicBool,
    notify: Notify,
}

impl EventQueue {
    fn new(capacity: usize) -> Self {
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity,
            dropped: Mutex::new(Vec::new()),
            closed: AtomicBool::new(false),
            notify: Notify::new(),
        }
    }

    fn push(&self, event: CaptionEvent) {
        let mut items = self.items.lock().expect("queue lock");
        if items.len() == self.capacity {
            if let Some(old) = items.pop_front() {
                warn!(seq = old.seq, word = %old.word, "send queue full; dropping oldest caption");
                self.dropped.lock().expect("queue lock").push(old.seq);
            }
        }
        items.push_back(event);
        drop(items);
        self.notify.notify_one();
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.notify.notify_one();
    }

    async fn next(&self) -> Option<CaptionEvent> {
        loop {
            if let Some(e) = self.items.lock().expect("queue lock").pop_front() {
                return Some(e);
            }
            if self.closed.load(Ordering::SeqCst) {
                return None;
            }
            self.notify.notified().await;
        }
    }
}

/// Classifies every window of `frames` with pacing, feeding debounced
/// events to `emit`. Stops early when `cancel` is set.
pub fn predict_stream(
    frames: &[Frame],
    classifier: &dyn WindowClassifier,
    config: &CaptureConfig,
    cancel: &AtomicBool,
    mut emit: impl FnMut(CaptionEvent),
) -> Result<Vec<WindowRecord>, CaptureError> {
    let mut windower = Windower::new(config.stride);
    let mut state = EmissionState::default();
    let mut records = Vec::new();
    let period = (config.fps > 0.0).then(|| Duration::from_secs_f64(1.0 / config.fps));
    let start = std::time::Instant::now();
    let mut evaluate = |clip: Clip, end_frame: usize, records: &mut Vec<WindowRecord>| {
        let (word, confidence) = classifier.classify(&clip)?;
        let emitted = state.debounce(&word, confidence, config.min_confidence, config.repeat_gap);
        if let Some(seq) = emitted {
            emit(CaptionEvent {
                word: word.clone(),
                confidence,
                seq,
                ts_ms: now_ms(),
            });
        }
        records.push(WindowRecord {
            end_frame,
            word,
            confidence,
            emitted,
        });
        Ok::<_, CaptureError>(())
    };
    for (i, frame) in frames.iter().enumerate() {
        if cancel.load(Ordering::SeqCst) {
            return Ok(records);
        }
        if let Some(period) = period {
            let due = start + period * i as u32;
            let now = std::time::Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        if let Some(clip) = windower.push(frame.clone())? {
            evaluate(clip, i, &mut records)?;
        }
    }
    if let Some(clip) = windower.finish()? {
        evaluate(clip, frames.len().saturating_sub(1), &mut records)?;
    }
    Ok(records)
}

async fn connect(config: &CaptureConfig) -> Result<Client, CaptureError> {
    let attempts = config.retry.retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = config.retry.base * 2u32.saturating_pow(attempt as u32 - 1);
            warn!(attempt, ?delay, error = %last, "connection failed; retrying");
            tokio::time::sleep(delay).await;
        }
        match Client::join(&config.server, &config.room, Role::Publisher, &config.name).await {
            Ok(c) => return Ok(c),
            Err(ClientError::Rejected { code, message }) => {
                return Err(CaptureError::Rejected { code, message })
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(CaptureError::ConnectionFailed {
        url: config.server.clone(),
        attempts,
        last,
    })
}

struct SendOutcome {
    published: Vec<CaptionEvent>,
    acknowledged: Option<u64>,
    reconnects: usize,
}

async fn send_loop(
    config: &CaptureConfig,
    mut client: Client,
    queue: &EventQueue,
) -> Result<SendOutcome, CaptureError> {
    let mut out = SendOutcome {
        published: Vec::new(),
        acknowledged: None,
        reconnects: 0,
    };
    let ack = |msg: Message, me: u64, acknowledged: &mut Option<u64>| match msg {
        Message::CaptionBroadcast {
            speaker, caption, ..
        } if speaker == me => {
            *acknowledged = Some(acknowledged.map_or(caption.seq, |a| a.max(caption.seq)));
        }
        Message::Error { code, message } => warn!(%code, %message, "server error"),
        _ => {}
    };
    loop {
        tokio::select! {
            event = queue.next() => {
                let Some(event) = event else { break };
                loop {
                    match client.send(&Message::Caption(event.clone())).await {
                        Ok(()) => break,
                        Err(e) => {
                            warn!(error = %e, "send failed; reconnecting");
                            client = connect(config).await?;
                            out.reconnects += 1;
                        }
                    }
                }
                info!(seq = event.seq, word = %event.word, confidence = event.confidence, "published");
                out.published.push(event);
            }
            msg = client.recv() => match msg {
                Ok(Some(m)) => ack(m, client.peer_id(), &mut out.acknowledged),
                Ok(None) | Err(_) => {
                    warn!("connection lost; reconnecting");
                    client = connect(config).await?;
                    out.reconnects += 1;
                }
            },
        }
    }
    if let Some(last) = out.published.last().map(|e| e.seq) {
        let wait = async {
            while out.acknowledged.is_none_or(|a| a < last) {
                match client.recv().await {
                    Ok(Some(m)) => ack(m, client.peer_id(), &mut out.acknowledged),
                    _ => break,
                }
            }
        };
        if tokio::time::timeout(config.echo_timeout, wait)
            .await
            .is_err()
        {
            warn!(seq = last, "no echo for the final caption");
        }
    }
    let _ = client.close().await;
    Ok(out)
}

/// Runs a capture session over in-memory frames.
pub async fn run_capture(
    config: &CaptureConfig,
    frames: Vec<Frame>,
    classifier: Arc<dyn WindowClassifier>,
) -> Result<CaptureReport, CaptureError> {
    config.validate()?;
    if frames.is_empty() {
        return Err(VideoError::EmptyInput.into());
    }
    let client = connect(config).await?;
    info!(peer = client.peer_id(), room = %config.room, "joined");

    let queue = Arc::new(EventQueue::new(config.queue_capacity));
    let cancel = Arc::new(AtomicBool::new(false));
    let frame_count = frames.len();
    let worker = {
        let (queue, cancel, config) = (queue.clone(), cancel.clone(), config.clone());
        tokio::task::spawn_blocking(move || {
            let result = predict_stream(&frames, classifier.as_ref(), &config, &cancel, |e| {
                queue.push(e)
            });
            queue.close();
            result
        })
    };
    let sent = send_loop(config, client, &queue).await;
    if sent.is_err() {
        cancel.store(true, Ordering::SeqCst);
    }
    let windows = worker
        .await
        .map_err(|e| CaptureError::Worker(e.to_string()))??;
    let sent = sent?;
    let report = CaptureReport {
        frames: frame_count,
        windows,
        published: sent.published,
        dropped: queue.dropped.lock().expect("queue lock").clone(),
        acknowledged: sent.acknowledged,
        reconnects: sent.reconnects,
    };
    if let Some(path) = &config.transcript {
        let mut f = std::fs::File::create(path)?;
        f.write_all(report.transcript().as_bytes())?;
    }
    Ok(report)
}

/// Loads the model and frame directory named in `config` and runs a session.
pub async fn run_capture_loop(config: &CaptureConfig) -> Result<CaptureReport, CaptureError> {
    config.validate()?;
    let model = SignModel::load(&config.model)?;
    let frames = video::load_frames(&config.source)?;
    run_capture(config, frames, Arc::new(model)).await
}
