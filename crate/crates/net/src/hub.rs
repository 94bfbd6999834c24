//! Transport-independent room state. Each connection owns a bounded
//! outbound queue; the hub only ever `try_send`s, so a slow member can never
//! stall a broadcast. A member whose queue overflows is disconnected.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use tokio::sync::mpsc;
use tracing::{debug, warn};

use crate::protocol::{decode, encode, valid_room, CaptionEvent, Member, Message, Role};

pub type PeerId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    NotJoined,
    NotPublisher,
    StaleSeq,
    AlreadyJoined,
    RoomFull,
    InvalidRoom,
    BadMessage,
    UnexpectedMessage,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotJoined => "not_joined",
            ErrorCode::NotPublisher => "not_publisher",
            ErrorCode::StaleSeq => "stale_seq",
            ErrorCode::AlreadyJoined => "already_joined",
            ErrorCode::RoomFull => "room_full",
            ErrorCode::InvalidRoom => "invalid_room",
            ErrorCode::BadMessage => "bad_message",
            ErrorCode::UnexpectedMessage => "unexpected_message",
        }
    }
}

pub(crate) fn error(code: ErrorCode, message: impl Into<String>) -> Message {
    Message::Error {
        code: code.as_str().to_string(),
        message: message.into(),
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Connection {
    tx: mpsc::Sender<String>,
    joined: Option<String>,
}

struct RoomMember {
    name: String,
    role: Role,
}

#[derive(Default)]
struct Room {
    members: BTreeMap<PeerId, RoomMember>,
    last_seq: HashMap<PeerId, u64>,
}

#[derive(Default)]
struct State {
    next_peer: PeerId,
    connections: HashMap<PeerId, Connection>,
    rooms: HashMap<String, Room>,
}

/// Room membership and fan-out. All mutations go through one lock, which
/// gives every member of a room the same broadcast order.
pub struct Hub {
    max_room: usize,
    queue_capacity: usize,
    state: Mutex<State>,
}

/// Per-room view for inspection in tests and logs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoomSnapshot {
    pub room: String,
    pub members: Vec<Member>,
}

impl Hub {
    pub fn new(max_room: usize, queue_capacity: usize) -> Self {
        Self {
            max_room,
            queue_capacity,
            state: Mutex::new(State {
                next_peer: 1,
                ..State::default()
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a connection and returns its id and outbound queue.
    pub fn connect(&self) -> (PeerId, mpsc::Receiver<String>) {
        let (tx, rx) = mpsc::channel(self.queue_capacity);
        let mut st = self.lock();
        let id = st.next_peer;
        st.next_peer += 1;
        st.connections.insert(id, Connection { tx, joined: None });
        (id, rx)
    }

    /// Decodes one text frame and dispatches it.
    pub fn handle_text(&self, peer: PeerId, text: &str) {
        match decode(text) {
            Ok(msg) => self.handle_message(peer, msg),
            Err(e) => self.reply(peer, error(ErrorCode::BadMessage, e.to_string())),
        }
    }

    pub fn handle_message(&self, peer: PeerId, msg: Message) {
        match msg {
            Message::Join { room, role, name } => self.handle_join(peer, room, role, name),
            Message::Caption(c) => self.handle_caption(peer, c),
            Message::Ping => self.reply(peer, Message::Pong),
            other => self.reply(
                peer,
                error(
                    ErrorCode::UnexpectedMessage,
                    format!("{} is not a client message", other.type_tag()),
                ),
            ),
        }
    }

    pub fn reply(&self, peer: PeerId, msg: Message) {
        let mut st = self.lock();
        let mut overflow = Vec::new();
        send(&st, peer, &msg, &mut overflow);
        drop_overflowed(&mut st, overflow);
    }

    pub fn handle_join(&self, peer: PeerId, room: String, role: Role, name: String) {
        let mut st = self.lock();
        let mut overflow = Vec::new();
        let reject = match st.connections.get(&peer) {
            None => return,
            Some(c) if c.joined.is_some() => Some(error(
                ErrorCode::AlreadyJoined,
                "connection already joined a room",
            )),
            _ if !valid_room(&room) => Some(error(
                ErrorCode::InvalidRoom,
                format!("room id {room:?} must match [a-zA-Z0-9_-]{{1,64}}"),
            )),
            _ if st
                .rooms
                .get(&room)
                .is_some_and(|r| r.members.len() >= self.max_room) =>
            {
                Some(error(ErrorCode::RoomFull, format!("room {room} is full")))
            }
            _ => None,
        };
        if let Some(e) = reject {
            send(&st, peer, &e, &mut overflow);
            drop_overflowed(&mut st, overflow);
            return;
        }
        let r = st.rooms.entry(room.clone()).or_default();
        let members: Vec<Member> = r
            .members
            .iter()
            .map(|(&id, m)| Member {
                peer_id: id,
                name: m.name.clone(),
                role: m.role,
            })
            .collect();
        r.members.insert(
            peer,
            RoomMember {
                name: name.clone(),
                role,
            },
        );
        st.connections.get_mut(&peer).expect("checked above").joined = Some(room.clone());
        debug!(peer, room = %room, role = role.as_str(), "join");
        let announce = Message::PeerJoined {
            peer_id: peer,
            name,
            role,
        };
        for m in &members {
            send(&st, m.peer_id, &announce, &mut overflow);
        }
        send(
            &st,
            peer,
            &Message::Welcome {
                room,
                peer_id: peer,
                members,
            },
            &mut overflow,
        );
        drop_overflowed(&mut st, overflow);
    }

    pub fn handle_caption(&self, peer: PeerId, caption: CaptionEvent) {
        let mut st = self.lock();
        let mut overflow = Vec::new();
        let Some(room_id) = st.connections.get(&peer).and_then(|c| c.joined.clone()) else {
            send(
                &st,
                peer,
                &error(ErrorCode::NotJoined, "join a room first"),
                &mut overflow,
            );
            drop_overflowed(&mut st, overflow);
            return;
        };
        let room = st.rooms.get_mut(&room_id).expect("joined rooms exist");
        let member = &room.members[&peer];
        let (role, name) = (member.role, member.name.clone());
        let rejection = match room.last_seq.get(&peer).copied() {
            _ if role != Role::Publisher => Some(error(
                ErrorCode::NotPublisher,
                "viewers cannot publish captions",
            )),
            Some(last) if caption.seq <= last => Some(error(
                ErrorCode::StaleSeq,
                format!("seq {} is not above {last}", caption.seq),
            )),
            _ => {
                room.last_seq.insert(peer, caption.seq);
                None
            }
        };
        if let Some(e) = rejection {
            send(&st, peer, &e, &mut overflow);
            drop_overflowed(&mut st, overflow);
            return;
        }
        let msg = Message::CaptionBroadcast {
            room: room_id.clone(),
            speaker: peer,
            name,
            caption,
            server_ts_ms: now_ms(),
        };
        let text = encode(&msg).expect("validated on decode");
        let targets: Vec<PeerId> = st.rooms[&room_id].members.keys().copied().collect();
        for id in targets {
            send_text(&st, id, &text, &mut overflow);
        }
        drop_overflowed(&mut st, overflow);
    }

    /// Removes the connection, notifying its room. Safe to call repeatedly.
    pub fn handle_disconnect(&self, peer: PeerId) {
        let mut st = self.lock();
        remove(&mut st, peer);
    }

    pub fn connection_count(&self) -> usize {
        self.lock().connections.len()
    }

    pub fn room_count(&self) -> usize {
        self.lock().rooms.len()
    }

    pub fn rooms(&self) -> Vec<RoomSnapshot> {
        let st = self.lock();
        let mut out: Vec<RoomSnapshot> = st
            .rooms
            .iter()
            .map(|(id, r)| RoomSnapshot {
                room: id.clone(),
                members: r
                    .members
                    .iter()
                    .map(|(&peer_id, m)| Member {
                        peer_id,
                        name: m.name.clone(),
                        role: m.role,
                    })
                    .collect(),
            })
            .collect();
        out.sort_by(|a, b| a.room.cmp(&b.room));
        out
    }
}

fn send(st: &State, peer: PeerId, msg: &Message, overflow: &mut Vec<PeerId>) {
    match encode(msg) {
        Ok(text) => send_text(st, peer, &text, overflow),
        Err(e) => warn!(peer, error = %e, "dropping unencodable message"),
    }
}

fn send_text(st: &State, peer: PeerId, text: &str, overflow: &mut Vec<PeerId>) {
    if let Some(c) = st.connections.get(&peer) {
        match c.tx.try_send(text.to_string()) {
            Ok(()) => {}
            Err(mpsc::error::TrySendError::Full(_)) => {
                warn!(peer, "outbound queue full; disconnecting");
                overflow.push(peer);
            }
            // The socket task is gone; its own disconnect will follow.
            Err(mpsc::error::TrySendError::Closed(_)) => {}
        }
    }
}

fn drop_overflowed(st: &mut State, mut overflow: Vec<PeerId>) {
    while let Some(peer) = overflow.pop() {
        overflow.extend(remove(st, peer));
    }
}

/// Removes `peer` and returns members whose queues overflowed while being
/// told about it.
fn remove(st: &mut State, peer: PeerId) -> Vec<PeerId> {
    let mut overflow = Vec::new();
    let Some(conn) = st.connections.remove(&peer) else {
        return overflow;
    };
    let Some(room_id) = conn.joined else {
        return overflow;
    };
    let Some(room) = st.rooms.get_mut(&room_id) else {
        return overflow;
    };
    room.members.remove(&peer);
    room.last_seq.remove(&peer);
    debug!(peer, room = %room_id, "leave");
    if room.members.is_empty() {
        st.rooms.remove(&room_id);
        return overflow;
    }
    let targets: Vec<PeerId> = room.members.keys().copied().collect();
    let msg = Message::PeerLeft { peer_id: peer };
    for id in targets {
        send(st, id, &msg, &mut overflow);
    }
    overflow
}
