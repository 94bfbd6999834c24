//! JSON wire format. Every message is a single-line object whose `"type"`
//! field selects the variant; one message per WebSocket text frame.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("field {field:?}: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("field {0:?} out of range")]
    OutOfRange(&'static str),
    #[error("invalid room id {0:?}")]
    InvalidRoom(String),
    #[error("empty caption word")]
    EmptyWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Publisher,
    Viewer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Publisher => "publisher",
            Role::Viewer => "viewer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEvent {
    pub word: String,
    pub confidence: f64,
    pub seq: u64,
    pub ts_ms: u64,
}

impl CaptionEvent {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.word.is_empty() {
            return Err(ProtocolError::EmptyWord);
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(ProtocolError::OutOfRange("confidence"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub peer_id: u64,
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Join {
        room: String,
        role: Role,
        name: String,
    },
    Caption(CaptionEvent),
    Ping,
    Welcome {
        room: String,
        peer_id: u64,
        members: Vec<Member>,
    },
    CaptionBroadcast {
        room: String,
        speaker: u64,
        name: String,
        caption: CaptionEvent,
        server_ts_ms: u64,
    },
    PeerJoined {
        peer_id: u64,
        name: String,
        role: Role,
    },
    PeerLeft {
        peer_id: u64,
    },
    Error {
        code: String,
        message: String,
    },
    Pong,
}

pub fn valid_room(room: &str) -> bool {
    (1..=64).contains(&room.len())
        && room
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_room(room: &str) -> Result<(), ProtocolError> {
    if valid_room(room) {
        Ok(())
    } else {
        Err(ProtocolError::InvalidRoom(room.to_string()))
    }
}

impl Message {
    pub fn type_tag(&self) -> &'static str {
        match self {
            Message::Join { .. } => "join",
            Message::Caption(_) => "caption",
            Message::Ping => "ping",
            Message::Welcome { .. } => "welcome",
            Message::CaptionBroadcast { .. } => "caption_broadcast",
            Message::PeerJoined { .. } => "peer_joined",
            Message::PeerLeft { .. } => "peer_left",
            Message::Error { .. } => "error",
            Message::Pong => "pong",
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            Message::Join { room, .. } | Message::Welcome { room, .. } => check_room(room),
            Message::Caption(c) => c.validate(),
            Message::CaptionBroadcast { room, caption, .. } => {
                check_room(room)?;
                caption.validate()
            }
            _ => Ok(()),
        }
    }
}

fn put_caption(obj: &mut Map<String, Value>, c: &CaptionEvent) {
    obj.insert("word".into(), c.word.clone().into());
    obj.insert("confidence".into(), c.confidence.into());
    obj.insert("seq".into(), c.seq.into());
    obj.insert("ts_ms".into(), c.ts_ms.into());
}

fn member_value(m: &Member) -> Value {
    let mut o = Map::new();
    o.insert("peer_id".into(), m.peer_id.into());
    o.insert("name".into(), m.name.clone().into());
    o.insert("role".into(), m.role.as_str().into());
    Value::Object(o)
}

/// Serialises a message after validating it.
pub fn encode(msg: &Message) -> Result<String, ProtocolError> {
    msg.validate()?;
    let mut o = Map::new();
    o.insert("type".into(), msg.type_tag().into());
    match msg {
        Message::Join { room, role, name } => {
            o.insert("room".into(), room.clone().into());
            o.insert("role".into(), role.as_str().into());
            o.insert("name".into(), name.clone().into());
        }
        Message::Caption(c) => put_caption(&mut o, c),
        Message::Ping | Message::Pong => {}
        Message::Welcome {
            room,
            peer_id,
            members,
        } => {
            o.insert("room".into(), room.clone().into());
            o.insert("peer_id".into(), (*peer_id).into());
            o.insert(
                "members".into(),
                Value::Array(members.iter().map(member_value).collect()),
            );
        }
        Message::CaptionBroadcast {
            room,
            speaker,
            name,
            caption,
            server_ts_ms,
        } => {
            o.insert("room".into(), room.clone().into());
            o.insert("speaker".into(), (*speaker).into());
            o.insert("name".into(), name.clone().into());
            put_caption(&mut o, caption);
            o.insert("server_ts_ms".into(), (*server_ts_ms).into());
        }
        Message::PeerJoined {
            peer_id,
            name,
            role,
        } => {
            o.insert("peer_id".into(), (*peer_id).into());
            o.insert("name".into(), name.clone().into());
            o.insert("role".into(), role.as_str().into());
        }
        Message::PeerLeft { peer_id } => {
            o.insert("peer_id".into(), (*peer_id).into());
        }
        Message::Error { code, message } => {
            o.insert("code".into(), code.clone().into());
            o.insert("message".into(), message.clone().into());
        }
    }
    // JSON string escaping turns control characters into escapes, so the
    // compact form is always one line.
    Ok(Value::Object(o).to_string())
}

struct Fields<'a>(&'a Map<String, Value>);

impl<'a> Fields<'a> {
    fn get(&self, field: &'static str) -> Result<&'a Value, ProtocolError> {
        self.0.get(field).ok_or(ProtocolError::MissingField(field))
    }

    fn string(&self, field: &'static str) -> Result<String, ProtocolError> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(wrong_type(field, "a string", other)),
        }
    }

    fn u64(&self, field: &'static str) -> Result<u64, ProtocolError> {
        let v = self.get(field)?;
        match v.as_u64() {
            Some(n) => Ok(n),
            None if v.is_number() => Err(ProtocolError::OutOfRange(field)),
            None => Err(wrong_type(field, "an unsigned integer", v)),
        }
    }

    fn f64(&self, field: &'static str) -> Result<f64, ProtocolError> {
        let v = self.get(field)?;
        v.as_f64().ok_or_else(|| wrong_type(field, "a number", v))
    }

    fn role(&self, field: &'static str) -> Result<Role, ProtocolError> {
        match self.string(field)?.as_str() {
            "publisher" => Ok(Role::Publisher),
            "viewer" => Ok(Role::Viewer),
            other => Err(ProtocolError::InvalidField {
                field,
                reason: format!("unknown role {other:?}"),
            }),
        }
    }

    fn room(&self) -> Result<String, ProtocolError> {
        let room = self.string("room")?;
        check_room(&room)?;
        Ok(room)
    }

    fn caption(&self) -> Result<CaptionEvent, ProtocolError> {
        let c = CaptionEvent {
            word: self.string("word")?,
            confidence: self.f64("confidence")?,
            seq: self.u64("seq")?,
            ts_ms: self.u64("ts_ms")?,
        };
        c.validate()?;
        Ok(c)
    }
}

fn wrong_type(field: &'static str, expected: &str, got: &Value) -> ProtocolError {
    let kind = match got {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    };
    ProtocolError::InvalidField {
        field,
        reason: format!("expected {expected}, got {kind}"),
    }
}

/// Parses and validates one payload. Unknown extra fields are ignored.
pub fn decode(payload: &str) -> Result<Message, ProtocolError> {
    let value: Value =
        serde_json::from_str(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ProtocolError::Malformed(
            "payload is not a JSON object".into(),
        ));
    };
    let f = Fields(&obj);
    let tag = f.string("type")?;
    Ok(match tag.as_str() {
        "join" => Message::Join {
            room: f.room()?,
            role: f.role("role")?,
            name: f.string("name")?,
        },
        "caption" => Message::Caption(f.caption()?),
        "ping" => Message::Ping,
        "pong" => Message::Pong,
        "welcome" => {
            let room = f.room()?;
            let peer_id = f.u64("peer_id")?;
            let members = match f.get("members")? {
                Value::Array(items) => items
                    .iter()
                    .map(|item| match item {
                        Value::Object(m) => {
                            let m = Fields(m);
                            Ok(Member {
                                peer_id: m.u64("peer_id")?,
                                name: m.string("name")?,
                                role: m.role("role")?,
                            })
                        }
                        other => Err(wrong_type("members", "an array of objects", other)),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                other => return Err(wrong_type("members", "an array", other)),
            };
            Message::Welcome {
                room,
                peer_id,
                members,
            }
        }
        "caption_broadcast" => Message::CaptionBroadcast {
            room: f.room()?,
            speaker: f.u64("speaker")?,
            name: f.string("name")?,
            caption: f.caption()?,
            server_ts_ms: f.u64("server_ts_ms")?,
        },
        "peer_joined" => Message::PeerJoined {
            peer_id: f.u64("peer_id")?,
            name: f.string("name")?,
            role: f.role("role")?,
        },
        "peer_left" => Message::PeerLeft {
            peer_id: f.u64("peer_id")?,
        },
        "error" => Message::Error {
            code: f.string("code")?,
            message: f.string("message")?,
        },
        _ => return Err(ProtocolError::UnknownType(tag)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_is_minimal() {
        assert_eq!(encode(&Message::Ping).unwrap(), r#"{"type":"ping"}"#);
        assert_eq!(decode(r#"{"type":"pong"}"#).unwrap(), Message::Pong);
    }

    #[test]
    fn caption_fields_survive_reparsing() {
        let msg = Message::Caption(CaptionEvent {
            word: "hello".into(),
            confidence: 0.93,
            seq: 17,
            ts_ms: 1_700_000_000_000,
        });
        let text = encode(&msg).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "caption");
        assert_eq!(v["word"], "hello");
        assert_eq!(v["confidence"].as_f64(), Some(0.93));
        assert_eq!(v["seq"].as_u64(), Some(17));
        assert_eq!(v["ts_ms"].as_u64(), Some(1_700_000_000_000));
        assert_eq!(v.as_object().unwrap().len(), 5);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let cases: &[(&str, ProtocolError)] = &[
            ("{not json", ProtocolError::Malformed(String::new())),
            ("[1,2]", ProtocolError::Malformed(String::new())),
            (r#"{"room":"a"}"#, ProtocolError::MissingField("type")),
            (
                r#"{"type":"unknown_kind"}"#,
                ProtocolError::UnknownType("unknown_kind".into()),
            ),
            (
                r#"{"type":"caption","word":"hi","confidence":1.5,"seq":1,"ts_ms":0}"#,
                ProtocolError::OutOfRange("confidence"),
            ),
            (
                r#"{"type":"caption","word":"hi","confidence":0.5,"ts_ms":0}"#,
                ProtocolError::MissingField("seq"),
            ),
            (
                r#"{"type":"caption","word":"","confidence":0.5,"seq":1,"ts_ms":0}"#,
                ProtocolError::EmptyWord,
            ),
            (
                r#"{"type":"join","room":"bad room","role":"viewer","name":"x"}"#,
                ProtocolError::InvalidRoom("bad room".into()),
            ),
            (
                r#"{"type":"caption","word":"hi","confidence":0.5,"seq":-1,"ts_ms":0}"#,
                ProtocolError::OutOfRange("seq"),
            ),
        ];
        for (payload, want) in cases {
            let got = decode(payload).unwrap_err();
            assert_eq!(
                std::mem::discriminant(&got),
                std::mem::discriminant(want),
                "{payload}: {got:?}"
            );
            if !matches!(want, ProtocolError::Malformed(_)) {
                assert_eq!(&got, want);
            }
        }
        assert!(matches!(
            decode(r#"{"type":"join","room":"r","role":"admin","name":"x"}"#),
            Err(ProtocolError::InvalidField { field: "role", .. })
        ));
        assert!(matches!(
            decode(r#"{"type":"peer_left","peer_id":"7"}"#),
            Err(ProtocolError::InvalidField {
                field: "peer_id",
                ..
            })
        ));
    }

    #[test]
    fn room_ids() {
        assert!(valid_room("r1"));
        assert!(valid_room("A-b_9"));
        assert!(valid_room(&"x".repeat(64)));
        assert!(!valid_room(""));
        assert!(!valid_room(&"x".repeat(65)));
        assert!(!valid_room("héllo"));
        assert!(!valid_room("a/b"));
    }

    #[test]
    fn encode_rejects_invalid_messages() {
        let bad = Message::Caption(CaptionEvent {
            word: "x".into(),
            confidence: f64::NAN,
            seq: 1,
            ts_ms: 0,
        });
        assert_eq!(encode(&bad), Err(ProtocolError::OutOfRange("confidence")));
        let bad = Message::Join {
            room: String::new(),
            role: Role::Viewer,
            name: "v".into(),
        };
        assert!(matches!(encode(&bad), Err(ProtocolError::InvalidRoom(_))));
    }

    #[test]
    fn newlines_are_escaped() {
        let msg = Message::Error {
            code: "bad_message".into(),
            message: "line one\nline two\r\n".into(),
        };
        let text = encode(&msg).unwrap();
        assert!(!text.contains('\n') && !text.contains('\r'));
        assert_eq!(decode(&text).unwrap(), msg);
    }
}
