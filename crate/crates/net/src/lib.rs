//! Networking for live sign captions: the JSON wire protocol, a room-based
//! WebSocket broadcast server, a small client and the capture client that
//! turns frame streams into published captions.

pub mod capture;
pub mod client;
pub mod hub;
pub mod protocol;
pub mod server;

pub use client::{Client, ClientError};
pub use hub::{ErrorCode, Hub, PeerId};
pub use protocol::{decode, encode, CaptionEvent, Member, Message, ProtocolError, Role};
pub use server::{Server, ServerConfig, ServerError};
