//! Minimal WebSocket client speaking the caption protocol, used by the
//! capture client and by headless subscribers.

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::protocol::{decode, encode, Member, Message, ProtocolError, Role};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Transport(#[from] tokio_tungstenite::tungstenite::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("server rejected join: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("connection closed")]
    Closed,
    #[error("expected welcome, got {0}")]
    UnexpectedReply(&'static str),
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    peer_id: u64,
    room: String,
    members: Vec<Member>,
}

impl Client {
    /// Connects, joins `room` and waits for the welcome.
    pub async fn join(url: &str, room: &str, role: Role, name: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            let _ = s.set_nodelay(true);
        }
        let mut client = Self {
            ws,
            peer_id: 0,
            room: room.to_string(),
            members: Vec::new(),
        };
        client
            .send(&Message::Join {
                room: room.to_string(),
                role,
                name: name.to_string(),
            })
            .await?;
        match client.recv().await? {
            Some(Message::Welcome {
                peer_id, members, ..
            }) => {
                client.peer_id = peer_id;
                client.members = members;
                Ok(client)
            }
            Some(Message::Error { code, message }) => Err(ClientError::Rejected { code, message }),
            Some(other) => Err(ClientError::UnexpectedReply(other.type_tag())),
            None => Err(ClientError::Closed),
        }
    }

    pub fn peer_id(&self) -> u64 {
        self.peer_id
    }

    pub fn room(&self) -> &str {
        &self.room
    }

    /// Members present when this client joined.
    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub async fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.ws.send(WsMessage::Text(encode(msg)?.into())).await?;
        Ok(())
    }

    /// Next protocol message; `None` once the server closes the socket.
    /// Control frames are handled transparently.
    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        loop {
            match self.ws.next().await {
                None | Some(Ok(WsMessage::Close(_))) => return Ok(None),
                Some(Ok(WsMessage::Text(t))) => return Ok(Some(decode(t.as_str())?)),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            }
        }
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        // Drain until the server acknowledges the close.
        while let Some(Ok(_)) = self.ws.next().await {}
        Ok(())
    }
}
