//! WebSocket front end for the [`Hub`]: accepts connections on `/ws`,
//! pumps frames between sockets and the hub, and enforces liveness.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tokio_tungstenite::tungstenite::http::StatusCode;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tracing::{debug, info, warn};

use crate::hub::{error, ErrorCode, Hub};

pub const WS_PATH: &str = "/ws";

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: String,
    pub max_room: usize,
    pub heartbeat: Duration,
    pub timeout: Duration,
    /// Outbound messages buffered per connection before it is dropped.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            max_room: 64,
            heartbeat: Duration::from_secs(15),
            timeout: Duration::from_secs(45),
            queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid server config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: &str| Err(ServerError::InvalidConfig(m.into()));
        if self.heartbeat.is_zero() {
            return bad("heartbeat interval must be positive");
        }
        if self.timeout <= self.heartbeat {
            return bad("timeout must exceed the heartbeat interval");
        }
        if self.max_room == 0 {
            return bad("rooms must admit at least one member");
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be positive");
        }
        Ok(())
    }
}

/// A running server. Dropping it without [`Server::shutdown`] leaves the
/// accept loop running until the runtime stops.
pub struct Server {
    addr: SocketAddr,
    hub: Arc<Hub>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl Server {
    pub async fn bind(config: ServerConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let listener =
            TcpListener::bind(&config.bind)
                .await
                .map_err(|source| ServerError::Bind {
                    addr: config.bind.clone(),
                    source,
                })?;
        let addr = listener.local_addr().map_err(|source| ServerError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
        let hub = Arc::new(Hub::new(config.max_room, config.queue_capacity));
        let (stop, stopped) = watch::channel(false);
        let task = tokio::spawn(accept_loop(
            listener,
            hub.clone(),
            Arc::new(config),
            stopped,
        ));
        info!(%addr, "listening");
        Ok(Self {
            addr,
            hub,
            stop,
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}{WS_PATH}", self.addr)
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Stops accepting, closes every connection and waits for the accept
    /// loop to finish.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

async fn accept_loop(
    listener: TcpListener,
    hub: Arc<Hub>,
    config: Arc<ServerConfig>,
    mut stopped: watch::Receiver<bool>,
) {
    let mut connections = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, remote)) => {
                    debug!(%remote, "tcp accept");
                    connections.spawn(serve_connection(
                        stream,
                        hub.clone(),
                        config.clone(),
                        stopped.clone(),
                    ));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            _ = stopped.changed() => break,
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
    while connections.join_next().await.is_some() {}
}

async fn serve_connection(
    stream: TcpStream,
    hub: Arc<Hub>,
    config: Arc<ServerConfig>,
    mut stopped: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    #[allow(clippy::result_large_err)]
    let check_path = |req: &Request, resp: Response| {
        if req.uri().path() == WS_PATH {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some(format!("use {WS_PATH}")));
            *err.status_mut() = StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let ws = match tokio_tungstenite::accept_hdr_async(stream, check_path).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(error = %e, "handshake failed");
            return;
        }
    };
    let (peer, mut outbound) = hub.connect();
    debug!(peer, "connected");
    let (mut sink, mut incoming) = ws.split();
    let mut heartbeat =
        tokio::time::interval_at(Instant::now() + config.heartbeat, config.heartbeat);
    let mut deadline = Instant::now() + config.timeout;
    loop {
        tokio::select! {
            frame = incoming.next() => {
                let Some(Ok(frame)) = frame else { break };
                deadline = Instant::now() + config.timeout;
                match frame {
                    WsMessage::Text(text) => hub.handle_text(peer, text.as_str()),
                    WsMessage::Binary(_) => hub.reply(
                        peer,
                        error(ErrorCode::BadMessage, "binary frames are not supported"),
                    ),
                    WsMessage::Close(_) => break,
                    _ => {}
                }
            }
            out = outbound.recv() => {
                // `None` means the hub dropped this connection.
                let Some(text) = out else { break };
                if sink.send(WsMessage::Text(text.into())).await.is_err() {
                    break;
                }
            }
            _ = heartbeat.tick() => {
                if sink.send(WsMessage::Ping(Vec::new().into())).await.is_err() {
                    break;
                }
            }
            _ = tokio::time::sleep_until(deadline) => {
                info!(peer, "closing silent connection");
                break;
            }
            _ = stopped.changed() => break,
        }
    }
    hub.handle_disconnect(peer);
    // Flush anything queued before the disconnect, then close politely.
    while let Ok(text) = outbound.try_recv() {
        if sink.send(WsMessage::Text(text.into())).await.is_err() {
            break;
        }
    }
    let _ = sink.send(WsMessage::Close(None)).await;
    let _ = sink.close().await;
    debug!(peer, "disconnected");
}
