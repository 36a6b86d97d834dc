//! TCP transport: framed reads and writes, the server accept loop and
//! one-shot admin calls.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::watch;
use tokio::task::JoinSet;

use crate::server::{Health, ShardServer};
use crate::wire::{self, AdminReply, Message, WireError, MAX_FRAME};

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// Reads one frame body; `Ok(None)` on a clean end of stream.
pub async fn read_frame(stream: &mut TcpStream) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(invalid(WireError::FrameTooLarge(len)));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body).await?;
    Ok(Some(body))
}

pub async fn write_frame(stream: &mut TcpStream, body: &[u8]) -> io::Result<()> {
    stream.write_all(&wire::frame(body)).await
}

/// Sends one frame and waits for the reply frame.
pub async fn round_trip(stream: &mut TcpStream, body: &[u8]) -> io::Result<Vec<u8>> {
    write_frame(stream, body).await?;
    read_frame(stream)
        .await?
        .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed the connection"))
}

/// A running server; dropping it leaves the server running until
/// [`ServerHandle::shutdown`] is called or the runtime stops.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    /// Stops accepting, drops every open connection and waits for the
    /// accept loop to exit.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

/// Binds `addr` and serves `server` on it.
pub async fn spawn_server(server: Arc<ShardServer>, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, mut stopped) = watch::channel(false);
    let task = tokio::spawn(async move {
        let mut conns = JoinSet::new();
        loop {
            tokio::select! {
                _ = stopped.changed() => break,
                accepted = listener.accept() => match accepted {
                    Ok((stream, _)) => {
                        let _ = stream.set_nodelay(true);
                        conns.spawn(handle_connection(Arc::clone(&server), stream));
                    }
                    Err(e) => tracing::warn!(error = %e, "accept failed"),
                },
                Some(_) = conns.join_next(), if !conns.is_empty() => {}
            }
        }
        conns.shutdown().await;
    });
    Ok(ServerHandle { addr, stop, task })
}

async fn handle_connection(server: Arc<ShardServer>, mut stream: TcpStream) {
    let mut out = Vec::new();
    loop {
        let body = match read_frame(&mut stream).await {
            Ok(Some(b)) => b,
            Ok(None) => return,
            Err(e) => {
                tracing::debug!(error = %e, "connection read failed");
                return;
            }
        };
        out.clear();
        if let Err(e) = dispatch(&server, &body, &mut out).await {
            tracing::warn!(error = %e, "dropping connection");
            return;
        }
        if write_frame(&mut stream, &out).await.is_err() {
            return;
        }
    }
}

async fn dispatch(server: &Arc<ShardServer>, body: &[u8], out: &mut Vec<u8>) -> io::Result<()> {
    let msg = match wire::decode_message(body) {
        Ok(m) => m,
        Err(_) => {
            wire::encode_response(
                &wire::BatchResponse {
                    status: wire::Status::Malformed,
                    served_version: 0,
                    shard_count: 0,
                    available_versions: Vec::new(),
                    results: Vec::new(),
                },
                out,
            );
            return Ok(());
        }
    };
    match msg {
        Message::Request(req) => {
            server.serve_batch_into(&req, out).map_err(invalid)?;
        }
        Message::HealthRequest => wire::encode_health_response(&server.report_health().to_text(), out),
        Message::ActivateRequest(path) => {
            let s = Arc::clone(server);
            let r = tokio::task::spawn_blocking(move || s.load_and_activate(path.as_ref()))
                .await
                .map_err(invalid)?;
            let reply = match r {
                Ok(v) => AdminReply {
                    ok: true,
                    version: v,
                    message: "activated".into(),
                },
                Err(e) => AdminReply {
                    ok: false,
                    version: 0,
                    message: e.to_string(),
                },
            };
            wire::encode_admin_reply(wire::MSG_ACTIVATE_RESPONSE, &reply, out);
        }
        Message::RetireRequest(v) => {
            let reply = match server.retire((v != 0).then_some(v)) {
                Ok(r) => AdminReply {
                    ok: true,
                    version: r.unwrap_or(0),
                    message: if r.is_some() { "retired" } else { "nothing to retire" }.into(),
                },
                Err(e) => AdminReply {
                    ok: false,
                    version: 0,
                    message: e.to_string(),
                },
            };
            wire::encode_admin_reply(wire::MSG_RETIRE_RESPONSE, &reply, out);
        }
        Message::Response(_)
        | Message::HealthResponse(_)
        | Message::ActivateResponse(_)
        | Message::RetireResponse(_) => return Err(invalid("client sent a response message")),
    }
    Ok(())
}

async fn call(addr: &str, body: &[u8], timeout: Duration) -> io::Result<Message> {
    let fut = async {
        let mut s = TcpStream::connect(addr).await?;
        s.set_nodelay(true)?;
        let reply = round_trip(&mut s, body).await?;
        wire::decode_message(&reply).map_err(invalid)
    };
    tokio::time::timeout(timeout, fut)
        .await
        .map_err(|_| io::Error::new(io::ErrorKind::TimedOut, format!("{addr}: timed out")))?
}

pub async fn fetch_health(addr: &str, timeout: Duration) -> io::Result<Health> {
    let mut b = Vec::new();
    wire::encode_health_request(&mut b);
    match call(addr, &b, timeout).await? {
        Message::HealthResponse(t) => Health::parse(&t).map_err(invalid),
        m => Err(invalid(format!("unexpected reply {m:?}"))),
    }
}

/// Asks the server at `addr` to load and activate the shard file at `path`
/// (a path on the server's filesystem).
pub async fn activate_remote(addr: &str, path: &str, timeout: Duration) -> io::Result<AdminReply> {
    let mut b = Vec::new();
    wire::encode_activate_request(path, &mut b);
    match call(addr, &b, timeout).await? {
        Message::ActivateResponse(r) => Ok(r),
        m => Err(invalid(format!("unexpected reply {m:?}"))),
    }
}

/// Retires `version` (0 = whatever is previous) on the server at `addr`.
pub async fn retire_remote(addr: &str, version: u64, timeout: Duration) -> io::Result<AdminReply> {
    let mut b = Vec::new();
    wire::encode_retire_request(version, &mut b);
    match call(addr, &b, timeout).await? {
        Message::RetireResponse(r) => Ok(r),
        m => Err(invalid(format!("unexpected reply {m:?}"))),
    }
}
