//! Connection plumbing shared by the bridge, the clients and the CLI.

use std::io;
use std::net::SocketAddr;
use std::sync::OnceLock;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::mpsc;

use crate::wire::{read_message, write_message, Message, WireError};

/// Sending side of a connection; messages are written in order by a
/// dedicated writer task.
pub type Outbox = mpsc::UnboundedSender<Message>;

/// Spawns the writer task for `half` and returns its queue. The task ends
/// when every sender is dropped or the peer goes away.
pub fn spawn_writer(mut half: OwnedWriteHalf) -> Outbox {
    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if let Err(e) = write_message(&mut half, &msg).await {
                log::debug!("writer stopped: {e}");
                break;
            }
        }
    });
    tx
}

pub async fn connect(addr: SocketAddr) -> io::Result<TcpStream> {
    let stream = TcpStream::connect(addr).await?;
    stream.set_nodelay(true)?;
    Ok(stream)
}

/// Request/response session over one connection, used by the analyst side.
pub struct Session {
    reader: OwnedReadHalf,
    writer: OwnedWriteHalf,
}

impl Session {
    pub async fn open(addr: SocketAddr) -> io::Result<Self> {
        let (reader, writer) = connect(addr).await?.into_split();
        Ok(Self { reader, writer })
    }

    pub async fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        write_message(&mut self.writer, msg).await
    }

    /// Next message, or a protocol error if the peer hung up.
    pub async fn recv(&mut self) -> Result<Message, WireError> {
        read_message(&mut self.reader)
            .await?
            .ok_or(WireError::Truncated)
    }

    pub async fn recv_timeout(&mut self, limit: Duration) -> Result<Message, WireError> {
        match tokio::time::timeout(limit, self.recv()).await {
            Ok(r) => r,
            Err(_) => Err(WireError::Io(io::Error::new(
                io::ErrorKind::TimedOut,
                format!("no reply within {limit:?}"),
            ))),
        }
    }

    pub async fn request(&mut self, msg: &Message, limit: Duration) -> Result<Message, WireError> {
        self.send(msg).await?;
        self.recv_timeout(limit).await
    }
}

/// Identity a node reports in its handshake; the start time is how callers
/// tell a restarted process from a live one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessInfo {
    pub pid: u32,
    pub started_at_ms: u64,
}

impl ProcessInfo {
    /// Identity of this process. The start time is fixed on first call, so
    /// binaries call this at the top of `main`.
    pub fn current() -> &'static ProcessInfo {
        static INFO: OnceLock<ProcessInfo> = OnceLock::new();
        INFO.get_or_init(|| ProcessInfo {
            pid: std::process::id(),
            started_at_ms: now_ms(),
        })
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Exits the process once stdin reaches end of file. Supervisors use this
/// as a portable graceful-stop signal by closing the pipe.
pub fn exit_on_stdin_eof() {
    std::thread::spawn(|| {
        let mut sink = [0u8; 256];
        let mut stdin = io::stdin().lock();
        loop {
            match io::Read::read(&mut stdin, &mut sink) {
                Ok(0) | Err(_) => std::process::exit(0),
                Ok(_) => {}
            }
        }
    });
}
