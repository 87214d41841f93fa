//! Client-to-server transports with an audit log at the privacy boundary.
//!
//! Every transport whitelists the payload type by round-tripping the
//! encoded bytes through the message decoder before delivery and records
//! an audit entry for each byte stream that leaves a client.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::federation::message::NoisyDatasetMessage;

/// One message crossing the client boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub client_id: u32,
    /// message type tag as decoded from the byte stream
    pub kind: String,
    pub sample_count: usize,
    pub byte_len: usize,
    pub fingerprint_hex: String,
}

fn audit_entry(bytes: &[u8]) -> Result<AuditEntry> {
    // the whitelist: bytes must decode as exactly one NoisyDatasetMessage
    let msg = NoisyDatasetMessage::decode(bytes)
        .map_err(|e| Error::Protocol(format!("transport rejected non-whitelisted payload: {e}")))?;
    Ok(AuditEntry {
        client_id: msg.client_id,
        kind: "noisy_dataset".to_string(),
        sample_count: msg.sample_count(),
        byte_len: bytes.len(),
        fingerprint_hex: msg.schedule_fingerprint.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// A client-to-server channel.
pub trait Transport: Send + Sync {
    fn send(&self, msg: &NoisyDatasetMessage) -> Result<()>;
    /// Drain everything delivered so far.
    fn recv_all(&self) -> Result<Vec<NoisyDatasetMessage>>;
    fn audit(&self) -> Vec<AuditEntry>;
}

/// Default transport for single-process simulation.
#[derive(Clone, Default)]
pub struct InProcessTransport {
    inner: Arc<Mutex<InProcessInner>>,
}

#[derive(Default)]
struct InProcessInner {
    queue: VecDeque<Vec<u8>>,
    audit: Vec<AuditEntry>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InProcessTransport {
    fn send(&self, msg: &NoisyDatasetMessage) -> Result<()> {
        let bytes = msg.encode();
        let entry = audit_entry(&bytes)?;
        let mut inner = self.inner.lock().unwrap();
        inner.audit.push(entry);
        inner.queue.push_back(bytes);
        Ok(())
    }

    fn recv_all(&self) -> Result<Vec<NoisyDatasetMessage>> {
        let mut inner = self.inner.lock().unwrap();
        inner.queue.drain(..).map(|b| NoisyDatasetMessage::decode(&b)).collect()
    }

    fn audit(&self) -> Vec<AuditEntry> {
        self.inner.lock().unwrap().audit.clone()
    }
}

/// One message per file; suitable for multi-process exchange.
pub struct FileTransport {
    dir: PathBuf,
    audit: Mutex<Vec<AuditEntry>>,
}

impl FileTransport {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, audit: Mutex::new(Vec::new()) })
    }
}

impl Transport for FileTransport {
    fn send(&self, msg: &NoisyDatasetMessage) -> Result<()> {
        let bytes = msg.encode();
        let entry = audit_entry(&bytes)?;
        let path = self.dir.join(format!("msg_{:08}.pfdm", msg.client_id));
        if path.exists() {
            return Err(Error::Protocol(format!(
                "client {} already sent a message",
                msg.client_id
            )));
        }
        std::fs::write(&path, &bytes)?;
        self.audit.lock().unwrap().push(entry);
        Ok(())
    }

    fn recv_all(&self) -> Result<Vec<NoisyDatasetMessage>> {
        let mut names: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pfdm"))
            .collect();
        names.sort();
        let mut out = Vec::with_capacity(names.len());
        for p in names {
            let bytes = std::fs::read(&p)?;
            out.push(NoisyDatasetMessage::decode(&bytes)?);
            std::fs::remove_file(&p)?;
        }
        Ok(out)
    }

    fn audit(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().clone()
    }
}

/// Stream-socket transport speaking the framed wire format: one
/// connection per message, each frame length-prefixed with u64.
///
/// The serving handle owns the accept loop and is the only one that can
/// drain; sender handles connect to its address.
pub struct TcpTransport {
    addr: std::net::SocketAddr,
    inner: Option<Arc<Mutex<InProcessInner>>>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl TcpTransport {
    /// Bind a listener and collect incoming frames in the background.
    pub fn serve(addr: &str) -> Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        let bound = listener.local_addr()?;
        let inner: Arc<Mutex<InProcessInner>> = Arc::default();
        let sink = Arc::clone(&inner);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut sink_bytes = Vec::new();
                loop {
                    let mut len_buf = [0u8; 8];
                    use std::io::Read;
                    match stream.read_exact(&mut len_buf) {
                        Ok(()) => {}
                        Err(_) => break,
                    }
                    let len = u64::from_le_bytes(len_buf) as usize;
                    let mut frame = vec![0u8; len];
                    if stream.read_exact(&mut frame).is_err() {
                        break;
                    }
                    sink_bytes.push(frame);
                }
                let mut inner = sink.lock().unwrap();
                for bytes in sink_bytes {
                    if let Ok(entry) = audit_entry(&bytes) {
                        inner.audit.push(entry);
                        inner.queue.push_back(bytes);
                    }
                }
            }
        });
        Ok(Self { addr: bound, inner: Some(inner), audit: Mutex::new(Vec::new()) })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    /// A sending handle for the given server address.
    pub fn connect(addr: std::net::SocketAddr) -> Self {
        Self { addr, inner: None, audit: Mutex::new(Vec::new()) }
    }
}

impl Transport for TcpTransport {
    fn send(&self, msg: &NoisyDatasetMessage) -> Result<()> {
        let bytes = msg.encode();
        let entry = audit_entry(&bytes)?;
        let mut stream = std::net::TcpStream::connect(self.addr)?;
        use std::io::Write;
        stream.write_all(&(bytes.len() as u64).to_le_bytes())?;
        stream.write_all(&bytes)?;
        stream.flush()?;
        self.audit.lock().unwrap().push(entry);
        Ok(())
    }

    fn recv_all(&self) -> Result<Vec<NoisyDatasetMessage>> {
        let inner = self
            .inner
            .as_ref()
            .ok_or_else(|| Error::Protocol("not a serving transport handle".into()))?;
        let mut inner = inner.lock().unwrap();
        inner.queue.drain(..).map(|b| NoisyDatasetMessage::decode(&b)).collect()
    }

    fn audit(&self) -> Vec<AuditEntry> {
        match &self.inner {
            Some(inner) => inner.lock().unwrap().audit.clone(),
            None => self.audit.lock().unwrap().clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn msg(id: u32) -> NoisyDatasetMessage {
        NoisyDatasetMessage {
            client_id: id,
            t0: 10,
            samples: array![[0.5f32, 1.5]],
            labels: Some(vec![4]),
            schedule_fingerprint: [9; 32],
        }
    }

    #[test]
    fn in_process_delivers_and_audits() {
        let t = InProcessTransport::new();
        t.send(&msg(1)).unwrap();
        t.send(&msg(2)).unwrap();
        let got = t.recv_all().unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], msg(1));
        let audit = t.audit();
        assert_eq!(audit.len(), 2);
        assert!(audit.iter().all(|e| e.kind == "noisy_dataset"));
        assert_eq!(audit[1].client_id, 2);
        // queue drained
        assert!(t.recv_all().unwrap().is_empty());
        // audit persists after drain
        assert_eq!(t.audit().len(), 2);
    }

    #[test]
    fn tcp_transport_delivers_framed_messages() {
        let server = TcpTransport::serve("127.0.0.1:0").unwrap();
        let addr = server.local_addr();
        let sender_a = TcpTransport::connect(addr);
        let sender_b = TcpTransport::connect(addr);
        sender_a.send(&msg(1)).unwrap();
        sender_b.send(&msg(2)).unwrap();
        // sending handles cannot drain
        assert!(sender_a.recv_all().is_err());
        // wait for the accept loop to flush both frames
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
        let mut got = Vec::new();
        while got.len() < 2 && std::time::Instant::now() < deadline {
            got.extend(server.recv_all().unwrap());
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
        assert_eq!(got.len(), 2);
        let mut ids: Vec<u32> = got.iter().map(|m| m.client_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![1, 2]);
        assert_eq!(server.audit().len(), 2);
    }

    #[test]
    fn file_transport_round_trips_and_rejects_double_send() {
        let dir = tempfile::tempdir().unwrap();
        let t = FileTransport::new(dir.path().join("queue")).unwrap();
        t.send(&msg(3)).unwrap();
        assert!(t.send(&msg(3)).is_err());
        t.send(&msg(1)).unwrap();
        let got = t.recv_all().unwrap();
        // sorted by client id through the file names
        assert_eq!(got[0].client_id, 1);
        assert_eq!(got[1].client_id, 3);
        assert_eq!(t.audit().len(), 2);
    }
}
