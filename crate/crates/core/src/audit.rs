//! Append-only audit log of the bridge, one JSON object per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    /// Task sent to a client.
    Dispatch,
    /// Successful result envelope received.
    Envelope,
    /// Failed envelope received, or a client timed out or disconnected.
    ErrorEnvelope,
    Kept,
    Discarded,
    /// Iteration result sent to the user; `signature` is the winner.
    Delivered,
    /// No signature won the vote; everything was discarded.
    Inconsistent,
    /// Off-board step failed; nothing delivered for the iteration.
    Failed,
    Deploy,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub assignment_id: String,
    pub iteration: Option<u32>,
    pub event: AuditEvent,
    pub signature: Option<String>,
    pub client_id: Option<String>,
}

impl AuditRecord {
    pub fn new(assignment_id: &str, iteration: Option<u32>, event: AuditEvent) -> Self {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            ts,
            assignment_id: assignment_id.to_owned(),
            iteration,
            event,
            signature: None,
            client_id: None,
        }
    }

    pub fn signature(mut self, signature: impl Into<String>) -> Self {
        self.signature = Some(signature.into());
        self
    }

    pub fn client(mut self, client_id: impl Into<String>) -> Self {
        self.client_id = Some(client_id.into());
        self
    }
}

#[derive(Debug, Default)]
pub struct AuditLog {
    file: Option<Mutex<File>>,
}

impl AuditLog {
    pub fn disabled() -> Self {
        Self { file: None }
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(file)),
        })
    }

    /// Appends one line. Write failures are logged and otherwise ignored so
    /// a full disk cannot stall assignments.
    pub fn record(&self, rec: AuditRecord) {
        let Some(file) = &self.file else { return };
        let mut line = match serde_json::to_vec(&rec) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("audit record not serializable: {e}");
                return;
            }
        };
        line.push(b'\n');
        let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = f.write_all(&line) {
            log::warn!("audit write failed: {e}");
        }
    }
}

pub fn read_log(path: &Path) -> io::Result<Vec<AuditRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        out.push(rec);
    }
    Ok(out)
}

/// Checks every delivered iteration in `records`: kept envelopes all carry
/// the delivered signature, and every successful envelope with another
/// signature was discarded. Returns one message per violation.
pub fn signature_violations(records: &[AuditRecord]) -> Vec<String> {
    type Key<'a> = (&'a str, u32);
    let mut delivered: BTreeMap<Key, Option<&str>> = BTreeMap::new();
    let mut kept: BTreeMap<Key, Vec<(&str, Option<&str>)>> = BTreeMap::new();
    let mut discarded: BTreeMap<Key, BTreeSet<&str>> = BTreeMap::new();
    let mut envelopes: BTreeMap<Key, Vec<(&str, Option<&str>)>> = BTreeMap::new();

    for r in records {
        let Some(it) = r.iteration else { continue };
        let key = (r.assignment_id.as_str(), it);
        let client = r.client_id.as_deref().unwrap_or("");
        let sig = r.signature.as_deref();
        match r.event {
            AuditEvent::Delivered => {
                delivered.insert(key, sig);
            }
            AuditEvent::Kept => kept.entry(key).or_default().push((client, sig)),
            AuditEvent::Discarded => {
                discarded.entry(key).or_default().insert(client);
            }
            AuditEvent::Envelope => envelopes.entry(key).or_default().push((client, sig)),
            _ => {}
        }
    }

    let mut out = Vec::new();
    for (key, winner) in &delivered {
        let (aid, it) = key;
        for (client, sig) in kept.get(key).map(Vec::as_slice).unwrap_or(&[]) {
            if sig != winner {
                out.push(format!(
                    "{aid} iteration {it}: kept {client} with {sig:?}, delivered {winner:?}"
                ));
            }
        }
        let dropped = discarded.get(key);
        for (client, sig) in envelopes.get(key).map(Vec::as_slice).unwrap_or(&[]) {
            if sig != winner && !dropped.is_some_and(|d| d.contains(client)) {
                out.push(format!(
                    "{aid} iteration {it}: minority envelope from {client} ({sig:?}) not discarded"
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(it: u32, event: AuditEvent, client: &str, sig: &str) -> AuditRecord {
        AuditRecord::new("u1-1", Some(it), event).client(client).signature(sig)
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let log = AuditLog::open(&path).unwrap();
        log.record(rec(0, AuditEvent::Envelope, "c1", "a"));
        log.record(AuditRecord::new("u1-1", None, AuditEvent::Finished));
        let back = read_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].event, AuditEvent::Envelope);
        assert_eq!(back[1].iteration, None);
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(r#""event":"envelope""#));
    }

    #[test]
    fn purity_check() {
        let good = vec![
            rec(0, AuditEvent::Envelope, "c1", "a"),
            rec(0, AuditEvent::Envelope, "c2", "a"),
            rec(0, AuditEvent::Envelope, "c3", "b"),
            rec(0, AuditEvent::Kept, "c1", "a"),
            rec(0, AuditEvent::Kept, "c2", "a"),
            rec(0, AuditEvent::Discarded, "c3", "b"),
            AuditRecord::new("u1-1", Some(0), AuditEvent::Delivered).signature("a"),
        ];
        assert!(signature_violations(&good).is_empty());

        let mut tainted = good.clone();
        tainted[3] = rec(0, AuditEvent::Kept, "c3", "b");
        assert_eq!(signature_violations(&tainted).len(), 1);

        let mut missing = good;
        missing.remove(5);
        assert_eq!(signature_violations(&missing).len(), 1);
    }
}
