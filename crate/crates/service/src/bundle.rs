//! Session export bundle.
//!
//! ```text
//! "EXB1"  u16 version (LE)
//! u32 length + manifest (JSON)
//! u32 length + event log (line-delimited records, as on disk)
//! u32 length + population snapshot (AIS1)
//! 32-byte SHA-256 of every preceding byte
//! ```

use std::path::Path;

use preictal_core::ais::Population;
use preictal_core::decision::{render_log, DecisionEvent};
use preictal_core::pipeline::ConfigChange;
use preictal_core::EngineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::session::SourceSpec;

pub const MAGIC: &[u8; 4] = b"EXB1";
pub const VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    pub source: SourceSpec,
    pub config: EngineConfig,
    pub config_history: Vec<ConfigChange>,
    pub windows_processed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportBundle {
    pub manifest: Manifest,
    pub events: Vec<DecisionEvent>,
    pub population: Population,
}

fn bad(msg: impl Into<String>) -> ServiceError {
    ServiceError::BadRequest(msg.into())
}

fn put_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn take_section<'a>(buf: &'a [u8], at: &mut usize) -> Result<&'a [u8]> {
    let len_end = *at + 4;
    let len_bytes = buf.get(*at..len_end).ok_or_else(|| bad("export bundle truncated"))?;
    let len = u32::from_le_bytes(len_bytes.try_into().expect("four bytes")) as usize;
    let end = len_end.checked_add(len).filter(|&e| e <= buf.len()).ok_or_else(|| bad("export bundle truncated"))?;
    *at = end;
    Ok(&buf[len_end..end])
}

impl ExportBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_section(&mut out, &serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        put_section(&mut out, render_log(&self.events).as_bytes());
        put_section(&mut out, &self.population.to_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 2 + DIGEST_LEN || &buf[..4] != MAGIC {
            return Err(bad("not an EXB1 export bundle"));
        }
        let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("export bundle checksum mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != VERSION {
            return Err(bad(format!("export bundle version {version} is not supported")));
        }
        let mut at = 6;
        let manifest: Manifest = serde_json::from_slice(take_section(body, &mut at)?)
            .map_err(|e| bad(format!("bad export manifest: {e}")))?;
        let log = std::str::from_utf8(take_section(body, &mut at)?).map_err(|_| bad("event log is not UTF-8"))?;
        let events = log
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(DecisionEvent::from_log_line)
            .collect::<preictal_core::Result<Vec<_>>>()?;
        let population = Population::from_bytes(take_section(body, &mut at)?)?;
        if at != body.len() {
            return Err(bad("trailing bytes in export bundle"));
        }
        Ok(Self { manifest, events, population })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}
