//! Binary checkpoints: `SAERCKPT`, a little-endian u32 format version, a u64
//! header length, a JSON header, then every parameter as little-endian f64.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::model::{Model, StageReport, TrainState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAERCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    stage: u8,
    vocab_fingerprint: String,
    n_users: usize,
    n_items: usize,
    vocab_size: usize,
    config: TrainConfig,
    reports: Vec<StageReport>,
    params: Vec<Entry>,
    payload_sha256: String,
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let m = &state.model;
    let mut payload = Vec::new();
    let mut params = Vec::with_capacity(m.store.len());
    for (_, p) in m.store.iter() {
        params.push(Entry { name: p.name.clone(), shape: p.value.shape().to_vec() });
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        stage: state.stage,
        vocab_fingerprint: state.vocab_fingerprint.clone(),
        n_users: m.n_users,
        n_items: m.n_items,
        vocab_size: m.vocab_size,
        config: state.config.clone(),
        reports: state.reports.clone(),
        params,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let head = serde_json::to_vec(&header)?;
    // write next to the target, then rename, so readers never see a partial file
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(head.len() as u64).to_le_bytes())?;
        f.write_all(&head)?;
        f.write_all(&payload)?;
        f.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

/// Loads a checkpoint. With `vocab_fingerprint`, a mismatch with the stored
/// fingerprint is an error.
pub fn load_checkpoint(path: &Path, vocab_fingerprint: Option<&str>) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    let mut at = 0;
    if take(&bytes, &mut at, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let head_len = u64::from_le_bytes(take(&bytes, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(&bytes, &mut at, head_len)?)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version { found: header.version, expected: FORMAT_VERSION });
    }
    let payload = &bytes[at..];
    let expected: usize = header.params.iter().map(|e| e.shape.iter().product::<usize>() * 8).sum();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Checkpoint("payload checksum mismatch".into()));
    }
    if let Some(fp) = vocab_fingerprint {
        if fp != header.vocab_fingerprint {
            return Err(Error::Fingerprint { stored: header.vocab_fingerprint, actual: fp.to_string() });
        }
    }
    header.config.validate()?;
    let mut model = Model::new(&header.config, header.n_users, header.n_items, header.vocab_size);
    if model.store.len() != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} arrays, model has {}",
            header.params.len(),
            model.store.len()
        )));
    }
    let mut off = 0;
    for e in &header.params {
        let id = model
            .store
            .id(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", e.name)))?;
        if model.store.get(id).value.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", e.name)));
        }
        for v in model.store.value_mut(id).iter_mut() {
            *v = f64::from_le_bytes(payload[off..off + 8].try_into().expect("8 bytes"));
            off += 8;
        }
    }
    let mut state = TrainState {
        model,
        config: header.config,
        stage: header.stage,
        vocab_fingerprint: header.vocab_fingerprint,
        reports: header.reports,
    };
    state.apply_freezes();
    Ok(state)
}

/// Exclusive lock on a training directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join("train.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Checkpoint(format!("{} is locked by another training run", dir.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
