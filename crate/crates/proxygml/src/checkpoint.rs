//! Model checkpoints: proxies, embedding head, and (optionally) optimizer
//! state in a little-endian binary format with CRC32-protected payloads.
//!
//! Layout: magic `PGCK`, version u32, class count u32, proxies per class
//! u32, head input dim u32, head output dim u32, head kind u8 (0 identity,
//! 1 linear), then the f64 model payload (proxies row-major, then the head
//! weight when linear) followed by its CRC32. An optional optimizer section
//! follows: tag `ADAM`, payload byte length u64, per parameter group (head
//! first when linear, then proxies) `base_lr` f64, step u64, rows u32, cols
//! u32, first then second moments row-major f64, and finally the section's
//! CRC32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{EmbeddingHead, ProxySet};
use crate::optim::AdamState;

/// Magic prefix of the checkpoint format.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
/// Current checkpoint version.
pub const CHECKPOINT_VERSION: u32 = 1;
/// Tag introducing the optimizer section.
pub const OPTIMIZER_TAG: &[u8; 4] = b"ADAM";

/// Optimizer state carried inside a checkpoint: one group per trained
/// parameter set. The head group exists only for a linear head.
#[derive(Debug, Clone)]
pub struct OptimizerSnapshot {
    pub head: Option<AdamState>,
    pub proxies: AdamState,
}

/// A complete trainable model state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub proxies: ProxySet,
    pub head: EmbeddingHead,
    pub optimizer: Option<OptimizerSnapshot>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for &v in m.data() {
        push_f64(buf, v);
    }
}

fn encode_adam_group(buf: &mut Vec<u8>, state: &AdamState) {
    push_f64(buf, state.base_lr);
    push_u64(buf, state.step);
    push_u32(buf, state.first_moment.rows() as u32);
    push_u32(buf, state.first_moment.cols() as u32);
    push_matrix(buf, &state.first_moment);
    push_matrix(buf, &state.second_moment);
}

/// Serializes a checkpoint to bytes.
pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    push_u32(&mut buf, checkpoint.proxies.class_count as u32);
    push_u32(&mut buf, checkpoint.proxies.per_class as u32);
    push_u32(&mut buf, checkpoint.head.input_dim() as u32);
    push_u32(&mut buf, checkpoint.head.output_dim() as u32);
    let (kind, weight) = match &checkpoint.head {
        EmbeddingHead::Identity { .. } => (0u8, None),
        EmbeddingHead::Linear { weight } => (1u8, Some(weight)),
    };
    buf.push(kind);

    let mut payload = Vec::new();
    push_matrix(&mut payload, &checkpoint.proxies.raw);
    if let Some(w) = weight {
        push_matrix(&mut payload, w);
    }
    let crc = crc32fast::hash(&payload);
    buf.extend_from_slice(&payload);
    push_u32(&mut buf, crc);

    if let Some(opt) = &checkpoint.optimizer {
        buf.extend_from_slice(OPTIMIZER_TAG);
        let mut section = Vec::new();
        if let Some(head) = &opt.head {
            encode_adam_group(&mut section, head);
        }
        encode_adam_group(&mut section, &opt.proxies);
        push_u64(&mut buf, section.len() as u64);
        let crc = crc32fast::hash(&section);
        buf.extend_from_slice(&section);
        push_u32(&mut buf, crc);
    }
    buf
}

/// Writes a checkpoint file.
pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(checkpoint)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.off.checked_add(len).ok_or_else(|| {
            Error::Integrity("checkpoint length overflow".into())
        })?;
        if end > self.bytes.len() {
            return Err(Error::Integrity(format!(
                "truncated checkpoint: wanted {end} bytes, file has {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.off..end];
        self.off = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Matrix::from_vec(rows, cols, data)
            .map_err(|e| Error::Integrity(format!("checkpoint matrix payload: {e}")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.off
    }
}

fn decode_adam_group(cur: &mut Cursor, rows: usize, cols: usize) -> Result<AdamState> {
    let base_lr = cur.f64()?;
    let step = cur.u64()?;
    let got_rows = cur.u32()? as usize;
    let got_cols = cur.u32()? as usize;
    if got_rows != rows || got_cols != cols {
        return Err(Error::Integrity(format!(
            "optimizer group is {got_rows}x{got_cols}, expected {rows}x{cols}"
        )));
    }
    let first = cur.matrix(rows, cols)?;
    let second = cur.matrix(rows, cols)?;
    Ok(AdamState {
        first_moment: first,
        second_moment: second,
        step,
        base_lr,
    })
}

/// Parses checkpoint bytes, verifying structure and CRCs.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, off: 0 };
    let magic = cur.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Integrity(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let class_count = cur.u32()? as usize;
    let per_class = cur.u32()? as usize;
    let d_in = cur.u32()? as usize;
    let d_out = cur.u32()? as usize;
    let kind = cur.u8()?;
    if class_count == 0 || per_class == 0 || d_in == 0 || d_out == 0 {
        return Err(Error::Integrity(format!(
            "degenerate checkpoint dims: {class_count} classes, {per_class} per class, {d_in}->{d_out}"
        )));
    }

    let proxy_bytes = class_count * per_class * d_out * 8;
    let weight_bytes = match kind {
        0 => {
            if d_in != d_out {
                return Err(Error::Integrity(format!(
                    "identity head with mismatched dims {d_in}->{d_out}"
                )));
            }
            0
        }
        1 => d_in * d_out * 8,
        other => {
            return Err(Error::Integrity(format!("unknown head kind {other}")));
        }
    };
    let payload_start = cur.off;
    let payload = cur.take(proxy_bytes + weight_bytes)?;
    let stored_crc = cur.u32()?;
    let actual_crc = crc32fast::hash(payload);
    if stored_crc != actual_crc {
        return Err(Error::Integrity(format!(
            "model payload CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }
    // Re-read the verified payload through the cursor interface.
    let mut body = Cursor {
        bytes,
        off: payload_start,
    };
    let proxies_raw = body.matrix(class_count * per_class, d_out)?;
    let proxies = ProxySet::from_raw(class_count, per_class, proxies_raw)
        .map_err(|e| Error::Integrity(format!("checkpoint proxies: {e}")))?;
    let head = if kind == 0 {
        EmbeddingHead::identity(d_in)
    } else {
        EmbeddingHead::linear(body.matrix(d_in, d_out)?)
    };

    let optimizer = if cur.remaining() > 0 {
        let tag = cur.take(4)?;
        if tag != OPTIMIZER_TAG {
            return Err(Error::Integrity(format!(
                "unknown trailing section {tag:?}"
            )));
        }
        let section_len = cur.u64()? as usize;
        let section_start = cur.off;
        let section = cur.take(section_len)?;
        let stored = cur.u32()?;
        let actual = crc32fast::hash(section);
        if stored != actual {
            return Err(Error::Integrity(format!(
                "optimizer payload CRC mismatch: stored {stored:#010x}, computed {actual:#010x}"
            )));
        }
        let mut opt_cur = Cursor {
            bytes,
            off: section_start,
        };
        let head_state = if kind == 1 {
            Some(decode_adam_group(&mut opt_cur, d_in, d_out)?)
        } else {
            None
        };
        let proxies_state = decode_adam_group(&mut opt_cur, class_count * per_class, d_out)?;
        if opt_cur.off != section_start + section_len {
            return Err(Error::Integrity(format!(
                "optimizer section length {section_len} does not match its contents"
            )));
        }
        Some(OptimizerSnapshot {
            head: head_state,
            proxies: proxies_state,
        })
    } else {
        None
    };
    if cur.remaining() > 0 {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the checkpoint",
            cur.remaining()
        )));
    }
    Ok(Checkpoint {
        proxies,
        head,
        optimizer,
    })
}

/// Reads a checkpoint file.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
