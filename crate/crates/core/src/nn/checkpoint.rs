//! Binary checkpoint layout:
//!
//! ```text
//! SETMIX-CKPT v1\n
//! u32 record count
//! per record: u32 name length, name (UTF-8), u32 rank (= 2), u64 rows, u64 cols,
//!             rows·cols f64
//! JSON trailer (optimizer state, config, config hash) to end of file
//! ```
//!
//! All integers and floats are little-endian.

use super::{Matrix, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SETMIX-CKPT v1\n";

pub fn encode_checkpoint(params: &ParamSet, trailer: &serde_json::Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for id in params.ids() {
        let name = params.name(id).as_bytes();
        let value = params.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    serde_json::to_writer(&mut out, trailer)?;
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format { what: "checkpoint", detail: format!("truncated at byte {}", self.pos) }
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Returns the parameter records (all marked trainable) and the JSON trailer.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
    let bad = |detail: String| Error::Format { what: "checkpoint", detail };
    if !bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
        return Err(bad("missing SETMIX-CKPT v1 header".into()));
    }
    let mut rd = Reader { buf: bytes, pos: CHECKPOINT_MAGIC.len() };
    let count = rd.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = rd.u32()? as usize;
        let name = std::str::from_utf8(rd.take(len)?).map_err(|e| bad(e.to_string()))?.to_owned();
        let rank = rd.u32()?;
        if rank != 2 {
            return Err(bad(format!("{name}: rank {rank}")));
        }
        let rows = rd.u64()? as usize;
        let cols = rd.u64()? as usize;
        let raw = rd.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
            bad(format!("{name}: shape overflow"))
        })?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.add(name, Matrix::new(rows, cols, data)?);
    }
    let trailer = serde_json::from_slice(&bytes[rd.pos..])?;
    Ok((params, trailer))
}
