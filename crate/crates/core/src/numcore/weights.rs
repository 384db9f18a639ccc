//! Binary weight container.
//!
//! Layout (little-endian): `b"OIWF"`, `u32` format version, `u32` config
//! length, config JSON bytes, 32-byte SHA-256 of the config bytes, `u32`
//! tensor count, then per tensor `u32` name length, name bytes, `u32` rows,
//! `u32` cols and `rows·cols` `f64` values.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OIWF";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub version: u32,
    pub config_json: String,
    pub config_hash: [u8; 32],
    pub params: ParamStore,
}

pub fn config_hash(config_json: &str) -> [u8; 32] {
    Sha256::digest(config_json.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_weights(config_json: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&config_hash(config_json));
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Incompatible("truncated weight file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Incompatible("non-UTF-8 string".into()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Incompatible("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let config_json = r.string(n)?;
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if config_hash != self::config_hash(&config_json) {
        return Err(Error::Incompatible("config hash does not match embedded config".into()));
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows.checked_mul(cols).and_then(|x| x.checked_mul(8)).ok_or_else(|| {
            Error::Incompatible("tensor too large".into())
        })?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params
            .add(name, Tensor2::from_vec(rows, cols, data)?)
            .map_err(|e| Error::Incompatible(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Incompatible("trailing bytes after tensors".into()));
    }
    Ok(WeightFile {
        version,
        config_json,
        config_hash,
        params,
    })
}

pub fn save_weights(path: impl AsRef<Path>, config_json: &str, params: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(config_json, params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}
