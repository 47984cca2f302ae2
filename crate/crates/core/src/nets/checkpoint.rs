//! Versioned binary checkpoints.
//!
//! ```text
//! "EGANCKPT"             8 bytes
//! version                u32 LE
//! config length          u32 LE, then that many bytes of JSON (NetConfig)
//! dtype                  u8 (1 = f32, 2 = f64)
//! tensor count           u32 LE (parameters followed by buffers)
//! per tensor:            u16 name length, UTF-8 name, 4 x u32 shape, data LE
//! ```
//!
//! Tensors are matched against the network built from the stored config by
//! name and shape, so a load reproduces the network bit-exactly.

use std::path::Path;

use eventgan_grad::{numel, Real, Tensor};

use super::{Net, NetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EGANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(net: &Net<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(net.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.push(T::DTYPE);
    let count = net.params().len() + net.buffers().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in net.params().iter().chain(net.buffers().iter()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated { offset: self.bytes.len() as u64, what });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Rebuilds a network from checkpoint bytes. The element type must match the
/// stored dtype.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Net<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "EGANCKPT" });
    }
    r.pos = 8;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u32("config length")? as usize;
    let config: NetConfig = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::MalformedHeader(format!("checkpoint config: {e}")))?;
    let dtype = r.take(1, "dtype")?[0];
    if dtype != T::DTYPE {
        return Err(Error::ConfigMismatch(format!("checkpoint dtype tag {dtype}, expected {}", T::DTYPE)));
    }
    let mut net = Net::<T>::new(config, 0)?;
    let count = r.u32("tensor count")? as usize;
    let (np, nb) = (net.params().len(), net.buffers().len());
    if count != np + nb {
        return Err(Error::ConfigMismatch(format!("{count} tensors stored, network has {}", np + nb)));
    }
    for i in 0..count {
        let name_len = u16::from_le_bytes(r.take(2, "tensor name")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::MalformedHeader("tensor name is not UTF-8".into()))?
            .to_string();
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("tensor shape")? as usize;
        }
        let set = if i < np { net.params_mut() } else { net.buffers_mut() };
        let k = if i < np { i } else { i - np };
        if set.names()[k] != name || set.get(k).shape() != shape {
            return Err(Error::ConfigMismatch(format!(
                "tensor {i}: stored {name} {shape:?}, network has {} {:?}",
                set.names()[k],
                set.get(k).shape()
            )));
        }
        let raw = r.take(numel(shape) * T::BYTES, "tensor data")?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        set.tensors_mut()[k] = Tensor::from_vec(shape, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::TrailingData { offset: r.pos as u64, count: (bytes.len() - r.pos) as u64 });
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(net: &Net<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net)?).map_err(|e| Error::file(path, e))
}

/// Loads a checkpoint; with `expected`, the stored config must equal it.
pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<&NetConfig>) -> Result<Net<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let net = decode_checkpoint::<T>(&bytes)?;
    if let Some(want) = expected {
        if net.config() != want {
            return Err(Error::ConfigMismatch(format!(
                "{} stores {}, expected {}",
                path.display(),
                serde_json::to_string(net.config())?,
                serde_json::to_string(want)?
            )));
        }
    }
    Ok(net)
}
