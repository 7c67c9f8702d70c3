use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelConfig, Network, TaskMode};
use super::tensor::Tensor;
use super::{MtlError, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PSEW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    task_mode: TaskMode,
}

/// Trained parameters of a [`Network`] together with its configuration.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    net: Network<f32>,
}

impl ModelWeights {
    pub fn init(config: ModelConfig, mode: TaskMode, seed: u64) -> Result<Self> {
        Ok(Self { net: Network::new(config, mode, seed)? })
    }

    pub fn from_network(net: Network<f32>) -> Result<Self> {
        if !net.is_finite() {
            return Err(MtlError::NonFinite("weights".into()));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn mode(&self) -> TaskMode {
        self.net.mode
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        self.net.params()
    }

    /// Layout: magic, version, config JSON, named tensors (f32 LE), then a
    /// SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header { config: self.net.config.clone(), task_mode: self.net.mode })
            .expect("header serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let params = self.net.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| MtlError::WeightsFormat(m.to_string());
        if bytes.len() < 4 + 4 + 32 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(fmt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(MtlError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(MtlError::WeightsFormat(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let mut net = Network::<f32>::new(header.config, header.task_mode, 0)?;
        let count = r.u32()? as usize;
        let expected: Vec<(String, Vec<usize>)> =
            net.params().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
        if count != expected.len() {
            return Err(MtlError::WeightsFormat(format!("expected {} tensors, found {count}", expected.len())));
        }
        for (slot, (name, shape)) in net.params_mut().into_iter().zip(expected) {
            let nlen = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(nlen)?).map_err(|_| fmt("tensor name is not UTF-8"))?;
            if got != name {
                return Err(MtlError::WeightsFormat(format!("expected tensor {name}, found {got}")));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if dims != shape {
                return Err(MtlError::WeightsFormat(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            slot.data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        }
        if r.pos != body.len() {
            return Err(fmt("trailing bytes"));
        }
        Self::from_network(net)
    }

    /// Writes atomically via a temporary file in the target directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| MtlError::WeightsFormat("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let w = ModelWeights::init(ModelConfig::tiny(), TaskMode::Multi, 9).unwrap();
        let bytes = w.to_bytes();
        let back = ModelWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((n1, a), (n2, b)) in w.tensors().into_iter().zip(back.tensors()) {
            assert_eq!(n1, n2);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let w = ModelWeights::init(ModelConfig::tiny(), TaskMode::SnrOnly, 1).unwrap();
        let mut bytes = w.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(ModelWeights::from_bytes(&bytes), Err(MtlError::Checksum)));
        assert!(matches!(ModelWeights::from_bytes(b"nope"), Err(MtlError::WeightsFormat(_))));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.psew");
        let w = ModelWeights::init(ModelConfig::tiny(), TaskMode::AscOnly, 4).unwrap();
        w.save(&path).unwrap();
        let back = ModelWeights::load(&path).unwrap();
        assert_eq!(back.mode(), TaskMode::AscOnly);
        assert_eq!(back.to_bytes(), w.to_bytes());
    }
}
