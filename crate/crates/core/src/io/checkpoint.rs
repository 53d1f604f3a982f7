use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ModelParams, PwocConfig};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PWOC";
/// Entry holding the architecture as config text, one byte per element.
const CONFIG_ENTRY: &str = "meta.config";

/// One named tensor of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

/// In-memory form of the checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(bad("truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("eight bytes"));
        let mut cur = Cursor { bytes: body, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        if checksum(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = cur.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<u32>>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or_else(|| bad("size overflow"))?;
            let raw = cur.take(numel.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
            entries.push(CheckpointEntry { name, dims, data });
        }
        if cur.pos != body.len() {
            return Err(bad("trailing bytes before checksum"));
        }
        Ok(Checkpoint { entries })
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Parameters as 4-d tensors plus the architecture they belong to.
    pub fn from_model<T: Scalar>(config: &PwocConfig, params: &ModelParams<T>) -> Self {
        let text = super::config_to_text(config);
        let mut entries = vec![CheckpointEntry {
            name: CONFIG_ENTRY.to_string(),
            dims: vec![text.len() as u32],
            data: text.bytes().map(f32::from).collect(),
        }];
        for (name, t) in params.iter() {
            let s = t.shape();
            entries.push(CheckpointEntry {
                name: name.to_string(),
                dims: [s.n, s.c, s.h, s.w].map(|d| d as u32).to_vec(),
                data: t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            });
        }
        Checkpoint { entries }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<(PwocConfig, ModelParams<T>)> {
        let meta = self.get(CONFIG_ENTRY).ok_or_else(|| Error::Missing { kind: "checkpoint entry", name: CONFIG_ENTRY.into() })?;
        let text: Vec<u8> = meta.data.iter().map(|&v| v as u8).collect();
        let text = String::from_utf8(text).map_err(|_| bad("config entry is not UTF-8"))?;
        let config = super::parse_config(&text)?;
        let mut params = ModelParams::new();
        for e in self.entries.iter().filter(|e| e.name != CONFIG_ENTRY) {
            let [n, c, h, w]: [u32; 4] =
                e.dims.as_slice().try_into().map_err(|_| bad(format!("{} has rank {}, expected 4", e.name, e.dims.len())))?;
            let data = e.data.iter().map(|&v| T::of(v as f64)).collect();
            let t = Tensor::from_vec(Shape::new(n as usize, c as usize, h as usize, w as usize), data)?;
            params.insert(e.name.clone(), t);
        }
        params.check_against(&config)?;
        Ok((config, params))
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, config: &PwocConfig, params: &ModelParams<T>) -> Result<()> {
    super::write_atomic(path, &Checkpoint::from_model(config, params).to_bytes())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(PwocConfig, ModelParams<T>)> {
    Checkpoint::from_bytes(&std::fs::read(path)?)?.to_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            entries: vec![
                CheckpointEntry { name: "a".into(), dims: vec![2, 1], data: vec![1.5, -0.0] },
                CheckpointEntry { name: "b.ü".into(), dims: vec![], data: vec![f32::MIN_POSITIVE] },
            ],
        }
    }

    #[test]
    fn layout_and_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"PWOC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let sum: u64 = body.iter().map(|&b| b as u64).sum();
        assert_eq!(u64::from_le_bytes(tail.try_into().unwrap()), sum);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.entries[0].data[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back, ck);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[14] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { .. })));
        let good = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 1]).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
    }

    #[test]
    fn model_round_trip() {
        let cfg = PwocConfig::uniform(4, 1);
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let (cfg2, p2) = Checkpoint::from_bytes(&Checkpoint::from_model(&cfg, &params).to_bytes()).unwrap().to_model::<f32>().unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, params);
    }
}
