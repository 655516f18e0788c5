//! `DDCKPT01` checkpoints.
//!
//! Little-endian layout: 8-byte magic, `u32` version, `u32` byte length of a
//! UTF-8 `key = value` config block, the block, `u32` parameter count, then per
//! parameter `u32` name length, name, `u32` rank, `u64` dims, `f64` data.
//! A trailing `u8` flags optimizer state: `u64` step followed by the first and
//! second moments of every parameter in table order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DDCKPT01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: ParamSet<f64>,
    pub adam: Option<AdamState<f64>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("value does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_data(out: &mut Vec<u8>, t: &Tensor<f64>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n', '#']) || k.trim() != k || v.contains(['\n', '#']) || v.trim() != v {
                return Err(Error::invalid(format!("config entry `{k}` cannot be stored")));
            }
            text.push_str(&format!("{k} = {v}\n"));
        }
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.len())?;
        for (name, t) in self.params.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_data(&mut out, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                if state.m.len() != self.params.len() || state.v.len() != self.params.len() {
                    return Err(Error::invalid("optimizer state does not match parameters"));
                }
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                for t in state.m.iter().chain(&state.v) {
                    put_data(&mut out, t);
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.fail("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(&format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.fail("config block is not UTF-8"))?;
        let config = parse_key_values(text).map_err(|e| r.fail(&e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| r.fail("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let t = r.tensor(shape)?;
            params.push(name, t).map_err(|e| r.fail(&e.to_string()))?;
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
                let m = shapes.iter().map(|s| r.tensor(s.clone())).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|s| r.tensor(s.clone())).collect::<Result<Vec<_>>>()?;
                Some(AdamState { step, m, v })
            }
            _ => return Err(r.fail("bad optimizer flag")),
        };
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self { config, params, adam })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path)?, path)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks `{key}`")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: &str) -> Error {
        Error::format(self.path, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail("truncated file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor<f64>> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| self.fail("tensor size overflows"))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| self.fail(&e.to_string()))
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    Ok(map)
}
