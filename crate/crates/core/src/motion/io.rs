//! `MOTSEQ01` binary motion files.
//!
//! Little-endian: 8-byte magic, `u32` version, `u32` joints, `u32` frames,
//! `f32` fps, then `frames × (joints·6 + 3)` `f64` values.

use std::path::Path;

use super::sequence::MotionSequence;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MOTSEQ01";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 4;

pub fn encode_motion(seq: &MotionSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.joints() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.fps() as f32).to_le_bytes());
    for v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a motion file image; `path` is only used in error messages.
pub fn decode_motion(bytes: &[u8], path: &Path) -> Result<MotionSequence> {
    let fail = |msg: &str| Error::format(path, msg);
    if bytes.len() < HEADER_LEN {
        return Err(fail("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad magic"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let joints = word(12) as usize;
    let frames = word(16) as usize;
    let fps = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    if fps.fract() != 0.0 || fps <= 0.0 {
        return Err(fail(&format!("invalid frame rate {fps}")));
    }
    let count = frames
        .checked_mul(joints * 6 + 3)
        .ok_or_else(|| fail("frame count overflows"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < count * 8 {
        return Err(fail("truncated frame data"));
    }
    if body.len() > count * 8 {
        return Err(fail("trailing bytes after frame data"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    MotionSequence::new(fps as u32, joints, data).map_err(|e| fail(&e.to_string()))
}

pub fn save_motion(seq: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_motion(seq))?;
    Ok(())
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_motion(&bytes, path)
}
