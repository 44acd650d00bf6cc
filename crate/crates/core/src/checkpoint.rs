//! Encoder checkpoint file.
//!
//! ```text
//! "SWCACKPT" | u32 version | u32 depth | u32 tensor_count
//! per tensor: u32 ndim | u64 dim × ndim
//! f64 payload, tensors concatenated in canonical order
//! ```
//!
//! All integers and floats are little-endian. Canonical order is volume tower
//! (weight, bias per layer), text tower, then `log_tau`.

use std::path::Path;

use crate::encoder::{EncoderParams, Layer, Tower};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SWCACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(params: &EncoderParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(params.depth() as u32);
    let shapes = params.tensor_shapes();
    w.u32(shapes.len() as u32);
    for s in &shapes {
        w.u32(s.len() as u32);
        for &d in s {
            w.u64(d as u64);
        }
    }
    for t in params.tensors() {
        w.f64s(t);
    }
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let depth = r.u32()? as usize;
    if !(1..=2).contains(&depth) {
        return Err(Error::Format(format!("unsupported depth {depth}")));
    }
    let count = r.u32()? as usize;
    let expected_count = 2 * 2 * depth + 1;
    if count != expected_count {
        return Err(Error::Format(format!(
            "expected {expected_count} tensors, found {count}"
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = r.u32()? as usize;
        if !(1..=2).contains(&ndim) {
            return Err(Error::Format(format!("tensor rank {ndim} not supported")));
        }
        let dims = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }

    let mut next = 0;
    let mut tower = |r: &mut ByteReader<'_>| -> Result<Tower> {
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let ws = &shapes[next];
            let bs = &shapes[next + 1];
            next += 2;
            if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[1] {
                return Err(Error::Format(format!("inconsistent layer shapes {ws:?} / {bs:?}")));
            }
            let weight = Matrix::from_vec(ws[0], ws[1], r.f64s(ws[0] * ws[1])?)?;
            let bias = r.f64s(bs[0])?;
            layers.push(Layer { weight, bias });
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Format("layer widths do not chain".into()));
            }
        }
        Ok(Tower { layers })
    };
    let volume = tower(&mut r)?;
    let text = tower(&mut r)?;
    if shapes[count - 1] != [1] {
        return Err(Error::Format("log_tau must be a single scalar".into()));
    }
    let log_tau = r.f64s(1)?[0];
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let params = EncoderParams { volume, text, log_tau };
    if params.volume.layers[depth - 1].output_dim() != params.text.layers[depth - 1].output_dim() {
        return Err(Error::Format("towers disagree on embedding width".into()));
    }
    if !params.is_finite() {
        return Err(Error::Format("checkpoint holds non-finite values".into()));
    }
    Ok(params)
}

pub fn save(params: &EncoderParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    decode(&read_file(path)?)
}
