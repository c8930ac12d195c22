//! `SLMDL` checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "SLMDL" | version u32 | layer count u32
//! per layer: in u32 | out u32 | activation u8 | adapt u8 | frozen u8
//!            | out·in f32 weights (row-major) | out f32 bias
//! ```

use std::path::Path;

use super::matrix::Matrix;
use super::mlp::{Activation, Layer, MlpModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SLMDL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for (i, l) in model.layers.iter().enumerate() {
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        out.push(l.activation.code());
        out.push(model.adapt_mask[i] as u8);
        out.push(model.frozen[i] as u8);
        for &w in l.weights.data.iter().chain(&l.bias) {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::TruncatedPayload { expected: expected_total.max(self.pos + n), found: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, 0)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * n, 0)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

pub fn decode_model(buf: &[u8]) -> Result<MlpModel> {
    if buf.len() < CHECKPOINT_MAGIC.len() || &buf[..5] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic("model checkpoint".into()));
    }
    let mut r = Reader { buf, pos: 5 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    let mut adapt = Vec::new();
    let mut frozen = Vec::new();
    for _ in 0..count {
        let inp = r.u32()? as usize;
        let out = r.u32()? as usize;
        let flags = r.take(3, 0)?;
        let act = Activation::from_code(flags[0]).ok_or_else(|| Error::MalformedRecord {
            line: 0,
            reason: format!("unknown activation code {}", flags[0]),
        })?;
        adapt.push(flags[1] != 0);
        frozen.push(flags[2] != 0);
        let w = r.f32s(out * inp)?;
        let b = r.f32s(out)?;
        layers.push(Layer::new(Matrix::from_vec(out, inp, w)?, b, act)?);
    }
    if r.pos != buf.len() {
        return Err(Error::TruncatedPayload { expected: r.pos, found: buf.len() });
    }
    let mut m = MlpModel::from_layers(layers)?.with_adapt_mask(adapt)?;
    m.frozen = frozen;
    Ok(m)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    decode_model(&std::fs::read(path)?)
}
