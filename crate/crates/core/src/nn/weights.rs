//! Weights file: `A2J1` magic, `u32` version, `u32` entry count, then per
//! entry a `u32` name length, the UTF-8 name, `u32` rank, `u32` extents and
//! the raw little-endian `f32` values. All integers are little-endian.
//! Each parameterized layer contributes two entries, `<name>.weight` and
//! `<name>.bias`.

use std::fs;
use std::path::Path;

use super::model::{ModelSpec, ModelState, Params};
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"A2J1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn encode_weights(spec: &ModelSpec, state: &ModelState<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((state.params.len() * 2) as u32).to_le_bytes());
    for (slot, p) in state.params.iter().enumerate() {
        let base = spec.param_name(slot);
        for (suffix, t) in [("weight", &p.weight), ("bias", &p.bias)] {
            let name = format!("{base}.{suffix}");
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Truncated { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<Vec<NamedTensor>, NnError> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(NnError::BadMagic);
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| NnError::BadName)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or(NnError::Truncated { offset: r.pos })?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&shape, data)?;
        entries.push(NamedTensor { name, tensor });
    }
    Ok(entries)
}

/// Rebuilds a model state from decoded entries, checking names and
/// shapes against `spec`.
pub fn state_from_entries(spec: &ModelSpec, entries: Vec<NamedTensor>) -> Result<ModelState<f32>, NnError> {
    let shapes = spec.param_shapes()?;
    if entries.len() != shapes.len() * 2 {
        return Err(NnError::ParamCount {
            expected: shapes.len() * 2,
            found: entries.len(),
        });
    }
    let mut it = entries.into_iter();
    let mut params = Vec::new();
    for (slot, (ws, bs)) in shapes.iter().enumerate() {
        let base = spec.param_name(slot);
        let mut take = |suffix: &str, expected: &Vec<usize>| -> Result<Tensor<f32>, NnError> {
            let e = it.next().unwrap();
            let name = format!("{base}.{suffix}");
            if e.name != name || e.tensor.shape() != expected.as_slice() {
                return Err(NnError::ParamShape {
                    layer: name,
                    expected: expected.clone(),
                    found: e.tensor.shape().to_vec(),
                });
            }
            Ok(e.tensor)
        };
        let weight = take("weight", ws)?;
        let bias = take("bias", bs)?;
        params.push(Params { weight, bias });
    }
    ModelState::from_params(spec, params)
}

pub fn save_weights(spec: &ModelSpec, state: &ModelState<f32>, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode_weights(spec, state)).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_weights(spec: &ModelSpec, path: &Path) -> Result<ModelState<f32>, NnError> {
    let buf = fs::read(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    state_from_entries(spec, decode_weights(&buf)?)
}
