//! Binary model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "SHNN"                      magic
//! u32                         format version (1)
//! u32 + bytes                 network spec text (UTF-8)
//! per layer, in order:
//!   u32                       number of tensors (0, or 2 for weight + bias)
//!   per tensor: u32 rank, rank x u32 dims, prod(dims) x f64
//! ```
//!
//! The spec text starts with a `# seed <n>` comment recording the
//! initialisation seed; the grammar ignores it.

use std::path::Path;

use crate::tensor::Tensor;

use super::model::{param_shapes, LayerParams, Model};
use super::spec::parse_spec;
use super::ModelError;

pub const MAGIC: &[u8; 4] = b"SHNN";
pub const FORMAT_VERSION: u32 = 1;
const SEED_PREFIX: &str = "# seed ";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let text = format!("{SEED_PREFIX}{}\n{}", model.seed(), model.spec().to_text());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for p in model.params() {
        match p {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(p) => {
                out.extend_from_slice(&2u32.to_le_bytes());
                for t in [&p.weight, &p.bias] {
                    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                    for &d in t.shape() {
                        out.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ModelError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn tensor(&mut self) -> Result<Tensor, ModelError> {
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(ModelError::Format(format!("tensor rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = self.u32()? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| ModelError::Format("tensor size overflows".into()))?;
            shape.push(d);
        }
        // Refuse to allocate more than the file can possibly hold.
        if count.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(ModelError::Truncated);
        }
        let raw = self.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| ModelError::Format(e.to_string()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| ModelError::Format("spec text is not UTF-8".into()))?;
    let seed = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(SEED_PREFIX))
        .and_then(|v| v.trim().parse::<u64>().ok())
        .unwrap_or(0);
    let spec = parse_spec(text)?;
    let mut params = Vec::with_capacity(spec.layers().len());
    for i in 0..spec.layers().len() {
        let count = r.u32()?;
        let expected = param_shapes(&spec, i);
        match (count, expected) {
            (0, None) => params.push(None),
            (2, Some((ws, bs))) => {
                let weight = r.tensor()?;
                let bias = r.tensor()?;
                if weight.shape() != ws || bias.shape() != bs {
                    return Err(ModelError::ParamMismatch {
                        layer: i,
                        message: format!("found {:?}/{:?}, expected {ws:?}/{bs:?}", weight.shape(), bias.shape()),
                    });
                }
                params.push(Some(LayerParams { weight, bias }));
            }
            (n, _) => {
                return Err(ModelError::ParamMismatch {
                    layer: i,
                    message: format!("unexpected tensor count {n}"),
                })
            }
        }
    }
    if r.remaining() != 0 {
        return Err(ModelError::Format(format!("{} trailing bytes", r.remaining())));
    }
    Model::from_parts(spec, params, seed)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    from_bytes(&std::fs::read(path)?)
}
