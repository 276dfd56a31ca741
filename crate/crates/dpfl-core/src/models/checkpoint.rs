//! Parameter checkpoint files.
//!
//! Layout: magic `DPCK`, format version, architecture descriptor
//! (kind, input_dim, hidden dims, classes), then `d`, the head offset, and
//! the raw little-endian f64 parameter array. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{ModelKind, ModelSpec, ParameterVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DPCK";
const VERSION: u32 = 1;

fn kind_tag(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Linear => 0,
        ModelKind::Mlp1 => 1,
        ModelKind::Mlp2 => 2,
    }
}

fn kind_from_tag(tag: u8) -> Result<ModelKind> {
    match tag {
        0 => Ok(ModelKind::Linear),
        1 => Ok(ModelKind::Mlp1),
        2 => Ok(ModelKind::Mlp2),
        other => Err(Error::Format {
            field: "model kind".into(),
            message: format!("unknown tag {other}"),
        }),
    }
}

/// Serialize a spec + parameter vector to `path`.
pub fn save_checkpoint(path: impl AsRef<Path>, spec: &ModelSpec, params: &ParameterVector) -> Result<()> {
    if params.dim() != spec.param_dim() {
        return Err(Error::Shape(format!(
            "parameter vector of dimension {} does not match the spec's {}",
            params.dim(),
            spec.param_dim()
        )));
    }
    let mut bytes = Vec::with_capacity(64 + 8 * params.dim());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(kind_tag(spec.kind));
    bytes.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.num_classes as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.hidden_dims.len() as u32).to_le_bytes());
    for &hidden in &spec.hidden_dims {
        bytes.extend_from_slice(&(hidden as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    bytes.extend_from_slice(&(params.layout().head_start as u64).to_le_bytes());
    for &value in params.values() {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(Error::Format {
                field: field.into(),
                message: "checkpoint truncated".into(),
            });
        }
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Load a checkpoint, returning the architecture and its parameters.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelSpec, ParameterVector)> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor { bytes: &bytes, offset: 0 };
    if cursor.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            field: "magic".into(),
            message: "not a parameter checkpoint".into(),
        });
    }
    let version = cursor.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            field: "version".into(),
            message: format!("unsupported version {version}"),
        });
    }
    let kind = kind_from_tag(cursor.take(1, "model kind")?[0])?;
    let input_dim = cursor.u32("input_dim")? as usize;
    let num_classes = cursor.u32("num_classes")? as usize;
    let hidden_count = cursor.u32("hidden count")? as usize;
    let mut hidden_dims = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden_dims.push(cursor.u32("hidden dim")? as usize);
    }
    let spec = ModelSpec::new(kind, input_dim, hidden_dims, num_classes)
        .map_err(|e| Error::Format { field: "architecture".into(), message: e.to_string() })?;

    let dim = cursor.u64("dim")? as usize;
    let head_start = cursor.u64("head offset")? as usize;
    let layout = spec.layout();
    if dim != layout.dim || head_start != layout.head_start {
        return Err(Error::Format {
            field: "dim/head offset".into(),
            message: format!(
                "header says d={dim}, head at {head_start}; architecture implies d={}, head at {}",
                layout.dim, layout.head_start
            ),
        });
    }
    let mut values = Vec::with_capacity(dim);
    for _ in 0..dim {
        values.push(f64::from_le_bytes(cursor.take(8, "parameters")?.try_into().unwrap()));
    }
    Ok((spec, ParameterVector::new(values, layout)?))
}
