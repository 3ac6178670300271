//! Binary checkpoint format (all integers and floats little-endian):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `b"NCAE"`                              |
//! | 4      | 4    | format version (`u32`, currently 1)          |
//! | 8      | 4    | family tag (`u32`: 0 = ncae, 1 = baseline)   |
//! | 12     | 4    | kernel size (`u32`, 0 for baseline)          |
//! | 16     | 4    | hidden width (`u32`)                         |
//! | 20     | 4    | input channels (`u32`)                       |
//! | 24     | 4    | depth (`u32`, always 3)                      |
//! | 28     | 8    | scalar parameter count `n` (`u64`)           |
//! | 36     | 8n   | parameters as `f64`, tensors in layout order |
//! | 36+8n  | 4    | CRC-32 (IEEE) of bytes `0..36+8n`            |

use std::fs;
use std::path::Path;

use super::{Architecture, BaselineSpec, Model, NcaeSpec, DEPTH};
use crate::error::{Error, Result};
use crate::nn::{Param, ParamStore};

pub const MAGIC: &[u8; 4] = b"NCAE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 36;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let arch = model.arch();
    let (tag, kernel) = match arch {
        Architecture::Ncae(s) => (0u32, s.kernel_size as u32),
        Architecture::Baseline(_) => (1u32, 0u32),
    };
    let count = model.param_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * count + 4);
    out.extend_from_slice(MAGIC);
    for field in [
        FORMAT_VERSION,
        tag,
        kernel,
        arch.hidden_width() as u32,
        arch.input_channels() as u32,
        DEPTH as u32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in model.params().iter() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing NCAE magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Truncated(format!(
            "{} bytes is shorter than the {}-byte header",
            bytes.len(),
            HEADER_LEN + 4
        )));
    }
    let count = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
    let expected = (count as u128) * 8 + HEADER_LEN as u128 + 4;

    let body = &bytes[..bytes.len() - 4];
    let stored = u32_at(bytes, bytes.len() - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        if (bytes.len() as u128) < expected {
            return Err(Error::Truncated(format!(
                "{} bytes present, header implies {expected}",
                bytes.len()
            )));
        }
        return Err(Error::Checksum { stored, computed });
    }
    if bytes.len() as u128 != expected {
        return Err(Error::Format(format!(
            "file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }

    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (tag, kernel, hidden, channels, depth) = (
        u32_at(bytes, 8),
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
        u32_at(bytes, 20) as usize,
        u32_at(bytes, 24) as usize,
    );
    if depth != DEPTH {
        return Err(Error::Format(format!("depth {depth} is not supported")));
    }
    let arch = match tag {
        0 => Architecture::Ncae(NcaeSpec::new(kernel, hidden, channels)),
        1 => Architecture::Baseline(BaselineSpec::new(hidden, channels)),
        other => return Err(Error::Format(format!("unknown model family tag {other}"))),
    };
    arch.validate()
        .map_err(|e| Error::Format(format!("invalid architecture in header: {e}")))?;

    let layout = arch.param_layout();
    let needed: usize = layout
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if needed as u64 != count {
        return Err(Error::Format(format!(
            "header declares {count} parameters, architecture needs {needed}"
        )));
    }
    let mut values = bytes[HEADER_LEN..HEADER_LEN + 8 * needed]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut store = ParamStore::new();
    for (name, shape) in layout {
        let mut p = Param::zeros(name, &shape);
        for slot in p.value.iter_mut() {
            *slot = values.next().expect("length checked");
        }
        store.push(p);
    }
    Model::from_parts(arch, store)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
