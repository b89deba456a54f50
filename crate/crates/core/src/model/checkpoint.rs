//! Model checkpoint file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "PFCKPT01"
//! header_len   u64
//! header       canonical JSON {"format_version": 1, "config": ModelConfig}
//! n_arrays     u32
//! per array:   name_len u32, name (UTF-8), rank u32, dims rank x u64,
//!              values prod(dims) x f32
//! crc32        u32 over every preceding byte
//! ```
//!
//! Arrays hold every parameter under its name plus the batch-norm running
//! statistics as `<layer>.running_mean` / `<layer>.running_var`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, PatchFormerModel};
use crate::codec::{canonical_json, put_f32s, put_u32, put_u64, seal, unseal, Reader};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
}

struct NamedArray {
    name: String,
    shape: Vec<usize>,
    values: Vec<f32>,
}

fn arrays<T: Scalar>(m: &PatchFormerModel<T>) -> Vec<NamedArray> {
    let mut out: Vec<NamedArray> = m
        .params
        .iter()
        .map(|p| NamedArray {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect();
    for (name, s) in m.buffers.named() {
        for (suffix, v) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            out.push(NamedArray {
                name: format!("{name}.{suffix}"),
                shape: vec![v.len()],
                values: v.iter().map(|x| x.as_f64() as f32).collect(),
            });
        }
    }
    out
}

pub fn encode<T: Scalar>(m: &PatchFormerModel<T>) -> Result<Vec<u8>> {
    let header = canonical_json(&Header { format_version: CHECKPOINT_VERSION, config: m.config().clone() })?;
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_u64(&mut out, header.len() as u64);
    out.extend_from_slice(header.as_bytes());
    let arrays = arrays(m);
    put_u32(&mut out, arrays.len() as u32);
    for a in arrays {
        put_u32(&mut out, a.name.len() as u32);
        out.extend_from_slice(a.name.as_bytes());
        put_u32(&mut out, a.shape.len() as u32);
        for &d in &a.shape {
            put_u64(&mut out, d as u64);
        }
        put_f32s(&mut out, a.values.into_iter());
    }
    Ok(seal(out))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<PatchFormerModel<T>> {
    let mut magic = Reader::new(bytes);
    magic.magic(CHECKPOINT_MAGIC)?;
    let body = unseal(bytes)?;
    let mut r = Reader::new(body);
    r.magic(CHECKPOINT_MAGIC)?;
    let hlen = r.u64("header length")? as usize;
    let at = r.offset();
    let header: Header = serde_json::from_slice(r.bytes(hlen, "header")?)
        .map_err(|e| Error::Format { offset: at, message: format!("bad header: {e}") })?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported checkpoint version {}", header.format_version),
        });
    }
    let mut model = PatchFormerModel::<T>::build(&header.config, &mut Rng::new(0))?;
    let n = r.u32("array count")? as usize;
    let mut seen = 0usize;
    for _ in 0..n {
        let nlen = r.u32("name length")? as usize;
        let name =
            String::from_utf8(r.bytes(nlen, "name")?.to_vec()).map_err(|_| r.error("array name is not UTF-8"))?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let start = r.offset();
        let values = r.f32s(count, &name)?;
        let values: Vec<T> = values.into_iter().map(|v| T::of(v as f64)).collect();
        let shape_err = |expected: &[usize]| Error::Format {
            offset: start,
            message: format!("array {name} has shape {shape:?}, model expects {expected:?}"),
        };
        if let Some(id) = model.params.id(&name) {
            let p = model.params.get_mut(id);
            if p.value.shape() != shape.as_slice() {
                return Err(shape_err(p.value.shape()));
            }
            p.value.data_mut().copy_from_slice(&values);
        } else {
            let mut slot = None;
            for (layer, stats) in model.buffers.named_mut() {
                if name == format!("{layer}.running_mean") {
                    slot = Some(&mut stats.mean);
                } else if name == format!("{layer}.running_var") {
                    slot = Some(&mut stats.var);
                }
                if slot.is_some() {
                    break;
                }
            }
            let Some(slot) = slot else {
                return Err(Error::Format { offset: start, message: format!("unknown array {name}") });
            };
            if shape != [slot.len()] {
                return Err(shape_err(&[slot.len()]));
            }
            slot.copy_from_slice(&values);
        }
        seen += 1;
    }
    r.finish()?;
    let expected = model.params.len() + 2 * model.buffers.named().len();
    if seen != expected {
        return Err(Error::Format { offset: r.offset(), message: format!("{seen} arrays, expected {expected}") });
    }
    Ok(model)
}

pub fn save<T: Scalar>(m: &PatchFormerModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(m)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<PatchFormerModel<T>> {
    decode(&std::fs::read(path)?)
}
