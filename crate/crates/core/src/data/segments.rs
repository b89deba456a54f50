//! Segment container and its file format.
//!
//! ```text
//! magic       8 bytes  "EEGSEG01"
//! header_len  u64
//! header      canonical JSON {n, c, l, f_s, channel_names, subject_ids,
//!                             labels, generator_metadata}
//! X           n * c * l f32
//! crc32       u32 over every preceding byte
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_json, put_f32s, put_u64, seal, unseal, Reader};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const SEGMENT_MAGIC: &[u8; 8] = b"EEGSEG01";

/// Labeled segments `[n, c, l]` with their subject of origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub x: Vec<f32>,
    pub y: Vec<u8>,
    pub subject_ids: Vec<String>,
    pub f_s: u32,
    pub channel_names: Vec<String>,
    pub c: usize,
    pub l: usize,
    pub generator_metadata: serde_json::Value,
}

impl SegmentSet {
    pub fn new(
        x: Vec<f32>,
        y: Vec<u8>,
        subject_ids: Vec<String>,
        f_s: u32,
        channel_names: Vec<String>,
        l: usize,
    ) -> Result<Self> {
        let c = channel_names.len();
        let set = Self { x, y, subject_ids, f_s, channel_names, c, l, generator_metadata: serde_json::Value::Null };
        set.validate()?;
        Ok(set)
    }

    pub fn empty_like(&self) -> Self {
        Self { x: Vec::new(), y: Vec::new(), subject_ids: Vec::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.subject_ids.len() != n {
            return Err(Error::Dimension(format!("{} labels but {} subject ids", n, self.subject_ids.len())));
        }
        if self.channel_names.len() != self.c {
            return Err(Error::Dimension(format!("{} channel names for c = {}", self.channel_names.len(), self.c)));
        }
        if self.x.len() != n * self.c * self.l {
            return Err(Error::Dimension(format!(
                "X holds {} values, expected n*c*l = {}*{}*{}",
                self.x.len(),
                n,
                self.c,
                self.l
            )));
        }
        if let Some(bad) = self.y.iter().find(|&&v| v > 1) {
            return Err(Error::Parameter(format!("label {bad} is not 0 or 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn segment(&self, i: usize) -> &[f32] {
        let s = self.c * self.l;
        &self.x[i * s..(i + 1) * s]
    }

    /// `[n_0, n_1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&v| v == 1).count();
        [self.y.len() - ones, ones]
    }

    /// Distinct subject ids, sorted.
    pub fn subjects(&self) -> Vec<String> {
        self.subject_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = self.empty_like();
        out.x.reserve(indices.len() * self.c * self.l);
        for &i in indices {
            out.x.extend_from_slice(self.segment(i));
            out.y.push(self.y[i]);
            out.subject_ids.push(self.subject_ids[i].clone());
        }
        out
    }

    /// Input batch `[B, 1, c, l]` for the given segment indices.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.c * self.l);
        for &i in indices {
            data.extend(self.segment(i).iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(&[indices.len(), 1, self.c, self.l], data).expect("batch shape")
    }

    /// Concatenates sets with identical geometry.
    pub fn concat(parts: &[SegmentSet]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Parameter("no segment sets to concatenate".into()))?;
        let mut out = first.empty_like();
        for p in parts {
            if p.c != first.c || p.l != first.l || p.f_s != first.f_s || p.channel_names != first.channel_names {
                return Err(Error::Dimension("segment sets differ in channels, length or rate".into()));
            }
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
            out.subject_ids.extend(p.subject_ids.iter().cloned());
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    c: usize,
    l: usize,
    f_s: u32,
    channel_names: Vec<String>,
    subject_ids: Vec<String>,
    labels: Vec<u8>,
    generator_metadata: serde_json::Value,
}

pub fn write_segments(ds: &SegmentSet) -> Result<Vec<u8>> {
    ds.validate()?;
    let header = canonical_json(&Header {
        n: ds.len(),
        c: ds.c,
        l: ds.l,
        f_s: ds.f_s,
        channel_names: ds.channel_names.clone(),
        subject_ids: ds.subject_ids.clone(),
        labels: ds.y.clone(),
        generator_metadata: ds.generator_metadata.clone(),
    })?;
    let mut out = SEGMENT_MAGIC.to_vec();
    put_u64(&mut out, header.len() as u64);
    out.extend_from_slice(header.as_bytes());
    put_f32s(&mut out, ds.x.iter().copied());
    Ok(seal(out))
}

pub fn read_segments(bytes: &[u8]) -> Result<SegmentSet> {
    Reader::new(bytes).magic(SEGMENT_MAGIC)?;
    let body = unseal(bytes)?;
    let mut r = Reader::new(body);
    r.magic(SEGMENT_MAGIC)?;
    let hlen = r.u64("header length")? as usize;
    let at = r.offset();
    let h: Header = serde_json::from_slice(r.bytes(hlen, "header")?)
        .map_err(|e| Error::Format { offset: at, message: format!("bad header: {e}") })?;
    if h.labels.len() != h.n || h.subject_ids.len() != h.n || h.channel_names.len() != h.c {
        return Err(Error::Format { offset: at, message: "header arrays disagree with n or c".into() });
    }
    let count = h.n.checked_mul(h.c).and_then(|v| v.checked_mul(h.l)).ok_or_else(|| r.error("size overflow"))?;
    let x = r.f32s(count, "segment data")?;
    r.finish()?;
    let ds = SegmentSet {
        x,
        y: h.labels,
        subject_ids: h.subject_ids,
        f_s: h.f_s,
        channel_names: h.channel_names,
        c: h.c,
        l: h.l,
        generator_metadata: h.generator_metadata,
    };
    ds.validate().map_err(|e| Error::Format { offset: at, message: e.to_string() })?;
    Ok(ds)
}

pub fn save_segments(ds: &SegmentSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_segments(ds)?)?;
    Ok(())
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<SegmentSet> {
    read_segments(&std::fs::read(path)?)
}
