//! Binary dataset files. All integers are little-endian `u32` unless noted.
//!
//! Feature file: `SFEA`, version, kind (`u8`), record count, dim, class
//! count, then per record a label and `dim` `f32` values.
//!
//! Patch file: `SPAT`, version, frames, bins, count, normalization constant
//! (`f64`), then per patch its file id, start frame and `frames * bins` `f64`
//! values.

use std::path::Path;

use ndarray::Array2;

use super::{FeatureError, FeatureKind, Patch, PatchSource};

pub const FEATURE_MAGIC: &[u8; 4] = b"SFEA";
pub const FEATURE_VERSION: u32 = 1;
pub const PATCH_MAGIC: &[u8; 4] = b"SPAT";
pub const PATCH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub label: u32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: FeatureKind,
    pub dim: usize,
    pub num_classes: usize,
    pub records: Vec<FeatureRecord>,
}

impl FeatureFile {
    /// Encoded size in bytes.
    pub fn byte_len(&self) -> usize {
        21 + self.records.len() * (4 + 4 * self.dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub frames: usize,
    pub bins: usize,
    pub norm_scale: f64,
    pub patches: Vec<Patch>,
}

fn u32_le(out: &mut Vec<u8>, v: usize) -> Result<(), FeatureError> {
    let v = u32::try_from(v).map_err(|_| FeatureError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_feature_file(file: &FeatureFile) -> Result<Vec<u8>, FeatureError> {
    let mut out = Vec::with_capacity(file.byte_len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(file.kind.code());
    u32_le(&mut out, file.records.len())?;
    u32_le(&mut out, file.dim)?;
    u32_le(&mut out, file.num_classes)?;
    for r in &file.records {
        if r.values.len() != file.dim {
            return Err(FeatureError::Format(format!(
                "record has {} values, file dim is {}",
                r.values.len(),
                file.dim
            )));
        }
        out.extend_from_slice(&r.label.to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        let end = self.pos.checked_add(n).ok_or(FeatureError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(FeatureError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<(), FeatureError> {
        if self.buf.len() < 4 || &self.buf[..4] != magic {
            return Err(FeatureError::Format(format!(
                "not a {} file (bad magic)",
                String::from_utf8_lossy(magic)
            )));
        }
        self.take(4)?;
        let v = self.u32()?;
        if v != version {
            return Err(FeatureError::UnsupportedVersion(v));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FeatureError> {
        if self.pos != self.buf.len() {
            return Err(FeatureError::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureFile, FeatureError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.header(FEATURE_MAGIC, FEATURE_VERSION)?;
    let code = c.take(1)?[0];
    let kind = FeatureKind::from_code(code)
        .ok_or_else(|| FeatureError::Format(format!("unknown feature kind {code}")))?;
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let num_classes = c.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = c.u32()?;
        let raw = c.take(dim.checked_mul(4).ok_or(FeatureError::Truncated)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(FeatureRecord { label, values });
    }
    c.finish()?;
    Ok(FeatureFile {
        kind,
        dim,
        num_classes,
        records,
    })
}

pub fn write_feature_file(path: &Path, file: &FeatureFile) -> Result<(), FeatureError> {
    let bytes = encode_feature_file(file)?;
    std::fs::write(path, bytes).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile, FeatureError> {
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_feature_file(&bytes)
}

pub fn encode_patch_set(set: &PatchSet) -> Result<Vec<u8>, FeatureError> {
    let mut out = Vec::new();
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    u32_le(&mut out, set.frames)?;
    u32_le(&mut out, set.bins)?;
    u32_le(&mut out, set.patches.len())?;
    out.extend_from_slice(&set.norm_scale.to_le_bytes());
    for p in &set.patches {
        if p.data.dim() != (set.frames, set.bins) {
            return Err(FeatureError::Format(format!(
                "patch is {:?}, set is {}x{}",
                p.data.dim(),
                set.frames,
                set.bins
            )));
        }
        u32_le(&mut out, p.source.file_id)?;
        u32_le(&mut out, p.source.start_frame)?;
        for v in p.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_patch_set(bytes: &[u8]) -> Result<PatchSet, FeatureError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.header(PATCH_MAGIC, PATCH_VERSION)?;
    let frames = c.u32()? as usize;
    let bins = c.u32()? as usize;
    let count = c.u32()? as usize;
    let norm_scale = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let per = frames.checked_mul(bins).and_then(|n| n.checked_mul(8)).ok_or(FeatureError::Truncated)?;
    let mut patches = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let file_id = c.u32()? as usize;
        let start_frame = c.u32()? as usize;
        let data: Vec<f64> = c
            .take(per)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        patches.push(Patch {
            data: Array2::from_shape_vec((frames, bins), data).expect("sized above"),
            source: PatchSource { file_id, start_frame },
        });
    }
    c.finish()?;
    Ok(PatchSet {
        frames,
        bins,
        norm_scale,
        patches,
    })
}

pub fn write_patch_set(path: &Path, set: &PatchSet) -> Result<(), FeatureError> {
    let bytes = encode_patch_set(set)?;
    std::fs::write(path, bytes).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_patch_set(path: &Path) -> Result<PatchSet, FeatureError> {
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_patch_set(&bytes)
}
