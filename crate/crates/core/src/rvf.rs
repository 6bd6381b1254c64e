//! RVF volume files: a JSON header (`name.rvf`) next to raw little-endian
//! `f32` samples (`name.raw`). Field files interleave `(ux, uy, uz)` per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisplacementField, GridMeta, MaskVolume, ScalarVolume};

pub const SCHEMA: &str = "rvf-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RvfKind {
    Scalar,
    Field,
    Mask,
}

impl RvfKind {
    fn components(self) -> usize {
        match self {
            RvfKind::Field => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvfHeader {
    pub schema: String,
    pub kind: RvfKind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub order: String,
}

impl RvfHeader {
    fn new(kind: RvfKind, meta: &GridMeta) -> Self {
        RvfHeader {
            schema: SCHEMA.to_string(),
            kind,
            dims: meta.dims,
            spacing: meta.spacing,
            origin: meta.origin,
            dtype: "f32".to_string(),
            order: "x-fastest".to_string(),
        }
    }

    fn meta(&self) -> Result<GridMeta> {
        GridMeta::new(self.dims, self.spacing, self.origin)
    }
}

/// Path of the raw sample file belonging to header `path`.
pub fn raw_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn write(path: &Path, header: &RvfHeader, samples: impl Iterator<Item = f64>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = samples.flat_map(|v| (v as f32).to_le_bytes()).collect();
    let raw = raw_path(path);
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))
}

fn read(path: &Path, expect: RvfKind) -> Result<(GridMeta, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: RvfHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if header.schema != SCHEMA {
        return Err(Error::format(path, format!("unsupported schema {:?}", header.schema)));
    }
    if header.kind != expect {
        return Err(Error::format(
            path,
            format!("expected {expect:?} volume, found {:?}", header.kind),
        ));
    }
    if header.dtype != "f32" || header.order != "x-fastest" {
        return Err(Error::format(
            path,
            format!("unsupported layout {}/{}", header.dtype, header.order),
        ));
    }
    let meta = header.meta().map_err(|e| Error::format(path, e.to_string()))?;
    let raw = raw_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = meta.n_vox() * expect.components() * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &raw,
            format!("{} bytes, expected {expected}", bytes.len()),
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((meta, samples))
}

pub fn write_volume(path: impl AsRef<Path>, vol: &ScalarVolume) -> Result<()> {
    let header = RvfHeader::new(RvfKind::Scalar, &vol.meta);
    write(path.as_ref(), &header, vol.values.iter().copied())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let (meta, values) = read(path, RvfKind::Scalar)?;
    ScalarVolume::new(meta, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_field(path: impl AsRef<Path>, field: &DisplacementField) -> Result<()> {
    let header = RvfHeader::new(RvfKind::Field, &field.meta);
    write(path.as_ref(), &header, field.u.iter().flat_map(|v| v.iter().copied()))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let (meta, samples) = read(path, RvfKind::Field)?;
    let u = samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    DisplacementField::new(meta, u).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskVolume) -> Result<()> {
    let header = RvfHeader::new(RvfKind::Mask, &mask.meta);
    write(path.as_ref(), &header, mask.labels.iter().map(|&l| l as f64))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let (meta, samples) = read(path, RvfKind::Mask)?;
    let labels = samples
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::format(path, format!("mask sample {v} is not 0/1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    MaskVolume::new(meta, labels).map_err(|e| Error::format(path, e.to_string()))
}
