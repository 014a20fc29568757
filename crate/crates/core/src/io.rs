//! Two-file volume bundle: `<stem>.json` header plus `<stem>.raw` payload.
//!
//! The payload is raw little-endian C-order data, `f32le` for signal and
//! scalar maps and `u8` for masks. Index order is `(b,) z, y, x` from slowest
//! to fastest.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BValueList, DwiVolume, MaskVolume, ScalarVolume, Shape3, Unit, Volume};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub format_version: u32,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<Unit>,
}

/// Borrowed view used by [`write_volume`] so callers need not clone.
#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Dwi(&'a DwiVolume),
    Scalar(&'a ScalarVolume),
    Mask(&'a MaskVolume),
}

impl<'a> From<&'a DwiVolume> for VolumeRef<'a> {
    fn from(v: &'a DwiVolume) -> Self {
        VolumeRef::Dwi(v)
    }
}

impl<'a> From<&'a ScalarVolume> for VolumeRef<'a> {
    fn from(v: &'a ScalarVolume) -> Self {
        VolumeRef::Scalar(v)
    }
}

impl<'a> From<&'a MaskVolume> for VolumeRef<'a> {
    fn from(v: &'a MaskVolume) -> Self {
        VolumeRef::Mask(v)
    }
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        match v {
            Volume::Dwi(d) => VolumeRef::Dwi(d),
            Volume::Scalar(s) => VolumeRef::Scalar(s),
            Volume::Mask(m) => VolumeRef::Mask(m),
        }
    }
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".json")
}

pub fn raw_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".raw")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(stem.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// True when both files of the bundle exist.
pub fn bundle_exists(stem: &Path) -> bool {
    header_path(stem).is_file() && raw_path(stem).is_file()
}

fn encode_f32(data: &[f64], what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for (i, &v) in data.iter().enumerate() {
        let q = v as f32;
        if !q.is_finite() {
            return Err(Error::validation(format!(
                "{what} value {v} at index {i} is not representable as f32"
            )));
        }
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok(out)
}

pub fn write_volume<'a>(vol: impl Into<VolumeRef<'a>>, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let (header, payload) = match vol.into() {
        VolumeRef::Dwi(d) => {
            let s = d.shape();
            (
                BundleHeader {
                    format_version: FORMAT_VERSION,
                    dtype: "f32le".into(),
                    shape: vec![d.nb(), s.nz, s.ny, s.nx],
                    bvalues: Some(d.bvalues().values().to_vec()),
                    unit: Some(Unit::Signal),
                },
                encode_f32(d.data(), "dwi")?,
            )
        }
        VolumeRef::Scalar(v) => (
            BundleHeader {
                format_version: FORMAT_VERSION,
                dtype: "f32le".into(),
                shape: v.shape().as_array().to_vec(),
                bvalues: None,
                unit: Some(v.unit()),
            },
            encode_f32(v.data(), "scalar")?,
        ),
        VolumeRef::Mask(m) => (
            BundleHeader {
                format_version: FORMAT_VERSION,
                dtype: "u8".into(),
                shape: m.shape().as_array().to_vec(),
                bvalues: None,
                unit: None,
            },
            m.data().to_vec(),
        ),
    };
    let hp = header_path(stem);
    let mut json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::validation(format!("header encoding: {e}")))?;
    json.push('\n');
    fs::write(&hp, json).map_err(|e| Error::io(&hp, e))?;
    let rp = raw_path(stem);
    fs::write(&rp, payload).map_err(|e| Error::io(&rp, e))?;
    Ok(())
}

pub fn read_header(stem: impl AsRef<Path>) -> Result<BundleHeader> {
    let hp = header_path(stem.as_ref());
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
        path: hp,
        reason: format!("malformed header: {e}"),
    })
}

pub fn read_volume(stem: impl AsRef<Path>) -> Result<Volume> {
    let stem = stem.as_ref();
    let header = read_header(stem)?;
    let hp = header_path(stem);
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat {
            path: hp,
            reason: format!("format_version {}", header.format_version),
        });
    }
    let elem_size = match header.dtype.as_str() {
        "f32le" => 4,
        "u8" => 1,
        other => {
            return Err(Error::UnsupportedFormat {
                path: hp,
                reason: format!("dtype {other:?}"),
            })
        }
    };
    let (nb, spatial) = match header.shape.as_slice() {
        &[nz, ny, nx] => (None, (nz, ny, nx)),
        &[nb, nz, ny, nx] => (Some(nb), (nz, ny, nx)),
        other => {
            return Err(Error::CorruptFile {
                path: hp,
                reason: format!("shape must have 3 or 4 entries, got {other:?}"),
            })
        }
    };
    let shape = Shape3::new(spatial.0, spatial.1, spatial.2)?;
    let count = nb.unwrap_or(1) * shape.len();

    let rp = raw_path(stem);
    let bytes = fs::read(&rp).map_err(|e| Error::io(&rp, e))?;
    if bytes.len() != count * elem_size {
        return Err(Error::CorruptFile {
            path: rp,
            reason: format!(
                "payload is {} bytes, header implies {}",
                bytes.len(),
                count * elem_size
            ),
        });
    }

    if elem_size == 1 {
        if nb.is_some() {
            return Err(Error::UnsupportedFormat {
                path: hp,
                reason: "u8 payload with a b axis".into(),
            });
        }
        return Ok(Volume::Mask(MaskVolume::new(shape, bytes)?));
    }

    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    match nb {
        Some(nb) => {
            let bvalues = header.bvalues.ok_or_else(|| Error::CorruptFile {
                path: hp.clone(),
                reason: "4-D volume without bvalues".into(),
            })?;
            if bvalues.len() != nb {
                return Err(Error::CorruptFile {
                    path: hp,
                    reason: format!("{} bvalues for b-axis length {nb}", bvalues.len()),
                });
            }
            Ok(Volume::Dwi(DwiVolume::new(
                BValueList::new(bvalues)?,
                shape,
                data,
            )?))
        }
        None => Ok(Volume::Scalar(ScalarVolume::new(
            shape,
            header.unit.unwrap_or(Unit::Dimensionless),
            data,
        )?)),
    }
}

pub fn read_dwi(stem: impl AsRef<Path>) -> Result<DwiVolume> {
    read_volume(stem)?.into_dwi()
}

pub fn read_scalar(stem: impl AsRef<Path>) -> Result<ScalarVolume> {
    read_volume(stem)?.into_scalar()
}

pub fn read_mask(stem: impl AsRef<Path>) -> Result<MaskVolume> {
    read_volume(stem)?.into_mask()
}
