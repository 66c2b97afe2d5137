//! CTV: a small text header next to a raw little-endian payload.
//!
//! ```text
//! magic = "CTV1"
//! dims = [512, 512, 600]
//! spacing_mm = [0.7, 0.7, 1.0]
//! dtype = "i16"
//! order = "x-fastest"
//! endian = "little"
//! payload = "scan.raw"
//! ```
//!
//! Volumes use `i16`; masks use `u8` restricted to `{0, 1}`. The payload path
//! is resolved relative to the header's directory.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CtVolume, Dims, MaskVolume, VoxelSpacing};
use crate::error::{Error, Result};

pub const MAGIC: &str = "CTV1";
const ORDER: &str = "x-fastest";
const ENDIAN: &str = "little";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    I16,
    U8,
}

impl Dtype {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dtype::I16 => "i16",
            Dtype::U8 => "u8",
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtvHeader {
    pub magic: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub endian: String,
    pub payload: String,
}

impl CtvHeader {
    fn new(dims: Dims, spacing: VoxelSpacing, dtype: Dtype, payload: String) -> Self {
        Self {
            magic: MAGIC.into(),
            dims: dims.as_array(),
            spacing_mm: spacing.as_array(),
            dtype: dtype.as_str().into(),
            order: ORDER.into(),
            endian: ENDIAN.into(),
            payload,
        }
    }

    /// Reads and validates a header file; dtype is checked by the caller.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let malformed = |reason: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason,
        };
        let header: CtvHeader = toml::from_str(&text).map_err(|e| malformed(e.message().to_string()))?;
        if header.magic != MAGIC {
            return Err(malformed(format!("magic {:?}, expected {MAGIC:?}", header.magic)));
        }
        if header.order != ORDER {
            return Err(malformed(format!("order {:?}, expected {ORDER:?}", header.order)));
        }
        if header.endian != ENDIAN {
            return Err(malformed(format!("endian {:?}, expected {ENDIAN:?}", header.endian)));
        }
        if header.payload.is_empty() {
            return Err(malformed("empty payload path".into()));
        }
        header.dims().map_err(|e| malformed(e.to_string()))?;
        header.spacing().map_err(|e| malformed(e.to_string()))?;
        Ok(header)
    }

    pub fn dims(&self) -> Result<Dims> {
        let [nx, ny, nz] = self.dims;
        Dims::new(nx, ny, nz)
    }

    pub fn spacing(&self) -> Result<VoxelSpacing> {
        let [sx, sy, sz] = self.spacing_mm;
        VoxelSpacing::new(sx, sy, sz)
    }

    fn expect_dtype(&self, dtype: Dtype) -> Result<()> {
        if self.dtype == dtype.as_str() {
            Ok(())
        } else {
            Err(Error::UnsupportedDtype {
                expected: dtype.as_str(),
                found: self.dtype.clone(),
            })
        }
    }

    fn payload_path(&self, header_path: &Path) -> PathBuf {
        header_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&self.payload)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    if source.kind() == ErrorKind::NotFound {
        Error::FileNotFound(path.to_path_buf())
    } else {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_error(path, e)
    })
}

fn payload_name(header_path: &Path) -> Result<String> {
    let stem = header_path
        .file_stem()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", header_path.display())))?;
    Ok(format!("{}.raw", stem.to_string_lossy()))
}

fn save_raw(path: &Path, header: &CtvHeader, payload: &[u8]) -> Result<()> {
    let text = toml::to_string(header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(&header.payload_path(path), payload)?;
    write_atomic(path, text.as_bytes())
}

fn load_raw(path: &Path, dtype: Dtype) -> Result<(CtvHeader, Vec<u8>)> {
    let header = CtvHeader::read(path)?;
    header.expect_dtype(dtype)?;
    let dims = header.dims()?;
    let payload_path = header.payload_path(path);
    let expected = (dims.len() * dtype.size()) as u64;
    let actual = fs::metadata(&payload_path)
        .map_err(|e| io_error(&payload_path, e))?
        .len();
    if actual != expected {
        return Err(Error::PayloadLength { expected, actual });
    }
    let bytes = fs::read(&payload_path).map_err(|e| io_error(&payload_path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok((header, bytes))
}

/// Writes `vol` as `path` (header) plus `<stem>.raw` beside it.
pub fn save_volume(vol: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CtvHeader::new(vol.dims(), vol.spacing(), Dtype::I16, payload_name(path)?);
    let payload: Vec<u8> = vol.voxels().iter().flat_map(|v| v.to_le_bytes()).collect();
    save_raw(path, &header, &payload)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let (header, bytes) = load_raw(path.as_ref(), Dtype::I16)?;
    let voxels = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    CtVolume::new(header.dims()?, header.spacing()?, voxels)
}

pub fn save_mask(mask: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CtvHeader::new(mask.dims(), mask.spacing(), Dtype::U8, payload_name(path)?);
    save_raw(path, &header, &mask.to_u8())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let (header, bytes) = load_raw(path.as_ref(), Dtype::U8)?;
    MaskVolume::from_u8(header.dims()?, header.spacing()?, &bytes)
}
