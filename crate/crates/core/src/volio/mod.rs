//! Volume data types, the CTV on-disk format and HU to 8-bit windowing.
//!
//! All volumes store samples x-fastest, then y, then z. The slice index `z`
//! enumerates transverse slices in scan order, increasing superior to
//! inferior, so a range that starts below the renal arteries and ends at the
//! knees always has `start <= end`.

mod ctv;
mod window;

pub use ctv::{load_mask, load_volume, save_mask, save_volume, write_atomic, CtvHeader, Dtype};
pub use window::{window_to_byte, Window, WindowMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidVolume(format!(
                "dims must all be >= 1, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::InvalidVolume("voxel count overflows".into()))?;
        Ok(Self { nx, ny, nz })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Always false for validated dims.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of voxels in one transverse slice.
    #[inline]
    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / self.slice_len();
        (x, y, z)
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        x < self.nx && y < self.ny && z < self.nz
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub(crate) fn ensure_same(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                left: self.as_array(),
                right: other.as_array(),
            })
        }
    }
}

/// Physical voxel edge lengths in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl VoxelSpacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(sx) && ok(sy) && ok(sz) {
            Ok(Self { sx, sy, sz })
        } else {
            Err(Error::InvalidSpacing([sx, sy, sz]))
        }
    }

    /// The count-to-volume conversion factor, `sx * sy * sz` in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.sx * self.sy * self.sz
    }

    /// In-plane pixel area `sx * sy` in mm².
    pub fn pixel_area_mm2(&self) -> f64 {
        self.sx * self.sy
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

/// Signed 16-bit Hounsfield-unit volume.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: Dims,
    spacing: VoxelSpacing,
    voxels: Vec<i16>,
}

impl CtVolume {
    pub fn new(dims: Dims, spacing: VoxelSpacing, voxels: Vec<i16>) -> Result<Self> {
        if voxels.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} samples for dims {:?}",
                voxels.len(),
                dims.as_array()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
        })
    }

    /// Volume filled with a single value.
    pub fn filled(dims: Dims, spacing: VoxelSpacing, hu: i16) -> Self {
        Self {
            dims,
            spacing,
            voxels: vec![hu; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<i16> {
        self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.voxels[self.dims.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[i16] {
        let n = self.dims.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    /// Minimum and maximum sample.
    pub fn min_max(&self) -> (i16, i16) {
        self.voxels
            .iter()
            .fold((i16::MAX, i16::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// 8-bit windowed rendition of a [`CtVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct ByteVolume {
    dims: Dims,
    spacing: VoxelSpacing,
    bytes: Vec<u8>,
    window: Window,
}

impl ByteVolume {
    pub fn new(dims: Dims, spacing: VoxelSpacing, bytes: Vec<u8>, window: Window) -> Result<Self> {
        if bytes.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} bytes for dims {:?}",
                bytes.len(),
                dims.as_array()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            bytes,
            window,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub(crate) fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.bytes[self.dims.index(x, y, z)]
    }
}

/// Binary voxel labels congruent with a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: Dims,
    spacing: VoxelSpacing,
    bits: Vec<bool>,
}

impl MaskVolume {
    pub fn new(dims: Dims, spacing: VoxelSpacing, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} mask samples for dims {:?}",
                bits.len(),
                dims.as_array()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            bits,
        })
    }

    /// Builds a mask from raw `u8` samples, rejecting anything other than 0 or 1.
    pub fn from_u8(dims: Dims, spacing: VoxelSpacing, samples: &[u8]) -> Result<Self> {
        let bits = samples
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::NonBinaryMask { index, value }),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, spacing, bits)
    }

    pub fn empty(dims: Dims, spacing: VoxelSpacing) -> Self {
        Self {
            dims,
            spacing,
            bits: vec![false; dims.len()],
        }
    }

    pub fn full(dims: Dims, spacing: VoxelSpacing) -> Self {
        Self {
            dims,
            spacing,
            bits: vec![true; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.dims.index(x, y, z);
        self.bits[i] = value;
    }

    pub fn slice(&self, z: usize) -> &[bool] {
        let n = self.dims.slice_len();
        &self.bits[z * n..(z + 1) * n]
    }

    /// Number of set voxels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }
}
