//! Vascular masks: imported from an external segmenter or grown from seeds.
//!
//! Region growing is an intensity-band flood fill in HU space. Seeds play the
//! role of the "bubbles" an annotator drops into the vessel lumen; the band is
//! the intensity-similarity criterion.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volio::{load_mask, ByteVolume, CtVolume, Dims, MaskVolume};

/// 3-D neighbourhood used for growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Connectivity3d {
    /// Face neighbours.
    #[default]
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity3d {
    pub fn as_u8(&self) -> u8 {
        match self {
            Connectivity3d::Six => 6,
            Connectivity3d::TwentySix => 26,
        }
    }

    fn offsets(&self) -> Vec<(isize, isize, isize)> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity3d::Six => manhattan == 1,
                        Connectivity3d::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

impl From<Connectivity3d> for u8 {
    fn from(c: Connectivity3d) -> u8 {
        c.as_u8()
    }
}

impl TryFrom<u8> for Connectivity3d {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity3d::Six),
            26 => Ok(Connectivity3d::TwentySix),
            _ => Err(Error::InvalidParameter(format!("3-D connectivity must be 6 or 26, got {v}"))),
        }
    }
}

/// Seeds plus the inclusive HU band voxels must fall in to join the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowParams {
    pub seeds: Vec<[usize; 3]>,
    pub lower_hu: i16,
    pub upper_hu: i16,
    pub connectivity: Connectivity3d,
    /// Growth cap; `None` means the total voxel count.
    pub max_voxels: Option<usize>,
}

impl RegionGrowParams {
    pub fn new(seeds: Vec<[usize; 3]>, lower_hu: i16, upper_hu: i16) -> Self {
        Self {
            seeds,
            lower_hu,
            upper_hu,
            connectivity: Connectivity3d::default(),
            max_voxels: None,
        }
    }

    pub fn effective_max_voxels(&self, dims: Dims) -> usize {
        self.max_voxels.unwrap_or(dims.len())
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.lower_hu > self.upper_hu {
            return Err(Error::InvalidParameter(format!(
                "band lower {} exceeds upper {}",
                self.lower_hu, self.upper_hu
            )));
        }
        if self.max_voxels == Some(0) {
            return Err(Error::InvalidParameter("max_voxels must be >= 1".into()));
        }
        for &[x, y, z] in &self.seeds {
            if !dims.contains(x, y, z) {
                return Err(Error::SeedOutOfBounds {
                    x,
                    y,
                    z,
                    dims: dims.as_array(),
                });
            }
        }
        Ok(())
    }

    fn in_band(&self, hu: i16) -> bool {
        (self.lower_hu..=self.upper_hu).contains(&hu)
    }
}

/// Inclusive HU band written `LO:HI`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub lower_hu: i16,
    pub upper_hu: i16,
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("band must be LO:HI in HU, got {s:?}"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let lower_hu = lo.trim().parse().map_err(|_| bad())?;
        let upper_hu = hi.trim().parse().map_err(|_| bad())?;
        Ok(Band { lower_hu, upper_hu })
    }
}

/// Parses a seed list: one `x y z` triple per line, `#` starts a comment.
pub fn parse_seed_list(text: &str) -> Result<Vec<[usize; 3]>> {
    let mut seeds = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|p| !p.is_empty())
            .collect();
        let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[x, y, z]) => seeds.push([x, y, z]),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "seed line {}: expected `x y z`, got {line:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(seeds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowStatus {
    /// Growth finished without hitting the cap.
    Complete,
    /// Growth stopped at `max_voxels`.
    Truncated,
    /// No seed had an intensity inside the band; the mask is empty.
    NoSeedInBand,
}

#[derive(Debug, Clone)]
pub struct RegionGrowOutcome {
    pub mask: MaskVolume,
    pub grown_voxels: usize,
    pub seeds_in_band: usize,
    pub status: GrowStatus,
}

/// Breadth-first band growth from the in-band seeds.
///
/// Each BFS level is ordered by ascending linear index, so truncation at
/// `max_voxels` keeps a deterministic prefix of that order.
pub fn region_grow(vol: &CtVolume, params: &RegionGrowParams) -> Result<RegionGrowOutcome> {
    let dims = vol.dims();
    params.validate(dims)?;
    let max_voxels = params.effective_max_voxels(dims);
    let hu = vol.voxels();
    let mut mask = MaskVolume::empty(dims, vol.spacing());

    let mut frontier: Vec<usize> = params
        .seeds
        .iter()
        .map(|&[x, y, z]| dims.index(x, y, z))
        .filter(|&i| params.in_band(hu[i]))
        .collect();
    frontier.sort_unstable();
    frontier.dedup();
    let seeds_in_band = frontier.len();
    if seeds_in_band == 0 {
        log::warn!(
            "no seed in band [{}, {}] HU: empty mask",
            params.lower_hu,
            params.upper_hu
        );
        return Ok(RegionGrowOutcome {
            mask,
            grown_voxels: 0,
            seeds_in_band,
            status: GrowStatus::NoSeedInBand,
        });
    }

    let offsets = params.connectivity.offsets();
    let mut grown = 0usize;
    let mut truncated = false;
    let bits = mask.bits_mut();
    for &i in &frontier {
        bits[i] = true;
    }

    loop {
        let budget = max_voxels - grown;
        if frontier.len() > budget {
            for &i in &frontier[budget..] {
                bits[i] = false;
            }
            frontier.truncate(budget);
            truncated = true;
        }
        grown += frontier.len();
        if truncated || frontier.is_empty() || grown == max_voxels {
            break;
        }

        let mut next = Vec::new();
        for &i in &frontier {
            let (x, y, z) = dims.coords(i);
            for &(dx, dy, dz) in &offsets {
                let (Some(nx), Some(ny), Some(nz)) = (
                    x.checked_add_signed(dx),
                    y.checked_add_signed(dy),
                    z.checked_add_signed(dz),
                ) else {
                    continue;
                };
                if !dims.contains(nx, ny, nz) {
                    continue;
                }
                let j = dims.index(nx, ny, nz);
                if !bits[j] && params.in_band(hu[j]) {
                    bits[j] = true;
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }

    // Hitting the cap exactly with nothing left to add is still complete.
    if !truncated && grown == max_voxels && grown < dims.len() {
        truncated = has_unvisited_neighbour(&mask, hu, params, &offsets);
    }

    Ok(RegionGrowOutcome {
        mask,
        grown_voxels: grown,
        seeds_in_band,
        status: if truncated {
            GrowStatus::Truncated
        } else {
            GrowStatus::Complete
        },
    })
}

fn has_unvisited_neighbour(
    mask: &MaskVolume,
    hu: &[i16],
    params: &RegionGrowParams,
    offsets: &[(isize, isize, isize)],
) -> bool {
    let dims = mask.dims();
    let bits = mask.bits();
    bits.iter().enumerate().filter(|(_, &b)| b).any(|(i, _)| {
        let (x, y, z) = dims.coords(i);
        offsets.iter().any(|&(dx, dy, dz)| {
            match (
                x.checked_add_signed(dx),
                y.checked_add_signed(dy),
                z.checked_add_signed(dz),
            ) {
                (Some(nx), Some(ny), Some(nz)) if dims.contains(nx, ny, nz) => {
                    let j = dims.index(nx, ny, nz);
                    !bits[j] && params.in_band(hu[j])
                }
                _ => false,
            }
        })
    })
}

/// Loads an externally produced mask and checks it against `expected_dims`.
pub fn import_mask(path: impl AsRef<Path>, expected_dims: Dims) -> Result<MaskVolume> {
    let mask = load_mask(path)?;
    mask.dims().ensure_same(&expected_dims)?;
    Ok(mask)
}

/// Zeroes every byte outside `mask`.
pub fn apply_mask(mut bv: ByteVolume, mask: &MaskVolume) -> Result<ByteVolume> {
    bv.dims().ensure_same(&mask.dims())?;
    for (b, &m) in bv.bytes_mut().iter_mut().zip(mask.bits()) {
        if !m {
            *b = 0;
        }
    }
    Ok(bv)
}
