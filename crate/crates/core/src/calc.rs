//! Calcification extraction and scoring.
//!
//! Calcium is every masked byte strictly greater than the threshold (default
//! 145): a byte of exactly 145 is *not* calcium. Scores are reported both as
//! voxel counts and in mm³.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seg::{apply_mask, region_grow, RegionGrowParams};
use crate::volio::{window_to_byte, ByteVolume, CtVolume, MaskVolume, Window, WindowMode};

pub const DEFAULT_THRESHOLD: u8 = 145;

/// Inclusive transverse-slice range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRange {
    pub start_slice: usize,
    pub end_slice: usize,
}

impl SliceRange {
    pub fn new(start_slice: usize, end_slice: usize) -> Self {
        Self {
            start_slice,
            end_slice,
        }
    }

    pub fn full(nz: usize) -> Self {
        Self::new(0, nz.saturating_sub(1))
    }

    pub fn validate(&self, nz: usize) -> Result<()> {
        if self.start_slice <= self.end_slice && self.end_slice < nz {
            Ok(())
        } else {
            Err(Error::InvalidRange {
                start: self.start_slice,
                end: self.end_slice,
                nz,
            })
        }
    }

    pub fn len(&self) -> usize {
        self.end_slice - self.start_slice + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, z: usize) -> bool {
        (self.start_slice..=self.end_slice).contains(&z)
    }
}

impl FromStr for SliceRange {
    type Err = Error;

    /// `START:END`, inclusive.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("range must be START:END, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Ok(Self::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ))
    }
}

/// In-plane neighbourhood for the component-area filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Connectivity2d {
    Four,
    #[default]
    Eight,
}

impl From<Connectivity2d> for u8 {
    fn from(c: Connectivity2d) -> u8 {
        match c {
            Connectivity2d::Four => 4,
            Connectivity2d::Eight => 8,
        }
    }
}

impl TryFrom<u8> for Connectivity2d {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity2d::Four),
            8 => Ok(Connectivity2d::Eight),
            _ => Err(Error::InvalidParameter(format!("2-D connectivity must be 4 or 8, got {v}"))),
        }
    }
}

/// Agatston-style minimum in-plane component area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinAreaFilter {
    pub min_area_mm2: f64,
    pub connectivity: Connectivity2d,
}

/// `1` where the masked byte strictly exceeds `threshold`.
pub fn threshold_calcium(masked: &ByteVolume, threshold: u8) -> MaskVolume {
    let bits = masked.bytes().iter().map(|&b| b > threshold).collect();
    MaskVolume::new(masked.dims(), masked.spacing(), bits).expect("same dims as source")
}

/// Removes, slice by slice, every 2-D connected component whose area
/// (`pixels * sx * sy`) is below `min_area_mm2`.
pub fn filter_components_min_area(
    mut calc: MaskVolume,
    min_area_mm2: f64,
    connectivity: Connectivity2d,
) -> Result<MaskVolume> {
    if !min_area_mm2.is_finite() || min_area_mm2 < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "min area must be finite and >= 0, got {min_area_mm2}"
        )));
    }
    let dims = calc.dims();
    let pixel_area = calc.spacing().pixel_area_mm2();
    let (nx, ny) = (dims.nx, dims.ny);
    calc.bits_mut()
        .par_chunks_mut(dims.slice_len())
        .for_each_init(
            || (vec![false; nx * ny], Vec::new(), Vec::new()),
            |(visited, stack, component), slice| {
                visited.iter_mut().for_each(|v| *v = false);
                filter_slice(slice, nx, ny, pixel_area, min_area_mm2, connectivity, visited, stack, component);
            },
        );
    Ok(calc)
}

#[allow(clippy::too_many_arguments)]
fn filter_slice(
    slice: &mut [bool],
    nx: usize,
    ny: usize,
    pixel_area: f64,
    min_area: f64,
    connectivity: Connectivity2d,
    visited: &mut [bool],
    stack: &mut Vec<usize>,
    component: &mut Vec<usize>,
) {
    for start in 0..slice.len() {
        if !slice[start] || visited[start] {
            continue;
        }
        component.clear();
        stack.clear();
        stack.push(start);
        visited[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % nx) as isize, (i / nx) as isize);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx == 0 && dy == 0)
                        || (connectivity == Connectivity2d::Four && dx != 0 && dy != 0)
                    {
                        continue;
                    }
                    let (px, py) = (x + dx, y + dy);
                    if px < 0 || py < 0 || px >= nx as isize || py >= ny as isize {
                        continue;
                    }
                    let j = py as usize * nx + px as usize;
                    if slice[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if (component.len() as f64) * pixel_area < min_area {
            for &i in component.iter() {
                slice[i] = false;
            }
        }
    }
}

fn serialize_min_area<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(a) => s.serialize_f64(*a),
        None => s.serialize_str("none"),
    }
}

/// Parameters that produced a calcium mask, echoed into its report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreProvenance {
    pub threshold: u8,
    pub window: Window,
    pub window_auto: bool,
    pub min_area: Option<MinAreaFilter>,
}

/// Per-slice and total calcium over a slice range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalcificationReport {
    pub threshold_used: u8,
    /// Always `"strictly-greater"`: a byte equal to the threshold is not calcium.
    pub threshold_rule: &'static str,
    pub window_level: f64,
    pub window_width: f64,
    pub window_mode: &'static str,
    pub slice_range: SliceRange,
    pub per_slice_counts: Vec<u64>,
    pub per_slice_volumes_mm3: Vec<f64>,
    pub total_count: u64,
    pub total_volume_mm3: f64,
    pub voxel_volume_mm3: f64,
    #[serde(serialize_with = "serialize_min_area")]
    pub min_area_filter_mm2: Option<f64>,
    pub component_connectivity: Option<Connectivity2d>,
}

impl CalcificationReport {
    /// `slice_index,count,volume_mm3` rows, one per slice in range.
    pub fn per_slice_csv(&self) -> String {
        let mut out = String::from("slice_index,count,volume_mm3\n");
        for (k, (c, v)) in self
            .per_slice_counts
            .iter()
            .zip(&self.per_slice_volumes_mm3)
            .enumerate()
        {
            let _ = writeln!(out, "{},{},{}", self.slice_range.start_slice + k, c, v);
        }
        out
    }
}

/// Counts set voxels per slice of `range` and converts them to mm³.
pub fn score(calc: &MaskVolume, range: SliceRange, provenance: &ScoreProvenance) -> Result<CalcificationReport> {
    let dims = calc.dims();
    range.validate(dims.nz)?;
    let voxel_volume = calc.spacing().voxel_volume_mm3();
    let per_slice_counts: Vec<u64> = (range.start_slice..=range.end_slice)
        .into_par_iter()
        .map(|z| calc.slice(z).iter().filter(|&&b| b).count() as u64)
        .collect();
    let total_count: u64 = per_slice_counts.iter().sum();
    Ok(CalcificationReport {
        threshold_used: provenance.threshold,
        threshold_rule: "strictly-greater",
        window_level: provenance.window.level(),
        window_width: provenance.window.width(),
        window_mode: if provenance.window_auto { "auto" } else { "manual" },
        slice_range: range,
        per_slice_volumes_mm3: per_slice_counts.iter().map(|&c| c as f64 * voxel_volume).collect(),
        per_slice_counts,
        total_count,
        total_volume_mm3: total_count as f64 * voxel_volume,
        voxel_volume_mm3: voxel_volume,
        min_area_filter_mm2: provenance.min_area.map(|f| f.min_area_mm2),
        component_connectivity: provenance.min_area.map(|f| f.connectivity),
    })
}

/// Where the vascular mask comes from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    Provided(&'a MaskVolume),
    RegionGrow(&'a RegionGrowParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub window: WindowMode,
    pub threshold: u8,
    pub min_area: Option<MinAreaFilter>,
    /// `None` scores every slice.
    pub range: Option<SliceRange>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowMode::Auto,
            threshold: DEFAULT_THRESHOLD,
            min_area: None,
            range: None,
        }
    }
}

/// window -> mask -> threshold -> optional area filter -> score.
pub fn run_pipeline(vol: &CtVolume, source: MaskSource<'_>, config: &PipelineConfig) -> Result<CalcificationReport> {
    let dims = vol.dims();
    let range = config.range.unwrap_or_else(|| SliceRange::full(dims.nz));
    range.validate(dims.nz)?;
    let window = config.window.resolve(vol)?;

    let grown;
    let mask = match source {
        MaskSource::Provided(m) => m,
        MaskSource::RegionGrow(params) => {
            grown = region_grow(vol, params)?.mask;
            &grown
        }
    };

    let masked = apply_mask(window_to_byte(vol, window), mask)?;
    let mut calc = threshold_calcium(&masked, config.threshold);
    drop(masked);
    if let Some(f) = config.min_area {
        calc = filter_components_min_area(calc, f.min_area_mm2, f.connectivity)?;
    }
    score(
        &calc,
        range,
        &ScoreProvenance {
            threshold: config.threshold,
            window,
            window_auto: config.window.is_auto(),
            min_area: config.min_area,
        },
    )
}
