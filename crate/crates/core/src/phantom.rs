//! Synthetic CT phantoms with analytic ground truth.
//!
//! Coordinates are millimeters; voxel `(i, j, k)` has its center at
//! `(i * sx, j * sy, k * sz)`. A voxel belongs to a shape iff its center does.
//! Overlaps resolve by a fixed write order:
//! background < bone < lumen < calcification < artifact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calc::SliceRange;
use crate::error::{Error, Result};
use crate::volio::{CtVolume, Dims, MaskVolume, VoxelSpacing, WindowMode};

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Option<Vec3> {
    let n = dot(a, a).sqrt();
    (n.is_finite() && n > 0.0).then(|| scale(a, 1.0 / n))
}

/// Finite cylinder: points within `radius_mm` of the axis segment
/// `center ± half_length * axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center_mm: Vec3,
    pub axis: Vec3,
    pub half_length_mm: f64,
    pub radius_mm: f64,
}

/// Point expressed in a cylinder's frame.
struct Local {
    axial: f64,
    radial: f64,
    angle_deg: f64,
}

impl Cylinder {
    fn validate(&self, what: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(format!("{what}: {m}")));
        if normalize(self.axis).is_none() {
            return bad(format!("axis {:?} has no direction", self.axis));
        }
        if !(self.radius_mm > 0.0 && self.radius_mm.is_finite()) {
            return bad(format!("radius {} must be > 0", self.radius_mm));
        }
        if !(self.half_length_mm > 0.0 && self.half_length_mm.is_finite()) {
            return bad(format!("half length {} must be > 0", self.half_length_mm));
        }
        if self.center_mm.iter().any(|c| !c.is_finite()) {
            return bad("center must be finite".into());
        }
        Ok(())
    }

    fn local(&self, p: Vec3) -> Local {
        let a = normalize(self.axis).expect("validated axis");
        let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = normalize(sub(helper, scale(a, dot(helper, a)))).expect("helper not parallel to axis");
        let v = cross(a, u);
        let d = sub(p, self.center_mm);
        let axial = dot(d, a);
        let r = sub(d, scale(a, axial));
        Local {
            axial,
            radial: dot(r, r).sqrt(),
            angle_deg: dot(r, v).atan2(dot(r, u)).to_degrees().rem_euclid(360.0),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let l = self.local(p);
        l.axial.abs() <= self.half_length_mm && l.radial <= self.radius_mm
    }
}

/// Axis-aligned box, inclusive bounds in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxShape {
    pub min_mm: Vec3,
    pub max_mm: Vec3,
}

impl BoxShape {
    fn validate(&self, what: &str) -> Result<()> {
        if (0..3).all(|i| self.min_mm[i].is_finite() && self.max_mm[i].is_finite() && self.min_mm[i] < self.max_mm[i]) {
            Ok(())
        } else {
            Err(Error::InvalidGeometry(format!("{what}: box min must be < max")))
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min_mm[i] && p[i] <= self.max_mm[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Cylinder(Cylinder),
    Box(BoxShape),
}

impl Shape {
    fn validate(&self, what: &str) -> Result<()> {
        match self {
            Shape::Cylinder(c) => c.validate(what),
            Shape::Box(b) => b.validate(what),
        }
    }

    fn contains(&self, p: Vec3) -> bool {
        match self {
            Shape::Cylinder(c) => c.contains(p),
            Shape::Box(b) => b.contains(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    #[serde(flatten)]
    pub geometry: Cylinder,
    pub lumen_hu: i16,
}

/// Calcified arc of a vessel wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calcification {
    /// Index into `vessels`.
    pub vessel: usize,
    /// Inclusive slice span.
    pub slices: [usize; 2],
    /// `[start, end]` measured around the vessel axis; `end - start` in (0, 360].
    pub angles_deg: [f64; 2],
    /// `[r_inner, r_outer]` distance from the vessel axis.
    pub shell_mm: [f64; 2],
    pub calc_hu: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub shape: Shape,
    pub hu: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    /// High-HU rod with an optional streak band around it.
    Screw {
        rod: Cylinder,
        rod_hu: i16,
        streak: Option<BoxShape>,
        #[serde(default)]
        streak_hu: i16,
    },
    /// Thin high-HU shell around a vessel over a slice span.
    Stent {
        vessel: usize,
        slices: [usize; 2],
        shell_mm: [f64; 2],
        hu: i16,
    },
    /// Lumen falls back to unenhanced blood over a slice span.
    ContrastDropout {
        vessel: usize,
        slices: [usize; 2],
        blood_hu: i16,
    },
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub background_hu: i16,
    #[serde(default)]
    pub vessels: Vec<Vessel>,
    #[serde(default)]
    pub calcifications: Vec<Calcification>,
    #[serde(default)]
    pub bones: Vec<Bone>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_seed")]
    pub rng_seed: u64,
}

/// Bundled example: an aorta-like tube with two calcified arcs, a nearby
/// bone and a spinal screw.
pub const EXAMPLE_SPEC: &str = include_str!("../data/example_phantom.toml");

fn shell_bounds_ok(s: [f64; 2]) -> bool {
    s[0].is_finite() && s[1].is_finite() && s[0] >= 0.0 && s[0] < s[1]
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], background_hu: i16) -> Self {
        Self {
            dims,
            spacing_mm,
            background_hu,
            vessels: Vec::new(),
            calcifications: Vec::new(),
            bones: Vec::new(),
            artifacts: Vec::new(),
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: PhantomSpec = toml::from_str(text).map_err(|e| Error::InvalidGeometry(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn grid(&self) -> Result<(Dims, VoxelSpacing)> {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing_mm;
        Ok((Dims::new(nx, ny, nz)?, VoxelSpacing::new(sx, sy, sz)?))
    }

    pub fn validate(&self) -> Result<()> {
        let (dims, spacing) = self.grid().map_err(|e| Error::InvalidGeometry(e.to_string()))?;
        let geo = |m: String| Err(Error::InvalidGeometry(m));
        let span_ok = |s: [usize; 2]| s[0] <= s[1] && s[1] < dims.nz;
        let extent = [
            dims.nx as f64 * spacing.sx,
            dims.ny as f64 * spacing.sy,
            dims.nz as f64 * spacing.sz,
        ];
        let half = scale(spacing.as_array(), 0.5);
        let inside_grid = |p: Vec3| (0..3).all(|i| p[i] >= -half[i] && p[i] <= extent[i] - half[i]);

        for (i, v) in self.vessels.iter().enumerate() {
            v.geometry.validate(&format!("vessel {i}"))?;
            if !inside_grid(v.geometry.center_mm) {
                return geo(format!("vessel {i}: center {:?} outside the grid", v.geometry.center_mm));
            }
        }
        for (i, c) in self.calcifications.iter().enumerate() {
            if c.vessel >= self.vessels.len() {
                return geo(format!("calcification {i}: no vessel {}", c.vessel));
            }
            if !span_ok(c.slices) {
                return geo(format!("calcification {i}: slice span {:?} invalid", c.slices));
            }
            if !shell_bounds_ok(c.shell_mm) {
                return geo(format!("calcification {i}: shell needs 0 <= r_inner < r_outer"));
            }
            let ext = c.angles_deg[1] - c.angles_deg[0];
            if !(ext > 0.0 && ext <= 360.0) {
                return geo(format!("calcification {i}: angular span {:?} invalid", c.angles_deg));
            }
        }
        for (i, b) in self.bones.iter().enumerate() {
            b.shape.validate(&format!("bone {i}"))?;
        }
        for (i, a) in self.artifacts.iter().enumerate() {
            match a {
                Artifact::Screw { rod, streak, .. } => {
                    rod.validate(&format!("screw {i}"))?;
                    if let Some(s) = streak {
                        s.validate(&format!("screw {i} streak"))?;
                    }
                }
                Artifact::Stent {
                    vessel,
                    slices,
                    shell_mm,
                    ..
                } => {
                    if *vessel >= self.vessels.len() || !span_ok(*slices) || !shell_bounds_ok(*shell_mm) {
                        return geo(format!("stent {i}: invalid vessel, span or shell"));
                    }
                }
                Artifact::ContrastDropout { vessel, slices, .. } => {
                    if *vessel >= self.vessels.len() || !span_ok(*slices) {
                        return geo(format!("contrast dropout {i}: invalid vessel or span"));
                    }
                }
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return geo(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }

    /// Noise-free HU and ground-truth labels of one voxel center.
    fn voxel(&self, p: Vec3, k: usize) -> (i16, bool, bool) {
        let mut hu = self.background_hu;
        let mut vessel = false;
        let mut calcium = false;
        for b in &self.bones {
            if b.shape.contains(p) {
                hu = b.hu;
            }
        }
        for (vi, v) in self.vessels.iter().enumerate() {
            if v.geometry.contains(p) {
                vessel = true;
                hu = self.lumen_hu_at(vi, k);
            }
        }
        for c in &self.calcifications {
            if k < c.slices[0] || k > c.slices[1] {
                continue;
            }
            let l = self.vessels[c.vessel].geometry.local(p);
            let ext = c.angles_deg[1] - c.angles_deg[0];
            let in_arc = ext >= 360.0 || (l.angle_deg - c.angles_deg[0]).rem_euclid(360.0) <= ext;
            if in_arc && l.radial >= c.shell_mm[0] && l.radial <= c.shell_mm[1] {
                vessel = true;
                calcium = true;
                hu = c.calc_hu;
            }
        }
        for a in &self.artifacts {
            match a {
                Artifact::Screw {
                    rod,
                    rod_hu,
                    streak,
                    streak_hu,
                } => {
                    if let Some(s) = streak {
                        if s.contains(p) {
                            hu = *streak_hu;
                        }
                    }
                    if rod.contains(p) {
                        hu = *rod_hu;
                    }
                }
                Artifact::Stent {
                    vessel: vi,
                    slices,
                    shell_mm,
                    hu: stent_hu,
                } => {
                    if k >= slices[0] && k <= slices[1] {
                        let r = self.vessels[*vi].geometry.local(p).radial;
                        if r >= shell_mm[0] && r <= shell_mm[1] {
                            hu = *stent_hu;
                        }
                    }
                }
                Artifact::ContrastDropout { .. } => {}
            }
        }
        (hu, vessel, calcium)
    }

    fn lumen_hu_at(&self, vessel: usize, k: usize) -> i16 {
        let mut hu = self.vessels[vessel].lumen_hu;
        for a in &self.artifacts {
            if let Artifact::ContrastDropout {
                vessel: v,
                slices,
                blood_hu,
            } = a
            {
                if *v == vessel && k >= slices[0] && k <= slices[1] {
                    hu = *blood_hu;
                }
            }
        }
        hu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: CtVolume,
    pub vessel_mask: MaskVolume,
    pub calcium_mask: MaskVolume,
}

/// Rasterizes `spec`. Noise is drawn per slice from a ChaCha stream keyed by
/// the slice index, so output does not depend on thread scheduling.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (dims, spacing) = spec.grid()?;
    let n = dims.slice_len();
    let mut hu = vec![0i16; dims.len()];
    let mut vessel = vec![false; dims.len()];
    let mut calcium = vec![false; dims.len()];
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));

    hu.par_chunks_mut(n)
        .zip(vessel.par_chunks_mut(n))
        .zip(calcium.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, ((hu, vessel), calcium))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(k as u64);
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    let p = [i as f64 * spacing.sx, j as f64 * spacing.sy, k as f64 * spacing.sz];
                    let (h, v, c) = spec.voxel(p, k);
                    let idx = i + j * dims.nx;
                    hu[idx] = match &noise {
                        Some(dist) => (f64::from(h) + dist.sample(&mut rng))
                            .round()
                            .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16,
                        None => h,
                    };
                    vessel[idx] = v;
                    calcium[idx] = c;
                }
            }
        });

    Ok(Phantom {
        volume: CtVolume::new(dims, spacing, hu)?,
        vessel_mask: MaskVolume::new(dims, spacing, vessel)?,
        calcium_mask: MaskVolume::new(dims, spacing, calcium)?,
    })
}

/// Calcium voxels in `range` whose windowed byte strictly exceeds
/// `threshold`: the count a correct pipeline must reproduce given the
/// ground-truth vessel mask. Only defined for noise-free specs.
pub fn expected_calcium(spec: &PhantomSpec, window: WindowMode, threshold: u8, range: SliceRange) -> Result<u64> {
    if spec.noise_sigma != 0.0 {
        return Err(Error::InvalidParameter(
            "expected_calcium needs a noise-free spec (noise_sigma = 0)".into(),
        ));
    }
    let ph = generate(spec)?;
    let dims = ph.volume.dims();
    range.validate(dims.nz)?;
    let window = window.resolve(&ph.volume)?;
    let n = dims.slice_len();
    let count = (range.start_slice..=range.end_slice)
        .flat_map(|z| z * n..(z + 1) * n)
        .filter(|&i| ph.calcium_mask.bits()[i] && window.map(f64::from(ph.volume.voxels()[i])) > threshold)
        .count();
    Ok(count as u64)
}
