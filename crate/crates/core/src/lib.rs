//! Lower-extremity vascular calcification scoring for CT angiography volumes.
//!
//! The scoring pipeline windows a Hounsfield-unit volume to 8 bits, keeps only
//! the voxels inside a vascular mask, counts the bytes strictly above a
//! threshold (145 by default) slice by slice, and converts the count to mm³
//! with the voxel volume.
//!
//! - [`volio`]: volume types, the CTV file format, windowing
//! - [`seg`]: mask import and seeded region growing
//! - [`calc`]: thresholding, the minimum-area filter, scoring
//! - [`metrics`]: overlap, error, regression and loss metrics, k-fold planning
//! - [`phantom`]: synthetic volumes with exact ground truth
//! - [`cli`]: the `vcalc` command line

pub mod calc;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod seg;
pub mod volio;

pub use error::{Error, Result};
