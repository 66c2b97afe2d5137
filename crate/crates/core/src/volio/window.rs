use serde::{Deserialize, Serialize};

use super::{ByteVolume, CtVolume};
use crate::error::{Error, Result};

/// An HU interval `[level - width/2, level + width/2]` mapped onto `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    level: f64,
    width: f64,
}

impl Window {
    pub fn new(level: f64, width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) || !level.is_finite() {
            return Err(Error::InvalidWindow(width));
        }
        Ok(Self { level, width })
    }

    /// Min-max window: `lo` maps to 0 and `hi` to 255.
    ///
    /// A constant range (`lo == hi`) yields the one-HU window `[lo, lo + 1]`,
    /// under which `lo` maps to 0.
    pub fn from_range(lo: i16, hi: i16) -> Self {
        let (lo, hi) = (f64::from(lo), f64::from(hi));
        if hi > lo {
            Self {
                level: (lo + hi) / 2.0,
                width: hi - lo,
            }
        } else {
            Self {
                level: lo + 0.5,
                width: 1.0,
            }
        }
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// `clamp(round((hu - (level - width/2)) / width * 255), 0, 255)`, rounding
    /// half away from zero.
    #[inline]
    pub fn map(&self, hu: f64) -> u8 {
        let lo = self.level - self.width / 2.0;
        let v = ((hu - lo) / self.width * 255.0).round();
        v.clamp(0.0, 255.0) as u8
    }

    /// Lookup table over every `i16` sample, indexed by `(hu as u16)`.
    pub fn lut(&self) -> Vec<u8> {
        (0..=u16::MAX)
            .map(|bits| self.map(f64::from(bits as i16)))
            .collect()
    }
}

/// How the window for 8-bit conversion is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WindowMode {
    /// Min-max over the whole volume.
    #[default]
    Auto,
    Manual { level: f64, width: f64 },
}

impl WindowMode {
    /// Concrete window for `vol`. Warns when an auto window is degenerate.
    pub fn resolve(&self, vol: &CtVolume) -> Result<Window> {
        match *self {
            WindowMode::Manual { level, width } => Window::new(level, width),
            WindowMode::Auto => {
                let (lo, hi) = vol.min_max();
                if lo == hi {
                    log::warn!("constant volume ({lo} HU): auto window maps every voxel to 0");
                }
                Ok(Window::from_range(lo, hi))
            }
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, WindowMode::Auto)
    }
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    /// `auto` or `LEVEL:WIDTH`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(WindowMode::Auto);
        }
        let bad = || Error::InvalidParameter(format!("window must be auto or LEVEL:WIDTH, got {s:?}"));
        let (l, w) = s.split_once(':').ok_or_else(bad)?;
        let level: f64 = l.trim().parse().map_err(|_| bad())?;
        let width: f64 = w.trim().parse().map_err(|_| bad())?;
        Window::new(level, width)?;
        Ok(WindowMode::Manual { level, width })
    }
}

/// Converts HU samples to bytes through `window`.
pub fn window_to_byte(vol: &CtVolume, window: Window) -> ByteVolume {
    let lut = window.lut();
    let bytes: Vec<u8> = vol
        .voxels()
        .iter()
        .map(|&hu| lut[hu as u16 as usize])
        .collect();
    ByteVolume {
        dims: vol.dims(),
        spacing: vol.spacing(),
        bytes,
        window,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volio::{Dims, VoxelSpacing};
    use proptest::prelude::*;

    fn vol(samples: Vec<i16>) -> CtVolume {
        let n = samples.len();
        CtVolume::new(
            Dims::new(n, 1, 1).unwrap(),
            VoxelSpacing::new(1.0, 1.0, 1.0).unwrap(),
            samples,
        )
        .unwrap()
    }

    #[test]
    fn window_endpoints() {
        let w = Window::new(40.0, 400.0).unwrap();
        assert_eq!(w.map(40.0 - 200.0), 0);
        assert_eq!(w.map(40.0 + 200.0), 255);
    }

    #[test]
    fn water_in_full_nominal_window() {
        // round(1024 / 4095 * 255) = round(63.76...) = 64
        let w = Window::new(1023.5, 4095.0).unwrap();
        assert_eq!(w.map(0.0), 64);
    }

    #[test]
    fn clamps_outside_window() {
        let w = Window::new(0.0, 100.0).unwrap();
        assert_eq!(w.map(3000.0), 255);
        assert_eq!(w.map(-3000.0), 0);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // lo = 0, width = 510 => hu 1 maps to exactly 0.5
        let w = Window::new(255.0, 510.0).unwrap();
        assert_eq!(w.map(1.0), 1);
        assert_eq!(w.map(3.0), 2);
    }

    #[test]
    fn non_positive_width_rejected() {
        assert!(matches!(Window::new(0.0, 0.0), Err(Error::InvalidWindow(_))));
        assert!(Window::new(0.0, -5.0).is_err());
        assert!("10:0".parse::<WindowMode>().is_err());
    }

    #[test]
    fn auto_window_maps_min_and_max() {
        let v = vol(vec![-1000, 0, 40, 3000]);
        let w = WindowMode::Auto.resolve(&v).unwrap();
        let b = window_to_byte(&v, w);
        assert_eq!(b.bytes()[0], 0);
        assert_eq!(b.bytes()[3], 255);
        assert_eq!(b.window(), w);
    }

    #[test]
    fn degenerate_auto_window_is_all_zero() {
        let v = vol(vec![77; 5]);
        let w = WindowMode::Auto.resolve(&v).unwrap();
        assert!(w.width() > 0.0);
        assert!(window_to_byte(&v, w).bytes().iter().all(|&b| b == 0));
    }

    #[test]
    fn parse_window_mode() {
        assert_eq!("auto".parse::<WindowMode>().unwrap(), WindowMode::Auto);
        assert_eq!(
            "1023.5:4095".parse::<WindowMode>().unwrap(),
            WindowMode::Manual {
                level: 1023.5,
                width: 4095.0
            }
        );
        assert!("abc".parse::<WindowMode>().is_err());
    }

    proptest! {
        #[test]
        fn lut_agrees_with_formula(level in -2000.0f64..3000.0, width in 0.5f64..6000.0, hu in any::<i16>()) {
            let w = Window::new(level, width).unwrap();
            prop_assert_eq!(w.lut()[hu as u16 as usize], w.map(f64::from(hu)));
        }

        #[test]
        fn windowing_is_monotone(level in -2000.0f64..3000.0, width in 0.5f64..6000.0, a in any::<i16>(), b in any::<i16>()) {
            let w = Window::new(level, width).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(w.map(f64::from(lo)) <= w.map(f64::from(hi)));
        }

        #[test]
        fn windowing_is_per_voxel(samples in proptest::collection::vec(any::<i16>(), 1..64)) {
            let v = vol(samples.clone());
            let w = WindowMode::Auto.resolve(&v).unwrap();
            let b = window_to_byte(&v, w);
            for (i, &hu) in samples.iter().enumerate() {
                prop_assert_eq!(b.bytes()[i], w.map(f64::from(hu)));
            }
            let (lo, hi) = v.min_max();
            if lo < hi {
                prop_assert_eq!(w.map(f64::from(lo)), 0);
                prop_assert_eq!(w.map(f64::from(hi)), 255);
            }
        }
    }
}
