//! Illuminant-invariant gray image from log-chromaticity.
//!
//! Each pixel maps to `chi = (ln R/G, ln B/G)`. Under Planckian illumination a
//! change of light moves `chi` along a fixed line direction; projecting onto
//! the perpendicular axis at angle `theta` removes that component, which is
//! what suppresses cast shadows.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::{ImageGray, ImageRgb};

/// Projection axis angle, kept in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantDirection(f64);

impl InvariantDirection {
    pub fn new(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invariant direction must be finite, got {theta}"
            )));
        }
        let mut t = theta.rem_euclid(PI);
        if t >= PI {
            t = 0.0;
        }
        Ok(Self(t))
    }

    pub fn theta(self) -> f64 {
        self.0
    }

    /// Unit axis the chromaticity is projected on.
    pub fn invariant_axis(self) -> [f64; 2] {
        [self.0.cos(), self.0.sin()]
    }

    /// Unit direction along which illumination changes move a pixel.
    pub fn lighting_axis(self) -> [f64; 2] {
        [-self.0.sin(), self.0.cos()]
    }

    /// Projection of a single (strictly positive) RGB triple.
    #[inline]
    pub fn project(self, rgb: [f64; 3]) -> f64 {
        let chi1 = (rgb[0] / rgb[1]).ln();
        let chi2 = (rgb[2] / rgb[1]).ln();
        let [c, s] = self.invariant_axis();
        chi1 * c + chi2 * s
    }

    /// Channel multipliers (green fixed at 1) that shift a pixel's
    /// chromaticity by `shift` along the lighting axis.
    pub fn lighting_change_factors(self, shift: f64) -> [f64; 3] {
        let [a, b] = self.lighting_axis();
        [(shift * a).exp(), 1.0, (shift * b).exp()]
    }
}

/// Projected chromaticity without any normalization.
pub fn rgb_to_invariant_raw(img: &ImageRgb, dir: InvariantDirection) -> ImageGray {
    ImageGray::from_raw(
        img.width(),
        img.height(),
        img.pixels().iter().map(|&p| dir.project(p)).collect(),
    )
}

/// Affine min/max stretch to `[0, 1]`; a constant image maps to 0.5.
pub fn rescale_unit(img: &ImageGray) -> ImageGray {
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    if !(span > 0.0) {
        return ImageGray::filled(img.width(), img.height(), 0.5);
    }
    img.map(|v| (v - lo) / span)
}

/// Values at the `tail` and `1 - tail` quantiles (nearest rank).
pub fn quantile_range(img: &ImageGray, tail: f64) -> (f64, f64) {
    let mut v = img.data().to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let last = v.len() - 1;
    let rank = |q: f64| v[((q * last as f64).round() as usize).min(last)];
    (rank(tail.clamp(0.0, 0.5)), rank(1.0 - tail.clamp(0.0, 0.5)))
}

/// Affine map sending `lo` to 0 and `hi` to 1, clamped to `[0, 1]`.
/// A degenerate range maps everything to 0.5.
pub fn rescale_between(img: &ImageGray, lo: f64, hi: f64) -> ImageGray {
    let span = hi - lo;
    if !(span > 0.0) {
        return ImageGray::filled(img.width(), img.height(), 0.5);
    }
    img.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Shadow-suppressed gray image in `[0, 1]`.
pub fn rgb_to_invariant(img: &ImageRgb, dir: InvariantDirection) -> ImageGray {
    rescale_unit(&rgb_to_invariant_raw(img, dir))
}
