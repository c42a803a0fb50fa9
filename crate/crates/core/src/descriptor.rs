//! Per-frame gradient descriptors and the frame-similarity likelihood.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{downsample, gaussian_smooth, gradient, ImageGray};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    pub smooth_sigma: f64,
    pub downsample_factor: usize,
    /// Gradients below this fraction of the frame's largest magnitude are zeroed.
    pub gradient_floor_ratio: f64,
    /// Largest translation, in descriptor cells, searched by [`similarity`].
    pub max_shift: usize,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            smooth_sigma: 2.0,
            downsample_factor: 16,
            gradient_floor_ratio: 0.05,
            max_shift: 2,
            mu_y: 1.0,
            sigma_y: 0.5,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.smooth_sigma > 0.0) {
            return bad("smooth_sigma must be positive");
        }
        if self.downsample_factor < 1 {
            return bad("downsample_factor must be >= 1");
        }
        if !(0.0..1.0).contains(&self.gradient_floor_ratio) {
            return bad("gradient_floor_ratio must lie in [0, 1)");
        }
        if !(self.sigma_y > 0.0) || !self.mu_y.is_finite() {
            return bad("sigma_y must be positive and mu_y finite");
        }
        Ok(())
    }
}

/// Unit-norm stacked gradient field on the reduced grid, or all zeros for a
/// textureless frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    dx: ImageGray,
    dy: ImageGray,
    zero: bool,
}

impl Descriptor {
    /// Builds a descriptor from raw gradient grids, normalizing them.
    pub fn from_gradients(mut dx: ImageGray, mut dy: ImageGray) -> Result<Self> {
        if dx.dims() != dy.dims() {
            return Err(Error::DimensionMismatch(format!(
                "dx {:?} vs dy {:?}",
                dx.dims(),
                dy.dims()
            )));
        }
        let norm = dx
            .data()
            .iter()
            .chain(dy.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Ok(Self { dx, dy, zero: true });
        }
        dx = dx.map(|v| v / norm);
        dy = dy.map(|v| v / norm);
        Ok(Self { dx, dy, zero: false })
    }

    pub fn dx(&self) -> &ImageGray {
        &self.dx
    }

    pub fn dy(&self) -> &ImageGray {
        &self.dy
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }

    pub fn norm(&self) -> f64 {
        self.dx
            .data()
            .iter()
            .chain(self.dy.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// smooth -> block downsample -> gradient -> magnitude floor -> unit norm.
pub fn compute_descriptor(img: &ImageGray, params: &DescriptorParams) -> Result<Descriptor> {
    params.validate()?;
    let smoothed = gaussian_smooth(img, params.smooth_sigma)?;
    let small = downsample(&smoothed, params.downsample_factor)?;
    if small.width() < 2 || small.height() < 2 {
        return Err(Error::TooSmall(format!(
            "{}x{} image reduces to {}x{} at factor {}",
            img.width(),
            img.height(),
            small.width(),
            small.height(),
            params.downsample_factor
        )));
    }
    let (dx, dy) = gradient(&small)?;
    let mag2: Vec<f64> = dx
        .data()
        .iter()
        .zip(dy.data())
        .map(|(a, b)| a * a + b * b)
        .collect();
    let max2 = mag2.iter().cloned().fold(0.0, f64::max);
    let floor2 = params.gradient_floor_ratio * params.gradient_floor_ratio * max2;
    let keep = |i: usize| mag2[i] >= floor2 && mag2[i] > 0.0;
    let (w, h) = dx.dims();
    let fdx = ImageGray::from_fn(w, h, |x, y| {
        let i = y * w + x;
        if keep(i) {
            dx.data()[i]
        } else {
            0.0
        }
    });
    let fdy = ImageGray::from_fn(w, h, |x, y| {
        let i = y * w + x;
        if keep(i) {
            dy.data()[i]
        } else {
            0.0
        }
    });
    Descriptor::from_gradients(fdx, fdy)
}

/// Descriptors for a batch of frames, in input order.
pub fn compute_descriptors(
    frames: &[ImageGray],
    params: &DescriptorParams,
    exec: Exec,
) -> Result<Vec<Descriptor>> {
    exec.map(frames, |f| compute_descriptor(f, params))
        .into_iter()
        .collect()
}

/// Renormalized inner product of `a` against `b` displaced by `(u, v)`,
/// restricted to the overlapping cells.
fn shifted_cosine(a: &Descriptor, b: &Descriptor, u: isize, v: isize) -> f64 {
    let (w, h) = a.dims();
    let (w, h) = (w as isize, h as isize);
    let x0 = 0.max(-u);
    let x1 = w.min(w - u);
    let y0 = 0.max(-v);
    let y1 = h.min(h - v);
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }
    let (adx, ady, bdx, bdy) = (a.dx.data(), a.dy.data(), b.dx.data(), b.dy.data());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        let ra = (y * w) as usize;
        let rb = ((y + v) * w) as usize;
        for x in x0..x1 {
            let ia = ra + x as usize;
            let ib = rb + (x + u) as usize;
            dot += adx[ia] * bdx[ib] + ady[ia] * bdy[ib];
            na += adx[ia] * adx[ia] + ady[ia] * ady[ia];
            nb += bdx[ib] * bdx[ib] + bdy[ib] * bdy[ib];
        }
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb).sqrt()
}

/// Best cosine between `a` and integer translations of `b` up to
/// `max_shift` cells along each axis. Result lies in `[-1, 1]`.
pub fn similarity(a: &Descriptor, b: &Descriptor, max_shift: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "descriptor {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.zero || b.zero {
        return Ok(0.0);
    }
    let s = max_shift as isize;
    let mut best = f64::NEG_INFINITY;
    for v in -s..=s {
        for u in -s..=s {
            best = best.max(shifted_cosine(a, b, u, v));
        }
    }
    Ok(best.clamp(-1.0, 1.0))
}

/// Normal density with mean `mu` and standard deviation `sigma`.
pub fn gaussian_pdf(f: f64, mu: f64, sigma: f64) -> f64 {
    let z = (f - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `p(y_k | x_k)`: the similarity scored under `N(mu_y, sigma_y^2)`.
pub fn observation_likelihood(
    a: &Descriptor,
    b: &Descriptor,
    params: &DescriptorParams,
) -> Result<f64> {
    let f = similarity(a, b, params.max_shift)?;
    Ok(gaussian_pdf(f, params.mu_y, params.sigma_y))
}
