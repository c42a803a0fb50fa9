//! Conjugate-rotation registration of corresponding frames.
//!
//! The displacement between two views sharing a camera center is modelled to
//! first order in the rotation angles (pitch, yaw, roll) by a field that is
//! quadratic in the image coordinates, measured from the principal point.
//! Angles are estimated by forward-additive Gauss-Newton on the SSD between
//! the warped reference and the observed frame, coarse to fine.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{build_pyramid, gradient, sample_bilinear, BinaryMask, ImageGray};

/// Largest magnitude accepted for any angle, in radians.
pub const ROTATION_BOUND: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationParams {
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z: f64,
}

impl RotationParams {
    pub fn new(omega_x: f64, omega_y: f64, omega_z: f64) -> Result<Self> {
        let r = Self {
            omega_x,
            omega_y,
            omega_z,
        };
        r.validate()?;
        Ok(r)
    }

    pub const fn zero() -> Self {
        Self {
            omega_x: 0.0,
            omega_y: 0.0,
            omega_z: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.to_array() {
            if !v.is_finite() || v.abs() >= ROTATION_BOUND {
                return Err(Error::InvalidParameter(format!(
                    "rotation angle {v} outside (-{ROTATION_BOUND}, {ROTATION_BOUND})"
                )));
            }
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.omega_x, self.omega_y, self.omega_z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            omega_x: a[0],
            omega_y: a[1],
            omega_z: a[2],
        }
    }

    pub fn negated(self) -> Self {
        Self::from_array(self.to_array().map(|v| -v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_px: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal_px > 0.0 && focal_px.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal length must be positive, got {focal_px}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        Ok(Self { focal_px, cx, cy })
    }

    /// Principal point at the image center.
    pub fn centered(focal_px: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal_px,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.cx < 0.0
            || self.cy < 0.0
            || self.cx > (width - 1) as f64
            || self.cy > (height - 1) as f64
        {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Intrinsics of pyramid level `k` (each level halves the resolution;
    /// level pixel `i` covers fine pixels `2i` and `2i + 1`).
    pub fn at_level(&self, k: usize) -> Self {
        let mut out = *self;
        for _ in 0..k {
            out.focal_px /= 2.0;
            out.cx = (out.cx - 0.5) / 2.0;
            out.cy = (out.cy - 0.5) / 2.0;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkSettings {
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Iteration stops once the accepted update is shorter than this (radians).
    pub convergence_eps: f64,
    /// Border width, in pixels of each level, left out of the sums.
    pub robust_skip: usize,
    pub exec: Exec,
}

impl Default for LkSettings {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            max_iterations: 50,
            convergence_eps: 1e-7,
            robust_skip: 2,
            exec: Exec::default(),
        }
    }
}

impl LkSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 || self.max_iterations == 0 || !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidParameter(
                "pyramid_levels, max_iterations and convergence_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Partial derivatives of the displacement `(u, v)` with respect to the
/// three angles at pixel `(x, y)`.
#[inline]
pub fn motion_jacobian(x: f64, y: f64, k: &CameraIntrinsics) -> [[f64; 3]; 2] {
    let f = k.focal_px;
    let xb = x - k.cx;
    let yb = y - k.cy;
    [
        [-xb * yb / f, f + xb * xb / f, -yb],
        [-f - yb * yb / f, xb * yb / f, xb],
    ]
}

/// Displacement `W(x; omega)` at pixel `(x, y)`.
#[inline]
pub fn motion_field(x: f64, y: f64, omega: &RotationParams, k: &CameraIntrinsics) -> (f64, f64) {
    let j = motion_jacobian(x, y, k);
    let o = omega.to_array();
    (
        j[0][0] * o[0] + j[0][1] * o[1] + j[0][2] * o[2],
        j[1][0] * o[0] + j[1][1] * o[1] + j[1][2] * o[2],
    )
}

/// Backward warp: output pixel `x` samples `src` at `x + W(x; omega)`.
pub fn warp_image(
    src: &ImageGray,
    omega: &RotationParams,
    k: &CameraIntrinsics,
) -> (ImageGray, BinaryMask) {
    warp_image_with(src, omega, k, Exec::default())
}

pub fn warp_image_with(
    src: &ImageGray,
    omega: &RotationParams,
    k: &CameraIntrinsics,
    exec: Exec,
) -> (ImageGray, BinaryMask) {
    let (w, h) = src.dims();
    let mut samples: Vec<Option<f64>> = vec![None; w * h];
    exec.fill_chunks(&mut samples, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let (u, v) = motion_field(x as f64, y as f64, omega, k);
            *out = sample_bilinear(src, x as f64 + u, y as f64 + v);
        }
    });
    let valid = BinaryMask::new(w, h, samples.iter().map(Option::is_some).collect())
        .expect("dimensions match");
    let img = ImageGray::from_raw(w, h, samples.into_iter().map(|s| s.unwrap_or(0.0)).collect());
    (img, valid)
}

/// Backward warp with nearest-neighbour lookup; anything sampled outside the
/// source is non-road.
pub fn warp_mask(mask: &BinaryMask, omega: &RotationParams, k: &CameraIntrinsics) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let (u, v) = motion_field(x as f64, y as f64, omega, k);
        let sx = (x as f64 + u).round();
        let sy = (y as f64 + v).round();
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return false;
        }
        mask.get(sx as usize, sy as usize)
    })
}

/// Outcome of [`lk_align`].
#[derive(Debug, Clone, PartialEq)]
pub struct LkReport {
    pub omega: RotationParams,
    /// Mean squared error over the valid pixels of the finest level.
    pub residual: f64,
    pub iterations: usize,
    /// Mean squared error after each accepted step, one list per level,
    /// coarsest first; the first entry of each list is the level's start.
    pub traces: Vec<Vec<f64>>,
}

/// Per-level data for one Gauss-Newton problem.
struct Level<'a> {
    reference: &'a ImageGray,
    gx: ImageGray,
    gy: ImageGray,
    observed: &'a ImageGray,
    k: CameraIntrinsics,
    skip: usize,
    exec: Exec,
}

#[derive(Default, Clone, Copy)]
struct Accum {
    h: [f64; 6],
    b: [f64; 3],
    sse: f64,
    count: usize,
}

impl Accum {
    fn add(&mut self, o: &Accum) {
        for i in 0..6 {
            self.h[i] += o.h[i];
        }
        for i in 0..3 {
            self.b[i] += o.b[i];
        }
        self.sse += o.sse;
        self.count += o.count;
    }
}

impl Level<'_> {
    fn rows(&self) -> std::ops::Range<usize> {
        let h = self.observed.height();
        self.skip..h.saturating_sub(self.skip)
    }

    fn cols(&self) -> std::ops::Range<usize> {
        let w = self.observed.width();
        self.skip..w.saturating_sub(self.skip)
    }

    /// Sample positions within `skip - 0.5` of the reference border are
    /// dropped as well, so observed pixels without a true source stay out.
    /// The half pixel keeps the cut off the integer grid.
    fn inside_margin(&self, px: f64, py: f64) -> bool {
        let m = (self.skip as f64 - 0.5).max(0.0);
        let w = self.reference.width() as f64;
        let h = self.reference.height() as f64;
        px >= m && py >= m && px <= w - 1.0 - m && py <= h - 1.0 - m
    }

    /// Normal equations (when `with_jacobian`) and SSD at `omega`.
    fn accumulate(&self, omega: &RotationParams, with_jacobian: bool) -> Accum {
        let rows = self.rows();
        let partial = self.exec.map_range(rows.len(), |i| {
            let y = rows.start + i;
            let mut acc = Accum::default();
            for x in self.cols() {
                let (xf, yf) = (x as f64, y as f64);
                let (u, v) = motion_field(xf, yf, omega, &self.k);
                let (px, py) = (xf + u, yf + v);
                if !self.inside_margin(px, py) {
                    continue;
                }
                let Some(r) = sample_bilinear(self.reference, px, py) else {
                    continue;
                };
                let e = r - self.observed.get(x, y);
                acc.sse += e * e;
                acc.count += 1;
                if !with_jacobian {
                    continue;
                }
                let gx = sample_bilinear(&self.gx, px, py).expect("same bounds");
                let gy = sample_bilinear(&self.gy, px, py).expect("same bounds");
                let m = motion_jacobian(xf, yf, &self.k);
                let j = [
                    gx * m[0][0] + gy * m[1][0],
                    gx * m[0][1] + gy * m[1][1],
                    gx * m[0][2] + gy * m[1][2],
                ];
                acc.h[0] += j[0] * j[0];
                acc.h[1] += j[0] * j[1];
                acc.h[2] += j[0] * j[2];
                acc.h[3] += j[1] * j[1];
                acc.h[4] += j[1] * j[2];
                acc.h[5] += j[2] * j[2];
                for (bi, ji) in acc.b.iter_mut().zip(j) {
                    *bi += ji * e;
                }
            }
            acc
        });
        let mut total = Accum::default();
        for p in &partial {
            total.add(p);
        }
        total
    }
}

fn mse(acc: &Accum) -> Result<f64> {
    if acc.count == 0 {
        return Err(Error::AlignmentFailure("no overlapping pixels".into()));
    }
    let v = acc.sse / acc.count as f64;
    if !v.is_finite() {
        return Err(Error::AlignmentFailure("non-finite residual".into()));
    }
    Ok(v)
}

fn solve_normal(acc: &Accum) -> Result<Vector3<f64>> {
    let h = acc.h;
    let m = Matrix3::new(h[0], h[1], h[2], h[1], h[3], h[4], h[2], h[4], h[5]);
    let scale = (h[0] + h[3] + h[5]) / 3.0;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::AlignmentFailure("singular normal matrix (no texture)".into()));
    }
    // Conditioning test on the scale-free matrix.
    let det = (m / scale).determinant();
    if !(det > 1e-12) {
        return Err(Error::AlignmentFailure(format!(
            "singular normal matrix (relative determinant {det:e})"
        )));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::AlignmentFailure("normal matrix not positive definite".into()))?;
    Ok(-chol.solve(&Vector3::new(acc.b[0], acc.b[1], acc.b[2])))
}

const MAX_HALVINGS: usize = 8;

fn align_level(
    level: &Level<'_>,
    mut omega: RotationParams,
    settings: &LkSettings,
    iterations: &mut usize,
) -> Result<(RotationParams, Vec<f64>)> {
    let mut acc = level.accumulate(&omega, true);
    let mut current = mse(&acc)?;
    let mut trace = vec![current];
    for _ in 0..settings.max_iterations {
        *iterations += 1;
        let step = solve_normal(&acc)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let o = omega.to_array();
            let cand = RotationParams::from_array([
                o[0] + scale * step[0],
                o[1] + scale * step[1],
                o[2] + scale * step[2],
            ]);
            let trial = level.accumulate(&cand, false);
            if trial.count > 0 {
                let e = mse(&trial)?;
                if e <= current {
                    accepted = Some((cand, e));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next, e)) = accepted else {
            break;
        };
        omega = next;
        current = e;
        trace.push(current);
        if scale * step.norm() < settings.convergence_eps {
            break;
        }
        acc = level.accumulate(&omega, true);
    }
    Ok((omega, trace))
}

/// Estimates the rotation that maps `observed` onto `reference`, i.e. the
/// minimizer of `sum_x [reference(x + W(x; omega)) - observed(x)]^2`.
pub fn lk_align(
    reference: &ImageGray,
    observed: &ImageGray,
    k: &CameraIntrinsics,
    settings: &LkSettings,
    init: RotationParams,
) -> Result<LkReport> {
    settings.validate()?;
    if reference.dims() != observed.dims() {
        return Err(Error::DimensionMismatch(format!(
            "reference {:?} vs observed {:?}",
            reference.dims(),
            observed.dims()
        )));
    }
    let ref_pyr = build_pyramid(reference, settings.pyramid_levels);
    let obs_pyr = build_pyramid(observed, ref_pyr.len());
    let mut omega = init;
    let mut traces = Vec::with_capacity(ref_pyr.len());
    let mut iterations = 0;
    let mut residual = f64::NAN;
    for lvl in (0..ref_pyr.len()).rev() {
        let r = ref_pyr.level(lvl);
        let (gx, gy) = gradient(r)?;
        let level = Level {
            reference: r,
            gx,
            gy,
            observed: obs_pyr.level(lvl),
            k: k.at_level(lvl),
            skip: settings.robust_skip,
            exec: settings.exec,
        };
        let (o, trace) = align_level(&level, omega, settings, &mut iterations)?;
        omega = o;
        residual = *trace.last().expect("trace starts non-empty");
        traces.push(trace);
    }
    for v in omega.to_array() {
        if !v.is_finite() || v.abs() >= ROTATION_BOUND {
            return Err(Error::AlignmentFailure(format!(
                "estimate diverged ({v} rad)"
            )));
        }
    }
    Ok(LkReport {
        omega,
        residual,
        iterations,
        traces,
    })
}

/// SSD between the warped reference and `observed` at `omega`, and its
/// gradient `2 sum J^T e`, over pixels at least `skip` from the border whose
/// warped position falls inside the reference.
pub fn ssd_objective(
    reference: &ImageGray,
    observed: &ImageGray,
    k: &CameraIntrinsics,
    omega: &RotationParams,
    skip: usize,
) -> Result<(f64, [f64; 3])> {
    if reference.dims() != observed.dims() {
        return Err(Error::DimensionMismatch("reference vs observed".into()));
    }
    let (gx, gy) = gradient(reference)?;
    let level = Level {
        reference,
        gx,
        gy,
        observed,
        k: *k,
        skip,
        exec: Exec::Sequential,
    };
    let acc = level.accumulate(omega, true);
    Ok((acc.sse, acc.b.map(|v| 2.0 * v)))
}
