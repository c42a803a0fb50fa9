//! Road-mask transfer and refinement by background subtraction.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageGray};
use crate::spatial::{warp_image, warp_mask, CameraIntrinsics, RotationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::InvalidParameter(format!(
                "connectivity must be 4 or 8, got {n}"
            ))),
        }
    }

    pub fn count(self) -> usize {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(isize, isize); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    pub fill_hole_connectivity: Connectivity,
    /// Foreground blobs smaller than this many pixels are dropped.
    pub min_blob_px: usize,
    pub histogram_bins: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            fill_hole_connectivity: Connectivity::Four,
            min_blob_px: 25,
            histogram_bins: 256,
        }
    }
}

/// Histogram cell of `v`: cell `k` holds `(k/bins, (k+1)/bins]`, cell 0 also
/// holds everything at or below zero. A pixel lies in a cell `>= k` exactly
/// when `v > k/bins`.
#[inline]
pub fn histogram_bin(v: f64, bins: usize) -> usize {
    let c = (v * bins as f64).ceil() - 1.0;
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(bins - 1)
    }
}

/// Compares `a.0/a.1` against `b.0/b.1` for non-negative fractions.
fn fraction_gt(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l > r,
        _ => a.0 as f64 / a.1 as f64 > b.0 as f64 / b.1 as f64,
    }
}

/// Otsu threshold of an arbitrary set of values in `[0, 1]`.
pub fn otsu_threshold_values(values: impl IntoIterator<Item = f64>, bins: usize) -> f64 {
    let bins = bins.max(2);
    let mut hist = vec![0u64; bins];
    let mut max_v = f64::NEG_INFINITY;
    for v in values {
        hist[histogram_bin(v, bins)] += 1;
        max_v = max_v.max(v);
    }
    let total: u64 = hist.iter().sum();
    let sum: u64 = hist.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();

    // Between-class variance for a split before cell k, up to a constant:
    // (n0*s1 - n1*s0)^2 / (n0*n1), with cell indices as the class values.
    let mut best: Option<(usize, (u128, u128))> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for k in 1..bins {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = sum - s0;
        let diff = (n0 as i128 * s1 as i128 - n1 as i128 * s0 as i128).unsigned_abs();
        let score = (diff * diff, n0 as u128 * n1 as u128);
        if best.is_none_or(|(_, b)| fraction_gt(score, b)) {
            best = Some((k, score));
        }
    }
    match best {
        Some((k, _)) => k as f64 / bins as f64,
        // Fewer than two occupied cells: nothing lies above the maximum.
        None if total > 0 => max_v,
        None => 0.0,
    }
}

/// Threshold maximizing between-class variance over a `bins`-cell histogram
/// of `[0, 1]`. Pixels strictly above it are foreground.
pub fn otsu_threshold(img: &ImageGray, bins: usize) -> f64 {
    otsu_threshold_values(img.data().iter().copied(), bins)
}

/// Flood-fills the background from the border; any background not reached
/// is a hole and becomes foreground.
pub fn fill_holes(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if border && !mask.get(x, y) {
                outside[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in connectivity.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let i = ny * w + nx;
            if !outside[i] && !mask.get(nx, ny) {
                outside[i] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    BinaryMask::from_fn(w, h, |x, y| mask.get(x, y) || !outside[y * w + x])
}

/// Drops foreground components with fewer than `min_px` pixels.
pub fn remove_small_components(
    mask: &BinaryMask,
    min_px: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    let mut seen = vec![false; w * h];
    let mut component = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        component.clear();
        seen[start] = true;
        component.push(start);
        let mut head = 0;
        while head < component.len() {
            let i = component[head];
            head += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && mask.data()[j] {
                    seen[j] = true;
                    component.push(j);
                }
            }
        }
        if component.len() < min_px {
            for &i in &component {
                out.set(i % w, i / w, false);
            }
        }
    }
    out
}

fn same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Objects present in one frame but not the other: Otsu-binarized absolute
/// difference over the valid pixels, holes filled, small blobs removed.
pub fn detect_foreground(
    reference_warped: &ImageGray,
    observed: &ImageGray,
    valid: &BinaryMask,
    settings: &RefineSettings,
) -> Result<BinaryMask> {
    same_dims(reference_warped.dims(), observed.dims(), "frames")?;
    same_dims(valid.dims(), observed.dims(), "valid mask")?;
    let (w, h) = observed.dims();
    let diff: Vec<f64> = reference_warped
        .data()
        .iter()
        .zip(observed.data())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let thr = otsu_threshold_values(
        diff.iter()
            .zip(valid.data())
            .filter(|(_, &ok)| ok)
            .map(|(&d, _)| d),
        settings.histogram_bins,
    );
    let raw = BinaryMask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        valid.data()[i] && diff[i] > thr
    });
    let filled = fill_holes(&raw, settings.fill_hole_connectivity);
    Ok(remove_small_components(
        &filled,
        settings.min_blob_px,
        settings.fill_hole_connectivity,
    ))
}

/// The three masks produced while transferring one frame.
#[derive(Debug, Clone)]
pub struct Transfer {
    /// Reference road warped onto the observed frame.
    pub transferred: BinaryMask,
    pub foreground: BinaryMask,
    /// `transferred` minus `foreground`.
    pub refined: BinaryMask,
}

pub fn transfer(
    reference_mask: &BinaryMask,
    reference_frame: &ImageGray,
    observed_frame: &ImageGray,
    omega: &RotationParams,
    k: &CameraIntrinsics,
    settings: &RefineSettings,
) -> Result<Transfer> {
    same_dims(reference_mask.dims(), observed_frame.dims(), "mask")?;
    same_dims(reference_frame.dims(), observed_frame.dims(), "frames")?;
    let transferred = warp_mask(reference_mask, omega, k);
    let (warped, valid) = warp_image(reference_frame, omega, k);
    let foreground = detect_foreground(&warped, observed_frame, &valid, settings)?;
    let refined = transferred.and_not(&foreground)?;
    Ok(Transfer {
        transferred,
        foreground,
        refined,
    })
}

/// Reference road transferred to the observed frame with foreground objects removed.
pub fn transfer_and_refine(
    reference_mask: &BinaryMask,
    reference_frame: &ImageGray,
    observed_frame: &ImageGray,
    omega: &RotationParams,
    k: &CameraIntrinsics,
    settings: &RefineSettings,
) -> Result<BinaryMask> {
    transfer(reference_mask, reference_frame, observed_frame, omega, k, settings).map(|t| t.refined)
}
