//! Pixel buffers and the raster operations shared by every stage.

mod pnm;

pub use pnm::{load_gray, load_image, load_mask, load_rgb, save_gray, save_mask, save_rgb, Image, RGB_FLOOR};

use crate::error::{Error, Result};

/// Single-channel image, row-major, nominal range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self::from_raw(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_raw(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Three-channel image. Loaded channels are kept strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Plain luminance average of the three channels.
    pub fn to_gray(&self) -> ImageGray {
        ImageGray::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect(),
        )
    }
}

/// Per-pixel road labels; `true` marks road.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "empty mask");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::filled(width, height, false);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Coarse-to-fine image stack; level 0 is the input.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<ImageGray>,
    requested: usize,
}

impl Pyramid {
    pub fn levels(&self) -> &[ImageGray] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &ImageGray {
        &self.levels[k]
    }

    pub fn requested_levels(&self) -> usize {
        self.requested
    }

    /// True when fewer levels were built than requested because of the size floor.
    pub fn was_clamped(&self) -> bool {
        self.levels.len() < self.requested
    }
}

/// Smallest side allowed for any pyramid level.
pub const PYRAMID_MIN_SIDE: usize = 16;

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_smooth(img: &ImageGray, sigma: f64) -> Result<ImageGray> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothing sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * row[clamp(x as isize + i as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (i, &k) in kernel.iter().enumerate() {
            let sy = clamp(y as isize + i as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    Ok(ImageGray::from_raw(w, h, out))
}

/// Block-mean reduction; partial border blocks average the pixels they hold.
pub fn downsample(img: &ImageGray, factor: usize) -> Result<ImageGray> {
    if factor < 1 {
        return Err(Error::InvalidParameter("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut sums = vec![0.0; ow * oh];
    let mut counts = vec![0usize; ow * oh];
    for y in 0..h {
        let oy = y / factor;
        for x in 0..w {
            let o = oy * ow + x / factor;
            sums[o] += img.get(x, y);
            counts[o] += 1;
        }
    }
    let data = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect();
    Ok(ImageGray::from_raw(ow, oh, data))
}

/// Central differences inside, one-sided differences on the border.
pub fn gradient(img: &ImageGray) -> Result<(ImageGray, ImageGray)> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::TooSmall(format!(
            "gradient needs at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let dx = ImageGray::from_fn(w, h, |x, y| {
        if x == 0 {
            img.get(1, y) - img.get(0, y)
        } else if x == w - 1 {
            img.get(w - 1, y) - img.get(w - 2, y)
        } else {
            0.5 * (img.get(x + 1, y) - img.get(x - 1, y))
        }
    });
    let dy = ImageGray::from_fn(w, h, |x, y| {
        if y == 0 {
            img.get(x, 1) - img.get(x, 0)
        } else if y == h - 1 {
            img.get(x, h - 1) - img.get(x, h - 2)
        } else {
            0.5 * (img.get(x, y + 1) - img.get(x, y - 1))
        }
    });
    Ok((dx, dy))
}

/// Bilinear interpolation; `None` outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn sample_bilinear(img: &ImageGray, x: f64, y: f64) -> Option<f64> {
    let (w, h) = img.dims();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Builds up to `levels` levels, each smoothed with sigma 1 then halved.
/// Stops early rather than produce a level smaller than 16x16.
pub fn build_pyramid(img: &ImageGray, levels: usize) -> Pyramid {
    let requested = levels.max(1);
    let mut out = vec![img.clone()];
    while out.len() < requested {
        let prev = out.last().expect("non-empty");
        let (w, h) = (prev.width().div_ceil(2), prev.height().div_ceil(2));
        if w < PYRAMID_MIN_SIDE || h < PYRAMID_MIN_SIDE {
            log::debug!(
                "pyramid clamped to {} of {requested} levels ({}x{} floor)",
                out.len(),
                PYRAMID_MIN_SIDE,
                PYRAMID_MIN_SIDE
            );
            break;
        }
        let smoothed = gaussian_smooth(prev, 1.0).expect("sigma is positive");
        out.push(downsample(&smoothed, 2).expect("factor is positive"));
    }
    Pyramid {
        levels: out,
        requested,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> ImageGray {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        ImageGray::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn smoothing_preserves_constant() {
        let img = ImageGray::filled(13, 7, 0.37);
        let out = gaussian_smooth(&img, 1.7).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_impulse_center_is_kernel_peak() {
        // Normalized taps for sigma=1, radius 3: w(i) = exp(-i^2/2) / sum.
        let raw: Vec<f64> = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let sum: f64 = raw.iter().sum();
        let w0 = raw[3] / sum;
        assert!((sum - 2.5066).abs() < 1e-3);

        let mut img = ImageGray::filled(21, 21, 0.0);
        img.set(10, 10, 1.0);
        let out = gaussian_smooth(&img, 1.0).unwrap();
        assert!((out.get(10, 10) - w0 * w0).abs() < 1e-12);
        let k = gaussian_kernel(1.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_rejects_bad_sigma() {
        let img = ImageGray::filled(4, 4, 0.0);
        assert!(gaussian_smooth(&img, 0.0).is_err());
        assert!(gaussian_smooth(&img, -1.0).is_err());
    }

    #[test]
    fn downsample_cases() {
        let img = noise_image(9, 5, 1);
        assert_eq!(downsample(&img, 1).unwrap(), img);

        let img = ImageGray::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let d = downsample(&img, 2).unwrap();
        assert_eq!(d.dims(), (1, 1));
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);

        let img = noise_image(17, 17, 2);
        let d = downsample(&img, 16).unwrap();
        assert_eq!(d.dims(), (2, 2));
        // Corner block holds the single pixel (16,16).
        assert_eq!(d.get(1, 1), img.get(16, 16));
        assert!(downsample(&img, 0).is_err());
    }

    #[test]
    fn gradient_cases() {
        let c = ImageGray::filled(5, 4, 0.3);
        let (dx, dy) = gradient(&c).unwrap();
        assert!(dx.data().iter().chain(dy.data()).all(|&v| v == 0.0));

        let w = 8;
        let ramp = ImageGray::from_fn(w, 6, |x, _| x as f64 / w as f64);
        let (dx, dy) = gradient(&ramp).unwrap();
        for y in 0..6 {
            for x in 0..w {
                assert!((dx.get(x, y) - 1.0 / w as f64).abs() < 1e-12);
                assert_eq!(dy.get(x, y), 0.0);
            }
        }

        let img = noise_image(7, 5, 3);
        let (dx, dy) = gradient(&img).unwrap();
        let (tdx, tdy) = gradient(&img.transpose()).unwrap();
        assert_eq!(tdx, dy.transpose());
        assert_eq!(tdy, dx.transpose());

        assert!(gradient(&ImageGray::filled(1, 5, 0.0)).is_err());
    }

    #[test]
    fn bilinear_cases() {
        let img = ImageGray::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(sample_bilinear(&img, 1.0, 0.0), Some(1.0));
        assert_eq!(sample_bilinear(&img, 0.5, 0.0), Some(0.5));
        assert_eq!(sample_bilinear(&img, -0.5, 0.0), None);
        assert_eq!(sample_bilinear(&img, 1.0001, 0.0), None);
        let img = noise_image(6, 6, 4);
        assert_eq!(sample_bilinear(&img, 3.0, 2.0), Some(img.get(3, 2)));
    }

    #[test]
    fn pyramid_cases() {
        let img = noise_image(64, 64, 5);
        let p = build_pyramid(&img, 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p.level(0), &img);

        let p = build_pyramid(&img, 3);
        let dims: Vec<_> = p.levels().iter().map(|l| l.dims()).collect();
        assert_eq!(dims, vec![(64, 64), (32, 32), (16, 16)]);
        assert!(!p.was_clamped());

        let p = build_pyramid(&noise_image(20, 20, 6), 4);
        assert_eq!(p.len(), 1);
        assert!(p.was_clamped());

        let p = build_pyramid(&noise_image(33, 35, 7), 2);
        assert_eq!(p.level(1).dims(), (17, 18));
    }

    #[test]
    fn constructors_validate() {
        assert!(ImageGray::new(0, 3, vec![]).is_err());
        assert!(ImageGray::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageGray::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_is_a_convex_combination(seed in 0u64..1000, sigma in 0.3f64..4.0) {
            let img = noise_image(11, 9, seed);
            let (lo, hi) = img.min_max();
            let out = gaussian_smooth(&img, sigma).unwrap();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo - 1e-12 && ohi <= hi + 1e-12);
        }

        #[test]
        fn ops_commute_with_offsets(seed in 0u64..1000, c in -2.0f64..2.0, factor in 1usize..6) {
            let img = noise_image(13, 10, seed);
            let shifted = img.map(|v| v + c);
            let a = gaussian_smooth(&shifted, 1.3).unwrap();
            let b = gaussian_smooth(&img, 1.3).unwrap().map(|v| v + c);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let a = downsample(&shifted, factor).unwrap();
            let b = downsample(&img, factor).unwrap().map(|v| v + c);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
