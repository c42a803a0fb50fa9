//! Hash-based value noise with footprint-aware octave fading.

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of a few integers.
pub fn hash(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x9e3779b97f4a7c15, |h, &p| mix(h ^ p.wrapping_add(0x9e3779b97f4a7c15)))
}

#[inline]
fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = hash(&[ix as u64, iy as u64, seed]);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[-1, 1]`, unit lattice spacing.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Fractal sum of `octaves` noise layers starting at `wavelength`. Layers
/// whose wavelength approaches the pixel `footprint` fade out.
pub fn fbm(x: f64, y: f64, seed: u64, wavelength: f64, octaves: u32, footprint: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut norm = 0.0;
    let mut lambda = wavelength;
    for o in 0..octaves {
        let fade = (1.5 - 2.0 * footprint / lambda).clamp(0.0, 1.0);
        norm += amp;
        if fade > 0.0 {
            sum += amp * fade * value_noise(x / lambda, y / lambda, seed.wrapping_add(o as u64 * 7919));
        }
        amp *= 0.5;
        lambda *= 0.5;
    }
    sum / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_bounded_and_deterministic() {
        for i in 0..1000 {
            let (x, y) = (i as f64 * 0.37 - 100.0, i as f64 * 0.11);
            let v = value_noise(x, y, 5);
            assert!((-1.0..=1.0).contains(&v));
            assert_eq!(v, value_noise(x, y, 5));
        }
        assert_ne!(value_noise(0.5, 0.5, 1), value_noise(0.5, 0.5, 2));
    }

    #[test]
    fn large_footprint_fades_to_zero() {
        assert_eq!(fbm(3.3, 1.2, 9, 1.0, 3, 10.0), 0.0);
        assert_ne!(fbm(3.3, 1.2, 9, 1.0, 3, 0.01), 0.0);
    }
}
