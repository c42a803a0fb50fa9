//! Ray casting of the ground plane, roadside boxes and vehicles.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::noise::{fbm, hash};
use super::track::Track;
use super::{RideSpec, SceneSpec};
use crate::error::Result;
use crate::image::RGB_FLOOR;
use crate::image::{BinaryMask, ImageRgb};
use crate::invariant::InvariantDirection;

/// Chromaticity shift per unit of `ln(1 / attenuation)` inside a shadow.
pub const SHADOW_CHROMA_SHIFT: f64 = 0.6;

const SKY_ZENITH: [f64; 3] = [0.42, 0.58, 0.88];
const SKY_HORIZON: [f64; 3] = [0.74, 0.8, 0.9];
const ASPHALT: [f64; 3] = [0.33, 0.33, 0.35];
const GRASS: [f64; 3] = [0.24, 0.42, 0.15];
const CENTER_PAINT: [f64; 3] = [0.85, 0.85, 0.8];
const EDGE_PAINT: [f64; 3] = [0.85, 0.72, 0.28];
const GLASS: [f64; 3] = [0.16, 0.2, 0.3];
const CULL_DISTANCE: f64 = 160.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum BoxKind {
    Building,
    Pole,
    Vehicle,
}

/// Box resting on the ground, rotated about the vertical axis.
#[derive(Debug, Clone)]
pub(crate) struct BoxObj {
    pub center: [f64; 2],
    pub cos: f64,
    pub sin: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub height: f64,
    pub color: [f64; 3],
    pub kind: BoxKind,
    pub seed: u64,
}

struct BoxHit {
    t: f64,
    /// Face normal in world coordinates.
    normal: [f64; 3],
    /// Coordinates on the face, meters.
    uv: [f64; 2],
}

impl BoxObj {
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<BoxHit> {
        // Into the box frame: x along the box, y across, z up.
        let (rx, ry) = (o[0] - self.center[0], o[1] - self.center[1]);
        let lo = [self.cos * rx + self.sin * ry, -self.sin * rx + self.cos * ry, o[2]];
        let ld = [self.cos * d[0] + self.sin * d[1], -self.sin * d[0] + self.cos * d[1], d[2]];
        let bounds = [
            (-self.half_length, self.half_length),
            (-self.half_width, self.half_width),
            (0.0, self.height),
        ];
        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        let mut axis = 0;
        let mut sign = 0.0;
        for a in 0..3 {
            if ld[a].abs() < 1e-12 {
                if lo[a] < bounds[a].0 || lo[a] > bounds[a].1 {
                    return None;
                }
                continue;
            }
            let t1 = (bounds[a].0 - lo[a]) / ld[a];
            let t2 = (bounds[a].1 - lo[a]) / ld[a];
            let (near, far, s) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
            if near > tmin {
                tmin = near;
                axis = a;
                sign = s;
            }
            tmax = tmax.min(far);
        }
        if tmin > tmax || tmin <= 1e-6 {
            return None;
        }
        let p = [0, 1, 2].map(|a| lo[a] + tmin * ld[a]);
        let (local_n, uv) = match axis {
            0 => ([sign, 0.0, 0.0], [p[1], p[2]]),
            1 => ([0.0, sign, 0.0], [p[0], p[2]]),
            _ => ([0.0, 0.0, sign], [p[0], p[1]]),
        };
        let normal = [
            self.cos * local_n[0] - self.sin * local_n[1],
            self.sin * local_n[0] + self.cos * local_n[1],
            local_n[2],
        ];
        Some(BoxHit { t: tmin, normal, uv })
    }

    fn albedo(&self, hit: &BoxHit, footprint: f64) -> [f64; 3] {
        let [u, v] = hit.uv;
        let n = fbm(u, v, self.seed, 1.5, 3, footprint);
        let mut c = self.color.map(|c| c * (1.0 + 0.22 * n));
        match self.kind {
            BoxKind::Building if hit.normal[2] < 0.5 => {
                let wu = (u + 100.0).rem_euclid(3.2);
                let wv = v.rem_euclid(3.0);
                if v > 1.2 && (0.8..2.3).contains(&wu) && (1.0..2.2).contains(&wv) {
                    c = GLASS.map(|g| g * (1.0 + 0.15 * n));
                }
            }
            BoxKind::Vehicle if hit.normal[2] < 0.5 && v > self.height * 0.6 => c = GLASS,
            _ => {}
        }
        c
    }
}

/// World geometry shared by every ride through a scene.
pub struct World {
    pub(crate) track: Track,
    pub(crate) boxes: Vec<BoxObj>,
    spec: SceneSpec,
    dir: InvariantDirection,
}

/// Per-frame camera: position and camera-to-world rotation (camera axes:
/// x right, y down, z forward).
#[derive(Debug, Clone, Copy)]
pub struct CameraPose {
    pub s: f64,
    pub position: [f64; 3],
    pub rotation: Matrix3<f64>,
}

fn base_rotation(heading: f64, pitch: f64) -> Matrix3<f64> {
    let t = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let right = Vector3::new(heading.sin(), -heading.cos(), 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let base = Matrix3::from_columns(&[right, down, t]);
    let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch);
    base * tilt.matrix()
}

/// Pixel-space bounding rectangle `[x0, x1, y0, y1]` of a box, or `None`
/// when it lies entirely behind the camera. Boxes reaching behind the
/// image plane get the whole image.
fn screen_rect(b: &BoxObj, pose: &CameraPose, spec: &SceneSpec) -> Option<[f64; 4]> {
    let (cx, cy) = spec.principal_point();
    let f = spec.focal_px;
    let rt = pose.rotation.transpose();
    let mut rect = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut behind = 0;
    for (sl, sw, z) in [
        (-1.0, -1.0, 0.0),
        (-1.0, 1.0, 0.0),
        (1.0, -1.0, 0.0),
        (1.0, 1.0, 0.0),
        (-1.0, -1.0, 1.0),
        (-1.0, 1.0, 1.0),
        (1.0, -1.0, 1.0),
        (1.0, 1.0, 1.0),
    ] {
        let (lx, ly) = (sl * b.half_length, sw * b.half_width);
        let p = Vector3::new(
            b.center[0] + b.cos * lx - b.sin * ly - pose.position[0],
            b.center[1] + b.sin * lx + b.cos * ly - pose.position[1],
            z * b.height - pose.position[2],
        );
        let c = rt * p;
        if c[2] < 0.05 {
            behind += 1;
            continue;
        }
        let (x, y) = (f * c[0] / c[2] + cx, f * c[1] / c[2] + cy);
        rect = [rect[0].min(x), rect[1].max(x), rect[2].min(y), rect[3].max(y)];
    }
    match behind {
        8 => None,
        0 => Some([rect[0] - 1.0, rect[1] + 1.0, rect[2] - 1.0, rect[3] + 1.0]),
        _ => Some([f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY]),
    }
}

fn mul(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

impl World {
    pub fn build(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let track = Track::new(&spec.control_points)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hash(&[spec.seed, 0x5ce4e]));
        use rand::Rng;
        let palette: [[f64; 3]; 7] = [
            [0.62, 0.3, 0.22],
            [0.72, 0.63, 0.45],
            [0.36, 0.43, 0.58],
            [0.78, 0.77, 0.72],
            [0.36, 0.52, 0.36],
            [0.68, 0.45, 0.2],
            [0.55, 0.35, 0.5],
        ];
        let mut boxes = Vec::new();
        let edge = spec.road_width / 2.0;
        for side in [-1.0, 1.0] {
            let mut s = rng.random_range(2.0..10.0);
            while s < track.length() - 8.0 {
                let half_length = rng.random_range(2.5..7.0);
                let depth = rng.random_range(5.0..12.0);
                let setback = rng.random_range(2.5..6.0);
                let sc = s + half_length;
                if sc + half_length > track.length() {
                    break;
                }
                let lateral = side * (edge + setback + depth / 2.0);
                let (center, heading) = track.point_at(sc, lateral)?;
                let base = palette[rng.random_range(0..palette.len())];
                let color = base.map(|c: f64| (c * rng.random_range(0.85..1.15)).clamp(0.12, 0.85));
                boxes.push(BoxObj {
                    center,
                    cos: heading.cos(),
                    sin: heading.sin(),
                    half_length,
                    half_width: depth / 2.0,
                    height: rng.random_range(4.0..16.0),
                    color,
                    kind: BoxKind::Building,
                    seed: rng.random(),
                });
                // Occasional pole at the curb in the gap.
                let gap = rng.random_range(2.0..9.0);
                if rng.random_bool(0.5) {
                    let (pc, ph) = track.point_at(sc + half_length + gap / 2.0, side * (edge + 1.2))
                        .unwrap_or((center, heading));
                    boxes.push(BoxObj {
                        center: pc,
                        cos: ph.cos(),
                        sin: ph.sin(),
                        half_length: 0.15,
                        half_width: 0.15,
                        height: rng.random_range(4.0..7.0),
                        color: [0.5, 0.5, 0.52],
                        kind: BoxKind::Pole,
                        seed: rng.random(),
                    });
                }
                s = sc + half_length + gap;
            }
        }
        Ok(Self {
            track,
            boxes,
            spec: spec.clone(),
            dir: InvariantDirection::new(spec.theta)?,
        })
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn pose(&self, s: f64, jitter: [f64; 3]) -> Result<CameraPose> {
        let (p, heading) = self.track.pose(s)?;
        let j = Rotation3::new(Vector3::new(jitter[0], jitter[1], jitter[2]));
        Ok(CameraPose {
            s,
            position: [p[0], p[1], self.spec.camera_height],
            rotation: base_rotation(heading, self.spec.camera_pitch) * j.matrix(),
        })
    }

    fn vehicle_boxes(&self, ride: &RideSpec, frame: usize) -> Result<Vec<BoxObj>> {
        let mut out = Vec::new();
        for (i, v) in ride.vehicles.iter().enumerate() {
            if !(v.frames.0..v.frames.1).contains(&frame) {
                continue;
            }
            let (center, heading) = self.track.point_at(v.s, v.lateral)?;
            out.push(BoxObj {
                center,
                cos: heading.cos(),
                sin: heading.sin(),
                half_length: v.length / 2.0,
                half_width: v.width / 2.0,
                height: v.height,
                color: v.albedo,
                kind: BoxKind::Vehicle,
                seed: hash(&[self.spec.seed, 0xca5, i as u64]),
            });
        }
        Ok(out)
    }

    /// Channel multipliers for a ground point at arc length `s`, lateral `lat`.
    fn illumination(&self, ride: &RideSpec, s: f64, lat: f64) -> [f64; 3] {
        for band in &ride.shadows {
            if s >= band.s_start && s <= band.s_end && lat.abs() <= band.half_width {
                let a = band.attenuation;
                let f = self
                    .dir
                    .lighting_change_factors(SHADOW_CHROMA_SHIFT * (1.0 / a).ln());
                let m = ride.model_violation;
                return f.map(|c| a * ((1.0 - m) * c + m));
            }
        }
        [1.0; 3]
    }

    fn ground_albedo(&self, x: f64, y: f64, footprint: f64) -> ([f64; 3], Option<(f64, f64)>, bool) {
        let seed = self.spec.seed;
        let scale = self.spec.texture_scale;
        let coord = self.track.locate([x, y]);
        let edge = self.spec.road_width / 2.0;
        match coord {
            Some(c) if c.lateral.abs() <= edge => {
                let n = fbm(x, y, seed ^ 11, scale, 3, footprint);
                let cr = fbm(x, y, seed ^ 12, 2.0 * scale, 2, footprint);
                let cb = fbm(x, y, seed ^ 13, 2.0 * scale, 2, footprint);
                let mut a = [
                    ASPHALT[0] * (1.0 + 0.3 * n) * (0.14 * cr).exp(),
                    ASPHALT[1] * (1.0 + 0.3 * n),
                    ASPHALT[2] * (1.0 + 0.3 * n) * (0.14 * cb).exp(),
                ];
                let lat = c.lateral.abs();
                // Paint coverage fades once a pixel is wider than the line.
                let fade = (0.3 / footprint.max(1e-6)).min(1.0);
                if lat < 0.08 + 0.5 * footprint && c.s.rem_euclid(6.0) < 3.0 {
                    a = [0, 1, 2].map(|i| a[i] + fade * (CENTER_PAINT[i] - a[i]));
                } else if (edge - 0.35..edge - 0.15).contains(&lat) {
                    a = [0, 1, 2].map(|i| a[i] + fade * (EDGE_PAINT[i] - a[i]));
                }
                (a, Some((c.s, c.lateral)), true)
            }
            _ => {
                let n = fbm(x, y, seed ^ 21, 0.8 * scale, 3, footprint);
                let cr = fbm(x, y, seed ^ 22, 3.0 * scale, 2, footprint);
                let a = [
                    GRASS[0] * (1.0 + 0.35 * n) * (0.3 * cr).exp(),
                    GRASS[1] * (1.0 + 0.35 * n),
                    GRASS[2] * (1.0 + 0.35 * n) * (-0.2 * cr).exp(),
                ];
                (a, coord.map(|c| (c.s, c.lateral)), false)
            }
        }
    }

    /// Color along one ray and whether it lands on visible road.
    fn trace(&self, ride: &RideSpec, boxes: &[&BoxObj], o: [f64; 3], d: [f64; 3]) -> ([f64; 3], bool) {
        let f = self.spec.focal_px;
        let mut best: Option<(&BoxObj, BoxHit)> = None;
        for b in boxes {
            if let Some(h) = b.intersect(o, d) {
                if best.as_ref().is_none_or(|(_, bh)| h.t < bh.t) {
                    best = Some((b, h));
                }
            }
        }
        let ground_t = if d[2] < -1e-9 { Some(-o[2] / d[2]) } else { None };
        let sun = [0.35, -0.45, 0.82];
        match (best, ground_t) {
            (Some((b, h)), g) if g.is_none_or(|gt| h.t < gt) => {
                let cos_i = (h.normal[0] * d[0] + h.normal[1] * d[1] + h.normal[2] * d[2]).abs();
                let footprint = h.t / f / cos_i.max(0.15);
                let lambert = 0.6
                    + 0.4 * (h.normal[0] * sun[0] + h.normal[1] * sun[1] + h.normal[2] * sun[2]).max(0.0);
                (b.albedo(&h, footprint).map(|c| c * lambert), false)
            }
            (_, Some(t)) => {
                let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
                let footprint = t / f / (-d[2]).max(0.02);
                let (albedo, coord, road) = self.ground_albedo(x, y, footprint);
                let light = coord.map_or([1.0; 3], |(s, lat)| self.illumination(ride, s, lat));
                (mul(albedo, light), road)
            }
            _ => {
                let k = (d[2] * 3.0).clamp(0.0, 1.0);
                ([0, 1, 2].map(|i| SKY_HORIZON[i] + k * (SKY_ZENITH[i] - SKY_HORIZON[i])), false)
            }
        }
    }

    /// Renders one frame and its road mask.
    pub fn render_frame(
        &self,
        ride: &RideSpec,
        ride_tag: u64,
        frame: usize,
        pose: &CameraPose,
    ) -> Result<(ImageRgb, BinaryMask)> {
        let spec = &self.spec;
        let (w, h) = (spec.width, spec.height);
        let (cx, cy) = spec.principal_point();
        let f = spec.focal_px;
        let vehicles = self.vehicle_boxes(ride, frame)?;
        let r = pose.rotation;
        let fwd = [r[(0, 2)], r[(1, 2)]];
        let boxes: Vec<&BoxObj> = self
            .boxes
            .iter()
            .chain(&vehicles)
            .filter(|b| {
                let (dx, dy) = (b.center[0] - pose.position[0], b.center[1] - pose.position[1]);
                let dist = (dx * dx + dy * dy).sqrt();
                let radius = b.half_length.max(b.half_width) * 1.5;
                dist < CULL_DISTANCE && dx * fwd[0] + dy * fwd[1] > -radius - 2.0
            })
            .collect();
        let rects: Vec<Option<[f64; 4]>> = boxes.iter().map(|b| screen_rect(b, pose, spec)).collect();
        let ss = spec.supersample.max(1);
        let ray = |px: f64, py: f64| -> [f64; 3] {
            let c = Vector3::new((px - cx) / f, (py - cy) / f, 1.0);
            let d = r * c;
            let n = d.norm();
            [d[0] / n, d[1] / n, d[2] / n]
        };
        let mut pixels = Vec::with_capacity(w * h);
        let mut mask = Vec::with_capacity(w * h);
        let gain = ride.gain;
        let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
        let mut row_boxes: Vec<(&BoxObj, [f64; 4])> = Vec::new();
        let mut near: Vec<&BoxObj> = Vec::new();
        for py in 0..h {
            let yf = py as f64;
            row_boxes.clear();
            row_boxes.extend(
                boxes
                    .iter()
                    .zip(&rects)
                    .filter_map(|(b, r)| r.map(|r| (*b, r)))
                    .filter(|(_, r)| r[2] <= yf + 0.5 && r[3] >= yf - 0.5),
            );
            for px in 0..w {
                let xf = px as f64;
                near.clear();
                near.extend(
                    row_boxes
                        .iter()
                        .filter(|(_, r)| r[0] <= xf + 0.5 && r[1] >= xf - 0.5)
                        .map(|(b, _)| *b),
                );
                let (center, road) = self.trace(ride, &near, pose.position, ray(xf, yf));
                mask.push(road);
                let color = if ss == 1 {
                    center
                } else {
                    let mut acc = [0.0; 3];
                    for &oy in &offsets {
                        for &ox in &offsets {
                            let (c, _) = self.trace(ride, &near, pose.position, ray(xf + ox, yf + oy));
                            for i in 0..3 {
                                acc[i] += c[i];
                            }
                        }
                    }
                    acc.map(|v| v / (ss * ss) as f64)
                };
                pixels.push(color.map(|v| (v * gain).clamp(RGB_FLOOR, 1.0)));
            }
        }
        if spec.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(hash(&[spec.seed, ride_tag, frame as u64, 0x401e]));
            let normal = Normal::new(0.0, spec.noise_sigma).expect("positive sigma");
            for p in &mut pixels {
                for c in p.iter_mut() {
                    *c = (*c + normal.sample(&mut rng)).clamp(RGB_FLOOR, 1.0);
                }
            }
        }
        Ok((
            ImageRgb::new(w, h, pixels)?,
            BinaryMask::new(w, h, mask)?,
        ))
    }
}
