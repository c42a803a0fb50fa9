//! Paired synthetic rides along a procedural street, with exact ground truth.
//!
//! A [`SceneSpec`] fixes the world (road ribbon, roadside boxes, textures,
//! camera). Each [`RideSpec`] drives a camera along the track with its own
//! speed profile, orientation jitter, shadows, gain and vehicles.
//! [`make_pair`] renders two rides and writes the dataset layout read by the
//! pipeline.

mod noise;
mod render;
mod track;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Rotation3;

use crate::config::parse_pairs;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::image::{save_mask, save_rgb};
use crate::image::{BinaryMask, ImageRgb};

pub use noise::{fbm, hash, value_noise};
pub use render::{CameraPose, World, SHADOW_CHROMA_SHIFT};
pub use track::{Track, TrackCoord, TRACK_REACH};

/// Largest per-axis orientation jitter accepted by [`RideSpec::validate`].
pub const JITTER_BOUND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Centerline control points, meters.
    pub control_points: Vec<[f64; 2]>,
    pub road_width: f64,
    /// Base wavelength of the ground textures, meters.
    pub texture_scale: f64,
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub camera_height: f64,
    /// Downward tilt of the optical axis, radians.
    pub camera_pitch: f64,
    /// Invariant direction the shadows are generated for.
    pub theta: f64,
    /// Standard deviation of additive pixel noise; 0 disables it.
    pub noise_sigma: f64,
    /// Rays per pixel side.
    pub supersample: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.control_points.len() < 2 {
            return bad("scene needs at least two control points");
        }
        if !(self.road_width > 0.0) {
            return bad("road width must be positive");
        }
        if !(self.texture_scale > 0.0) {
            return bad("texture scale must be positive");
        }
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if !(self.focal_px > 0.0) || !(self.camera_height > 0.0) {
            return bad("focal length and camera height must be positive");
        }
        if !self.theta.is_finite() || !self.camera_pitch.is_finite() {
            return bad("angles must be finite");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.supersample == 0 {
            return bad("supersample must be at least 1");
        }
        Ok(())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

/// Strip of the ground plane lit only by skylight.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowBand {
    pub s_start: f64,
    pub s_end: f64,
    /// Brightness factor in `(0, 1]`.
    pub attenuation: f64,
    /// Lateral extent on each side of the centerline, meters.
    pub half_width: f64,
}

/// Box-shaped vehicle placed in track coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub s: f64,
    pub lateral: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub albedo: [f64; 3],
    /// Frames during which the vehicle is present, half open.
    pub frames: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RideSpec {
    /// Arc length of the first frame.
    pub start: f64,
    /// Arc-length advance after each frame; its length is the frame count.
    pub speed_profile: Vec<f64>,
    /// Per-frame orientation offsets in camera axes; empty means none.
    pub jitter: Vec<[f64; 3]>,
    pub shadows: Vec<ShadowBand>,
    pub gain: f64,
    pub vehicles: Vec<Vehicle>,
    /// Fraction of shadow light that ignores the Planckian model, in `[0, 1]`.
    pub model_violation: f64,
}

impl RideSpec {
    pub fn frame_count(&self) -> usize {
        self.speed_profile.len()
    }

    /// Arc length of every frame.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = self.start;
        self.speed_profile
            .iter()
            .map(|&v| {
                let here = s;
                s += v;
                here
            })
            .collect()
    }

    pub fn jitter_at(&self, frame: usize) -> [f64; 3] {
        self.jitter.get(frame).copied().unwrap_or([0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.speed_profile.is_empty() {
            return bad("ride has no frames".into());
        }
        if let Some(v) = self.speed_profile.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return bad(format!("speed increment {v} is negative or not finite"));
        }
        if !self.jitter.is_empty() && self.jitter.len() != self.speed_profile.len() {
            return bad("jitter length differs from frame count".into());
        }
        if self.jitter.iter().flatten().any(|j| !(j.abs() <= JITTER_BOUND)) {
            return bad(format!("jitter exceeds {JITTER_BOUND} rad"));
        }
        if self.shadows.iter().any(|b| !(b.attenuation > 0.0 && b.attenuation <= 1.0)) {
            return bad("shadow attenuation must lie in (0, 1]".into());
        }
        if !(self.gain > 0.0) {
            return bad("gain must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.model_violation) {
            return bad("model violation must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Rendered frames of one ride.
#[derive(Debug, Clone)]
pub struct RideRender {
    pub frames: Vec<ImageRgb>,
    pub masks: Vec<BinaryMask>,
    pub poses: Vec<CameraPose>,
}

/// Exact answers for a rendered pair.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Nearest reference frame by arc length, per observed frame.
    pub correspondence: Vec<usize>,
    /// Rotation taking observed to reference camera coordinates, per
    /// observed frame, as a rotation vector.
    pub omega_true: Vec<[f64; 3]>,
    pub reference_masks: Vec<BinaryMask>,
    pub observed_masks: Vec<BinaryMask>,
    pub theta: f64,
}

/// Renders every frame of a ride. `tag` separates noise streams of rides
/// sharing a scene.
pub fn render_ride(world: &World, ride: &RideSpec, tag: u64, exec: Exec) -> Result<RideRender> {
    ride.validate()?;
    let poses = ride
        .arc_lengths()
        .iter()
        .enumerate()
        .map(|(i, &s)| world.pose(s, ride.jitter_at(i)))
        .collect::<Result<Vec<_>>>()?;
    let rendered = exec.map_range(poses.len(), |i| world.render_frame(ride, tag, i, &poses[i]));
    let mut frames = Vec::with_capacity(poses.len());
    let mut masks = Vec::with_capacity(poses.len());
    for r in rendered {
        let (f, m) = r?;
        frames.push(f);
        masks.push(m);
    }
    Ok(RideRender {
        frames,
        masks,
        poses,
    })
}

/// Index of the reference arc length nearest to each observed one; ties go
/// to the earlier frame.
pub fn nearest_correspondence(reference: &[f64], observed: &[f64]) -> Vec<usize> {
    observed
        .iter()
        .map(|&s| {
            let mut best = 0;
            for (i, &r) in reference.iter().enumerate() {
                if (r - s).abs() < (reference[best] - s).abs() {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn ground_truth(reference: &RideRender, observed: &RideRender, theta: f64) -> GroundTruth {
    let ref_s: Vec<f64> = reference.poses.iter().map(|p| p.s).collect();
    let obs_s: Vec<f64> = observed.poses.iter().map(|p| p.s).collect();
    let correspondence = nearest_correspondence(&ref_s, &obs_s);
    let omega_true = correspondence
        .iter()
        .zip(&observed.poses)
        .map(|(&r, obs)| {
            let rel = reference.poses[r].rotation.transpose() * obs.rotation;
            let v = Rotation3::from_matrix_unchecked(rel).scaled_axis();
            [v[0], v[1], v[2]]
        })
        .collect();
    GroundTruth {
        correspondence,
        omega_true,
        reference_masks: reference.masks.clone(),
        observed_masks: observed.masks.clone(),
        theta,
    }
}

/// Frames and truth of a rendered pair.
#[derive(Debug, Clone)]
pub struct Pair {
    pub reference: RideRender,
    pub observed: RideRender,
    pub truth: GroundTruth,
}

/// Renders both rides of a scene in memory.
pub fn render_pair(scene: &SceneSpec, reference: &RideSpec, observed: &RideSpec, exec: Exec) -> Result<Pair> {
    let world = World::build(scene)?;
    let reference = render_ride(&world, reference, 1, exec)?;
    let observed = render_ride(&world, observed, 2, exec)?;
    let truth = ground_truth(&reference, &observed, scene.theta);
    Ok(Pair {
        reference,
        observed,
        truth,
    })
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.ppm")
}

pub fn mask_name(i: usize) -> String {
    format!("mask_{i:06}.pgm")
}

fn write_ride(dir: &Path, ride: &RideRender) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (f, m)) in ride.frames.iter().zip(&ride.masks).enumerate() {
        save_rgb(f, dir.join(frame_name(i)))?;
        save_mask(m, dir.join(mask_name(i)))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders both rides and writes `ref/`, `obs/`, the truth CSVs and a
/// `scene.cfg` usable as pipeline config.
pub fn make_pair(
    scene: &SceneSpec,
    reference: &RideSpec,
    observed: &RideSpec,
    out: &Path,
    exec: Exec,
) -> Result<GroundTruth> {
    let pair = render_pair(scene, reference, observed, exec)?;
    write_ride(&out.join("ref"), &pair.reference)?;
    write_ride(&out.join("obs"), &pair.observed)?;

    let mut corr = String::from("observed_index,reference_index\n");
    let mut omega = String::from("observed_index,omega_x,omega_y,omega_z\n");
    for (i, (c, w)) in pair.truth.correspondence.iter().zip(&pair.truth.omega_true).enumerate() {
        let _ = writeln!(corr, "{i},{c}");
        let _ = writeln!(omega, "{i},{:.9},{:.9},{:.9}", w[0], w[1], w[2]);
    }
    write_text(&out.join("truth_correspondence.csv"), &corr)?;
    write_text(&out.join("truth_omega.csv"), &omega)?;

    let (cx, cy) = scene.principal_point();
    let cfg = format!(
        "# seed = {}, {}x{}, {} reference / {} observed frames\n\
         theta = {:.12}\nfocal_px = {}\ncx = {}\ncy = {}\n",
        scene.seed,
        scene.width,
        scene.height,
        reference.frame_count(),
        observed.frame_count(),
        scene.theta,
        scene.focal_px,
        cx,
        cy
    );
    write_text(&out.join("scene.cfg"), &cfg)?;
    Ok(pair.truth)
}

/// Reads `truth_correspondence.csv`.
pub fn load_correspondence(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("bad correspondence line: {l}")))
        })
        .collect()
}

/// A scene with its two rides.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub scene: SceneSpec,
    pub reference: RideSpec,
    pub observed: RideSpec,
}

fn ar_jitter(seed: u64, frames: usize, step: f64) -> Vec<[f64; 3]> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, step).expect("positive step");
    let mut j = [0.0; 3];
    (0..frames)
        .map(|_| {
            for v in &mut j {
                *v = (0.8 * *v + normal.sample(&mut rng)).clamp(-0.9 * JITTER_BOUND, 0.9 * JITTER_BOUND);
            }
            j
        })
        .collect()
}

/// Cast shadows of roadside trees: bands 2 to 6 m long every 6 to 16 m,
/// with attenuation around `depth`.
fn shadow_pattern(seed: u64, from: f64, to: f64, depth: f64) -> Vec<ShadowBand> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut s = from + rng.random_range(0.0..8.0);
    while s < to {
        let len = rng.random_range(2.0..6.0);
        out.push(ShadowBand {
            s_start: s,
            s_end: s + len,
            attenuation: (depth + rng.random_range(-0.1..0.1)).clamp(0.05, 1.0),
            half_width: 14.0,
        });
        s += len + rng.random_range(6.0..16.0);
    }
    out
}

fn street_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        control_points: vec![[0.0, 0.0], [0.0, 70.0], [12.0, 140.0], [40.0, 200.0], [60.0, 260.0]],
        road_width: 7.0,
        texture_scale: 0.6,
        width: 320,
        height: 240,
        focal_px: 260.0,
        camera_height: 1.5,
        camera_pitch: 0.06,
        theta: 0.9,
        noise_sigma: 0.004,
        supersample: 1,
    }
}

/// Named preset pair. `street`: 120 reference frames, 90 faster observed
/// frames with a stop, shadow bands, a darker gain and two parked
/// vehicles. `symmetric`: two similar 60-frame rides without traffic or
/// shadows, for role-swap checks.
pub fn preset(name: &str, seed: u64) -> Result<PairSpec> {
    match name {
        "street" => Ok(street_preset(seed)),
        "symmetric" => Ok(symmetric_preset(seed)),
        _ => Err(Error::Config(format!(
            "unknown preset '{name}' (expected street or symmetric)"
        ))),
    }
}

fn street_preset(seed: u64) -> PairSpec {
    let scene = street_scene(seed);
    let ref_speed: Vec<f64> = (0..120)
        .map(|i| 0.8 * (1.0 + 0.15 * (i as f64 / 9.0).sin()))
        .collect();
    let ref_total: f64 = ref_speed[..119].iter().sum();
    let mut obs_speed: Vec<f64> = (0..90)
        .map(|i| {
            if (40..48).contains(&i) {
                0.0
            } else {
                1.0 + 0.2 * (i as f64 / 7.0 + 1.0).sin()
            }
        })
        .collect();
    let obs_total: f64 = obs_speed[..89].iter().sum();
    let k = 0.96 * ref_total / obs_total;
    obs_speed.iter_mut().for_each(|v| *v *= k);
    let start = 10.0;
    let obs_start = start + 0.3;
    let obs_arc = RideSpec {
        start: obs_start,
        speed_profile: obs_speed.clone(),
        ..Default::default()
    }
    .arc_lengths();
    let reference = RideSpec {
        start,
        speed_profile: ref_speed,
        jitter: ar_jitter(hash(&[seed, 1]), 120, 0.002),
        shadows: shadow_pattern(hash(&[seed, 5]), 0.0, 140.0, 0.6),
        gain: 1.0,
        vehicles: Vec::new(),
        model_violation: 0.0,
    };
    let observed = RideSpec {
        start: obs_start,
        speed_profile: obs_speed,
        jitter: ar_jitter(hash(&[seed, 2]), 90, 0.003),
        shadows: shadow_pattern(hash(&[seed, 6]), 0.0, 140.0, 0.45),
        gain: 0.85,
        vehicles: vec![
            Vehicle {
                s: obs_arc[60] + 9.0,
                lateral: -1.75,
                length: 4.2,
                width: 1.8,
                height: 1.5,
                albedo: [0.6, 0.1, 0.08],
                frames: (30, 61),
            },
            Vehicle {
                s: obs_arc[80] + 14.0,
                lateral: 1.75,
                length: 4.5,
                width: 1.9,
                height: 1.6,
                albedo: [0.12, 0.2, 0.55],
                frames: (66, 90),
            },
        ],
        model_violation: 0.0,
    };
    PairSpec {
        scene,
        reference,
        observed,
    }
}

fn symmetric_preset(seed: u64) -> PairSpec {
    let scene = street_scene(seed);
    let speed = vec![1.0; 60];
    let ride = |start: f64, tag: u64| RideSpec {
        start,
        speed_profile: speed.clone(),
        jitter: ar_jitter(hash(&[seed, tag]), 60, 0.002),
        ..Default::default()
    };
    PairSpec {
        reference: ride(10.0, 3),
        observed: ride(10.3, 4),
        scene,
    }
}

impl Default for RideSpec {
    fn default() -> Self {
        Self {
            start: 0.0,
            speed_profile: Vec::new(),
            jitter: Vec::new(),
            shadows: Vec::new(),
            gain: 1.0,
            vehicles: Vec::new(),
            model_violation: 0.0,
        }
    }
}

/// Parses a synth spec file: `preset` and `seed` pick a preset, further
/// keys override it (`width`, `height`, `focal_px`, `theta`,
/// `noise_sigma`, `supersample`, `texture_scale`, `model_violation`,
/// `vehicles`, `shadows`, `reference_frames`, `observed_frames`).
pub fn parse_spec(text: &str) -> Result<PairSpec> {
    let pairs = parse_pairs(text)?;
    let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let num = |k: &str| -> Result<Option<f64>> {
        get(k)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("{k}: '{v}' is not a number"))))
            .transpose()
    };
    let int = |k: &str| -> Result<Option<usize>> {
        get(k)
            .map(|v| v.parse::<usize>().map_err(|_| Error::Config(format!("{k}: '{v}' is not an integer"))))
            .transpose()
    };
    let flag = |k: &str| -> Result<Option<bool>> {
        get(k)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("{k}: '{v}' is not a boolean"))),
            })
            .transpose()
    };
    let seed = get("seed")
        .map(|v| v.parse::<u64>().map_err(|_| Error::Config(format!("seed: '{v}' is not an integer"))))
        .transpose()?
        .unwrap_or(1);
    let mut spec = preset(get("preset").unwrap_or("street"), seed)?;
    for (k, _) in &pairs {
        const KNOWN: [&str; 14] = [
            "preset",
            "seed",
            "width",
            "height",
            "focal_px",
            "theta",
            "noise_sigma",
            "supersample",
            "texture_scale",
            "model_violation",
            "vehicles",
            "shadows",
            "reference_frames",
            "observed_frames",
        ];
        if !KNOWN.contains(&k.as_str()) {
            log::warn!("synth spec: ignoring unknown key '{k}'");
        }
    }
    let s = &mut spec.scene;
    if let Some(v) = int("width")? {
        s.width = v;
    }
    if let Some(v) = int("height")? {
        s.height = v;
    }
    if let Some(v) = num("focal_px")? {
        s.focal_px = v;
    }
    if let Some(v) = num("theta")? {
        s.theta = v;
    }
    if let Some(v) = num("noise_sigma")? {
        s.noise_sigma = v;
    }
    if let Some(v) = int("supersample")? {
        s.supersample = v;
    }
    if let Some(v) = num("texture_scale")? {
        s.texture_scale = v;
    }
    if let Some(v) = num("model_violation")? {
        spec.observed.model_violation = v;
        spec.reference.model_violation = v;
    }
    if flag("vehicles")? == Some(false) {
        spec.observed.vehicles.clear();
    }
    if flag("shadows")? == Some(false) {
        spec.observed.shadows.clear();
        spec.reference.shadows.clear();
    }
    for (key, ride) in [
        ("reference_frames", &mut spec.reference),
        ("observed_frames", &mut spec.observed),
    ] {
        if let Some(n) = int(key)? {
            if n == 0 || n > ride.frame_count() {
                return Err(Error::Config(format!(
                    "{key} must lie in 1..={}",
                    ride.frame_count()
                )));
            }
            ride.speed_profile.truncate(n);
            if !ride.jitter.is_empty() {
                ride.jitter.truncate(n);
            }
        }
    }
    spec.scene.validate()?;
    spec.reference.validate()?;
    spec.observed.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariant::{rgb_to_invariant, InvariantDirection};

    fn small_scene() -> SceneSpec {
        SceneSpec {
            width: 96,
            height: 72,
            focal_px: 80.0,
            supersample: 1,
            noise_sigma: 0.0,
            ..street_scene(5)
        }
    }

    fn ride(frames: usize) -> RideSpec {
        RideSpec {
            start: 10.0,
            speed_profile: vec![1.0; frames],
            ..Default::default()
        }
    }

    #[test]
    fn identical_rides_give_identity_truth() {
        let scene = small_scene();
        let pair = render_pair(&scene, &ride(6), &ride(6), Exec::default()).unwrap();
        assert_eq!(pair.truth.correspondence, vec![0, 1, 2, 3, 4, 5]);
        for w in &pair.truth.omega_true {
            assert!(w.iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!(pair.reference.frames[3], pair.observed.frames[3]);
    }

    #[test]
    fn duplicated_frames_halve_correspondence() {
        let slow = RideSpec {
            start: 10.0,
            speed_profile: (0..12).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect(),
            ..Default::default()
        };
        let s_ref = ride(6).arc_lengths();
        let s_obs = slow.arc_lengths();
        let corr = nearest_correspondence(&s_ref, &s_obs);
        assert_eq!(corr, (0..12).map(|t| t / 2).collect::<Vec<_>>());
    }

    #[test]
    fn jitter_shows_in_truth_omega() {
        let scene = small_scene();
        let mut obs = ride(3);
        obs.jitter = vec![[0.01, -0.005, 0.003]; 3];
        let world = World::build(&scene).unwrap();
        let r = render_ride(&world, &ride(3), 1, Exec::Sequential).unwrap();
        let o = render_ride(&world, &obs, 2, Exec::Sequential).unwrap();
        let truth = ground_truth(&r, &o, scene.theta);
        for w in truth.omega_true {
            assert!((w[0] - 0.01).abs() < 1e-9);
            assert!((w[1] + 0.005).abs() < 1e-9);
            assert!((w[2] - 0.003).abs() < 1e-9);
        }
    }

    #[test]
    fn shadow_cancels_in_invariant_image() {
        let scene = small_scene();
        let plain = ride(1);
        let mut shaded = ride(1);
        shaded.shadows = vec![ShadowBand {
            s_start: 0.0,
            s_end: 200.0,
            attenuation: 0.5,
            half_width: 30.0,
        }];
        let world = World::build(&scene).unwrap();
        let a = render_ride(&world, &plain, 1, Exec::Sequential).unwrap();
        let b = render_ride(&world, &shaded, 1, Exec::Sequential).unwrap();
        assert_ne!(a.frames[0], b.frames[0]);
        let dir = InvariantDirection::new(scene.theta).unwrap();
        let ia = rgb_to_invariant(&a.frames[0], dir);
        let ib = rgb_to_invariant(&b.frames[0], dir);
        let mad: f64 = ia
            .data()
            .iter()
            .zip(ib.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / ia.data().len() as f64;
        assert!(mad < 0.01, "mean abs difference {mad}");
    }

    #[test]
    fn vehicle_removed_from_truth_mask() {
        let scene = small_scene();
        let mut with = ride(2);
        with.vehicles = vec![Vehicle {
            s: 20.0,
            lateral: -1.75,
            length: 4.0,
            width: 1.8,
            height: 1.5,
            albedo: [0.5, 0.1, 0.1],
            frames: (1, 2),
        }];
        let world = World::build(&scene).unwrap();
        let a = render_ride(&world, &ride(2), 1, Exec::Sequential).unwrap();
        let b = render_ride(&world, &with, 1, Exec::Sequential).unwrap();
        assert_eq!(a.masks[0], b.masks[0]);
        assert!(b.masks[1].is_subset_of(&a.masks[1]));
        assert!(a.masks[1].count() > b.masks[1].count() + 20);
    }

    #[test]
    fn rendering_is_policy_independent() {
        let scene = small_scene();
        let world = World::build(&scene).unwrap();
        let a = render_ride(&world, &ride(3), 1, Exec::Sequential).unwrap();
        let b = render_ride(&world, &ride(3), 1, Exec::default()).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn presets_are_valid() {
        let street = preset("street", 1).unwrap();
        assert_eq!(street.reference.frame_count(), 120);
        assert_eq!(street.observed.frame_count(), 90);
        assert!(street.observed.speed_profile.contains(&0.0));
        assert!(!street.observed.shadows.is_empty());
        street.observed.validate().unwrap();
        let obs_end = *street.observed.arc_lengths().last().unwrap();
        let ref_end = *street.reference.arc_lengths().last().unwrap();
        assert!(obs_end < ref_end);
        preset("symmetric", 1).unwrap();
        assert!(preset("highway", 1).is_err());
    }

    #[test]
    fn spec_overrides() {
        let spec = parse_spec("preset = street\nseed = 9\nwidth = 64\nheight = 48\nvehicles = false\nobserved_frames = 20\n").unwrap();
        assert_eq!(spec.scene.seed, 9);
        assert_eq!(spec.scene.width, 64);
        assert!(spec.observed.vehicles.is_empty());
        assert_eq!(spec.observed.frame_count(), 20);
        assert!(parse_spec("preset = nowhere").is_err());
        assert!(parse_spec("width = wide").is_err());
    }

    #[test]
    fn invalid_rides_rejected() {
        let mut r = ride(3);
        r.speed_profile[1] = -0.5;
        assert!(r.validate().is_err());
        let mut r = ride(3);
        r.jitter = vec![[0.03, 0.0, 0.0]; 3];
        assert!(r.validate().is_err());
        let mut r = ride(3);
        r.shadows.push(ShadowBand {
            s_start: 0.0,
            s_end: 1.0,
            attenuation: 0.0,
            half_width: 1.0,
        });
        assert!(r.validate().is_err());
    }
}
