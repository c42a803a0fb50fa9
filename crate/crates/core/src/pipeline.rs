//! End-to-end commands: on-line road detection, off-line label transfer and
//! evaluation, in memory and on frame directories.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{PipelineConfig, Space};
use crate::descriptor::{compute_descriptor, Descriptor};
use crate::error::{Error, Result};
use crate::eval::{aggregate, contingency, metrics, report_csv, Aggregate, ContingencyTable};
use crate::image::{load_mask, load_rgb, save_mask};
use crate::image::{BinaryMask, ImageGray, ImageRgb};
use crate::invariant::{quantile_range, rescale_between, rgb_to_invariant, rgb_to_invariant_raw, InvariantDirection};
use crate::spatial::{lk_align, CameraIntrinsics, RotationParams};
use crate::synth::{frame_name, mask_name};
use crate::temporal::{synchronize_offline, Synchronizer};
use crate::transfer::{transfer, Transfer};

/// Projects a color frame into the given space.
pub fn to_space(img: &ImageRgb, space: Space, dir: InvariantDirection) -> ImageGray {
    match space {
        Space::Invariant => rgb_to_invariant(img, dir),
        Space::Gray => img.to_gray(),
    }
}

/// Fraction of pixels clipped at each end when the invariant image of a
/// reference frame sets the intensity range of a pair.
const RANGE_TAIL: f64 = 0.005;

/// The two projections of a frame used downstream.
struct Prepared {
    descriptor: Descriptor,
    /// Unnormalized image used for alignment and differencing.
    image: ImageGray,
}

fn prepare(img: &ImageRgb, cfg: &PipelineConfig, dir: InvariantDirection) -> Result<Prepared> {
    let descriptor = compute_descriptor(&to_space(img, cfg.descriptor_space, dir), &cfg.descriptor)?;
    let image = match cfg.diff_space {
        Space::Invariant => rgb_to_invariant_raw(img, dir),
        Space::Gray => img.to_gray(),
    };
    Ok(Prepared { descriptor, image })
}

/// Intensity range shared by both images of a pair, taken from the
/// reference frame so that the two are directly comparable.
fn pair_range(reference: &ImageGray, space: Space) -> (f64, f64) {
    match space {
        Space::Invariant => quantile_range(reference, RANGE_TAIL),
        Space::Gray => (0.0, 1.0),
    }
}

/// Reference ride prepared for alignment: descriptors, difference-space
/// images and road masks.
pub struct ReferenceSet {
    descriptors: Vec<Descriptor>,
    images: Vec<ImageGray>,
    ranges: Vec<(f64, f64)>,
    masks: Vec<BinaryMask>,
    dims: (usize, usize),
}

impl ReferenceSet {
    pub fn new(frames: &[ImageRgb], masks: Vec<BinaryMask>, cfg: &PipelineConfig) -> Result<Self> {
        let dir = InvariantDirection::new(cfg.theta()?)?;
        if frames.is_empty() {
            return Err(Error::Data("reference sequence is empty".into()));
        }
        if frames.len() != masks.len() {
            return Err(Error::Data(format!(
                "{} reference frames but {} masks",
                frames.len(),
                masks.len()
            )));
        }
        let dims = frames[0].dims();
        for (i, (f, m)) in frames.iter().zip(&masks).enumerate() {
            if f.dims() != dims || m.dims() != dims {
                return Err(Error::DimensionMismatch(format!("reference frame {i}")));
            }
        }
        let prepared = cfg
            .exec
            .map(frames, |f| prepare(f, cfg, dir))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let (descriptors, images): (Vec<_>, Vec<_>) =
            prepared.into_iter().map(|p| (p.descriptor, p.image)).unzip();
        let ranges = images.iter().map(|i| pair_range(i, cfg.diff_space)).collect();
        Ok(Self {
            descriptors,
            images,
            ranges,
            masks,
            dims,
        })
    }

    /// Loads `frame_%06d.ppm` and `mask_%06d.pgm` from a directory.
    pub fn load(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let frames = load_frames(dir)?;
        let masks = (0..frames.len())
            .map(|i| load_mask(dir.join(mask_name(i))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(&frames, masks, cfg)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }
}

/// Successful processing of one observed frame.
#[derive(Debug, Clone)]
pub struct Aligned {
    pub label: usize,
    pub score: f64,
    pub omega: RotationParams,
    pub residual: f64,
    pub transfer: Transfer,
}

/// Outcome for one observed frame; failures are kept per frame.
#[derive(Debug)]
pub struct FrameResult {
    pub observed_index: usize,
    pub outcome: Result<Aligned>,
}

fn align_and_transfer(
    reference: &ReferenceSet,
    label: usize,
    score: f64,
    observed: &ImageGray,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<Aligned> {
    let (lo, hi) = reference.ranges[label];
    let ref_img = &rescale_between(&reference.images[label], lo, hi);
    let observed = &rescale_between(observed, lo, hi);
    let report = lk_align(ref_img, observed, k, &cfg.lk, RotationParams::zero())?;
    if !report.residual.is_finite() {
        return Err(Error::AlignmentFailure("non-finite residual".into()));
    }
    let t = transfer(
        &reference.masks[label],
        ref_img,
        observed,
        &report.omega,
        k,
        &cfg.refine,
    )?;
    Ok(Aligned {
        label,
        score,
        omega: report.omega,
        residual: report.residual,
        transfer: t,
    })
}

/// Streaming road detector: each pushed observed frame yields the result
/// for the frame `lag` positions earlier.
pub struct OnlineAligner<'a> {
    reference: &'a ReferenceSet,
    cfg: PipelineConfig,
    dir: InvariantDirection,
    k: CameraIntrinsics,
    sync: Synchronizer<'a>,
    pending: VecDeque<ImageGray>,
}

impl<'a> OnlineAligner<'a> {
    pub fn new(reference: &'a ReferenceSet, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = InvariantDirection::new(cfg.theta()?)?;
        let (w, h) = reference.dims;
        let k = cfg.intrinsics(w, h)?;
        let sync = Synchronizer::new(
            &reference.descriptors,
            cfg.sync_config(reference.len()),
            cfg.descriptor,
            cfg.exec,
        )?;
        Ok(Self {
            reference,
            cfg: cfg.clone(),
            dir,
            k,
            sync,
            pending: VecDeque::with_capacity(cfg.lag + 1),
        })
    }

    /// Number of observed frames pushed so far.
    pub fn frames_seen(&self) -> usize {
        self.sync.frames_seen()
    }

    /// Processes observed frame `t`; returns the result for `t - lag` once
    /// `t >= lag`. Errors only when the frame cannot enter the stream.
    pub fn push(&mut self, frame: &ImageRgb) -> Result<Option<FrameResult>> {
        if frame.dims() != self.reference.dims {
            return Err(Error::DimensionMismatch(format!(
                "observed frame {:?} vs reference {:?}",
                frame.dims(),
                self.reference.dims
            )));
        }
        let p = prepare(frame, &self.cfg, self.dir)?;
        self.pending.push_back(p.image);
        let t = self.sync.frames_seen();
        let emitted = self.sync.push(&p.descriptor);
        if t < self.cfg.lag {
            return emitted.map(|_| None);
        }
        let observed = self
            .pending
            .pop_front()
            .expect("buffer holds lag + 1 frames");
        let observed_index = t - self.cfg.lag;
        let outcome = match emitted {
            Ok(Some(e)) => {
                debug_assert_eq!(e.observed_index, observed_index);
                align_and_transfer(self.reference, e.label, e.score, &observed, &self.k, &self.cfg)
            }
            Ok(None) => unreachable!("synchronizer emits once the lag is filled"),
            Err(e) => Err(e),
        };
        if let Err(e) = &outcome {
            log::warn!("frame {observed_index}: {e}");
        }
        Ok(Some(FrameResult {
            observed_index,
            outcome,
        }))
    }
}

/// Runs the on-line detector over a complete observed stream.
pub fn align_online(
    reference: &ReferenceSet,
    observed: &[ImageRgb],
    cfg: &PipelineConfig,
) -> Result<Vec<FrameResult>> {
    let mut aligner = OnlineAligner::new(reference, cfg)?;
    let mut out = Vec::with_capacity(observed.len());
    for f in observed {
        if let Some(r) = aligner.push(f)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Off-line label transfer: synchronizes the complete observed sequence at
/// once and transfers a mask to every frame.
pub fn align_offline(
    reference: &ReferenceSet,
    observed: &[ImageRgb],
    cfg: &PipelineConfig,
) -> Result<Vec<FrameResult>> {
    cfg.validate()?;
    if observed.is_empty() {
        return Err(Error::Data("observed sequence is empty".into()));
    }
    let dir = InvariantDirection::new(cfg.theta()?)?;
    let (w, h) = reference.dims;
    let k = cfg.intrinsics(w, h)?;
    for (i, f) in observed.iter().enumerate() {
        if f.dims() != reference.dims {
            return Err(Error::DimensionMismatch(format!("observed frame {i}")));
        }
    }
    let prepared = cfg
        .exec
        .map(observed, |f| prepare(f, cfg, dir))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let descriptors: Vec<Descriptor> = prepared.iter().map(|p| p.descriptor.clone()).collect();
    let sync = synchronize_offline(
        &descriptors,
        &reference.descriptors,
        cfg.sync_config(reference.len()),
        cfg.descriptor,
        cfg.exec,
    )?;
    let mut inner = cfg.clone();
    inner.lk.exec = crate::exec::Exec::Sequential;
    let results = cfg.exec.map(&sync.emitted, |e| FrameResult {
        observed_index: e.observed_index,
        outcome: align_and_transfer(
            reference,
            e.label,
            e.score,
            &prepared[e.observed_index].image,
            &k,
            &inner,
        ),
    });
    for r in &results {
        if let Err(e) = &r.outcome {
            log::warn!("frame {}: {e}", r.observed_index);
        }
    }
    Ok(results)
}

/// Frame files `frame_%06d.ppm` of a directory, checked to be contiguous
/// from 0.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut indices = indexed_files(dir, "frame_", ".ppm")?;
    indices.sort_unstable();
    for (expect, &i) in indices.iter().enumerate() {
        if i != expect {
            return Err(Error::Data(format!(
                "{}: frame {expect} missing",
                dir.display()
            )));
        }
    }
    Ok(indices.iter().map(|&i| dir.join(frame_name(i))).collect())
}

fn indexed_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(i) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(suffix))
            .and_then(|n| n.parse::<usize>().ok())
        {
            out.push(i);
        }
    }
    Ok(out)
}

pub fn load_frames(dir: &Path) -> Result<Vec<ImageRgb>> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no frame_*.ppm files", dir.display())));
    }
    paths.iter().map(load_rgb).collect()
}

/// Counts from writing a run to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub written: usize,
    pub failed: usize,
}

fn write_results(results: &[FrameResult], out: &Path, refine: bool) -> Result<RunSummary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = String::from(
        "observed_index,reference_label,score,omega_x,omega_y,omega_z,residual\n",
    );
    let mut summary = RunSummary {
        written: 0,
        failed: 0,
    };
    for r in results {
        match &r.outcome {
            Ok(a) => {
                let mask = if refine {
                    &a.transfer.refined
                } else {
                    &a.transfer.transferred
                };
                save_mask(mask, out.join(mask_name(r.observed_index)))?;
                let [x, y, z] = a.omega.to_array();
                let _ = writeln!(
                    csv,
                    "{},{},{:.6},{:.9},{:.9},{:.9},{:.6e}",
                    r.observed_index, a.label, a.score, x, y, z, a.residual
                );
                summary.written += 1;
            }
            Err(_) => summary.failed += 1,
        }
    }
    let path = out.join("sync.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// On-line detection over frame directories. Observed frames are read and
/// processed one at a time. The last `lag` frames have no emission and get
/// no mask.
pub fn run_align(
    ref_dir: &Path,
    obs_dir: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    refine: bool,
) -> Result<RunSummary> {
    cfg.validate()?;
    let obs_paths = list_frames(obs_dir)?;
    if obs_paths.is_empty() {
        return Err(Error::Data(format!("{}: no frame_*.ppm files", obs_dir.display())));
    }
    let reference = ReferenceSet::load(ref_dir, cfg)?;
    let mut aligner = OnlineAligner::new(&reference, cfg)?;
    let mut results = Vec::new();
    for p in &obs_paths {
        let frame = load_rgb(p)?;
        if let Some(r) = aligner.push(&frame)? {
            log::info!("frame {} done", r.observed_index);
            results.push(r);
        }
    }
    write_results(&results, out, refine)
}

/// Off-line label transfer over frame directories; `swap` exchanges the
/// roles of the two sequences.
pub fn run_groundtruth(
    ref_dir: &Path,
    obs_dir: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    refine: bool,
    swap: bool,
) -> Result<RunSummary> {
    cfg.validate()?;
    let (ref_dir, obs_dir) = if swap { (obs_dir, ref_dir) } else { (ref_dir, obs_dir) };
    let observed = load_frames(obs_dir)?;
    let reference = ReferenceSet::load(ref_dir, cfg)?;
    let results = align_offline(&reference, &observed, cfg)?;
    write_results(&results, out, refine)
}

/// Per-frame tables and their aggregate.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub frames: Vec<(usize, ContingencyTable)>,
    pub aggregate: Aggregate,
    pub csv: String,
}

/// Scores paired masks.
pub fn evaluate(pairs: &[(usize, &BinaryMask, &BinaryMask)]) -> Result<EvalReport> {
    let frames = pairs
        .iter()
        .map(|(i, result, truth)| Ok((*i, contingency(result, truth)?)))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<_> = frames.iter().map(|(_, t)| metrics(t)).collect();
    Ok(EvalReport {
        aggregate: aggregate(&sets)?,
        csv: report_csv(&frames)?,
        frames,
    })
}

/// Compares every `mask_%06d.pgm` of `result_dir` with the same file in
/// `truth_dir`.
pub fn run_eval(result_dir: &Path, truth_dir: &Path) -> Result<EvalReport> {
    let mut indices = indexed_files(result_dir, "mask_", ".pgm")?;
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::Data(format!("{}: no mask_*.pgm files", result_dir.display())));
    }
    let missing: Vec<String> = indices
        .iter()
        .filter(|&&i| !truth_dir.join(mask_name(i)).is_file())
        .map(|&i| mask_name(i))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} result frame(s) have no ground truth in {}: {}",
            missing.len(),
            truth_dir.display(),
            missing.join(", ")
        )));
    }
    let masks = indices
        .iter()
        .map(|&i| {
            Ok((
                i,
                load_mask(result_dir.join(mask_name(i)))?,
                load_mask(truth_dir.join(mask_name(i)))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = masks.iter().map(|(i, r, t)| (*i, r, t)).collect();
    evaluate(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_pair, preset, SceneSpec};

    fn tiny() -> (SceneSpec, crate::synth::RideSpec) {
        let mut spec = preset("symmetric", 3).unwrap();
        spec.scene.width = 128;
        spec.scene.height = 96;
        spec.scene.focal_px = 104.0;
        spec.scene.supersample = 1;
        spec.scene.noise_sigma = 0.0;
        spec.reference.speed_profile.truncate(14);
        spec.reference.jitter.truncate(14);
        (spec.scene, spec.reference)
    }

    fn config(scene: &SceneSpec) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            theta: Some(scene.theta),
            focal_px: Some(scene.focal_px),
            ..PipelineConfig::default()
        };
        cfg.descriptor.downsample_factor = 8;
        cfg
    }

    #[test]
    fn self_alignment_reproduces_masks() {
        let (scene, ride) = tiny();
        let pair = render_pair(&scene, &ride, &ride, crate::Exec::default()).unwrap();
        let cfg = config(&scene);
        let reference = ReferenceSet::new(&pair.reference.frames, pair.reference.masks.clone(), &cfg).unwrap();
        let results = align_online(&reference, &pair.observed.frames, &cfg).unwrap();
        assert_eq!(results.len(), 14 - cfg.lag);
        for r in &results {
            let a = r.outcome.as_ref().unwrap();
            assert_eq!(a.label, r.observed_index);
            let m = &pair.reference.masks[r.observed_index];
            assert_eq!(a.transfer.transferred, *m, "omega {:?}", a.omega);
            assert_eq!(a.transfer.refined, *m, "foreground {}", a.transfer.foreground.count());
        }
        let offline = align_offline(&reference, &pair.observed.frames, &cfg).unwrap();
        assert_eq!(offline.len(), 14);
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let (scene, ride) = tiny();
        let pair = render_pair(&scene, &ride, &ride, crate::Exec::default()).unwrap();
        let cfg = config(&scene);
        let reference = ReferenceSet::new(&pair.reference.frames, pair.reference.masks.clone(), &cfg).unwrap();
        let mut aligner = OnlineAligner::new(&reference, &cfg).unwrap();
        let small = ImageRgb::new(16, 16, vec![[0.5; 3]; 256]).unwrap();
        assert!(aligner.push(&small).is_err());
    }

    #[test]
    fn eval_reports_missing_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (res, truth) = (dir.path().join("res"), dir.path().join("truth"));
        fs::create_dir_all(&res).unwrap();
        fs::create_dir_all(&truth).unwrap();
        let m = BinaryMask::filled(4, 4, true);
        save_mask(&m, res.join(mask_name(0))).unwrap();
        save_mask(&m, res.join(mask_name(1))).unwrap();
        save_mask(&m, truth.join(mask_name(0))).unwrap();
        let err = run_eval(&res, &truth).unwrap_err().to_string();
        assert!(err.contains("mask_000001.pgm"), "{err}");
        save_mask(&m, truth.join(mask_name(1))).unwrap();
        let rep = run_eval(&res, &truth).unwrap();
        assert_eq!(rep.frames.len(), 2);
        assert_eq!(rep.aggregate.quality.unwrap().mean, 1.0);
    }

    #[test]
    fn frame_listing_requires_contiguous_indices() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRgb::new(2, 2, vec![[0.5; 3]; 4]).unwrap();
        crate::image::save_rgb(&img, dir.path().join(frame_name(0))).unwrap();
        crate::image::save_rgb(&img, dir.path().join(frame_name(2))).unwrap();
        assert!(list_frames(dir.path()).is_err());
        crate::image::save_rgb(&img, dir.path().join(frame_name(1))).unwrap();
        assert_eq!(list_frames(dir.path()).unwrap().len(), 3);
    }
}
