//! Plain-text `key = value` pipeline configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! reported with a warning and skipped. Later lines override earlier ones.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::descriptor::DescriptorParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::spatial::{CameraIntrinsics, LkSettings};
use crate::temporal::SyncConfig;
use crate::transfer::{Connectivity, RefineSettings};

/// Image on which descriptors are computed or frames are differenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Illuminant-invariant gray image.
    Invariant,
    /// Plain intensity.
    Gray,
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(Space::Invariant),
            "gray" | "grey" => Ok(Space::Gray),
            _ => Err(Error::Config(format!(
                "expected 'invariant' or 'gray', got '{s}'"
            ))),
        }
    }
}

/// Splits a `key = value` text into pairs, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                n + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Settings shared by the `align` and `groundtruth` commands.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Invariant direction, radians. Required.
    pub theta: Option<f64>,
    /// Focal length in pixels. Required.
    pub focal_px: Option<f64>,
    /// Principal point; the image center when absent.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub lag: usize,
    pub window: usize,
    pub beta: f64,
    pub band: Option<usize>,
    pub descriptor: DescriptorParams,
    pub lk: LkSettings,
    pub refine: RefineSettings,
    pub descriptor_space: Space,
    pub diff_space: Space,
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: None,
            focal_px: None,
            cx: None,
            cy: None,
            lag: 5,
            window: 10,
            beta: 1.0,
            band: None,
            descriptor: DescriptorParams::default(),
            lk: LkSettings::default(),
            refine: RefineSettings::default(),
            descriptor_space: Space::Invariant,
            diff_space: Space::Invariant,
            exec: Exec::default(),
        }
    }
}

/// Every recognized key with its default, as shown by `--help`.
pub const KEYS_HELP: &str = "\
theta                   invariant direction, radians (required)
focal_px                focal length, pixels (required)
cx, cy                  principal point (default: image center)
lag                     emission delay, frames (5)
window                  observations per inference window (10)
beta                    transition weight (1)
band                    label band around the last emitted label (unbounded)
smooth_sigma            descriptor pre-smoothing (2)
downsample_factor       descriptor block size (16)
gradient_floor_ratio    relative gradient floor (0.05)
max_shift               descriptor shift search, cells (2)
mu_y, sigma_y           similarity likelihood (1, 0.5)
pyramid_levels          alignment pyramid depth (3)
max_iterations          alignment iterations per level (50)
convergence_eps         alignment step tolerance, radians (1e-7)
robust_skip             alignment border, pixels (2)
fill_hole_connectivity  4 or 8 (4)
min_blob_px             smallest kept foreground blob (25)
histogram_bins          Otsu bins (256)
descriptor_space        invariant | gray (invariant)
diff_space              invariant | gray (invariant)
parallel                true | false (true)";

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one key. Unknown keys only warn.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "theta" => self.theta = Some(parse_value(key, v)?),
            "focal_px" => self.focal_px = Some(parse_value(key, v)?),
            "cx" => self.cx = Some(parse_value(key, v)?),
            "cy" => self.cy = Some(parse_value(key, v)?),
            "lag" => self.lag = parse_value(key, v)?,
            "window" => self.window = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "band" => self.band = Some(parse_value(key, v)?),
            "smooth_sigma" => self.descriptor.smooth_sigma = parse_value(key, v)?,
            "downsample_factor" => self.descriptor.downsample_factor = parse_value(key, v)?,
            "gradient_floor_ratio" => self.descriptor.gradient_floor_ratio = parse_value(key, v)?,
            "max_shift" => self.descriptor.max_shift = parse_value(key, v)?,
            "mu_y" => self.descriptor.mu_y = parse_value(key, v)?,
            "sigma_y" => self.descriptor.sigma_y = parse_value(key, v)?,
            "pyramid_levels" => self.lk.pyramid_levels = parse_value(key, v)?,
            "max_iterations" => self.lk.max_iterations = parse_value(key, v)?,
            "convergence_eps" => self.lk.convergence_eps = parse_value(key, v)?,
            "robust_skip" => self.lk.robust_skip = parse_value(key, v)?,
            "fill_hole_connectivity" => {
                self.refine.fill_hole_connectivity = Connectivity::from_count(parse_value(key, v)?)
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "min_blob_px" => self.refine.min_blob_px = parse_value(key, v)?,
            "histogram_bins" => self.refine.histogram_bins = parse_value(key, v)?,
            "descriptor_space" => self.descriptor_space = v.parse()?,
            "diff_space" => self.diff_space = v.parse()?,
            "parallel" => {
                self.exec = if parse_bool(key, v)? {
                    Exec::default()
                } else {
                    Exec::Sequential
                };
            }
            _ => log::warn!("config: ignoring unknown key '{key}'"),
        }
        self.lk.exec = self.exec;
        Ok(())
    }

    pub fn theta(&self) -> Result<f64> {
        self.theta
            .ok_or_else(|| Error::Config("theta is required (config key 'theta' or --theta)".into()))
    }

    /// Intrinsics for frames of the given size.
    pub fn intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let f = self
            .focal_px
            .ok_or_else(|| Error::Config("focal_px is required (config key 'focal_px' or --focal)".into()))?;
        let k = CameraIntrinsics::new(
            f,
            self.cx.unwrap_or((width as f64 - 1.0) / 2.0),
            self.cy.unwrap_or((height as f64 - 1.0) / 2.0),
        )?;
        k.check_inside(width, height)?;
        Ok(k)
    }

    pub fn sync_config(&self, label_count: usize) -> SyncConfig {
        SyncConfig {
            lag: self.lag,
            window: self.window,
            beta: self.beta,
            label_count,
            candidate_band: self.band,
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let theta = self.theta()?;
        if !theta.is_finite() {
            return Err(Error::Config("theta must be finite".into()));
        }
        match self.focal_px {
            None => {
                return Err(Error::Config(
                    "focal_px is required (config key 'focal_px' or --focal)".into(),
                ))
            }
            Some(f) if !(f > 0.0 && f.is_finite()) => {
                return Err(Error::Config("focal_px must be positive".into()))
            }
            _ => {}
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.sync_config(1).validate().map_err(wrap)?;
        self.descriptor.validate().map_err(wrap)?;
        self.lk.validate().map_err(wrap)?;
        if self.refine.histogram_bins < 2 {
            return Err(Error::Config("histogram_bins must be at least 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = PipelineConfig::parse(
            "# scene\ntheta = 0.9\nfocal_px=260\n\nlag = 3\nwindow = 6\nband = 20\ndiff_space = gray\nparallel = false\nfill_hole_connectivity = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.theta, Some(0.9));
        assert_eq!(cfg.focal_px, Some(260.0));
        assert_eq!((cfg.lag, cfg.window, cfg.band), (3, 6, Some(20)));
        assert_eq!(cfg.diff_space, Space::Gray);
        assert_eq!(cfg.descriptor_space, Space::Invariant);
        assert_eq!(cfg.exec, Exec::Sequential);
        assert_eq!(cfg.lk.exec, Exec::Sequential);
        assert_eq!(cfg.refine.fill_hole_connectivity, Connectivity::Eight);
        cfg.validate().unwrap();
    }

    #[test]
    fn later_lines_win() {
        let cfg = PipelineConfig::parse("lag = 2\nlag = 4\n").unwrap();
        assert_eq!(cfg.lag, 4);
    }

    #[test]
    fn unknown_key_is_not_an_error() {
        assert!(PipelineConfig::parse("colour = blue\n").is_ok());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(PipelineConfig::parse("theta 0.9\n").is_err());
        assert!(PipelineConfig::parse("theta = abc\n").is_err());
        assert!(PipelineConfig::parse("= 3\n").is_err());
        assert!(PipelineConfig::parse("diff_space = rgb\n").is_err());
        assert!(PipelineConfig::parse("fill_hole_connectivity = 6\n").is_err());
    }

    #[test]
    fn missing_required_values() {
        let cfg = PipelineConfig::parse("focal_px = 500\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = PipelineConfig::parse("theta = 1\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(cfg.intrinsics(32, 32).is_err());
    }

    #[test]
    fn window_shorter_than_lag_rejected() {
        let cfg = PipelineConfig::parse("theta = 1\nfocal_px = 100\nlag = 6\nwindow = 4\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn principal_point_defaults_to_center() {
        let cfg = PipelineConfig::parse("focal_px = 100\n").unwrap();
        let k = cfg.intrinsics(320, 240).unwrap();
        assert_eq!((k.cx, k.cy), (159.5, 119.5));
    }
}
