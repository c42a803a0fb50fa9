//! Road centerline: a Catmull-Rom curve through the control points,
//! resampled at a fixed arc-length step.

use std::collections::HashMap;

use crate::error::{Error, Result};

const STEP: f64 = 1.0;
const CELL: f64 = 4.0;
/// Farthest lateral distance at which ground points are related to the track.
pub const TRACK_REACH: f64 = 14.0;

#[derive(Debug, Clone)]
pub struct Track {
    points: Vec<[f64; 2]>,
    grid: HashMap<(i64, i64), Vec<u32>>,
}

/// Position of a ground point relative to the track.
#[derive(Debug, Clone, Copy)]
pub struct TrackCoord {
    /// Arc length of the closest centerline point.
    pub s: f64,
    /// Signed distance, positive to the left of the direction of travel.
    pub lateral: f64,
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    [0, 1].map(|i| {
        0.5 * (2.0 * p1[i]
            + (-p0[i] + p2[i]) * t
            + (2.0 * p0[i] - 5.0 * p1[i] + 4.0 * p2[i] - p3[i]) * t2
            + (-p0[i] + 3.0 * p1[i] - 3.0 * p2[i] + p3[i]) * t3)
    })
}

fn cell_of(p: [f64; 2]) -> (i64, i64) {
    ((p[0] / CELL).floor() as i64, (p[1] / CELL).floor() as i64)
}

impl Track {
    pub fn new(control: &[[f64; 2]]) -> Result<Self> {
        if control.len() < 2 {
            return Err(Error::InvalidParameter(
                "track needs at least two control points".into(),
            ));
        }
        // Dense curve, then uniform arc-length resampling.
        let n = control.len();
        let get = |i: isize| control[i.clamp(0, n as isize - 1) as usize];
        let mut dense = Vec::new();
        for i in 0..n - 1 {
            let i = i as isize;
            for k in 0..64 {
                dense.push(catmull_rom(get(i - 1), get(i), get(i + 1), get(i + 2), k as f64 / 64.0));
            }
        }
        dense.push(control[n - 1]);
        let mut cum = vec![0.0];
        for w in dense.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        if !(total > STEP) {
            return Err(Error::InvalidParameter("track is degenerate".into()));
        }
        let mut points = Vec::new();
        let mut j = 0;
        let count = (total / STEP).floor() as usize;
        for k in 0..=count {
            let s = k as f64 * STEP;
            while j + 1 < cum.len() - 1 && cum[j + 1] < s {
                j += 1;
            }
            let span = cum[j + 1] - cum[j];
            let t = if span > 0.0 { (s - cum[j]) / span } else { 0.0 };
            points.push([
                dense[j][0] + t * (dense[j + 1][0] - dense[j][0]),
                dense[j][1] + t * (dense[j + 1][1] - dense[j][1]),
            ]);
        }
        let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, w) in points.windows(2).enumerate() {
            let lo = cell_of([
                w[0][0].min(w[1][0]) - TRACK_REACH,
                w[0][1].min(w[1][1]) - TRACK_REACH,
            ]);
            let hi = cell_of([
                w[0][0].max(w[1][0]) + TRACK_REACH,
                w[0][1].max(w[1][1]) + TRACK_REACH,
            ]);
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    grid.entry((cx, cy)).or_default().push(i as u32);
                }
            }
        }
        Ok(Self { points, grid })
    }

    pub fn length(&self) -> f64 {
        (self.points.len() - 1) as f64 * STEP
    }

    /// Centerline position and heading (radians from +x) at arc length `s`.
    pub fn pose(&self, s: f64) -> Result<([f64; 2], f64)> {
        if !(0.0..=self.length()).contains(&s) {
            return Err(Error::InvalidParameter(format!(
                "arc length {s:.2} outside track [0, {:.2}]",
                self.length()
            )));
        }
        let i = ((s / STEP).floor() as usize).min(self.points.len() - 2);
        let t = s / STEP - i as f64;
        let (a, b) = (self.points[i], self.points[i + 1]);
        let pos = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        // Blend neighbouring segment headings to avoid steps.
        let heading_of = |k: usize| {
            let (p, q) = (self.points[k], self.points[k + 1]);
            (q[1] - p[1]).atan2(q[0] - p[0])
        };
        let h0 = heading_of(i);
        let h1 = heading_of((i + 1).min(self.points.len() - 2));
        let mut dh = h1 - h0;
        if dh > std::f64::consts::PI {
            dh -= 2.0 * std::f64::consts::PI;
        } else if dh < -std::f64::consts::PI {
            dh += 2.0 * std::f64::consts::PI;
        }
        Ok((pos, h0 + t * dh))
    }

    /// World position at arc length `s` shifted `lateral` meters to the left.
    pub fn point_at(&self, s: f64, lateral: f64) -> Result<([f64; 2], f64)> {
        let (p, h) = self.pose(s)?;
        Ok(([p[0] - lateral * h.sin(), p[1] + lateral * h.cos()], h))
    }

    /// Closest centerline point, if the track passes within reach.
    pub fn locate(&self, p: [f64; 2]) -> Option<TrackCoord> {
        let segs = self.grid.get(&cell_of(p))?;
        let mut best: Option<(f64, TrackCoord)> = None;
        for &i in segs {
            let i = i as usize;
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
            let (ex, ey) = (p[0] - qx, p[1] - qy);
            let d2 = ex * ex + ey * ey;
            if best.as_ref().is_none_or(|(bd, _)| d2 < *bd) {
                let side = (dx * ey - dy * ex).signum();
                best = Some((
                    d2,
                    TrackCoord {
                        s: (i as f64 + t) * STEP,
                        lateral: side * d2.sqrt(),
                    },
                ));
            }
        }
        best.map(|(_, c)| c)
    }
}
