//! On-line synchronization of an observed ride against a reference ride.
//!
//! Every observed frame `t` gets a reference label (a 0-based reference frame
//! index). Labels follow a chain whose transition prior forbids going
//! backwards; the label of frame `t - lag` is chosen by max-product over the
//! last `window + 1` observations, each window inferred from a uniform start.
//! All products are carried as sums of logarithms, with `-inf` for zeros.

use std::collections::VecDeque;

use crate::descriptor::{observation_likelihood, Descriptor, DescriptorParams};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// 0-based index of a reference frame.
pub type Label = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    /// Frames between arrival and emission of a label.
    pub lag: usize,
    /// Observations kept in the window besides the newest (`L`).
    pub window: usize,
    pub beta: f64,
    /// Number of reference frames.
    pub label_count: usize,
    /// Half-width of the label band kept around the last emitted label.
    pub candidate_band: Option<usize>,
}

impl SyncConfig {
    pub fn new(label_count: usize) -> Self {
        Self {
            lag: 5,
            window: 10,
            beta: 1.0,
            label_count,
            candidate_band: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < self.lag {
            return Err(Error::InvalidParameter(format!(
                "window ({}) must be at least the lag ({})",
                self.window, self.lag
            )));
        }
        if self.label_count == 0 {
            return Err(Error::InvalidParameter("reference sequence is empty".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("beta must be positive".into()));
        }
        Ok(())
    }
}

/// `p(x_next | x_prev)`: `beta` for standing still or moving forward, else 0.
pub fn transition_prior(next: Label, prev: Label, beta: f64, label_count: usize) -> Result<f64> {
    for label in [next, prev] {
        if label >= label_count {
            return Err(Error::LabelOutOfRange {
                label,
                count: label_count,
            });
        }
    }
    Ok(if next >= prev { beta } else { 0.0 })
}

/// Row-major `rows x labels` matrix of per-frame likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    rows: usize,
    labels: usize,
    data: Vec<f64>,
}

impl LikelihoodTable {
    pub fn new(rows: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || labels == 0 || data.len() != rows * labels {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{labels} likelihood table",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "likelihoods must be finite and non-negative".into(),
            ));
        }
        Ok(Self { rows, labels, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let labels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != labels) {
            return Err(Error::DimensionMismatch("ragged likelihood rows".into()));
        }
        Self::new(rows.len(), labels, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, row: usize, label: Label) -> f64 {
        self.data[row * self.labels + label]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.labels..(row + 1) * self.labels]
    }

    /// Zeroes every entry farther than `band` from `center`.
    pub fn apply_band(&mut self, center: Label, band: usize) {
        let lo = center.saturating_sub(band);
        let hi = center.saturating_add(band);
        for r in 0..self.rows {
            for j in 0..self.labels {
                if j < lo || j > hi {
                    self.data[r * self.labels + j] = 0.0;
                }
            }
        }
    }

    fn log_row(&self, row: usize) -> impl Iterator<Item = f64> + '_ {
        self.row(row).iter().map(|&p| p.ln())
    }
}

/// The last `window + 1` observed descriptors with their frame indices.
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    capacity: usize,
    first_index: usize,
    frames: VecDeque<Descriptor>,
}

impl ObservationWindow {
    pub fn new(window: usize) -> Self {
        Self {
            capacity: window + 1,
            first_index: 0,
            frames: VecDeque::with_capacity(window + 1),
        }
    }

    /// Appends the next frame, dropping the oldest once full.
    pub fn push(&mut self, d: Descriptor) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
            self.first_index += 1;
        }
        self.frames.push_back(d);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Absolute index of the oldest frame held.
    pub fn first_index(&self) -> usize {
        self.first_index
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Descriptor)> {
        self.frames
            .iter()
            .enumerate()
            .map(move |(k, d)| (self.first_index + k, d))
    }
}

fn likelihood_row(
    obs: &Descriptor,
    reference: &[Descriptor],
    params: &DescriptorParams,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec.map(reference, |r| observation_likelihood(obs, r, params))
        .into_iter()
        .collect()
}

/// Per-frame likelihoods of every window frame against every reference frame.
/// With a candidate band configured and a `band_center`, entries outside the
/// band are zero.
pub fn build_likelihood_table(
    window: &ObservationWindow,
    reference: &[Descriptor],
    cfg: &SyncConfig,
    params: &DescriptorParams,
    band_center: Option<Label>,
    exec: Exec,
) -> Result<LikelihoodTable> {
    if reference.is_empty() {
        return Err(Error::InvalidParameter("reference sequence is empty".into()));
    }
    if window.is_empty() {
        return Err(Error::InvalidParameter("observation window is empty".into()));
    }
    let mut data = Vec::with_capacity(window.len() * reference.len());
    for (_, d) in window.iter() {
        data.extend(likelihood_row(d, reference, params, exec)?);
    }
    let mut table = LikelihoodTable::new(window.len(), reference.len(), data)?;
    if let (Some(band), Some(center)) = (cfg.candidate_band, band_center) {
        table.apply_band(center, band);
    }
    Ok(table)
}

/// Forward and backward max-product messages on the monotone chain.
struct Messages {
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
}

fn max_product(table: &LikelihoodTable, beta: f64) -> Messages {
    let n = table.labels();
    let rows = table.rows();
    let log_beta = beta.ln();
    let log_start = -(n as f64).ln();

    let mut forward = Vec::with_capacity(rows);
    forward.push(table.log_row(0).map(|l| l + log_start).collect::<Vec<_>>());
    for k in 1..rows {
        let prev: &Vec<f64> = &forward[k - 1];
        let mut best = f64::NEG_INFINITY;
        let row: Vec<f64> = table
            .log_row(k)
            .enumerate()
            .map(|(j, l)| {
                best = best.max(prev[j]);
                l + log_beta + best
            })
            .collect();
        forward.push(row);
    }

    let mut backward = vec![vec![0.0; n]; rows];
    for k in (0..rows.saturating_sub(1)).rev() {
        let next: Vec<f64> = table
            .log_row(k + 1)
            .zip(&backward[k + 1])
            .map(|(l, b)| l + b)
            .collect();
        let mut best = f64::NEG_INFINITY;
        for j in (0..n).rev() {
            best = best.max(next[j]);
            backward[k][j] = log_beta + best;
        }
    }
    Messages { forward, backward }
}

/// Log max-marginals: for each row and label, the best log score of any
/// monotone labeling passing through that label.
pub fn max_marginals(table: &LikelihoodTable, beta: f64) -> Vec<Vec<f64>> {
    let m = max_product(table, beta);
    m.forward
        .iter()
        .zip(&m.backward)
        .map(|(f, b)| f.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

/// Result of inferring one position of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelEstimate {
    /// Row of the table the estimate refers to.
    pub row: usize,
    pub label: Label,
    /// Max-marginal of the chosen label normalized over the candidate labels.
    pub score: f64,
}

fn pick(marginals: &[f64], min_label: Label, row: usize) -> Result<LabelEstimate> {
    let mut best: Option<(Label, f64)> = None;
    for (j, &m) in marginals.iter().enumerate().skip(min_label) {
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((j, m));
        }
    }
    let (label, top) = best.ok_or(Error::SyncLoss)?;
    if top == f64::NEG_INFINITY {
        return Err(Error::SyncLoss);
    }
    Ok(LabelEstimate {
        row,
        label,
        score: normalized_score(marginals, label, min_label),
    })
}

/// `exp(m[label])` over the sum of `exp(m[j])` for `j >= min_label`.
fn normalized_score(marginals: &[f64], label: Label, min_label: Label) -> f64 {
    let top = marginals[min_label..]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return 0.0;
    }
    let norm: f64 = marginals[min_label..].iter().map(|&m| (m - top).exp()).sum();
    (marginals[label] - top).exp() / norm
}

/// Label of the lagged window position, `lag` rows before the newest (the
/// oldest row during warm-up). Ties go to the smallest label.
pub fn fixed_lag_infer(table: &LikelihoodTable, cfg: &SyncConfig) -> Result<LabelEstimate> {
    fixed_lag_infer_from(table, cfg, 0)
}

/// As [`fixed_lag_infer`], restricting the lagged label to `>= min_label`.
pub fn fixed_lag_infer_from(
    table: &LikelihoodTable,
    cfg: &SyncConfig,
    min_label: Label,
) -> Result<LabelEstimate> {
    let row = table.rows() - 1 - cfg.lag.min(table.rows() - 1);
    let marginals = max_marginals(table, cfg.beta);
    pick(&marginals[row], min_label, row)
}

/// Best monotone labeling of the whole table; among equally good labelings
/// the lexicographically smallest one is returned.
pub fn map_sequence(table: &LikelihoodTable, beta: f64) -> Result<Vec<LabelEstimate>> {
    let m = max_product(table, beta);
    let marginals: Vec<Vec<f64>> = m
        .forward
        .iter()
        .zip(&m.backward)
        .map(|(f, b)| f.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let mut out = Vec::with_capacity(table.rows());
    let first = pick(&marginals[0], 0, 0)?;
    out.push(first);
    let mut prev = first.label;
    for (k, marginal) in marginals.iter().enumerate().skip(1) {
        // Best continuation given the label already fixed at k - 1.
        let mut best: Option<(Label, f64)> = None;
        for (j, l) in table.log_row(k).enumerate().skip(prev) {
            let v = l + m.backward[k][j];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let (label, v) = best.ok_or(Error::SyncLoss)?;
        if v == f64::NEG_INFINITY {
            return Err(Error::SyncLoss);
        }
        let score = normalized_score(marginal, label, 0);
        out.push(LabelEstimate { row: k, label, score });
        prev = label;
    }
    Ok(out)
}

/// Largest table [`brute_force_map`] accepts.
pub const BRUTE_FORCE_MAX_ROWS: usize = 6;
pub const BRUTE_FORCE_MAX_LABELS: usize = 8;

/// Exhaustive maximization over every non-decreasing labeling, with the
/// uniform start and constant transition weight multiplied in directly.
/// Ties resolve to the lexicographically smallest labeling.
pub fn brute_force_map(table: &LikelihoodTable, cfg: &SyncConfig) -> Result<Vec<Label>> {
    let (rows, n) = (table.rows(), table.labels());
    if rows > BRUTE_FORCE_MAX_ROWS || n > BRUTE_FORCE_MAX_LABELS {
        return Err(Error::InvalidParameter(format!(
            "brute force limited to {BRUTE_FORCE_MAX_ROWS} rows and {BRUTE_FORCE_MAX_LABELS} labels, got {rows}x{n}"
        )));
    }
    let mut seq = vec![0; rows];
    let mut best: Option<(f64, Vec<Label>)> = None;
    loop {
        let mut p = 1.0 / n as f64;
        for (k, &x) in seq.iter().enumerate() {
            p *= table.get(k, x);
            if k > 0 {
                p *= cfg.beta;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| p > *b) {
            best = Some((p, seq.clone()));
        }
        // Next non-decreasing sequence in lexicographic order.
        let Some(k) = (0..rows).rev().find(|&k| seq[k] + 1 < n) else {
            break;
        };
        let v = seq[k] + 1;
        seq[k..].iter_mut().for_each(|x| *x = v);
    }
    match best {
        Some((p, s)) if p > 0.0 => Ok(s),
        _ => Err(Error::SyncLoss),
    }
}

/// A label emitted for observed frame `observed_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub observed_index: usize,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyncResult {
    pub emitted: Vec<Emission>,
}

impl SyncResult {
    pub fn labels(&self) -> Vec<Label> {
        self.emitted.iter().map(|e| e.label).collect()
    }

    /// CSV lines `observed_index,reference_label,score`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("observed_index,reference_label,score\n");
        for e in &self.emitted {
            s.push_str(&format!("{},{},{:.6}\n", e.observed_index, e.label, e.score));
        }
        s
    }
}

/// Streaming fixed-lag synchronizer. Feed observed descriptors in frame
/// order with [`Synchronizer::push`]; the label of frame `t - lag` comes out
/// of the push of frame `t`.
pub struct Synchronizer<'a> {
    reference: &'a [Descriptor],
    cfg: SyncConfig,
    params: DescriptorParams,
    exec: Exec,
    rows: VecDeque<Vec<f64>>,
    next_index: usize,
    last_label: Option<Label>,
}

impl<'a> Synchronizer<'a> {
    pub fn new(
        reference: &'a [Descriptor],
        cfg: SyncConfig,
        params: DescriptorParams,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if reference.len() != cfg.label_count {
            return Err(Error::InvalidParameter(format!(
                "label_count {} but {} reference descriptors",
                cfg.label_count,
                reference.len()
            )));
        }
        Ok(Self {
            reference,
            cfg,
            params,
            exec,
            rows: VecDeque::with_capacity(cfg.window + 1),
            next_index: 0,
            last_label: None,
        })
    }

    pub fn config(&self) -> &SyncConfig {
        &self.cfg
    }

    /// Number of frames pushed so far.
    pub fn frames_seen(&self) -> usize {
        self.next_index
    }

    pub fn last_label(&self) -> Option<Label> {
        self.last_label
    }

    fn current_table(&self) -> Result<LikelihoodTable> {
        let mut table = LikelihoodTable::new(
            self.rows.len(),
            self.reference.len(),
            self.rows.iter().flatten().copied().collect(),
        )?;
        if let (Some(band), Some(center)) = (self.cfg.candidate_band, self.last_label) {
            table.apply_band(center, band);
        }
        Ok(table)
    }

    /// Adds frame `t` and returns the emission for frame `t - lag`, if any.
    /// A sync loss skips that one frame; the synchronizer stays usable.
    pub fn push(&mut self, descriptor: &Descriptor) -> Result<Option<Emission>> {
        let row = likelihood_row(descriptor, self.reference, &self.params, self.exec)?;
        if self.rows.len() == self.cfg.window + 1 {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
        let t = self.next_index;
        self.next_index += 1;
        if t < self.cfg.lag {
            return Ok(None);
        }
        let table = self.current_table()?;
        let est = fixed_lag_infer_from(&table, &self.cfg, self.last_label.unwrap_or(0))?;
        self.last_label = Some(est.label);
        Ok(Some(Emission {
            observed_index: t - self.cfg.lag,
            label: est.label,
            score: est.score,
        }))
    }

    /// Labels the frames still inside the lag once the stream has ended,
    /// using the final window with a shrinking lag.
    pub fn finish(&mut self) -> Vec<Result<Emission>> {
        let pending = self.cfg.lag.min(self.next_index);
        let mut out = Vec::with_capacity(pending);
        let Ok(table) = self.current_table() else {
            return out;
        };
        for lag in (0..pending).rev() {
            let cfg = SyncConfig { lag, ..self.cfg };
            let r = fixed_lag_infer_from(&table, &cfg, self.last_label.unwrap_or(0)).map(|est| {
                self.last_label = Some(est.label);
                Emission {
                    observed_index: self.next_index - 1 - lag,
                    label: est.label,
                    score: est.score,
                }
            });
            out.push(r);
        }
        out
    }
}

/// Runs the on-line synchronizer over a whole observed stream. Frames whose
/// label cannot be inferred abort the run with [`Error::SyncLoss`].
pub fn synchronize_online<'d>(
    observed: impl IntoIterator<Item = &'d Descriptor>,
    reference: &[Descriptor],
    cfg: SyncConfig,
    params: DescriptorParams,
    exec: Exec,
) -> Result<SyncResult> {
    let mut sync = Synchronizer::new(reference, cfg, params, exec)?;
    let mut result = SyncResult::default();
    for d in observed {
        if let Some(e) = sync.push(d)? {
            result.emitted.push(e);
        }
    }
    Ok(result)
}

/// Labels a complete observed sequence at once: a single window spanning
/// every frame, decoded with [`map_sequence`].
pub fn synchronize_offline(
    observed: &[Descriptor],
    reference: &[Descriptor],
    cfg: SyncConfig,
    params: DescriptorParams,
    exec: Exec,
) -> Result<SyncResult> {
    cfg.validate()?;
    if observed.is_empty() {
        return Err(Error::InvalidParameter("observed sequence is empty".into()));
    }
    if reference.is_empty() {
        return Err(Error::InvalidParameter("reference sequence is empty".into()));
    }
    let rows = exec
        .map(observed, |d| likelihood_row(d, reference, &params, Exec::Sequential))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let table = LikelihoodTable::from_rows(&rows)?;
    let seq = map_sequence(&table, cfg.beta)?;
    Ok(SyncResult {
        emitted: seq
            .into_iter()
            .map(|e| Emission {
                observed_index: e.row,
                label: e.label,
                score: e.score,
            })
            .collect(),
    })
}
