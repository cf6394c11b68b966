//! Test log-likelihood and time-averaged Hellinger distance to a ground-truth
//! process.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDist, Rect, SpatialGrid};
use crate::simulate::Process;
use crate::stpp::{AutoStppModel, Event, EventSequence};

/// `(1/√2) ‖√P − √Q‖₂`.
pub fn hellinger(p: &GridDist, q: &GridDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "Hellinger distance between distributions on {} and {} points",
            p.len(),
            q.len()
        )));
    }
    let ss: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((0.5 * ss).sqrt().min(1.0))
}

/// Anything that yields a conditional spatial distribution `f*(s | t)` for a
/// window sequence at local time `t`.
pub trait SpatialModel {
    fn spatial_density(&self, t: f64, seq: &EventSequence, grid: &SpatialGrid) -> Result<GridDist>;
}

/// Anything that scores a sequence by its (possibly estimated) log-likelihood.
pub trait SequenceScorer {
    fn sequence_ll(&self, seq: &EventSequence) -> Result<f64>;
}

impl SpatialModel for AutoStppModel {
    fn spatial_density(&self, t: f64, seq: &EventSequence, grid: &SpatialGrid) -> Result<GridDist> {
        self.conditional_spatial_density(t, seq, grid)
    }
}

impl SequenceScorer for AutoStppModel {
    fn sequence_ll(&self, seq: &EventSequence) -> Result<f64> {
        self.log_likelihood(seq)
    }
}

/// Uniform density on every grid; the reference "knows nothing" model.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformModel;

impl SpatialModel for UniformModel {
    fn spatial_density(&self, _t: f64, _seq: &EventSequence, grid: &SpatialGrid) -> Result<GridDist> {
        GridDist::uniform(grid.len())
    }
}

/// The generating process seen through a window: local time `t` of a window
/// maps to global time `start + t`, with history taken from the full
/// simulated sequence.
pub struct TruthModel<'a> {
    pub process: &'a Process,
    pub history: &'a [Event],
}

impl SpatialModel for TruthModel<'_> {
    fn spatial_density(&self, t: f64, seq: &EventSequence, grid: &SpatialGrid) -> Result<GridDist> {
        let g = seq.start() + t;
        let past = &self.history[..self.history.partition_point(|e| e.t < g)];
        let lam = self.process.grid_sweep(past, &[g], grid)?.pop().expect("one time");
        GridDist::from_weights(lam)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HellingerConfig {
    /// Grid nodes per axis over each window's domain.
    pub grid: usize,
    /// Evaluation times per window, at the midpoints of equal slices.
    pub times_per_window: usize,
}

impl Default for HellingerConfig {
    fn default() -> Self {
        HellingerConfig {
            grid: 101,
            times_per_window: 50,
        }
    }
}

impl HellingerConfig {
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        let n = self.times_per_window;
        (0..n).map(|k| (k as f64 + 0.5) * horizon / n as f64).collect()
    }
}

/// Ground-truth distributions for every (window, time) pair. Windows sharing
/// a domain are served by one sweep over the global history.
pub fn truth_densities(
    process: &Process,
    history: &[Event],
    windows: &[EventSequence],
    cfg: &HellingerConfig,
) -> Result<Vec<Vec<GridDist>>> {
    if cfg.times_per_window == 0 {
        return Err(Error::invalid("need at least one evaluation time per window"));
    }
    if history.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::invalid("ground-truth history must be time ordered"));
    }
    let mut out: Vec<Vec<GridDist>> = vec![Vec::new(); windows.len()];
    let mut domains: Vec<Rect> = Vec::new();
    for w in windows {
        if !domains.contains(&w.domain()) {
            domains.push(w.domain());
        }
    }
    for domain in domains {
        let grid = SpatialGrid::square(domain, cfg.grid)?;
        let mut jobs: Vec<(f64, usize)> = Vec::new();
        for (i, w) in windows.iter().enumerate().filter(|(_, w)| w.domain() == domain) {
            jobs.extend(cfg.times(w.horizon()).into_iter().map(|t| (w.start() + t, i)));
        }
        // stable sort keeps each window's times in order
        jobs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let times: Vec<f64> = jobs.iter().map(|j| j.0).collect();
        let fields = process.grid_sweep(history, &times, &grid)?;
        for ((_, i), lam) in jobs.into_iter().zip(fields) {
            out[i].push(GridDist::from_weights(lam)?);
        }
    }
    Ok(out)
}

/// Mean Hellinger distance between the model's and the truth's spatial
/// distributions over all evaluation times of all windows.
pub fn time_avg_hellinger<M: SpatialModel + ?Sized>(
    model: &M,
    truth: &[Vec<GridDist>],
    windows: &[EventSequence],
    cfg: &HellingerConfig,
) -> Result<f64> {
    if truth.len() != windows.len() {
        return Err(Error::invalid("truth densities do not match the windows"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (w, dists) in windows.iter().zip(truth) {
        let grid = SpatialGrid::square(w.domain(), cfg.grid)?;
        let times = cfg.times(w.horizon());
        if dists.len() != times.len() {
            return Err(Error::invalid("truth densities do not match the evaluation times"));
        }
        for (t, q) in times.iter().zip(dists) {
            total += hellinger(&model.spatial_density(*t, w, &grid)?, q)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no windows to evaluate"));
    }
    Ok(total / count as f64)
}

/// Per-sequence test log-likelihoods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlSummary {
    pub per_sequence: Vec<f64>,
    pub n_events: usize,
    /// Mean over sequences.
    pub mean: f64,
    /// Sample standard deviation over sequences.
    pub std: f64,
    /// Total log-likelihood divided by total events.
    pub per_event: f64,
}

pub fn test_ll<M: SequenceScorer + ?Sized>(model: &M, seqs: &[EventSequence]) -> Result<LlSummary> {
    if seqs.is_empty() {
        return Err(Error::invalid("no test sequences"));
    }
    let per_sequence = seqs.iter().map(|s| model.sequence_ll(s)).collect::<Result<Vec<f64>>>()?;
    let n_events: usize = seqs.iter().map(EventSequence::len).sum();
    let (mean, std) = mean_std(&per_sequence);
    Ok(LlSummary {
        per_event: per_sequence.iter().sum::<f64>() / n_events.max(1) as f64,
        per_sequence,
        n_events,
        mean,
        std,
    })
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Metrics of one model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub ll_mean: f64,
    pub ll_std: f64,
    pub ll_per_event: f64,
    pub hellinger_mean: Option<f64>,
    pub n_sequences: usize,
    pub n_events: usize,
}

impl DatasetMetrics {
    pub fn new(ll: &LlSummary, hellinger_mean: Option<f64>) -> Self {
        DatasetMetrics {
            ll_mean: ll.mean,
            ll_std: ll.std,
            ll_per_event: ll.per_event,
            hellinger_mean,
            n_sequences: ll.per_sequence.len(),
            n_events: ll.n_events,
        }
    }
}

/// The metrics report: headline numbers averaged over datasets (or runs)
/// plus the individual entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ll_mean: f64,
    pub ll_std: f64,
    pub hellinger_mean: Option<f64>,
    pub per_dataset: BTreeMap<String, DatasetMetrics>,
}

impl MetricsReport {
    pub fn from_entries(per_dataset: BTreeMap<String, DatasetMetrics>) -> Result<Self> {
        if per_dataset.is_empty() {
            return Err(Error::invalid("empty metrics report"));
        }
        let lls: Vec<f64> = per_dataset.values().map(|m| m.ll_mean).collect();
        let (ll_mean, ll_std) = mean_std(&lls);
        let hs: Option<Vec<f64>> = per_dataset.values().map(|m| m.hellinger_mean).collect();
        Ok(MetricsReport {
            ll_mean,
            ll_std,
            hellinger_mean: hs.map(|h| mean_std(&h).0),
            per_dataset,
        })
    }
}
