//! Ground-truth spatiotemporal Hawkes (STHP) and self-correcting (STSC)
//! processes, simulated by Ogata thinning.
//!
//! STHP:  `λ(s, t) = μ g₀(s) + Σ_i α e^{−β(t − t_i)} g₂(s − s_i)` on ℝ².
//! STSC:  `λ(s, t) = μ exp(β t g₀(s) − Σ_i α g₂(s, s_i))` on `[0, 1]²`, with
//! both kernels renormalized to unit mass on the square and space
//! discretized to the nodes of a `k × k` grid.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::grid::{linspace, Rect, SpatialGrid};
use crate::rng::stream;
use crate::stpp::{Event, EventSequence};

/// Hawkes parameters. Covariances are diagonal, given as per-axis variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SthpParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma_g0: [f64; 2],
    pub sigma_g2: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StscParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma_g0: [f64; 2],
    pub sigma_g2: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    101
}

fn check_variances(name: &str, v: &[f64; 2]) -> Result<()> {
    if v.iter().all(|s| *s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must have positive finite variances, got {v:?}")))
    }
}

impl SthpParams {
    /// Expected offspring per event, `∫ α e^{−βu} du = α/β`.
    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.mu > 0.0) {
            return Err(Error::invalid(format!("α, β, μ must be positive: {self:?}")));
        }
        if self.branching_ratio() >= 1.0 {
            return Err(Error::invalid(format!(
                "supercritical Hawkes process: branching ratio α/β = {} >= 1",
                self.branching_ratio()
            )));
        }
        check_variances("Σ_g0", &self.sigma_g0)?;
        check_variances("Σ_g2", &self.sigma_g2)
    }

    /// Long-run event rate `μ / (1 − α/β)`.
    pub fn stationary_rate(&self) -> f64 {
        self.mu / (1.0 - self.branching_ratio())
    }
}

impl StscParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.mu > 0.0) {
            return Err(Error::invalid(format!("α, β, μ must be positive: {self:?}")));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("STSC grid resolution must be at least 2"));
        }
        check_variances("Σ_g0", &self.sigma_g0)?;
        check_variances("Σ_g2", &self.sigma_g2)
    }

    /// Long-run event rate `β/α`: the background raises the log intensity by
    /// `β` per unit time on average and every event lowers it by `α`.
    pub fn stationary_rate(&self) -> f64 {
        self.beta / self.alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum Process {
    Sthp(SthpParams),
    Stsc(StscParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Sthp,
    Stsc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Ds1,
    Ds2,
    Ds3,
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sthp" => Ok(ProcessKind::Sthp),
            "stsc" => Ok(ProcessKind::Stsc),
            _ => Err(Error::invalid(format!("unknown process {s:?} (expected sthp or stsc)"))),
        }
    }
}

impl std::str::FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ds1" => Ok(Dataset::Ds1),
            "ds2" => Ok(Dataset::Ds2),
            "ds3" => Ok(Dataset::Ds3),
            _ => Err(Error::invalid(format!("unknown dataset {s:?} (expected ds1, ds2 or ds3)"))),
        }
    }
}

impl Process {
    /// The six benchmark parameter sets.
    pub fn preset(kind: ProcessKind, ds: Dataset) -> Process {
        let iso = |v: f64| [v, v];
        match kind {
            ProcessKind::Sthp => {
                let (alpha, beta, mu, g0, g2) = match ds {
                    Dataset::Ds1 => (0.5, 1.0, 0.2, 0.2, 0.5),
                    Dataset::Ds2 => (0.5, 0.6, 0.15, 5.0, 0.1),
                    Dataset::Ds3 => (0.3, 2.0, 1.0, 1.0, 0.1),
                };
                Process::Sthp(SthpParams {
                    alpha,
                    beta,
                    mu,
                    sigma_g0: iso(g0),
                    sigma_g2: iso(g2),
                })
            }
            ProcessKind::Stsc => {
                let (alpha, beta, mu, g0, g2) = match ds {
                    Dataset::Ds1 => (0.2, 0.2, 1.0, 1.0, 0.85),
                    Dataset::Ds2 => (0.3, 0.2, 1.0, 0.4, 0.3),
                    Dataset::Ds3 => (0.4, 0.2, 1.0, 0.25, 0.2),
                };
                Process::Stsc(StscParams {
                    alpha,
                    beta,
                    mu,
                    sigma_g0: iso(g0),
                    sigma_g2: iso(g2),
                    resolution: default_resolution(),
                })
            }
        }
    }

    pub fn kind(&self) -> ProcessKind {
        match self {
            Process::Sthp(_) => ProcessKind::Sthp,
            Process::Stsc(_) => ProcessKind::Stsc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Process::Sthp(p) => p.validate(),
            Process::Stsc(p) => p.validate(),
        }
    }

    pub fn stationary_rate(&self) -> f64 {
        match self {
            Process::Sthp(p) => p.stationary_rate(),
            Process::Stsc(p) => p.stationary_rate(),
        }
    }

    pub fn simulate(&self, horizon: f64, seed: u64) -> Result<EventSequence> {
        self.run(horizon, seed, None)
    }

    /// Like [`Process::simulate`], also returning every thinning candidate.
    pub fn simulate_traced(&self, horizon: f64, seed: u64) -> Result<(EventSequence, Vec<ThinningStep>)> {
        let mut trace = Vec::new();
        let seq = self.run(horizon, seed, Some(&mut trace))?;
        Ok((seq, trace))
    }

    fn run(&self, horizon: f64, seed: u64, trace: Option<&mut Vec<ThinningStep>>) -> Result<EventSequence> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        self.validate()?;
        let mut rng = stream(seed, "sim");
        match self {
            Process::Sthp(p) => {
                let events = sthp_events(p, horizon, &mut rng, trace);
                let domain = if events.is_empty() {
                    let (sx, sy) = (3.0 * p.sigma_g0[0].sqrt(), 3.0 * p.sigma_g0[1].sqrt());
                    Rect::new(-sx, sx, -sy, sy)?
                } else {
                    Rect::bounding(events.iter().map(|e| (e.x, e.y)), 0.05)?
                };
                EventSequence::new(events, domain, horizon)
            }
            Process::Stsc(p) => {
                let events = StscField::new(p).simulate(horizon, &mut rng, trace);
                EventSequence::new(events, Rect::unit(), horizon)
            }
        }
    }

    /// Temporal intensity `∫ λ(s, t) ds` given the events before `t`, exactly
    /// as the thinning step evaluates it.
    pub fn temporal_intensity(&self, t: f64, history: &[Event]) -> f64 {
        match self {
            Process::Sthp(p) => {
                p.mu + history
                    .iter()
                    .filter(|e| e.t < t)
                    .map(|e| p.alpha * (-p.beta * (t - e.t)).exp())
                    .sum::<f64>()
            }
            Process::Stsc(p) => {
                let field = StscField::new(p);
                let mut log_base = vec![p.mu.ln(); field.nodes.len()];
                for e in history.iter().filter(|e| e.t < t) {
                    field.subtract_event(&mut log_base, e);
                }
                field.total(&log_base, t)
            }
        }
    }

    /// `λ(s, t)` at one location given the events before `t`.
    pub fn intensity(&self, x: f64, y: f64, t: f64, history: &[Event]) -> f64 {
        let past = history.iter().filter(|e| e.t < t);
        match self {
            Process::Sthp(p) => {
                let g0 = gauss2(x, y, 0.0, 0.0, &p.sigma_g0);
                p.mu * g0
                    + past
                        .map(|e| p.alpha * (-p.beta * (t - e.t)).exp() * gauss2(x, y, e.x, e.y, &p.sigma_g2))
                        .sum::<f64>()
            }
            Process::Stsc(p) => {
                let z0 = box_mass(0.0, 0.0, &p.sigma_g0);
                let g0 = gauss2(x, y, 0.0, 0.0, &p.sigma_g0) / z0;
                let inhibit: f64 =
                    past.map(|e| p.alpha * gauss2(x, y, e.x, e.y, &p.sigma_g2) / box_mass(e.x, e.y, &p.sigma_g2)).sum();
                p.mu * (p.beta * t * g0 - inhibit).exp()
            }
        }
    }

    /// `λ(·, t)` on `grid` for each of the increasing global `times`, using
    /// every event of `events` (global times) strictly before each time.
    pub fn grid_sweep(&self, events: &[Event], times: &[f64], grid: &SpatialGrid) -> Result<Vec<Vec<f64>>> {
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("sweep times must be nondecreasing"));
        }
        let pts = grid.points();
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0;
        match self {
            Process::Sthp(p) => {
                let g0: Vec<f64> = pts.iter().map(|&(x, y)| gauss2(x, y, 0.0, 0.0, &p.sigma_g0)).collect();
                // excitation field at time `now`
                let mut field = vec![0.0; pts.len()];
                let mut now = 0.0;
                for &t in times {
                    while next < events.len() && events[next].t < t {
                        let e = events[next];
                        decay(&mut field, (-p.beta * (e.t - now)).exp());
                        now = e.t;
                        for (f, &(x, y)) in field.iter_mut().zip(&pts) {
                            *f += p.alpha * gauss2(x, y, e.x, e.y, &p.sigma_g2);
                        }
                        next += 1;
                    }
                    let k = (-p.beta * (t - now)).exp();
                    out.push(g0.iter().zip(&field).map(|(g, f)| p.mu * g + k * f).collect());
                }
            }
            Process::Stsc(p) => {
                let z0 = box_mass(0.0, 0.0, &p.sigma_g0);
                let g0: Vec<f64> = pts.iter().map(|&(x, y)| gauss2(x, y, 0.0, 0.0, &p.sigma_g0) / z0).collect();
                let mut inhibit = vec![0.0; pts.len()];
                for &t in times {
                    while next < events.len() && events[next].t < t {
                        let e = events[next];
                        let z = box_mass(e.x, e.y, &p.sigma_g2);
                        for (v, &(x, y)) in inhibit.iter_mut().zip(&pts) {
                            *v += p.alpha * gauss2(x, y, e.x, e.y, &p.sigma_g2) / z;
                        }
                        next += 1;
                    }
                    out.push(g0.iter().zip(&inhibit).map(|(g, h)| p.mu * (p.beta * t * g - h).exp()).collect());
                }
            }
        }
        Ok(out)
    }
}

fn decay(field: &mut [f64], k: f64) {
    for f in field {
        *f *= k;
    }
}

/// Density of `N((mx, my), diag(var))` at `(x, y)`.
fn gauss2(x: f64, y: f64, mx: f64, my: f64, var: &[f64; 2]) -> f64 {
    let (dx, dy) = (x - mx, y - my);
    (-0.5 * (dx * dx / var[0] + dy * dy / var[1])).exp() / (2.0 * std::f64::consts::PI * (var[0] * var[1]).sqrt())
}

/// Mass of `N((mx, my), diag(var))` on the unit square.
fn box_mass(mx: f64, my: f64, var: &[f64; 2]) -> f64 {
    let axis = |m: f64, v: f64| {
        let s = (2.0 * v).sqrt();
        0.5 * (erf((1.0 - m) / s) - erf((0.0 - m) / s))
    };
    axis(mx, var[0]) * axis(my, var[1])
}

/// One thinning candidate: its time, the temporal intensity there, the
/// dominating bound it was drawn under, and whether it became an event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinningStep {
    pub t: f64,
    pub intensity: f64,
    pub bound: f64,
    pub accepted: bool,
}

fn sthp_events<R: Rng>(p: &SthpParams, horizon: f64, rng: &mut R, mut trace: Option<&mut Vec<ThinningStep>>) -> Vec<Event> {
    let unit = Exp::new(1.0).expect("unit rate");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut events: Vec<Event> = Vec::new();
    // excitation Σ α e^{−β(t − t_i)} at time `now`
    let mut excite = 0.0;
    let mut now = 0.0;
    loop {
        // the intensity only decays until the next event, so its current value dominates
        let bound = p.mu + excite;
        let cand = now + unit.sample(rng) / bound;
        if cand >= horizon {
            break;
        }
        excite *= (-p.beta * (cand - now)).exp();
        now = cand;
        let lam = p.mu + excite;
        let accepted = rng.random::<f64>() * bound <= lam;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(ThinningStep {
                t: cand,
                intensity: lam,
                bound,
                accepted,
            });
        }
        if !accepted {
            continue;
        }
        // attribute the event to the background or to one parent
        let mut u = rng.random::<f64>() * lam;
        let (cx, cy, var) = if u < p.mu {
            (0.0, 0.0, &p.sigma_g0)
        } else {
            u -= p.mu;
            let mut parent = events.last().copied();
            for e in events.iter().rev() {
                let w = p.alpha * (-p.beta * (cand - e.t)).exp();
                parent = Some(*e);
                if u < w {
                    break;
                }
                u -= w;
            }
            let e = parent.expect("excitation implies a past event");
            (e.x, e.y, &p.sigma_g2)
        };
        let x = cx + var[0].sqrt() * normal.sample(rng);
        let y = cy + var[1].sqrt() * normal.sample(rng);
        events.push(Event::new(cand, x, y));
        excite += p.alpha;
    }
    events
}

/// Discretized STSC state: node coordinates, background kernel values and
/// the per-node normalizer of the inhibition kernel.
struct StscField<'a> {
    p: &'a StscParams,
    nodes: Vec<(f64, f64)>,
    g0: Vec<f64>,
    cell: f64,
}

impl<'a> StscField<'a> {
    fn new(p: &'a StscParams) -> Self {
        let k = p.resolution;
        let axis = linspace(0.0, 1.0, k);
        let nodes: Vec<(f64, f64)> = axis.iter().flat_map(|&x| axis.iter().map(move |&y| (x, y))).collect();
        let z0 = box_mass(0.0, 0.0, &p.sigma_g0);
        let g0 = nodes.iter().map(|&(x, y)| gauss2(x, y, 0.0, 0.0, &p.sigma_g0) / z0).collect();
        StscField {
            p,
            nodes,
            g0,
            cell: 1.0 / (k * k) as f64,
        }
    }

    fn subtract_event(&self, log_base: &mut [f64], e: &Event) {
        let z = box_mass(e.x, e.y, &self.p.sigma_g2);
        for (b, &(x, y)) in log_base.iter_mut().zip(&self.nodes) {
            *b -= self.p.alpha * gauss2(x, y, e.x, e.y, &self.p.sigma_g2) / z;
        }
    }

    fn node_intensities(&self, log_base: &[f64], t: f64, out: &mut [f64]) {
        let bt = self.p.beta * t;
        for ((o, b), g) in out.iter_mut().zip(log_base).zip(&self.g0) {
            *o = (b + bt * g).exp();
        }
    }

    fn total(&self, log_base: &[f64], t: f64) -> f64 {
        let bt = self.p.beta * t;
        log_base.iter().zip(&self.g0).map(|(b, g)| (b + bt * g).exp()).sum::<f64>() * self.cell
    }

    fn simulate<R: Rng>(&self, horizon: f64, rng: &mut R, mut trace: Option<&mut Vec<ThinningStep>>) -> Vec<Event> {
        let unit = Exp::new(1.0).expect("unit rate");
        let mut log_base = vec![self.p.mu.ln(); self.nodes.len()];
        let mut lam = vec![0.0; self.nodes.len()];
        let mut events = Vec::new();
        let mut now = 0.0;
        let max_span = 1.0 / (self.p.beta * self.g0.iter().cloned().fold(0.0, f64::max));
        while now < horizon {
            // node intensities only grow between events, so the total at the
            // end of a look-ahead span bounds the whole span; the span is kept
            // short enough that log intensities rise by at most 1 within it
            let span = (2.0 / self.total(&log_base, now)).min(max_span);
            let end = (now + span).min(horizon);
            let bound = self.total(&log_base, end);
            let cand = now + unit.sample(rng) / bound;
            if cand >= end {
                now = end;
                continue;
            }
            now = cand;
            let total = self.total(&log_base, cand);
            let accepted = rng.random::<f64>() * bound <= total;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(ThinningStep {
                    t: cand,
                    intensity: total,
                    bound,
                    accepted,
                });
            }
            if !accepted {
                continue;
            }
            self.node_intensities(&log_base, cand, &mut lam);
            let mut u = rng.random::<f64>() * lam.iter().sum::<f64>();
            let mut pick = lam.len() - 1;
            for (i, l) in lam.iter().enumerate() {
                if u < *l {
                    pick = i;
                    break;
                }
                u -= l;
            }
            let (x, y) = self.nodes[pick];
            let e = Event::new(cand, x, y);
            self.subtract_event(&mut log_base, &e);
            events.push(e);
        }
        events
    }
}

/// Sidecar written next to simulated events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationHeader {
    pub params: Process,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub domain: Rect,
    pub n_events: usize,
}

impl SimulationHeader {
    pub fn new(params: Process, seed: u64, seq: &EventSequence) -> Self {
        SimulationHeader {
            params,
            seed,
            horizon: seq.horizon(),
            domain: seq.domain(),
            n_events: seq.len(),
        }
    }
}

/// Consecutive windows of a long sequence, with times rebased per window.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<EventSequence>,
    pub val: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
}

/// Cuts `seq` into `n_windows` windows of length `window` and assigns them,
/// in time order, to train/validation/test by the counts in `ratio`.
pub fn split_dataset(seq: &EventSequence, n_windows: usize, window: f64, ratio: (usize, usize, usize)) -> Result<Split> {
    if n_windows == 0 || window.is_nan() || window <= 0.0 {
        return Err(Error::invalid("split needs a positive window count and length"));
    }
    let total = n_windows as f64 * window;
    if (total - seq.horizon()).abs() > 1e-9 * total {
        return Err(Error::invalid(format!(
            "horizon {} does not equal {n_windows} windows of length {window}",
            seq.horizon()
        )));
    }
    if ratio.0 + ratio.1 + ratio.2 != n_windows {
        return Err(Error::invalid(format!("split counts {ratio:?} do not sum to {n_windows}")));
    }
    let mut windows: Vec<Vec<Event>> = vec![Vec::new(); n_windows];
    for e in seq.events() {
        let k = ((e.t / window).floor() as usize).min(n_windows - 1);
        windows[k].push(Event::new(e.t - k as f64 * window, e.x, e.y));
    }
    let mut seqs = Vec::with_capacity(n_windows);
    for (k, mut ev) in windows.into_iter().enumerate() {
        // rebasing can round a time up to the window length
        ev.retain(|e| e.t < window);
        seqs.push(EventSequence::with_start(ev, seq.domain(), window, seq.start() + k as f64 * window)?);
    }
    let test = seqs.split_off(ratio.0 + ratio.1);
    let val = seqs.split_off(ratio.0);
    Ok(Split { train: seqs, val, test })
}
