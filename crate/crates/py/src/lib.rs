//! Python bindings. Events cross the boundary as `(t, x, y)` tuples and
//! domains as `(x0, x1, y0, y1)`.

use autostpp::autoint::{naive_dnforward, MlpSpec, ParamSet};
use autostpp::bench::{run_bench, BenchConfig};
use autostpp::grid::{GridDist, Rect, SpatialGrid};
use autostpp::numkit::{Activation, Tensor};
use autostpp::prodnet::{Cuboid, ProdSum, ProdSumConfig};
use autostpp::rng::stream;
use autostpp::simulate::{split_dataset, Dataset, Process, ProcessKind};
use autostpp::stpp::{AutoStppModel, Event, EventSequence, ModelConfig};
use autostpp::train::{fit, TrainConfig};
use autostpp::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

type PyEvent = (f64, f64, f64);
type PyRect = (f64, f64, f64, f64);
type BenchTuple = (usize, usize, &'static str, &'static str, f64, f64);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::Domain { .. } => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rect(r: PyRect) -> PyResult<Rect> {
    Rect::new(r.0, r.1, r.2, r.3).map_err(to_py)
}

fn events(ev: &[PyEvent]) -> Vec<Event> {
    ev.iter().map(|&(t, x, y)| Event::new(t, x, y)).collect()
}

fn tuples(seq: &EventSequence) -> Vec<PyEvent> {
    seq.events().iter().map(|e| (e.t, e.x, e.y)).collect()
}

fn sequence(ev: &[PyEvent], domain: Rect, horizon: f64) -> PyResult<EventSequence> {
    EventSequence::new(events(ev), domain, horizon).map_err(to_py)
}

/// A history long enough to reach time `t`; only events before `t` matter.
fn history(ev: &[PyEvent], domain: Rect, t: f64) -> PyResult<EventSequence> {
    let last = ev.iter().map(|e| e.0).fold(t, f64::max);
    sequence(ev, domain, last + 1.0)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(to_py)
}

fn activation(name: &str) -> PyResult<Activation> {
    match name {
        "tanh" => Ok(Activation::Tanh),
        "softplus" => Ok(Activation::Softplus),
        "softplus_cubed" => Ok(Activation::SoftplusCubed),
        _ => Err(PyValueError::new_err(format!("unknown activation {name:?}"))),
    }
}

/// Simulates a benchmark preset and returns its events.
#[pyfunction]
#[pyo3(signature = (process, dataset, horizon, seed = 0))]
fn simulate(process: &str, dataset: &str, horizon: f64, seed: u64) -> PyResult<Vec<PyEvent>> {
    let kind: ProcessKind = process.parse().map_err(to_py)?;
    let ds: Dataset = dataset.parse().map_err(to_py)?;
    let seq = Process::preset(kind, ds).simulate(horizon, seed).map_err(to_py)?;
    Ok(tuples(&seq))
}

/// Cuts a sequence into `n_windows` equal windows with rebased times and
/// returns the train, validation and test windows.
#[pyfunction]
#[pyo3(signature = (events, horizon, n_windows, ratio, domain = (0.0, 1.0, 0.0, 1.0)))]
#[allow(clippy::type_complexity)]
fn split(
    events: Vec<PyEvent>,
    horizon: f64,
    n_windows: usize,
    ratio: (usize, usize, usize),
    domain: PyRect,
) -> PyResult<(Vec<Vec<PyEvent>>, Vec<Vec<PyEvent>>, Vec<Vec<PyEvent>>)> {
    let seq = sequence(&events, rect(domain)?, horizon)?;
    let s = split_dataset(&seq, n_windows, horizon / n_windows.max(1) as f64, ratio).map_err(to_py)?;
    let conv = |v: &[EventSequence]| v.iter().map(tuples).collect();
    Ok((conv(&s.train), conv(&s.val), conv(&s.test)))
}

#[pyfunction]
fn hellinger(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let (p, q) = (GridDist::new(p).map_err(to_py)?, GridDist::new(q).map_err(to_py)?);
    autostpp::evaluate::hellinger(&p, &q).map_err(to_py)
}

/// Timing rows `(layers, order, kind, impl, median_ms, speedup)`.
#[pyfunction(name = "bench")]
#[pyo3(signature = (layers = vec![2, 3, 4], orders = vec![1, 2, 3], width = 32, batch = 256, repeats = 11))]
fn benchmark(
    layers: Vec<usize>,
    orders: Vec<usize>,
    width: usize,
    batch: usize,
    repeats: usize,
) -> PyResult<Vec<BenchTuple>> {
    let cfg = BenchConfig {
        layers,
        orders,
        widths: vec![width],
        batch,
        repeats,
        ..BenchConfig::default()
    };
    let rows = run_bench(&cfg).map_err(to_py)?;
    Ok(rows
        .iter()
        .map(|r| (r.layers, r.order, r.kind.label(), r.imp.label(), r.median_ms, r.speedup))
        .collect())
}

/// A multilayer perceptron whose output is read as an antiderivative.
#[pyclass(name = "Mlp", module = "autostpp_py")]
struct PyMlp {
    net: ParamSet,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (widths, activation = "tanh", seed = 0, nonnegative = false))]
    fn new(widths: Vec<usize>, activation: &str, seed: u64, nonnegative: bool) -> PyResult<Self> {
        let mut spec = MlpSpec::new(widths, self::activation(activation)?);
        if nonnegative {
            spec = spec.nonnegative();
        }
        let net = ParamSet::init(spec, &mut stream(seed, "init")).map_err(to_py)?;
        Ok(PyMlp { net })
    }

    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.net.forward(&matrix(&x)?).map_err(to_py)?.data().to_vec())
    }

    /// Mixed partial `∂/∂x_{d1}∂x_{d2}…` of the output at each row of `x`.
    fn dnforward(&self, x: Vec<Vec<f64>>, dims: Vec<usize>) -> PyResult<Vec<f64>> {
        Ok(self.net.dnforward(&matrix(&x)?, &dims).map_err(to_py)?.data().to_vec())
    }

    /// The same derivative by repeated symbolic differentiation.
    fn naive_dnforward(&self, x: Vec<Vec<f64>>, dims: Vec<usize>) -> PyResult<Vec<f64>> {
        Ok(naive_dnforward(&self.net, &matrix(&x)?, &dims).map_err(to_py)?.data().to_vec())
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.net.n_params()
    }
}

/// A sum of products of one-dimensional integral networks.
#[pyclass(name = "ProdSum", module = "autostpp_py")]
struct PyProdSum {
    inner: ProdSum,
}

#[pymethods]
impl PyProdSum {
    #[new]
    #[pyo3(signature = (n_terms = 2, hidden = vec![32, 32], seed = 0))]
    fn new(n_terms: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let cfg = ProdSumConfig {
            n_terms,
            hidden,
            ..ProdSumConfig::default()
        };
        let inner = ProdSum::new(&cfg, &mut stream(seed, "init")).map_err(to_py)?;
        Ok(PyProdSum { inner })
    }

    /// The density (mixed partial) at each `(x, y, t)` point.
    fn influence(&self, points: Vec<PyEvent>) -> PyResult<Vec<f64>> {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0, p.1, p.2]).collect();
        Ok(self.inner.influence_batch(&matrix(&rows)?).map_err(to_py)?.data().to_vec())
    }

    /// Exact integral of the density over the box `[lo, hi]`.
    fn cuboid_integral(&self, lo: [f64; 3], hi: [f64; 3]) -> PyResult<f64> {
        let c = Cuboid::new(lo, hi).map_err(to_py)?;
        self.inner.cuboid_integral(&c).map_err(to_py)
    }
}

/// The AutoSTPP intensity model.
#[pyclass(name = "Model", module = "autostpp_py")]
struct PyModel {
    inner: AutoStppModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (domain, mu, seed = 0, n_terms = 2, hidden = vec![32, 32], window = Some(20), time_scale = 10.0))]
    fn new(domain: PyRect, mu: f64, seed: u64, n_terms: usize, hidden: Vec<usize>, window: Option<usize>, time_scale: f64) -> PyResult<Self> {
        let cfg = ModelConfig {
            n_terms,
            hidden,
            window,
            time_scale,
            ..ModelConfig::default()
        };
        let inner = AutoStppModel::init(&cfg, rect(domain)?, mu, &mut stream(seed, "init")).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    #[getter]
    fn window(&self) -> Option<usize> {
        self.inner.window()
    }

    #[getter]
    fn domain(&self) -> PyRect {
        let d = self.inner.domain();
        (d.x0, d.x1, d.y0, d.y1)
    }

    /// Exact log-likelihood of events observed on `[0, horizon)`.
    fn log_likelihood(&self, events: Vec<PyEvent>, horizon: f64) -> PyResult<f64> {
        let seq = sequence(&events, self.inner.domain(), horizon)?;
        self.inner.log_likelihood(&seq).map_err(to_py)
    }

    fn intensity(&self, x: f64, y: f64, t: f64, events: Vec<PyEvent>) -> PyResult<f64> {
        let hist = history(&events, self.inner.domain(), t)?;
        self.inner.intensity(x, y, t, &hist).map_err(to_py)
    }

    /// `λ(·, t)` on a `grid × grid` lattice over the domain, x-major.
    #[pyo3(signature = (t, events, grid = 101))]
    fn intensity_grid(&self, t: f64, events: Vec<PyEvent>, grid: usize) -> PyResult<Vec<f64>> {
        let hist = history(&events, self.inner.domain(), t)?;
        let g = SpatialGrid::square(self.inner.domain(), grid).map_err(to_py)?;
        self.inner.intensity_grid(t, &hist, &g).map_err(to_py)
    }

    /// Trains a copy on windows of length `horizon` and returns it with the
    /// per-epoch `(epoch, train_nll, val_nll)` log.
    #[pyo3(signature = (train, val, horizon, lr = 1e-3, epochs = 50, seed = 0))]
    #[allow(clippy::type_complexity)]
    fn fit(
        &self,
        train: Vec<Vec<PyEvent>>,
        val: Vec<Vec<PyEvent>>,
        horizon: f64,
        lr: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(PyModel, Vec<(usize, f64, f64)>)> {
        let d = self.inner.domain();
        let conv = |v: &[Vec<PyEvent>]| v.iter().map(|ev| sequence(ev, d, horizon)).collect::<PyResult<Vec<_>>>();
        let cfg = TrainConfig {
            lr,
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let out = fit(&self.inner, &conv(&train)?, &conv(&val)?, &cfg).map_err(to_py)?;
        if let Some(why) = out.diverged {
            return Err(PyArithmeticError::new_err(why));
        }
        let log = out.log.iter().map(|e| (e.epoch, e.train_nll, e.val_nll)).collect();
        Ok((PyModel { inner: out.model }, log))
    }
}

#[pymodule]
fn autostpp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(hellinger, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyProdSum>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
