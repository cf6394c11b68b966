//! Timing of the dynamic-programming derivative pass against nested
//! symbolic differentiation.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoint::{naive_dnforward, MlpSpec, ParamSet};
use crate::error::{Error, Result};
use crate::numkit::{Activation, Tensor};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivKind {
    /// `∂ⁿ/∂x₀∂x₁…`, distinct axes.
    Mixed,
    /// `∂ⁿ/∂x₀ⁿ`, one axis repeated.
    Univariate,
}

impl DerivKind {
    pub fn dims(self, order: usize) -> Vec<usize> {
        match self {
            DerivKind::Mixed => (0..order).collect(),
            DerivKind::Univariate => vec![0; order],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DerivKind::Mixed => "mixed",
            DerivKind::Univariate => "univariate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impl {
    Dp,
    Naive,
}

impl Impl {
    pub fn label(self) -> &'static str {
        match self {
            Impl::Dp => "dp",
            Impl::Naive => "naive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Hidden-layer counts.
    pub layers: Vec<usize>,
    pub orders: Vec<usize>,
    pub widths: Vec<usize>,
    pub kinds: Vec<DerivKind>,
    pub repeats: usize,
    pub batch: usize,
    pub seed: u64,
    /// Re-measure a cell up to this many times while its spread is too wide.
    pub max_attempts: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            layers: vec![2, 3, 4],
            orders: vec![1, 2, 3],
            widths: vec![32],
            kinds: vec![DerivKind::Mixed, DerivKind::Univariate],
            repeats: 11,
            batch: 256,
            seed: 0,
            max_attempts: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub layers: usize,
    pub width: usize,
    pub order: usize,
    pub kind: DerivKind,
    pub imp: Impl,
    pub median_ms: f64,
    pub iqr_ms: f64,
    /// Naive median over this row's median (1 for naive rows).
    pub speedup: f64,
    /// Interquartile range below 20% of the median.
    pub stable: bool,
}

/// Median and interquartile range of `samples` (sorted in place).
pub fn median_iqr(samples: &mut [f64]) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (samples.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        samples[lo] + (samples[hi] - samples[lo]) * (pos - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

/// Shortest wall time of one timing sample; fast calls are repeated within
/// a sample until it lasts at least this long.
const MIN_SAMPLE_MS: f64 = 5.0;

struct Timed<F> {
    f: F,
    iters: usize,
    samples: Vec<f64>,
}

impl<F: FnMut() -> Result<Tensor>> Timed<F> {
    /// Warms up and picks the per-sample iteration count.
    fn new(mut f: F) -> Result<Self> {
        f()?;
        let t = Instant::now();
        f()?;
        let once = t.elapsed().as_secs_f64() * 1e3;
        let iters = (MIN_SAMPLE_MS / once.max(1e-6)).ceil().clamp(1.0, 10_000.0) as usize;
        Ok(Timed { f, iters, samples: Vec::new() })
    }

    fn sample(&mut self) -> Result<()> {
        let t = Instant::now();
        for _ in 0..self.iters {
            std::hint::black_box((self.f)()?);
        }
        self.samples.push(t.elapsed().as_secs_f64() * 1e3 / self.iters as f64);
        Ok(())
    }

    fn stats(&mut self) -> (f64, f64) {
        let out = median_iqr(&mut self.samples);
        self.samples.clear();
        out
    }
}

/// Median and IQR of both implementations, sampled alternately so that
/// drift in machine load affects them alike. A round whose spread is too wide
/// is repeated, keeping the tightest one.
fn measure_pair(
    repeats: usize,
    attempts: usize,
    dp: impl FnMut() -> Result<Tensor>,
    naive: impl FnMut() -> Result<Tensor>,
) -> Result<[(f64, f64); 2]> {
    let (mut dp, mut naive) = (Timed::new(dp)?, Timed::new(naive)?);
    let spread = |r: &[(f64, f64); 2]| r.iter().map(|(m, iqr)| iqr / m).fold(0.0, f64::max);
    let mut best: Option<[(f64, f64); 2]> = None;
    for _ in 0..attempts {
        for _ in 0..repeats {
            dp.sample()?;
            naive.sample()?;
        }
        let round = [dp.stats(), naive.stats()];
        if best.as_ref().is_none_or(|b| spread(&round) < spread(b)) {
            best = Some(round);
        }
        if spread(&round) < 0.2 {
            break;
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// Times both implementations on every configured cell after checking that
/// they agree to 1e-10 (relative, floor 1).
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.batch == 0 || cfg.max_attempts == 0 {
        return Err(Error::invalid("benchmark needs positive repeats, batch and attempts"));
    }
    let mut rng = stream(cfg.seed, "bench");
    let mut rows = Vec::new();
    for &layers in &cfg.layers {
        for &width in &cfg.widths {
            let widths = std::iter::once(3).chain(std::iter::repeat_n(width, layers)).chain(std::iter::once(1)).collect();
            let net = ParamSet::init(MlpSpec::new(widths, Activation::Tanh), &mut rng)?;
            let x = Tensor::matrix(cfg.batch, 3, (0..cfg.batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect())?;
            for &order in &cfg.orders {
                for &kind in &cfg.kinds {
                    let dims = kind.dims(order);
                    let dp = net.dnforward(&x, &dims)?;
                    let naive = naive_dnforward(&net, &x, &dims)?;
                    for (a, b) in dp.data().iter().zip(naive.data()) {
                        if (a - b).abs() > 1e-10 * a.abs().max(b.abs()).max(1.0) {
                            return Err(Error::Domain {
                                op: "run_bench",
                                detail: format!("dp and naive disagree ({a} vs {b}) at layers {layers}, dims {dims:?}"),
                            });
                        }
                    }
                    let [(dp_ms, dp_iqr), (nv_ms, nv_iqr)] = measure_pair(
                        cfg.repeats,
                        cfg.max_attempts,
                        || net.dnforward(&x, &dims),
                        || naive_dnforward(&net, &x, &dims),
                    )?;
                    for (imp, ms, iqr, speedup) in [(Impl::Dp, dp_ms, dp_iqr, nv_ms / dp_ms), (Impl::Naive, nv_ms, nv_iqr, 1.0)] {
                        rows.push(BenchRow {
                            layers,
                            width,
                            order,
                            kind,
                            imp,
                            median_ms: ms,
                            iqr_ms: iqr,
                            speedup,
                            stable: iqr < 0.2 * ms,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "layers,width,order,kind,impl,median_ms,speedup")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.6},{:.4}",
            r.layers,
            r.width,
            r.order,
            r.kind.label(),
            r.imp.label(),
            r.median_ms,
            r.speedup
        )?;
    }
    Ok(())
}
