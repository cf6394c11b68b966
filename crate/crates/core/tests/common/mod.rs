//! Test-only helpers and independent numerical oracles.
#![allow(dead_code, clippy::excessive_precision)]

use autostpp::autoint::{InitOptions, MlpSpec, ParamSet};
use autostpp::grid::Rect;
use autostpp::numkit::{finite_diff, Activation, Tensor};
use autostpp::stpp::{AutoStppModel, Event, EventSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// |a-b| relative to the larger magnitude, with `floor` guarding values near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Composite Gauss-Legendre rule on [a, b] with `panels` panels of `n` nodes.
pub fn gl_rule(a: f64, b: f64, n: usize, panels: usize) -> Vec<(f64, f64)> {
    let (xs, ws) = gauss_legendre(n);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(n * panels);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in xs.iter().zip(&ws) {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// Nested tensor-product Gauss-Legendre quadrature over a box.
pub fn cube_quadrature(f: impl Fn(f64, f64, f64) -> f64, lo: [f64; 3], hi: [f64; 3], n: usize, panels: usize) -> f64 {
    let rx = gl_rule(lo[0], hi[0], n, panels);
    let ry = gl_rule(lo[1], hi[1], n, panels);
    let rt = gl_rule(lo[2], hi[2], n, panels);
    let mut total = 0.0;
    for &(x, wx) in &rx {
        for &(y, wy) in &ry {
            for &(t, wt) in &rt {
                total += wx * wy * wt * f(x, y, t);
            }
        }
    }
    total
}

/// [`cube_quadrature`] for an integrand that evaluates a `[n, 3]` batch of
/// points at once, processed in slabs of constant first coordinate.
pub fn cube_quadrature_batch(f: impl Fn(&Tensor) -> Tensor, lo: [f64; 3], hi: [f64; 3], n: usize, panels: usize) -> f64 {
    let rx = gl_rule(lo[0], hi[0], n, panels);
    let ry = gl_rule(lo[1], hi[1], n, panels);
    let rt = gl_rule(lo[2], hi[2], n, panels);
    let mut total = 0.0;
    for &(x, wx) in &rx {
        let mut pts = Vec::with_capacity(3 * ry.len() * rt.len());
        let mut ws = Vec::with_capacity(ry.len() * rt.len());
        for &(y, wy) in &ry {
            for &(t, wt) in &rt {
                pts.extend_from_slice(&[x, y, t]);
                ws.push(wx * wy * wt);
            }
        }
        let vals = f(&Tensor::matrix(ws.len(), 3, pts).unwrap());
        total += vals.data().iter().zip(&ws).map(|(v, w)| v * w).sum::<f64>();
    }
    total
}

/// Adaptive Gauss-Kronrod (G7/K15) on [a, b] to absolute tolerance `tol`.
pub fn adaptive_1d(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const XK: [f64; 8] = [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ];
    const WK: [f64; 8] = [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ];
    const WG: [f64; 4] = [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ];
    fn gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WK[7] * fc;
        let mut g = WG[3] * fc;
        for i in 0..7 {
            let s = f(c - h * XK[i]) + f(c + h * XK[i]);
            k += WK[i] * s;
            if i % 2 == 1 {
                g += WG[i / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (k, err) = gk(f, a, b);
        if err <= tol || depth > 40 {
            return k;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

const GK_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15 Kronrod nodes on [-1, 1] with Kronrod weights and embedded Gauss weights (0 off the Gauss nodes).
fn gk15() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(15);
    for i in 0..7 {
        let wg = if i % 2 == 1 { GK_WG[i / 2] } else { 0.0 };
        out.push((-GK_X[i], GK_WK[i], wg));
    }
    out.push((0.0, GK_WK[7], GK_WG[3]));
    for i in (0..7).rev() {
        let wg = if i % 2 == 1 { GK_WG[i / 2] } else { 0.0 };
        out.push((GK_X[i], GK_WK[i], wg));
    }
    out
}

/// Evaluates a function at a batch of `(t, x, y)` points.
pub type BatchFn<'a> = dyn Fn(&[(f64, f64, f64)]) -> Vec<f64> + 'a;

/// Adaptive cubature over a box with a tensor Gauss-Kronrod 15/7 pair; boxes
/// whose Kronrod and Gauss estimates differ by more than their share of `tol`
/// are bisected along their longest side. `f` evaluates a batch of points.
pub fn adaptive_cube(f: &BatchFn, lo: [f64; 3], hi: [f64; 3], tol: f64) -> f64 {
    let rule = gk15();
    let mut stack = vec![(lo, hi, tol, 0usize)];
    let mut total = 0.0;
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let c: Vec<f64> = (0..3).map(|k| 0.5 * (lo[k] + hi[k])).collect();
        let h: Vec<f64> = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).collect();
        let mut pts = Vec::with_capacity(rule.len().pow(3));
        for a in &rule {
            for b in &rule {
                for d in &rule {
                    pts.push((c[0] + h[0] * a.0, c[1] + h[1] * b.0, c[2] + h[2] * d.0));
                }
            }
        }
        let vals = f(&pts);
        let (mut k, mut g) = (0.0, 0.0);
        let mut idx = 0;
        for a in &rule {
            for b in &rule {
                for d in &rule {
                    k += a.1 * b.1 * d.1 * vals[idx];
                    g += a.2 * b.2 * d.2 * vals[idx];
                    idx += 1;
                }
            }
        }
        let vol = h[0] * h[1] * h[2];
        let (k, err) = (k * vol, ((k - g) * vol).abs());
        if err <= tol || depth >= 30 {
            total += k;
            continue;
        }
        let axis = (0..3).max_by(|&i, &j| (hi[i] - lo[i]).total_cmp(&(hi[j] - lo[j]))).expect("three axes");
        let mut mid_hi = hi;
        mid_hi[axis] = c[axis];
        let mut mid_lo = lo;
        mid_lo[axis] = c[axis];
        stack.push((lo, mid_hi, 0.5 * tol, depth + 1));
        stack.push((mid_lo, hi, 0.5 * tol, depth + 1));
    }
    total
}

/// Log-likelihood by direct quadrature: the log intensity at each event minus
/// the integral of the intensity over the domain and `[0, T)`. Time is split at
/// the event times, where the history changes, and each piece is integrated by
/// [`adaptive_cube`] to absolute tolerance `tol`.
pub fn ll_by_quadrature(model: &AutoStppModel, seq: &EventSequence, tol: f64) -> f64 {
    let d = seq.domain();
    let log_sum: f64 = seq.events().iter().map(|e| model.intensity(e.x, e.y, e.t, seq).unwrap().ln()).sum();
    let mut cuts = vec![0.0];
    cuts.extend(seq.events().iter().map(|e| e.t));
    cuts.push(seq.horizon());
    let lam = |pts: &[(f64, f64, f64)]| model.intensity_points(pts, seq).unwrap();
    let pieces: Vec<_> = cuts.windows(2).filter(|w| w[1] > w[0]).collect();
    let compensator: f64 = pieces
        .iter()
        .map(|w| adaptive_cube(&lam, [d.x0, d.y0, w[0]], [d.x1, d.y1, w[1]], tol / pieces.len() as f64))
        .sum();
    log_sum - compensator
}

/// Random toy sequence of `n` events on `domain` over `[0, horizon)`.
pub fn toy_sequence(rng: &mut ChaCha8Rng, n: usize, domain: Rect, horizon: f64) -> EventSequence {
    let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon)).collect();
    ts.sort_by(f64::total_cmp);
    let events = ts
        .into_iter()
        .map(|t| Event::new(t, rng.random_range(domain.x0..domain.x1), rng.random_range(domain.y0..domain.y1)))
        .collect();
    EventSequence::new(events, domain, horizon).unwrap()
}

/// Direct re-evaluation of the layer composition with scalar loops.
pub fn oracle_forward(ps: &ParamSet, x: &[f64]) -> f64 {
    let ws = ps.effective_weights();
    let mut h = x.to_vec();
    let n = ws.len();
    for (l, w) in ws.iter().enumerate() {
        let (out, inp) = (w.rows(), w.cols());
        let mut z = vec![0.0; out];
        for (o, zo) in z.iter_mut().enumerate() {
            let bias = ps.layers[l].b.as_ref().map_or(0.0, |b| b.data()[o]);
            let row = &w.data()[o * inp..(o + 1) * inp];
            *zo = bias + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        }
        h = if l + 1 < n { z.iter().map(|&v| ps.spec.activation.eval(v, 0)).collect() } else { z };
    }
    h[0]
}

pub fn oracle_fd(ps: &ParamSet, x: &[f64], dims: &[usize]) -> f64 {
    let eps = match dims.len() {
        1 => 1e-5,
        2 => 1e-4,
        _ => 1e-3,
    };
    let f = |t: &Tensor| -> autostpp::Result<f64> { Ok(oracle_forward(ps, t.data())) };
    finite_diff(&f, &Tensor::row(x.to_vec()), dims, eps).unwrap()
}

pub const ACTS: [Activation; 3] = [
    Activation::Tanh,
    Activation::Softplus,
    Activation::SoftplusCubed,
];

pub fn random_net(r: &mut ChaCha8Rng) -> ParamSet {
    let d = r.random_range(1..=3);
    let depth = r.random_range(1..=3);
    let mut widths = vec![d];
    for _ in 0..depth {
        widths.push(r.random_range(2..=8));
    }
    widths.push(1);
    let mut spec = MlpSpec::new(widths, ACTS[r.random_range(0..3)]);
    if r.random_bool(0.5) {
        spec = spec.nonnegative();
    }
    if r.random_bool(0.2) {
        spec = spec.without_bias();
    }
    ParamSet::init_with(spec, r, InitOptions { input_range: None, gain: 1.5 }).unwrap()
}

pub fn random_dims(r: &mut ChaCha8Rng, d: usize) -> Vec<usize> {
    let k = r.random_range(1..=3);
    (0..k).map(|_| r.random_range(0..d)).collect()
}
