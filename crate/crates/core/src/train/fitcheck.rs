//! Regression of positive derivative networks onto a fixed nonnegative
//! target, `sin(x)·cos(y)·sin(z) + 1` over `[0, 2π]³`.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};
use crate::prodnet::{prodsum_parts, ConstrainedTriple, ProdSum, ProdSumConfig};
use crate::rng::stream;

pub fn target(x: f64, y: f64, z: f64) -> f64 {
    x.sin() * y.cos() * z.sin() + 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitCheckConfig {
    pub n_points: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for FitCheckConfig {
    fn default() -> Self {
        FitCheckConfig {
            n_points: 4096,
            batch: 512,
            steps: 3000,
            lr: 3e-3,
            hidden: vec![32, 32],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// MSE over the full training set after the last step.
    pub final_mse: f64,
    /// `(step, full-set MSE)` at regular checkpoints.
    pub curve: Vec<(usize, f64)>,
}

/// Training points `[n, 3]` drawn uniformly from the cube and target values `[n, 1]`.
pub fn training_set(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut r = stream(seed, "fitcheck-data");
    let mut pts = Vec::with_capacity(3 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let p: [f64; 3] = [r.random_range(0.0..TAU), r.random_range(0.0..TAU), r.random_range(0.0..TAU)];
        ys.push(target(p[0], p[1], p[2]));
        pts.extend_from_slice(&p);
    }
    (
        Tensor::matrix(n, 3, pts).expect("sized above"),
        Tensor::column(ys),
    )
}

fn mse(pred: &Tensor, y: &Tensor) -> Result<f64> {
    let d = pred.sub(y)?;
    Ok(d.mul(&d)?.sum() / y.rows() as f64)
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let c = x.cols();
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
    }
    Tensor::matrix(idx.len(), c, out).expect("gathered rows")
}

/// Adam on minibatch MSE. `loss` builds the batch prediction on the tape;
/// `full` evaluates the model on the whole set.
fn minimize<M>(
    model: &mut M,
    cfg: &FitCheckConfig,
    tensors: fn(&M) -> Vec<&Tensor>,
    tensors_mut: fn(&mut M) -> Vec<&mut Tensor>,
    predict: impl for<'t> Fn(&M, &'t Tape, &[Var<'t>], &Tensor) -> Result<Var<'t>>,
    full: impl Fn(&M, &Tensor) -> Result<Tensor>,
) -> Result<FitResult> {
    if cfg.batch == 0 || cfg.n_points == 0 {
        return Err(Error::invalid("fit check needs a positive batch and point count"));
    }
    let (pts, ys) = training_set(cfg.n_points, cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_points).collect();
    let mut r = stream(cfg.seed, "fitcheck-batches");
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::default();
    let mut curve = Vec::new();
    let checkpoint = (cfg.steps / 20).max(1);
    let mut cursor = cfg.n_points;
    for step in 0..cfg.steps {
        if cursor + cfg.batch > cfg.n_points {
            order.shuffle(&mut r);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + cfg.batch).min(cfg.n_points)];
        cursor += cfg.batch;
        let (bx, by) = (gather(&pts, idx), gather(&ys, idx));

        let tape = Tape::new();
        let raw: Vec<Var> = tensors(model).into_iter().map(|t| tape.param(t.clone())).collect::<Result<_>>()?;
        let pred = predict(model, &tape, &raw, &bx)?;
        let diff = pred.sub(&tape.constant(by)?)?;
        let loss = diff.mul(&diff)?.sum()?.scale(1.0 / idx.len() as f64)?;
        let grads = tape.backward(loss)?.into_vec();
        adam_step(&mut tensors_mut(model), &grads, &mut state, &adam)?;
        if step % checkpoint == 0 {
            curve.push((step, mse(&full(model, &pts)?, &ys)?));
        }
    }
    let final_mse = mse(&full(model, &pts)?, &ys)?;
    curve.push((cfg.steps, final_mse));
    Ok(FitResult { final_mse, curve })
}

/// Fits a sum of `n_terms` positive ProdNets.
pub fn fit_prodsum(n_terms: usize, cfg: &FitCheckConfig) -> Result<(ProdSum, FitResult)> {
    let pcfg = ProdSumConfig {
        n_terms,
        hidden: cfg.hidden.clone(),
        ranges: [(0.0, TAU); 3],
        ..ProdSumConfig::default()
    };
    let mut model = ProdSum::new(&pcfg, &mut stream(cfg.seed, "fitcheck-init"))?;
    let result = minimize(
        &mut model,
        cfg,
        ProdSum::tensors,
        ProdSum::tensors_mut,
        |m, tape, raw, x| {
            let net = m.bind(&tape, raw)?;
            let axes = [tape.constant(x.col(0)?)?, tape.constant(x.col(1)?)?, tape.constant(x.col(2)?)?];
            let parts = prodsum_parts(&tape, &net, &axes, x.rows(), 0)?;
            Ok(parts.influence.expect("points requested"))
        },
        |m, x| m.influence_batch(x),
    )?;
    Ok((model, result))
}

/// Fits the single-network comparator whose activation has nonnegative
/// derivatives up to third order.
pub fn fit_triple(cfg: &FitCheckConfig) -> Result<(ConstrainedTriple, FitResult)> {
    let mut spec = ConstrainedTriple::default_spec();
    spec.widths = std::iter::once(3).chain(cfg.hidden.iter().copied()).chain(std::iter::once(1)).collect();
    let mut model = ConstrainedTriple::new(spec, Some((0.0, TAU)), &mut stream(cfg.seed, "fitcheck-init"))?;
    let result = minimize(
        &mut model,
        cfg,
        |m| m.params().tensors(),
        |m| m.params_mut().tensors_mut(),
        |m, tape, raw, x| {
            let net = m.params().bind(&tape, raw)?;
            let spec = crate::autoint::DerivSpec::new(&[0, 1, 2], 3)?;
            crate::autoint::dnforward(&tape, &net, &tape.constant(x.clone())?, &spec)
        },
        |m, x| m.density_batch(x),
    )?;
    Ok((model, result))
}
