use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};
use crate::rng::stream;
use crate::stpp::{AutoStppModel, EventSequence, LikelihoodBatch};

/// Events `range` of one sequence; the unit of mini-batching.
pub type Chunk<'a> = (&'a EventSequence, Range<usize>);

/// A model fit by maximizing its log-likelihood with Adam.
pub trait Trainable: Clone {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Leading entries of [`Trainable::params`] that parametrize the
    /// background rate; the rest parametrize the influence.
    fn n_background_params(&self) -> usize {
        1
    }

    /// Negative log-likelihood of the chunks and its parameter gradient.
    fn nll_grad(&self, chunks: &[Chunk<'_>], rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>)>;

    /// Negative log-likelihood of whole sequences.
    fn nll(&self, seqs: &[EventSequence]) -> Result<f64>;
}

impl Trainable for AutoStppModel {
    fn params(&self) -> Vec<&Tensor> {
        self.tensors()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut()
    }

    fn nll_grad(&self, chunks: &[Chunk<'_>], _rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>)> {
        let batch = LikelihoodBatch::from_chunks(chunks, self.window())?;
        let tape = Tape::new();
        let raw: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect::<Result<_>>()?;
        let net = self.prodsum().bind(&&tape, &raw[1..])?;
        let nll = batch.evaluate(&&tape, &raw[0], &net)?.scale(-1.0)?;
        let value = nll.item()?;
        Ok((value, tape.backward(nll)?.into_vec()))
    }

    fn nll(&self, seqs: &[EventSequence]) -> Result<f64> {
        seqs.iter().map(|s| self.log_likelihood(s).map(|ll| -ll)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Target number of events per mini-batch.
    pub batch_events: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    /// Update only the background rate.
    pub freeze_influence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            batch_events: 128,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            freeze_influence: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            clip_norm: self.clip_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_events == 0 {
            return Err(Error::invalid("batch_events must be positive"));
        }
        Ok(())
    }
}

/// The learning rates tried by [`fit_lr_grid`].
pub const LR_GRID: [f64; 3] = [2e-4, 1e-3, 4e-3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-event negative log-likelihood over the epoch's batches.
    pub train_nll: f64,
    /// Per-event negative log-likelihood on the validation set after the epoch.
    pub val_nll: f64,
    pub wall_ms: f64,
    /// Steps whose gradient was clipped.
    pub clipped_steps: usize,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<M> {
    /// Parameters with the best validation score (the initial model counts
    /// as epoch 0).
    pub model: M,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub log: Vec<EpochLog>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Events per unit area and time over the sequences.
pub fn empirical_rate(seqs: &[EventSequence]) -> Result<f64> {
    let n: usize = seqs.iter().map(EventSequence::len).sum();
    let exposure: f64 = seqs.iter().map(|s| s.domain().area() * s.horizon()).sum();
    if n == 0 || exposure <= 0.0 {
        return Err(Error::invalid("no events to estimate a rate from"));
    }
    Ok(n as f64 / exposure)
}

/// Splits every sequence into pieces of at most `target` events. A
/// sequence without events still contributes its background term.
fn chunk_units(seqs: &[EventSequence], target: usize) -> Vec<(usize, Range<usize>)> {
    let mut units = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        let n = seq.len();
        if n == 0 {
            units.push((s, 0..0));
            continue;
        }
        let pieces = n.div_ceil(target);
        for k in 0..pieces {
            units.push((s, k * n / pieces..(k + 1) * n / pieces));
        }
    }
    units
}

/// Greedily packs shuffled units into batches of about `target` events.
fn pack(units: &[(usize, Range<usize>)], target: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut size = 0;
    for (i, (_, r)) in units.iter().enumerate() {
        if !current.is_empty() && size + r.len() > target {
            batches.push(std::mem::take(&mut current));
            size = 0;
        }
        current.push(i);
        size += r.len();
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn per_event(total: f64, seqs: &[EventSequence]) -> f64 {
    total / seqs.iter().map(EventSequence::len).sum::<usize>().max(1) as f64
}

/// Adam on mini-batches of consecutive events, keeping the parameters with
/// the lowest validation NLL (training NLL when `val` is empty).
pub fn fit<M: Trainable>(init: &M, train: &[EventSequence], val: &[EventSequence], cfg: &TrainConfig) -> Result<FitOutcome<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    let adam = cfg.adam();
    let score_set = if val.is_empty() { train } else { val };
    let mut model = init.clone();
    let mut best = FitOutcome {
        best_val_nll: per_event(model.nll(score_set)?, score_set),
        model: model.clone(),
        best_epoch: 0,
        log: Vec::new(),
        diverged: None,
    };
    let units = chunk_units(train, cfg.batch_events);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut shuffle_rng = stream(cfg.seed, "train");
    let mut model_rng = stream(cfg.seed, "mc");
    let mut state = AdamState::default();
    let n_update = if cfg.freeze_influence {
        model.n_background_params()
    } else {
        model.params().len()
    };

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let shuffled: Vec<(usize, Range<usize>)> = order.iter().map(|&i| units[i].clone()).collect();
        let (mut total, mut events, mut clipped_steps) = (0.0, 0usize, 0usize);
        for batch in pack(&shuffled, cfg.batch_events) {
            let chunks: Vec<Chunk> = batch.iter().map(|&u| (&train[shuffled[u].0], shuffled[u].1.clone())).collect();
            let n: usize = chunks.iter().map(|c| c.1.len()).sum();
            let (nll, grads) = model.nll_grad(&chunks, &mut model_rng)?;
            if !nll.is_finite() {
                best.diverged = Some(format!("non-finite loss {nll} in epoch {epoch}"));
                break 'epochs;
            }
            let scale = 1.0 / n.max(1) as f64;
            let grads: Vec<Tensor> = grads[..n_update].iter().map(|g| g.scale(scale)).collect();
            let mut params = model.params_mut();
            match adam_step(&mut params[..n_update], &grads, &mut state, &adam) {
                Ok(info) => clipped_steps += usize::from(info.clipped),
                Err(Error::NonFinite(msg)) => {
                    best.diverged = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            total += nll;
            events += n;
        }
        let score = per_event(model.nll(score_set)?, score_set);
        best.log.push(EpochLog {
            epoch,
            train_nll: total / events.max(1) as f64,
            val_nll: score,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            clipped_steps,
        });
        if !score.is_finite() {
            best.diverged = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        if score < best.best_val_nll {
            best.best_val_nll = score;
            best.best_epoch = epoch;
            best.model = model.clone();
        }
    }
    Ok(best)
}

/// The winning run and each rate's best validation score.
pub type LrGridOutcome<M> = (FitOutcome<M>, Vec<(f64, f64)>);

/// Runs [`fit`] once per learning rate and keeps the run with the best
/// validation score. Also returns each rate's best score.
pub fn fit_lr_grid<M: Trainable>(
    init: &M,
    train: &[EventSequence],
    val: &[EventSequence],
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<LrGridOutcome<M>> {
    let mut best: Option<(f64, FitOutcome<M>)> = None;
    let mut scores = Vec::new();
    for &lr in grid {
        let out = fit(init, train, val, &TrainConfig { lr, ..cfg.clone() })?;
        scores.push((lr, out.best_val_nll));
        if best.as_ref().is_none_or(|(_, b)| out.best_val_nll < b.best_val_nll) {
            best = Some((lr, out));
        }
    }
    let (_, out) = best.ok_or_else(|| Error::invalid("empty learning-rate grid"))?;
    Ok((out, scores))
}

/// Writes `epoch,train_nll,val_nll,wall_ms` rows with a header.
pub fn write_log_csv<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch,train_nll,val_nll,wall_ms")?;
    for e in log {
        writeln!(w, "{},{},{},{:.3}", e.epoch, e.train_nll, e.val_nll, e.wall_ms)?;
    }
    Ok(())
}
