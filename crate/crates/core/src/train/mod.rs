//! Joint pretraining: Adam over per-play graphs, loss traces, per-timestep
//! evaluation and gradient checks.
//!
//! Every play in a batch gets its own graph over a shared read-only
//! parameter snapshot, so plays can be processed in parallel. Gradients and
//! batch-norm statistics are then reduced in batch order on the single
//! writer, which keeps runs bit-identical between `Exec` modes.

mod checkpoint;

pub use checkpoint::{
    dataset_fingerprint, load_checkpoint, read_checkpoint_meta, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, GradCheckReport};
use crate::model::{Model, PreparedPlay};
use crate::nn::{apply_bn_updates, BnUpdate, NormMode};
use crate::par::Exec;
use crate::real::{Precision, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub precision: Precision,
    pub bn_momentum: f64,
    /// Shuffle player slots per sample. The mask is not symmetric in slot
    /// order, so this keeps any one player from always seeing the others.
    pub permute_players: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            batch_size: 8,
            epochs: 20,
            alpha: 0.5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            precision: Precision::F32,
            bn_momentum: 0.1,
            permute_players: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("trainer.lr", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("trainer.batch_size", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("trainer.alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("trainer.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("trainer.beta2", "must be in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("trainer.adam_eps", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("trainer.bn_momentum", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter slot of the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.ids().map(|id| Array2::zeros(store.get(id).raw_dim())).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    /// One update. Parameters without a gradient are left alone, moments
    /// included.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = T::of(cfg.lr * c2.sqrt() / c1);
        let eps_hat = T::of(cfg.adam_eps * c2.sqrt());
        let (b1, b2) = (T::of(b1), T::of(b2));
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps_hat);
            });
        }
    }
}

/// Batch-mean losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub l_traj: f64,
    pub l_events: f64,
    pub l_total: f64,
}

/// Play-weighted means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub l_traj: f64,
    pub l_events: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<EpochSummary>,
    pub adam: Adam<T>,
}

impl<T> TrainOutcome<T> {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "step,l_traj,l_events,l_total")?;
    for r in trace {
        writeln!(w, "{},{:.9},{:.9},{:.9}", r.step, r.l_traj, r.l_events, r.l_total)?;
    }
    Ok(())
}

/// Shuffled batches; plays with different player counts never share one.
fn epoch_batches(plays: &[PreparedPlay], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..plays.len()).collect();
    idx.shuffle(rng);
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in idx {
        let n = plays[i].n_players();
        match groups.iter_mut().find(|(k, _)| *k == n) {
            Some((_, g)) => g.push(i),
            None => groups.push((n, vec![i])),
        }
    }
    groups
        .into_iter()
        .flat_map(|(_, g)| g.chunks(batch).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

struct PlayResult<T> {
    grads: Grads<T>,
    updates: Vec<BnUpdate<T>>,
    losses: [f64; 3],
}

fn play_step<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    play: &PreparedPlay,
    order: &[usize],
    alpha: f64,
) -> Result<PlayResult<T>> {
    let mut g = Graph::new(store);
    let mut updates = Vec::new();
    let l = model.losses(&mut g, play, order, alpha, NormMode::Batch, &mut updates)?;
    let losses = [l.traj, l.events, l.total].map(|v| g.scalar(v).as_f64());
    let grads = g.backward(l.total);
    Ok(PlayResult { grads, updates, losses })
}

/// Name of the first parameter with a non-finite gradient entry.
fn non_finite_grad<'a, T: Real>(g: &Grads<T>, store: &'a ParamStore<T>) -> Option<&'a str> {
    store.ids().find_map(|id| {
        let bad = g.get(id)?.iter().any(|x| !x.as_f64().is_finite());
        bad.then(|| store.name(id))
    })
}

/// Trains `store` in place. Deterministic for a fixed seed, precision and
/// dataset order regardless of `exec`.
pub fn pretrain<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    plays: &[PreparedPlay],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome<T>> {
    pretrain_from(model, store, plays, cfg, exec, Adam::new(store))
}

/// Like [`pretrain`], continuing from existing optimizer state.
pub fn pretrain_from<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    plays: &[PreparedPlay],
    cfg: &TrainConfig,
    exec: Exec,
    mut adam: Adam<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if plays.is_empty() {
        return Err(Error::Shape("training needs at least one play".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut epochs = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0f64; 3];
        for batch in epoch_batches(plays, cfg.batch_size, &mut rng) {
            let work: Vec<(usize, Vec<usize>)> = batch
                .iter()
                .map(|&i| {
                    let mut order: Vec<usize> = (0..plays[i].n_players()).collect();
                    if cfg.permute_players {
                        order.shuffle(&mut rng);
                    }
                    (i, order)
                })
                .collect();
            let snapshot: &ParamStore<T> = store;
            let results = exec.map(&work, |(i, order)| play_step(model, snapshot, &plays[*i], order, cfg.alpha));
            let step = trace.len();
            let mut all_grads = Vec::with_capacity(results.len());
            let mut all_updates = Vec::new();
            let mut means = [0.0f64; 3];
            for (r, (i, _)) in results.into_iter().zip(&work) {
                let r = r?;
                if !r.losses.iter().all(|x| x.is_finite()) {
                    return Err(Error::Diverged {
                        step,
                        detail: format!(
                            "epoch {epoch}, play {i}: l_traj={} l_events={} l_total={}",
                            r.losses[0], r.losses[1], r.losses[2]
                        ),
                    });
                }
                for k in 0..3 {
                    means[k] += r.losses[k];
                    sums[k] += r.losses[k];
                }
                all_grads.push(r.grads);
                all_updates.extend(r.updates);
            }
            let b = work.len() as f64;
            let mut grads = Grads::sum(all_grads).expect("non-empty batch");
            grads.scale(T::of(1.0 / b));
            if let Some(name) = non_finite_grad(&grads, store) {
                return Err(Error::Diverged {
                    step,
                    detail: format!("epoch {epoch}: non-finite gradient for `{name}`"),
                });
            }
            adam.step(store, &grads, cfg);
            apply_bn_updates(store, &all_updates, cfg.bn_momentum);
            let row = TraceRow {
                step,
                epoch,
                l_traj: means[0] / b,
                l_events: means[1] / b,
                l_total: means[2] / b,
            };
            log::debug!("step {step}: l_total {:.5}", row.l_total);
            trace.push(row);
        }
        let n = plays.len() as f64;
        let summary = EpochSummary {
            epoch,
            l_traj: sums[0] / n,
            l_events: sums[1] / n,
            l_total: sums[2] / n,
        };
        log::info!(
            "epoch {epoch}: l_traj {:.4} l_events {:.4} l_total {:.4}",
            summary.l_traj,
            summary.l_events,
            summary.l_total
        );
        epochs.push(summary);
    }
    Ok(TrainOutcome { trace, epochs, adam })
}

/// Row-wise `-ln softmax(logits)[target]`, computed stably in f64.
fn row_nll<T: Real>(logits: &Array2<T>, targets: impl Iterator<Item = usize>) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, y)| {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
            let lse = m + row.iter().map(|x| (x.as_f64() - m).exp()).sum::<f64>().ln();
            lse - row[y].as_f64()
        })
        .collect()
}

/// Mean teacher-forced trajectory NLL per step index over plays and players.
/// All plays must share the same number of steps.
pub fn eval_nll_by_timestep<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    plays: &[PreparedPlay],
    exec: Exec,
) -> Result<Vec<f64>> {
    let Some(first) = plays.first() else {
        return Err(Error::Shape("evaluation needs at least one play".into()));
    };
    let t_eff = first.t_eff();
    if let Some(p) = plays.iter().find(|p| p.t_eff() != t_eff) {
        return Err(Error::Shape(format!(
            "plays have different lengths ({} vs {} usable steps)",
            p.t_eff(),
            t_eff
        )));
    }
    let per_play = exec.map(plays, |play| -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let order: Vec<usize> = (0..play.n_players()).collect();
        let fwd = model.forward(&mut g, play, &order, NormMode::Running, &mut Vec::new())?;
        let logits = model.heads.trajectory_logits(&mut g, fwd.zhat);
        let n = play.n_players();
        let nll = row_nll(g.value(logits), (0..t_eff * n).map(|r| play.traj_bins[[r / n, r % n]]));
        Ok((0..t_eff).map(|t| nll[t * n..(t + 1) * n].iter().sum()).collect())
    });
    let mut sums = vec![0.0; t_eff];
    let mut count = 0usize;
    for (r, play) in per_play.into_iter().zip(plays) {
        for (s, v) in sums.iter_mut().zip(r?) {
            *s += v;
        }
        count += play.n_players();
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// Central-difference check of the composite loss over `n_coords` random
/// trainable coordinates, in 64-bit, with batch statistics as in training.
pub fn gradient_check(
    model: &Model,
    store: &ParamStore<f64>,
    play: &PreparedPlay,
    alpha: f64,
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    crate::objectives::check_alpha(alpha)?;
    let order: Vec<usize> = (0..play.n_players()).collect();
    // Surface shape errors before the closure, which cannot return them.
    model.losses(&mut Graph::new(store), play, &order, alpha, NormMode::Batch, &mut Vec::new())?;
    Ok(check_gradients(store, eps, Some((n_coords, seed)), |g| {
        model
            .losses(g, play, &order, alpha, NormMode::Batch, &mut Vec::new())
            .expect("validated above")
            .total
    }))
}
