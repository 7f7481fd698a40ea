//! Shared plumbing for the training loops.

use autodiff::{Adam, Graph, ParamStore, Sgd, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{OptimizerKind, TrainConfig, TrainError};

pub(crate) enum Opt {
    Adam(Adam),
    Sgd(Sgd),
}

impl Opt {
    pub(crate) fn from_config(cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Adam => Opt::Adam(Adam::new(cfg.learning_rate)),
            OptimizerKind::Sgd {
                momentum,
                weight_decay,
            } => Opt::Sgd(Sgd::new(cfg.learning_rate, momentum, weight_decay)),
        }
    }

    pub(crate) fn step(&mut self, store: &mut ParamStore) {
        match self {
            Opt::Adam(o) => o.step(store),
            Opt::Sgd(o) => o.step(store),
        }
    }
}

/// Independent deterministic streams derived from the run seed, in a fixed
/// draw order so adding a consumer never shifts the others.
pub(crate) struct RngStreams {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub aug: ChaCha8Rng,
}

pub(crate) fn rng_streams(seed: u64) -> RngStreams {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let init = ChaCha8Rng::seed_from_u64(master.gen());
    let shuffle = ChaCha8Rng::seed_from_u64(master.gen());
    let dropout = ChaCha8Rng::seed_from_u64(master.gen());
    let aug = ChaCha8Rng::seed_from_u64(master.gen());
    RngStreams {
        init,
        shuffle,
        dropout,
        aug,
    }
}

/// Shuffled index batches for one epoch; the final batch may be short.
pub(crate) fn epoch_batches<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

pub(crate) fn mean_vars(g: &mut Graph, terms: &[Var]) -> Var {
    assert!(!terms.is_empty(), "mean over no loss terms");
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.mul_scalar(acc, 1.0 / terms.len() as f64)
}

pub(crate) fn flush_buffers(g: &mut Graph, store: &mut ParamStore) {
    for u in g.take_buffer_updates() {
        store.set_value(u.id, u.value);
    }
}

pub(crate) fn ensure_finite(value: f64, epoch: usize, batch: usize) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            epoch,
            batch,
            value,
        })
    }
}

/// Abort before handing non-finite logits to loss ops that treat bad
/// probabilities as caller bugs.
pub(crate) fn ensure_finite_logits(
    g: &Graph,
    v: Var,
    epoch: usize,
    batch: usize,
) -> Result<(), TrainError> {
    for &x in g.value(v).iter() {
        if !x.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch,
                value: x,
            });
        }
    }
    Ok(())
}
