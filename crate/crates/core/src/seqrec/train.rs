use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{net, ItemSequence, SeqConfig, SeqEnsemble, SeqModel};
use crate::dataset::{DatasetBundle, ItemId, UserId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_perplexity: f64,
    /// Equal to the training perplexity when no user is held out.
    pub dev_perplexity: f64,
}

#[derive(Clone, Debug)]
pub struct SeqFit<T> {
    /// Model of the epoch with the lowest dev perplexity.
    pub model: SeqModel<T>,
    pub trace: Vec<SeqEpoch>,
    pub best_epoch: usize,
}

fn tail(seq: &ItemSequence, max_len: usize) -> &[ItemId] {
    &seq.items[seq.items.len().saturating_sub(max_len)..]
}

/// Mini-batches of similar length, in length order.
fn batches<'s>(seqs: &[&'s ItemSequence], size: usize, max_len: usize) -> Vec<Vec<(&'s [ItemId], UserId)>> {
    let mut sorted: Vec<(&[ItemId], UserId)> = seqs.iter().map(|s| (tail(s, max_len), s.user)).collect();
    sorted.sort_by_key(|(items, _)| items.len());
    sorted.chunks(size).map(<[_]>::to_vec).collect()
}

fn unzip_batch<'s>(b: &[(&'s [ItemId], UserId)]) -> (Vec<&'s [ItemId]>, Vec<UserId>) {
    b.iter().copied().unzip()
}

/// Perplexity without dropout.
fn perplexity<T: Scalar>(model: &SeqModel<T>, batches: &[Vec<(&[ItemId], UserId)>]) -> f64 {
    let (mut loss, mut tokens) = (0.0, 0usize);
    for b in batches {
        let (seqs, users) = unzip_batch(b);
        let fwd = net::forward::<T, ChaCha8Rng>(&model.params, model.dims, model.batch(&seqs, &users), None, 1.0);
        loss += fwd.loss;
        tokens += fwd.tokens;
    }
    (loss / tokens.max(1) as f64).exp()
}

/// SGD with global-norm clipping over length-bucketed mini-batches. Users
/// are split at random into train and dev; the learning rate decays each
/// time dev perplexity rises, and the best-dev model is returned.
pub fn train_seq<T: Scalar>(bundle: &DatasetBundle, seqs: &[ItemSequence], cfg: &SeqConfig) -> Result<SeqFit<T>> {
    cfg.validate()?;
    let seqs: Vec<&ItemSequence> = seqs.iter().filter(|s| !s.is_empty()).collect();
    if seqs.is_empty() {
        return Err(Error::Training("no non-empty training sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut users: Vec<UserId> = seqs.iter().map(|s| s.user).collect::<BTreeSet<_>>().into_iter().collect();
    users.shuffle(&mut rng);
    let n_dev = if users.len() >= 2 { ((users.len() as f64 * cfg.dev_fraction).round() as usize).min(users.len() - 1) } else { 0 };
    let dev_users: BTreeSet<UserId> = users[..n_dev].iter().copied().collect();
    let (dev, train): (Vec<&ItemSequence>, Vec<&ItemSequence>) = seqs.iter().partition(|s| dev_users.contains(&s.user));
    let mut train_batches = batches(&train, cfg.batch, cfg.max_len);
    let dev_batches = batches(&dev, cfg.batch.max(64), cfg.max_len);

    let mut model = SeqModel::<T>::zeros(bundle, cfg);
    model.params.init_uniform(cfg.init_scale, &mut rng);
    let mut grad = model.params.zeros_like();
    let mut lr = cfg.lr0;
    let mut prev_dev = f64::INFINITY;
    let mut best: Option<(f64, usize, SeqModel<T>)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        train_batches.shuffle(&mut rng);
        let (mut loss, mut tokens) = (0.0, 0usize);
        for b in &train_batches {
            let (seqs, users) = unzip_batch(b);
            grad.fill_zero();
            let batch = model.batch(&seqs, &users);
            let fwd = net::forward(&model.params, model.dims, batch, Some((cfg.dropout, &mut rng)), b.len() as f64);
            net::backward(&model.params, &mut grad, &fwd.cache);
            loss += fwd.loss;
            tokens += fwd.tokens;
            drop(fwd);
            grad.clip(cfg.clip);
            model.params.descend(&grad, T::of(lr));
        }
        let train_ppl = (loss / tokens.max(1) as f64).exp();
        if !train_ppl.is_finite() {
            return Err(Error::Training(format!("perplexity diverged at epoch {epoch}")));
        }
        let dev_ppl = if dev_batches.is_empty() { train_ppl } else { perplexity(&model, &dev_batches) };
        trace.push(SeqEpoch { epoch, lr, train_perplexity: train_ppl, dev_perplexity: dev_ppl });
        if best.as_ref().is_none_or(|(b, _, _)| dev_ppl < *b) {
            best = Some((dev_ppl, epoch, model.clone()));
        }
        if dev_ppl > prev_dev {
            lr *= cfg.decay;
        }
        prev_dev = dev_ppl;
    }
    let (_, best_epoch, model) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, model),
    };
    Ok(SeqFit { model, trace, best_epoch })
}

/// `cfg.ensemble_seeds` models, seeds `cfg.seed, cfg.seed + 1, ..`.
pub fn train_seq_ensemble<T: Scalar>(
    bundle: &DatasetBundle,
    seqs: &[ItemSequence],
    cfg: &SeqConfig,
) -> Result<(SeqEnsemble<T>, Vec<SeqFit<T>>)> {
    let mut fits = Vec::with_capacity(cfg.ensemble_seeds);
    for k in 0..cfg.ensemble_seeds as u64 {
        fits.push(train_seq::<T>(bundle, seqs, &SeqConfig { seed: cfg.seed.wrapping_add(k), ..cfg.clone() })?);
    }
    let ens = SeqEnsemble::new(fits.iter().map(|f| f.model.clone()).collect())?;
    Ok((ens, fits))
}
