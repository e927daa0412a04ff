//! LSTM encoder-decoder over a user's positive item sequence.
//!
//! The user's profile features are encoded into the initial LSTM state; the
//! decoder then reads `<START>, i^1, .., i^{T-1}` and predicts the next item
//! at every step. User ids are never an input, so predictions depend on the
//! profile and the history only.

mod checkpoint;
mod features;
mod net;
mod params;
mod train;

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_item_vocab, DatasetBundle, ItemId, ItemVocab, UserId, Week};
use crate::error::{Error, Result};
use crate::metrics::{RankedList, MAX_LIST_LEN};
use crate::scalar::Scalar;
use features::{Cards, ItemFeat, SeqFeatures};
use net::Batch;

pub use checkpoint::{read_seq_model, write_seq_model};
pub use params::{Params, SeqDims};
pub use train::{train_seq, train_seq_ensemble, SeqEpoch, SeqFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    pub hidden: usize,
    /// Width of every feature embedding.
    pub emb: usize,
    /// LSTM input width both feature maps are projected to.
    pub input: usize,
    pub dropout: f64,
    pub lr0: f64,
    pub decay: f64,
    pub clip: f64,
    pub init_scale: f64,
    pub vocab_cap: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Only the last `max_len` items of a training sequence are used.
    pub max_len: usize,
    /// Share of users held out to measure perplexity.
    pub dev_fraction: f64,
    pub seed: u64,
    /// Models averaged by [`SeqEnsemble`].
    pub ensemble_seeds: usize,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            emb: 16,
            input: 64,
            dropout: 0.6,
            lr0: 1.0,
            decay: 0.7,
            clip: 5.0,
            init_scale: 0.08,
            vocab_cap: 2000,
            epochs: 10,
            batch: 32,
            max_len: 100,
            dev_fraction: 0.1,
            seed: 0,
            ensemble_seeds: 2,
        }
    }
}

impl SeqConfig {
    /// Hidden 256 and a 50k vocabulary.
    pub fn large() -> Self {
        Self { hidden: 256, input: 256, vocab_cap: 50_000, ensemble_seeds: 6, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.hidden == 0 || self.emb == 0 || self.input == 0 || self.batch == 0 || self.max_len == 0 {
            return bad("hidden, emb, input, batch and max_len must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr0 > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return bad("lr0 must be > 0 and decay in (0, 1]");
        }
        if !(self.clip > 0.0 && self.init_scale >= 0.0) {
            return bad("clip must be > 0 and init_scale >= 0");
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad("dev_fraction must lie in [0, 1)");
        }
        if self.ensemble_seeds == 0 {
            return bad("ensemble_seeds must be >= 1");
        }
        Ok(())
    }
}

/// Time-ordered positive items of one user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub weeks: Vec<Week>,
}

impl ItemSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One sequence per user with a positive interaction, ordered by user id.
pub fn build_sequences(bundle: &DatasetBundle) -> Vec<ItemSequence> {
    let by_user: BTreeMap<UserId, Vec<(ItemId, Week)>> = bundle.positive_sequences().into_iter().collect();
    by_user
        .into_iter()
        .map(|(user, seq)| {
            let (items, weeks) = seq.into_iter().unzip();
            ItemSequence { user, items, weeks }
        })
        .collect()
}

/// `n` thinned copies of every sequence, each item kept independently with
/// probability `keep`. Empty draws are dropped.
pub fn subsample_sequences(data: &[ItemSequence], n: usize, keep: f64, seed: u64) -> Result<Vec<ItemSequence>> {
    if n == 0 || !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config("subsampling needs n >= 1 and keep in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(data.len() * n);
    for seq in data {
        for _ in 0..n {
            let mut draw = ItemSequence { user: seq.user, items: Vec::new(), weeks: Vec::new() };
            for (&item, &week) in seq.items.iter().zip(&seq.weeks) {
                if keep >= 1.0 || rng.gen_bool(keep) {
                    draw.items.push(item);
                    draw.weeks.push(week);
                }
            }
            if !draw.is_empty() {
                out.push(draw);
            }
        }
    }
    Ok(out)
}

/// A trained sequence model together with the features of the bundle it
/// serves.
#[derive(Clone, Debug)]
pub struct SeqModel<T> {
    dims: SeqDims,
    vocab: ItemVocab,
    cards: Cards,
    features: SeqFeatures,
    params: Params<T>,
}

impl<T: Scalar> SeqModel<T> {
    /// Zero parameters sized for `bundle` with a vocabulary of at most
    /// `cfg.vocab_cap` items.
    pub fn zeros(bundle: &DatasetBundle, cfg: &SeqConfig) -> Self {
        let vocab = build_item_vocab(bundle, cfg.vocab_cap);
        let dims = SeqDims { emb: cfg.emb, input: cfg.input, hidden: cfg.hidden, vocab: vocab.len() };
        Self::with_vocab(bundle, dims, vocab)
    }

    pub(crate) fn with_vocab(bundle: &DatasetBundle, dims: SeqDims, vocab: ItemVocab) -> Self {
        Self::assemble(bundle, dims, vocab, Cards::of(bundle))
    }

    fn assemble(bundle: &DatasetBundle, dims: SeqDims, vocab: ItemVocab, cards: Cards) -> Self {
        let features = SeqFeatures::new(bundle, &vocab, &cards);
        let params = Params::zeros(dims, &cards.user, &cards.item, cards.user_tokens, cards.item_tokens);
        Self { dims, vocab, cards, features, params }
    }

    pub fn init_uniform(&mut self, scale: f64, seed: u64) {
        self.params.init_uniform(scale, &mut ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn dims(&self) -> SeqDims {
        self.dims
    }

    pub fn vocab(&self) -> &ItemVocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    /// `f(u)`: the user's feature concatenation (ids excluded).
    pub fn feature_map_user(&self, user: UserId) -> Array1<T> {
        let mut out = Array1::zeros(self.dims.user_width());
        features::user_concat(&self.params, self.features.user(user), out.view_mut());
        out
    }

    /// `f(i)`: the item's feature concatenation, id embedding first.
    pub fn feature_map_item(&self, item: ItemId) -> Array1<T> {
        let mut out = Array1::zeros(self.dims.item_width());
        features::item_concat(&self.params, self.features.item(item), out.view_mut());
        out
    }

    /// One LSTM step of the shared cell on an `F`-wide input.
    pub fn lstm_step(&self, x: &Array1<T>, h: &Array1<T>, c: &Array1<T>) -> (Array1<T>, Array1<T>) {
        let ax = ndarray::Axis(0);
        let out = net::cell(&self.params, x.view().insert_axis(ax), h.view().insert_axis(ax), c.view().insert_axis(ax));
        (out.h.row(0).to_owned(), out.c.row(0).to_owned())
    }

    /// Projection of `f(u)` to the LSTM input width.
    pub fn user_input(&self, user: UserId) -> Array1<T> {
        let f = self.feature_map_user(user);
        f.dot(self.params.slot(params::USER_PROJ)) + self.params.slot(params::USER_PROJ_B).row(0)
    }

    /// Projection of `f(i)` to the LSTM input width.
    pub fn item_input(&self, item: ItemId) -> Array1<T> {
        let f = self.feature_map_item(item);
        f.dot(self.params.slot(params::ITEM_PROJ)) + self.params.slot(params::ITEM_PROJ_B).row(0)
    }

    /// `(h_enc, c_enc)`: one step on the user's input from zero states.
    pub fn encode_user(&self, user: UserId) -> (Array1<T>, Array1<T>) {
        let zero = Array1::zeros(self.dims.hidden);
        self.lstm_step(&self.user_input(user), &zero, &zero)
    }

    fn item_feats(&self, items: &[ItemId]) -> Vec<&ItemFeat> {
        items.iter().map(|&i| self.features.item(i)).collect()
    }

    pub(crate) fn batch<'a>(&'a self, seqs: &[&[ItemId]], users: &[UserId]) -> Batch<'a> {
        let feats: Vec<Vec<&ItemFeat>> = seqs.iter().map(|s| self.item_feats(s)).collect();
        Batch::new(users.iter().map(|&u| self.features.user(u)).collect(), &feats, &self.features.start)
    }

    /// Mean cross-entropy (nats per step) of `seq`, and the cache to
    /// differentiate it.
    pub fn forward_loss<'a>(&'a self, seq: &ItemSequence, dropout: Option<(f64, &mut ChaCha8Rng)>) -> (f64, SeqCache<'a, T>) {
        let batch = self.batch(&[&seq.items], &[seq.user]);
        let fwd = net::forward(&self.params, self.dims, batch, dropout, seq.len().max(1) as f64);
        (fwd.loss / fwd.tokens.max(1) as f64, SeqCache(fwd.cache))
    }

    /// Gradient of the mean loss returned by [`Self::forward_loss`].
    pub fn backward(&self, cache: &SeqCache<'_, T>) -> Params<T> {
        let mut g = self.params.zeros_like();
        net::backward(&self.params, &mut g, &cache.0);
        g
    }

    /// Next-item distribution (over vocabulary symbols) after each user's
    /// full history, one row per user.
    pub fn next_item_probs(&self, users: &[UserId], histories: &[&[ItemId]]) -> Array2<T> {
        let mut out = Array2::zeros((users.len(), self.dims.vocab));
        // similar lengths share a batch to limit padding
        let mut order: Vec<usize> = (0..users.len()).collect();
        order.sort_by_key(|&k| (histories[k].len(), k));
        for chunk in order.chunks(128) {
            let us: Vec<_> = chunk.iter().map(|&k| self.features.user(users[k])).collect();
            let hs: Vec<Vec<&ItemFeat>> = chunk.iter().map(|&k| self.item_feats(histories[k])).collect();
            let h = net::final_states(&self.params, self.dims, &us, &hs, &self.features.start);
            let p = net::next_item_probs(&self.params, &h);
            for (r, &k) in chunk.iter().enumerate() {
                out.row_mut(k).assign(&p.row(r));
            }
        }
        out
    }

    /// Top-`k` candidates by next-step probability after `history`.
    pub fn recommend(&self, user: UserId, history: &[ItemId], candidates: &[ItemId], k: usize) -> RankedList {
        let p = self.next_item_probs(&[user], &[history]);
        rank_candidates(&self.vocab, user, p.row(0).mapv(Scalar::as_f64).as_slice().unwrap(), candidates, k)
    }

    #[cfg(test)]
    pub(crate) fn features(&self) -> &SeqFeatures {
        &self.features
    }
}

/// Forward pass state kept for [`SeqModel::backward`].
pub struct SeqCache<'a, T>(net::ForwardCache<'a, T>);

/// Scores candidates by their symbol's probability; out-of-vocabulary
/// candidates split the `<UNK>` mass equally.
pub(crate) fn rank_candidates(vocab: &ItemVocab, user: UserId, probs: &[f64], candidates: &[ItemId], k: usize) -> RankedList {
    let oov = candidates.iter().filter(|&&c| !vocab.contains(c)).count().max(1);
    let unk = probs[ItemVocab::UNK as usize] / oov as f64;
    let scored = candidates
        .iter()
        .map(|&c| {
            let sym = vocab.symbol(c);
            (c, if sym == ItemVocab::UNK { unk } else { probs[sym as usize] })
        })
        .collect();
    RankedList::from_scored(user, scored, k)
}

/// Top-`k` of `candidates` for one user after `history`.
pub fn recommend_seq<T: Scalar>(
    model: &SeqModel<T>,
    user: UserId,
    history: &[ItemId],
    candidates: &[ItemId],
    k: usize,
) -> RankedList {
    model.recommend(user, history, candidates, k)
}

/// Models trained with different seeds on the same data; their next-item
/// probabilities are averaged.
#[derive(Clone, Debug)]
pub struct SeqEnsemble<T> {
    pub models: Vec<SeqModel<T>>,
}

impl<T: Scalar> SeqEnsemble<T> {
    pub fn new(models: Vec<SeqModel<T>>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::Input("empty sequence ensemble".into()));
        };
        if models.iter().any(|m| m.vocab != first.vocab) {
            return Err(Error::Input("ensemble members disagree on the item vocabulary".into()));
        }
        Ok(Self { models })
    }

    pub fn next_item_probs(&self, users: &[UserId], histories: &[&[ItemId]]) -> Array2<f64> {
        let mut sum = Array2::<f64>::zeros((users.len(), self.models[0].dims.vocab));
        for m in &self.models {
            sum += &m.next_item_probs(users, histories).mapv(Scalar::as_f64);
        }
        sum / self.models.len() as f64
    }

    /// Lists for every user of `users`, histories taken from `history`.
    pub fn predict(
        &self,
        users: &[UserId],
        history: &HashMap<UserId, Vec<ItemId>>,
        candidates: &[ItemId],
        k: usize,
    ) -> Vec<RankedList> {
        let empty = Vec::new();
        let hs: Vec<&[ItemId]> = users.iter().map(|u| history.get(u).unwrap_or(&empty).as_slice()).collect();
        let p = self.next_item_probs(users, &hs);
        users
            .iter()
            .enumerate()
            .map(|(r, &u)| rank_candidates(&self.models[0].vocab, u, p.row(r).as_slice().unwrap(), candidates, k.min(MAX_LIST_LEN)))
            .collect()
    }
}

/// Item history of every user in `bundle`, as fed to the decoder.
pub fn histories(bundle: &DatasetBundle) -> HashMap<UserId, Vec<ItemId>> {
    build_sequences(bundle).into_iter().map(|s| (s.user, s.items)).collect()
}
