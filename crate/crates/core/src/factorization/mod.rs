//! Hybrid matrix factorization.
//!
//! Users and items are embedded as the sum of their feature vectors, scored
//! by dot product plus biases and trained with WARP loss. Per-example
//! weights carry the temporal re-weighting `γ(week)` and the impression
//! down-weight.

mod features;
mod io;
mod train;
mod warp;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetBundle, ItemId, UserId, Week};
use crate::history::{TemporalWeights, KINDS};
use crate::metrics::RankedList;
use crate::scalar::Scalar;

pub use features::{FeatureSpace, NUMERIC_BUCKETS};
pub use io::{read_model, write_model};
pub use train::{train_mf, EpochScore, MfConfig, MfFit, Validation};
pub use warp::{harmonic, pair_gradient, warp_step, warp_step_with, Optimizer, PairGradient, Schedule, WarpOutcome};

/// Weight given to last-week impressions relative to real interactions.
pub const IMPRESSION_WEIGHT: f64 = 0.01;

/// Feature-sum embeddings with per-feature biases.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T> {
    space: FeatureSpace,
    user_vecs: Array2<T>,
    user_bias: Array1<T>,
    item_vecs: Array2<T>,
    item_bias: Array1<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn zeros(space: FeatureSpace, dim: usize) -> Self {
        Self {
            user_vecs: Array2::zeros((space.n_user_rows(), dim)),
            user_bias: Array1::zeros(space.n_user_rows()),
            item_vecs: Array2::zeros((space.n_item_rows(), dim)),
            item_bias: Array1::zeros(space.n_item_rows()),
            space,
        }
    }

    /// Vectors uniform in `[-0.5/d, 0.5/d]`, biases zero.
    pub fn init(space: FeatureSpace, dim: usize, seed: u64) -> Self {
        let mut m = Self::zeros(space, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let dist = Uniform::new_inclusive(-half, half);
        for v in m.user_vecs.iter_mut().chain(m.item_vecs.iter_mut()) {
            *v = T::of(dist.sample(&mut rng));
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.user_vecs.ncols()
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn user_vec(&self, row: usize) -> ArrayView1<'_, T> {
        self.user_vecs.row(row)
    }

    pub fn item_vec(&self, row: usize) -> ArrayView1<'_, T> {
        self.item_vecs.row(row)
    }

    pub fn user_bias(&self, row: usize) -> T {
        self.user_bias[row]
    }

    pub fn item_bias(&self, row: usize) -> T {
        self.item_bias[row]
    }

    pub fn set_user_row(&mut self, row: usize, bias: T, v: &[T]) {
        self.user_bias[row] = bias;
        self.user_vecs.row_mut(row).assign(&ArrayView1::from(v));
    }

    pub fn set_item_row(&mut self, row: usize, bias: T, v: &[T]) {
        self.item_bias[row] = bias;
        self.item_vecs.row_mut(row).assign(&ArrayView1::from(v));
    }

    fn sum_rows(vecs: &Array2<T>, bias: &Array1<T>, rows: &[u32]) -> (Array1<T>, T) {
        let mut q = Array1::zeros(vecs.ncols());
        let mut b = T::zero();
        for &r in rows {
            q += &vecs.row(r as usize);
            b += bias[r as usize];
        }
        (q, b)
    }

    /// `(q_u, b_u)` for the user at bundle index `idx`.
    pub fn embed_user(&self, idx: usize) -> (Array1<T>, T) {
        Self::sum_rows(&self.user_vecs, &self.user_bias, self.space.user_rows(idx))
    }

    /// `(q_i, b_i)` for the item at bundle index `idx`.
    pub fn embed_item(&self, idx: usize) -> (Array1<T>, T) {
        Self::sum_rows(&self.item_vecs, &self.item_bias, self.space.item_rows(idx))
    }

    /// `q_u · q_i + b_u + b_i`.
    pub fn score_pair(&self, user: usize, item: usize) -> T {
        let (qu, bu) = self.embed_user(user);
        let (qi, bi) = self.embed_item(item);
        qu.dot(&qi) + bu + bi
    }

    /// Embeddings of all items, for batch scoring.
    pub fn item_table(&self) -> ItemTable<T> {
        let n = self.space.n_items();
        let mut vecs = Array2::zeros((n, self.dim()));
        let mut bias = Array1::zeros(n);
        for i in 0..n {
            let (q, b) = self.embed_item(i);
            vecs.row_mut(i).assign(&q);
            bias[i] = b;
        }
        ItemTable { vecs, bias }
    }
}

/// Precomputed `(q_i, b_i)` for every item index.
#[derive(Clone, Debug)]
pub struct ItemTable<T> {
    vecs: Array2<T>,
    bias: Array1<T>,
}

impl<T: Scalar> ItemTable<T> {
    /// `S(u, i)` for every item index.
    pub fn scores(&self, model: &EmbeddingModel<T>, user: usize) -> Array1<T> {
        let (qu, bu) = model.embed_user(user);
        let mut s = self.vecs.dot(&qu);
        s += &self.bias;
        s.mapv_inplace(|v| v + bu);
        s
    }
}

/// Top-`k` of `candidates` for `user` by [`EmbeddingModel::score_pair`],
/// ties by item id. Unknown users and items are skipped.
pub fn recommend_mf<T: Scalar>(model: &EmbeddingModel<T>, user: UserId, candidates: &[ItemId], k: usize) -> RankedList {
    let table = model.item_table();
    recommend_with_table(model, &table, user, candidates, k)
}

pub(crate) fn recommend_with_table<T: Scalar>(
    model: &EmbeddingModel<T>,
    table: &ItemTable<T>,
    user: UserId,
    candidates: &[ItemId],
    k: usize,
) -> RankedList {
    let Some(u) = model.space().user_idx(user) else {
        return RankedList::empty(user);
    };
    RankedList::from_scored(user, score_candidates(model, table, u, candidates), k)
}

pub(crate) fn score_candidates<T: Scalar>(
    model: &EmbeddingModel<T>,
    table: &ItemTable<T>,
    user: usize,
    candidates: &[ItemId],
) -> Vec<(ItemId, f64)> {
    let all = table.scores(model, user);
    candidates
        .iter()
        .filter_map(|&id| model.space().item_idx(id).map(|i| (id, all[i].as_f64())))
        .collect()
}

/// A positive example with its loss multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedPair {
    pub user: UserId,
    pub item: ItemId,
    pub week: Week,
    pub weight: f64,
}

/// Per-week loss weight: uniform (plain hybrid MF) or a week → weight map,
/// with weeks absent from the map weighted 0.
#[derive(Clone, Debug, PartialEq)]
pub enum Gamma {
    Uniform,
    PerWeek(BTreeMap<Week, f64>),
}

impl Gamma {
    pub fn at(&self, week: Week) -> f64 {
        match self {
            Gamma::Uniform => 1.0,
            Gamma::PerWeek(m) => m.get(&week).copied().unwrap_or(0.0),
        }
    }
}

/// `γ(τ) = max(0, Σ_k w(k, train_end + 1 - τ))`, scaled to a maximum of 1.
/// Weeks outside the lag window are absent (weight 0).
pub fn gamma_from_w<T: Scalar>(w: &TemporalWeights<T>, train_end: Week) -> BTreeMap<Week, f64> {
    let mut out = BTreeMap::new();
    for lag in 1..=w.lags() {
        let Some(week) = (train_end + 1).checked_sub(lag as Week) else {
            break;
        };
        let sum: f64 = (0..KINDS).map(|k| w.get(k, lag).as_f64()).sum();
        out.insert(week, sum.max(0.0));
    }
    let max = out.values().copied().fold(0.0, f64::max);
    for v in out.values_mut() {
        *v = if max > 0.0 { *v / max } else { 0.0 };
    }
    out
}

/// One pair per positive interaction weighted `γ(week)`, plus, with
/// `use_impressions`, every impression of the last training week weighted
/// `0.01 γ(last)`. Zero-weight pairs are dropped.
pub fn build_training_pairs(train: &DatasetBundle, gamma: &Gamma, use_impressions: bool) -> Vec<WeightedPair> {
    let mut out: Vec<WeightedPair> = train
        .interactions()
        .iter()
        .filter(|x| x.kind.is_positive())
        .map(|x| WeightedPair { user: x.user, item: x.item, week: x.week, weight: gamma.at(x.week) })
        .collect();
    if use_impressions {
        let last = train.weeks().1;
        let weight = IMPRESSION_WEIGHT * gamma.at(last);
        for rec in train.impressions().iter().filter(|r| r.week == last) {
            out.extend(rec.items.iter().map(|&item| WeightedPair { user: rec.user, item, week: last, weight }));
        }
    }
    out.retain(|p| p.weight > 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{ix, small_bundle};
    use crate::dataset::{ImpressionRecord, InteractionKind};

    fn tiny_model() -> EmbeddingModel<f64> {
        let b = small_bundle();
        EmbeddingModel::zeros(FeatureSpace::new(&b, false), 2)
    }

    #[test]
    fn all_zero_model_scores_zero_and_ranks_by_id() {
        let m = tiny_model();
        assert_eq!(m.score_pair(0, 0), 0.0);
        let cands: Vec<ItemId> = [13, 11, 14, 10].map(ItemId).to_vec();
        let r = recommend_mf(&m, UserId(1), &cands, 30);
        assert_eq!(r.items, [10, 11, 13, 14].map(ItemId).to_vec());
        assert_eq!(recommend_mf(&m, UserId(1), &cands, 2).items.len(), 2);
    }

    #[test]
    fn hand_set_two_dimensional_score() {
        let mut m = tiny_model();
        m.set_user_row(0, 0.5, &[1.0, 2.0]);
        m.set_item_row(0, -0.25, &[3.0, -1.0]);
        assert_eq!(m.score_pair(0, 0), 1.25);
    }

    #[test]
    fn embedding_is_the_sum_of_feature_rows() {
        let b = small_bundle();
        let space = FeatureSpace::new(&b, true);
        let m = EmbeddingModel::<f64>::init(space.clone(), 3, 7);
        for u in 0..b.users().len() {
            let (q, bias) = m.embed_user(u);
            let mut want = Array1::<f64>::zeros(3);
            for &r in space.user_rows(u) {
                want += &m.user_vec(r as usize);
            }
            assert_eq!(q, want);
            assert_eq!(bias, 0.0);
        }
        // users 1 and 2 differ only by id; zero out the ids and they agree
        let mut m = m;
        for u in 0..2 {
            let id_row = space.user_rows(u)[0] as usize;
            m.set_user_row(id_row, 0.0, &[0.0; 3]);
        }
        for i in 0..b.items().len() {
            assert_eq!(m.score_pair(0, i), m.score_pair(1, i));
        }
    }

    #[test]
    fn hand_set_five_item_ordering() {
        let mut m = tiny_model();
        m.set_user_row(0, 0.0, &[1.0, -1.0]);
        let rows = [[0.2, 0.1], [0.5, 0.0], [-1.0, 0.0], [0.0, -0.4], [0.3, -0.1]];
        for (k, v) in rows.iter().enumerate() {
            m.set_item_row(k, 0.0, v);
        }
        let cands: Vec<ItemId> = (10..15).map(ItemId).collect();
        let r = recommend_mf(&m, UserId(1), &cands, 5);
        // scores 0.1, 0.5, -1.0, 0.4, 0.4
        assert_eq!(r.items, [11, 13, 14, 10, 12].map(ItemId).to_vec());
    }

    #[test]
    fn gamma_from_constant_weights() {
        let w = TemporalWeights::constant(4, 1.0f64);
        let g = gamma_from_w(&w, 10);
        assert_eq!(g, (7..=10).map(|wk| (wk, 1.0)).collect());
        assert_eq!(Gamma::PerWeek(g).at(6), 0.0);
    }

    #[test]
    fn gamma_clamps_negative_and_decays_backward() {
        let mut w = TemporalWeights::<f64>::zeros(5);
        let col = [2.0, 1.0, 0.5, -0.2, -1.0];
        for (lag, v) in col.iter().enumerate() {
            w.flat_mut()[5 + lag] = *v;
        }
        let g = gamma_from_w(&w, 8);
        assert_eq!(g[&8], 1.0);
        assert_eq!(g[&7], 0.5);
        assert_eq!(g[&6], 0.25);
        assert_eq!(g[&5], 0.0);
        assert_eq!(g[&4], 0.0);
        let vals: Vec<f64> = g.values().copied().collect();
        assert!(vals.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn training_pairs_match_brute_force() {
        let b = small_bundle();
        let uniform = build_training_pairs(&b, &Gamma::Uniform, false);
        let positives = b.interactions().iter().filter(|x| x.kind.is_positive()).count();
        assert_eq!(uniform.len(), positives);
        assert!(uniform.iter().all(|p| p.weight == 1.0));

        let mut imps = b.impressions().to_vec();
        imps.push(ImpressionRecord { user: UserId(3), week: 4, items: vec![ItemId(10), ItemId(12)] });
        let b = DatasetBundle::new(
            b.users().to_vec(),
            b.items().to_vec(),
            b.interactions().to_vec(),
            imps,
            b.target_users().to_vec(),
        )
        .unwrap();
        let gamma = Gamma::PerWeek([(2, 0.5), (3, 0.0), (4, 1.0)].into_iter().collect());
        let got = build_training_pairs(&b, &gamma, true);
        let mut want = Vec::new();
        for x in b.interactions() {
            let w = match x.week {
                2 => 0.5,
                4 => 1.0,
                _ => 0.0,
            };
            if x.kind.is_positive() && w > 0.0 {
                want.push((x.user, x.item, x.week, w));
            }
        }
        for r in b.impressions().iter().filter(|r| r.week == 4) {
            for &i in &r.items {
                want.push((r.user, i, 4, 0.01));
            }
        }
        let mut got: Vec<_> = got.iter().map(|p| (p.user, p.item, p.week, p.weight)).collect();
        let key = |a: &(UserId, ItemId, Week, f64), b: &(UserId, ItemId, Week, f64)| {
            (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)).then(a.3.total_cmp(&b.3))
        };
        got.sort_by(key);
        want.sort_by(key);
        assert_eq!(got, want);
    }

    #[test]
    fn last_week_impression_gets_small_weight() {
        let b = DatasetBundle::new(
            vec![crate::dataset::fixtures::user(1)],
            vec![crate::dataset::fixtures::item(10, 1), crate::dataset::fixtures::item(11, 1)],
            vec![ix(1, 10, InteractionKind::Click, 1)],
            vec![ImpressionRecord { user: UserId(1), week: 2, items: vec![ItemId(11)] }],
            vec![],
        )
        .unwrap();
        let pairs = build_training_pairs(&b, &Gamma::Uniform, true);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].weight, IMPRESSION_WEIGHT);
        assert_eq!(pairs[1].item, ItemId(11));
    }
}
