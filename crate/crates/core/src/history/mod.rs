//! Ranking of items the user already met.
//!
//! Every (user, item) pair gets a [`HistoryMatrix`] of event counts by kind
//! and week-lag relative to the prediction week. The naive ranker sums it,
//! TSort ranks by the most recent lag, and TRank scores it with learned
//! [`TemporalWeights`].

mod io;
mod train;
mod triplets;

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;

use crate::dataset::{DatasetBundle, ImpressionRecord, Interaction, InteractionKind, ItemId, UserId, Week};
use crate::error::{Error, Result};
use crate::metrics::{sort_scored, RankedList, MAX_LIST_LEN};
use crate::scalar::Scalar;

pub use io::{read_weights, write_weights};
pub use train::{objective, smoothed_hinge, smoothed_hinge_grad, train_trank, TrankConfig, TrankFit};
pub use triplets::{generate_triplets, Triplet, TripletDiffs};

/// Event kinds tracked by the matrix: impression, click, bookmark, reply.
pub const KINDS: usize = 4;
pub const KIND_NAMES: [&str; KINDS] = ["impression", "click", "bookmark", "reply"];
pub const IMPRESSION_ROW: usize = 0;
/// Default lag window: the whole data horizon.
pub const DEFAULT_LAGS: usize = 16;

/// Matrix row of an interaction kind; deletes are not tracked.
pub fn kind_row(kind: InteractionKind) -> Option<usize> {
    match kind {
        InteractionKind::Click => Some(1),
        InteractionKind::Bookmark => Some(2),
        InteractionKind::Reply => Some(3),
        InteractionKind::Delete => None,
    }
}

/// `counts[(kind, lag)]`, lag 1 = the week before the prediction week.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryMatrix {
    lags: usize,
    counts: Vec<u32>,
}

impl HistoryMatrix {
    pub fn zeros(lags: usize) -> Self {
        Self { lags, counts: vec![0; KINDS * lags] }
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    /// `lag` is 1-based.
    pub fn get(&self, kind: usize, lag: usize) -> u32 {
        self.counts[kind * self.lags + lag - 1]
    }

    fn bump(&mut self, kind: usize, lag: usize) {
        self.counts[kind * self.lags + lag - 1] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Flat row-major entries (`kind * lags + lag - 1`).
    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }
}

/// Learned coefficient per (kind, lag).
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalWeights<T> {
    w: Array2<T>,
}

impl<T: Scalar> TemporalWeights<T> {
    pub fn zeros(lags: usize) -> Self {
        Self { w: Array2::zeros((KINDS, lags)) }
    }

    pub fn constant(lags: usize, v: T) -> Self {
        Self { w: Array2::from_elem((KINDS, lags), v) }
    }

    pub fn from_array(w: Array2<T>) -> Result<Self> {
        if w.nrows() != KINDS || w.ncols() == 0 {
            return Err(Error::Contract(format!("weights must be {KINDS} x L, got {:?}", w.dim())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("weights must be finite".into()));
        }
        Ok(Self { w })
    }

    pub fn lags(&self) -> usize {
        self.w.ncols()
    }

    /// `lag` is 1-based.
    pub fn get(&self, kind: usize, lag: usize) -> T {
        self.w[(kind, lag - 1)]
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.w
    }

    pub(crate) fn flat(&self) -> &[T] {
        self.w.as_slice().expect("standard layout")
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [T] {
        self.w.as_slice_mut().expect("standard layout")
    }
}

/// Per-user, per-item event lists built once from a bundle.
#[derive(Clone, Debug, Default)]
pub struct HistoryIndex {
    users: HashMap<UserId, BTreeMap<ItemId, Vec<Event>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Event {
    week: Week,
    /// Matrix row; `None` for deletes.
    row: Option<u8>,
    positive: bool,
}

impl HistoryIndex {
    pub fn new(bundle: &DatasetBundle) -> Self {
        Self::from_events(bundle.interactions(), bundle.impressions())
    }

    pub fn from_events(interactions: &[Interaction], impressions: &[ImpressionRecord]) -> Self {
        let mut users: HashMap<UserId, BTreeMap<ItemId, Vec<Event>>> = HashMap::new();
        for x in interactions {
            users.entry(x.user).or_default().entry(x.item).or_default().push(Event {
                week: x.week,
                row: kind_row(x.kind).map(|r| r as u8),
                positive: x.kind.is_positive(),
            });
        }
        for r in impressions {
            let items = users.entry(r.user).or_default();
            for &i in &r.items {
                items.entry(i).or_default().push(Event {
                    week: r.week,
                    row: Some(IMPRESSION_ROW as u8),
                    positive: false,
                });
            }
        }
        for items in users.values_mut() {
            for ev in items.values_mut() {
                ev.sort_by_key(|e| e.week);
            }
        }
        Self { users }
    }

    /// Users with at least one event, sorted.
    pub fn users(&self) -> Vec<UserId> {
        let mut out: Vec<UserId> = self.users.keys().copied().collect();
        out.sort_unstable();
        out
    }

    fn events(&self, user: UserId, item: ItemId) -> &[Event] {
        self.users.get(&user).and_then(|m| m.get(&item)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn matrix(&self, user: UserId, item: ItemId, at: Week, lags: usize) -> HistoryMatrix {
        let mut m = HistoryMatrix::zeros(lags);
        for e in self.events(user, item) {
            if e.week >= at {
                break;
            }
            let lag = (at - e.week) as usize;
            if let (Some(row), true) = (e.row, lag <= lags) {
                m.bump(row as usize, lag);
            }
        }
        m
    }

    /// Items with any event (interaction or impression) before `at`.
    pub fn candidates(&self, user: UserId, at: Week) -> Vec<ItemId> {
        self.users
            .get(&user)
            .map(|m| m.iter().filter(|(_, ev)| ev[0].week < at).map(|(&i, _)| i).collect())
            .unwrap_or_default()
    }

    /// Smallest lag of any event before `at`.
    pub fn latest_lag(&self, user: UserId, item: ItemId, at: Week) -> Option<u32> {
        self.events(user, item).iter().rev().find(|e| e.week < at).map(|e| at - e.week)
    }

    /// Items with a positive interaction in `week`.
    pub fn positives_at(&self, user: UserId, week: Week) -> Vec<ItemId> {
        self.filter_at(user, week, |e| e.positive)
    }

    /// Items with any interaction (impressions excluded) in `week`.
    pub fn interacted_at(&self, user: UserId, week: Week) -> Vec<ItemId> {
        self.filter_at(user, week, |e| e.row != Some(IMPRESSION_ROW as u8))
    }

    fn filter_at(&self, user: UserId, week: Week, pred: impl Fn(&Event) -> bool) -> Vec<ItemId> {
        self.users
            .get(&user)
            .map(|m| {
                m.iter().filter(|(_, ev)| ev.iter().any(|e| e.week == week && pred(e))).map(|(&i, _)| i).collect()
            })
            .unwrap_or_default()
    }
}

/// Direct scan of the raw event lists.
pub fn build_history_matrix(
    user: UserId,
    item: ItemId,
    at: Week,
    interactions: &[Interaction],
    impressions: &[ImpressionRecord],
    lags: usize,
) -> HistoryMatrix {
    let mut m = HistoryMatrix::zeros(lags);
    let mut add = |row: usize, week: Week| {
        if week < at && ((at - week) as usize) <= lags {
            m.bump(row, (at - week) as usize);
        }
    };
    for x in interactions.iter().filter(|x| x.user == user && x.item == item) {
        if let Some(row) = kind_row(x.kind) {
            add(row, x.week);
        }
    }
    for r in impressions.iter().filter(|r| r.user == user) {
        for _ in r.items.iter().filter(|&&i| i == item) {
            add(IMPRESSION_ROW, r.week);
        }
    }
    m
}

pub fn naive_score(m: &HistoryMatrix) -> f64 {
    m.total() as f64
}

/// `Σ w(k, lag) * counts(k, lag)`.
pub fn trank_score<T: Scalar>(w: &TemporalWeights<T>, m: &HistoryMatrix) -> Result<T> {
    if w.lags() != m.lags() {
        return Err(Error::Contract(format!("weights have {} lags, matrix has {}", w.lags(), m.lags())));
    }
    Ok(w.flat().iter().zip(m.as_slice()).fold(T::zero(), |acc, (&wv, &c)| if c == 0 { acc } else { acc + wv * T::of(f64::from(c)) }))
}

/// Minus the most recent lag; `None` when the item is not a candidate.
pub fn tsort_score(index: &HistoryIndex, user: UserId, item: ItemId, at: Week) -> Option<f64> {
    index.latest_lag(user, item, at).map(|lag| -f64::from(lag))
}

/// Deterministic uniform value in `[0, 1)` from `(seed, user, item)`.
pub fn rand_score(seed: u64, user: UserId, item: ItemId) -> f64 {
    let h = splitmix(splitmix(splitmix(seed) ^ user.0) ^ item.0.rotate_left(32));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The three history rankers compared in the experiments, plus naive
/// aggregation.
#[derive(Clone, Debug)]
pub enum HistoryRanker<T> {
    Rand { seed: u64 },
    TSort,
    Naive,
    TRank(TemporalWeights<T>),
}

impl<T: Scalar> HistoryRanker<T> {
    /// Every history candidate of `user` before `at`, best first.
    pub fn rank_all(&self, index: &HistoryIndex, user: UserId, at: Week, lags: usize) -> Vec<(ItemId, f64)> {
        let cands = index.candidates(user, at);
        match self {
            HistoryRanker::Rand { seed } => {
                let mut scored: Vec<(ItemId, f64)> = cands.into_iter().map(|i| (i, rand_score(*seed, user, i))).collect();
                sort_scored(&mut scored);
                scored
            }
            HistoryRanker::Naive => {
                let mut scored: Vec<(ItemId, f64)> =
                    cands.into_iter().map(|i| (i, naive_score(&index.matrix(user, i, at, lags)))).collect();
                sort_scored(&mut scored);
                scored
            }
            HistoryRanker::TSort => {
                let mut keyed: Vec<(u32, u64, ItemId)> = cands
                    .into_iter()
                    .filter_map(|i| {
                        let lag = index.latest_lag(user, i, at)?;
                        Some((lag, index.matrix(user, i, at, lags).total(), i))
                    })
                    .collect();
                keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
                keyed.into_iter().map(|(lag, _, i)| (i, -f64::from(lag))).collect()
            }
            HistoryRanker::TRank(w) => {
                let mut scored: Vec<(ItemId, f64)> = cands
                    .into_iter()
                    .map(|i| {
                        let s = trank_score(w, &index.matrix(user, i, at, w.lags())).expect("matching lags");
                        (i, s.as_f64())
                    })
                    .collect();
                sort_scored(&mut scored);
                scored
            }
        }
    }

    pub fn recommend(&self, index: &HistoryIndex, user: UserId, at: Week, lags: usize, k: usize) -> RankedList {
        let mut all = self.rank_all(index, user, at, lags);
        all.truncate(k.min(MAX_LIST_LEN));
        let (items, scores) = all.into_iter().unzip();
        RankedList { user, items, scores }
    }
}

/// Top-`k` history candidates by TRank score, ties by item id.
pub fn recommend_history<T: Scalar>(
    index: &HistoryIndex,
    user: UserId,
    at: Week,
    w: &TemporalWeights<T>,
    k: usize,
) -> RankedList {
    HistoryRanker::TRank(w.clone()).recommend(index, user, at, w.lags(), k)
}
