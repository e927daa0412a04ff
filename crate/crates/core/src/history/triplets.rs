use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{splitmix, HistoryIndex, KINDS};
use crate::dataset::{ItemId, UserId, Week};

/// `user` preferred re-interacting with `preferred` over `other` at week `at`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub user: UserId,
    pub preferred: ItemId,
    pub other: ItemId,
    pub at: Week,
}

/// For each user and week `τ` in `window`: every history item positively
/// re-interacted at `τ` against every history item left untouched at `τ`,
/// sampled down to `cap` pairs per (user, `τ`).
pub fn generate_triplets(index: &HistoryIndex, window: RangeInclusive<Week>, cap: usize, seed: u64) -> Vec<Triplet> {
    let mut out = Vec::new();
    for user in index.users() {
        for at in window.clone() {
            let history = index.candidates(user, at);
            if history.is_empty() {
                continue;
            }
            let positives = index.positives_at(user, at);
            let touched = index.interacted_at(user, at);
            let pos: Vec<ItemId> = history.iter().copied().filter(|i| positives.binary_search(i).is_ok()).collect();
            let neg: Vec<ItemId> = history.iter().copied().filter(|i| touched.binary_search(i).is_err()).collect();
            let total = pos.len() * neg.len();
            if total == 0 {
                continue;
            }
            let pair = |k: usize| Triplet { user, preferred: pos[k / neg.len()], other: neg[k % neg.len()], at };
            if total <= cap {
                out.extend((0..total).map(pair));
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(user.0) ^ u64::from(at)));
                let mut picks = sample(&mut rng, total, cap).into_vec();
                picks.sort_unstable();
                out.extend(picks.into_iter().map(pair));
            }
        }
    }
    out
}

/// Sparse `M(preferred) - M(other)` for every triplet.
#[derive(Clone, Debug)]
pub struct TripletDiffs {
    lags: usize,
    offsets: Vec<usize>,
    entries: Vec<(u16, i32)>,
}

impl TripletDiffs {
    pub fn new(index: &HistoryIndex, triplets: &[Triplet], lags: usize) -> Self {
        assert!(KINDS * lags <= usize::from(u16::MAX));
        let mut offsets = Vec::with_capacity(triplets.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for t in triplets {
            let a = index.matrix(t.user, t.preferred, t.at, lags);
            let b = index.matrix(t.user, t.other, t.at, lags);
            for (k, (&x, &y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
                if x != y {
                    entries.push((k as u16, x as i32 - y as i32));
                }
            }
            offsets.push(entries.len());
        }
        Self { lags, offsets, entries }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn row(&self, n: usize) -> &[(u16, i32)] {
        &self.entries[self.offsets[n]..self.offsets[n + 1]]
    }
}
