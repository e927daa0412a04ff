//! Score fusion: a random forest over per-candidate component scores, and a
//! greedy grid-searched linear fusion as the baseline.

mod forest;

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::dataset::{ItemId, Truth, UserId};
use crate::error::{Error, Result};
use crate::metrics::{leaderboard_score, RankedList, MAX_LIST_LEN};

pub use forest::{read_forest, train_forest, write_forest, Forest, ForestConfig, Tree};

pub const N_FEATURES: usize = 9;
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "trank_score",
    "trank_rank",
    "mf_score",
    "mf_rank",
    "seq_prob",
    "seq_rank",
    "in_history",
    "in_last_impressions",
    "history_count",
];

/// The three component lists of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLists {
    pub history: RankedList,
    pub mf: RankedList,
    pub seq: RankedList,
}

impl ComponentLists {
    pub fn as_array(&self) -> [&RankedList; 3] {
        [&self.history, &self.mf, &self.seq]
    }
}

/// What the user did before the ranked week.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserContext {
    /// Interaction count per item (all kinds).
    pub history_counts: HashMap<ItemId, u32>,
    /// Items shown in the last observed week.
    pub last_impressions: HashSet<ItemId>,
    /// Items the history ranker may rank.
    pub history_candidates: Vec<ItemId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFeatures {
    pub user: UserId,
    pub item: ItemId,
    pub trank_score: f64,
    pub trank_rank: u32,
    pub mf_score: f64,
    pub mf_rank: u32,
    pub seq_prob: f64,
    pub seq_rank: u32,
    pub in_history: bool,
    pub in_last_impressions: bool,
    pub history_count: u32,
}

impl CandidateFeatures {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn row(&self) -> Vec<f64> {
        vec![
            self.trank_score,
            f64::from(self.trank_rank),
            self.mf_score,
            f64::from(self.mf_rank),
            self.seq_prob,
            f64::from(self.seq_rank),
            f64::from(u8::from(self.in_history)),
            f64::from(u8::from(self.in_last_impressions)),
            f64::from(self.history_count),
        ]
    }
}

/// `(score, 1-based rank)`; items absent from the list get rank `len + 1`
/// and the list's minimum score minus one (-1 for an empty list).
fn lookup(list: &RankedList, item: ItemId) -> (f64, u32) {
    match list.items.iter().position(|&i| i == item) {
        Some(at) => (list.scores[at], at as u32 + 1),
        None => {
            let min = list.scores.iter().copied().fold(f64::INFINITY, f64::min);
            (if min.is_finite() { min - 1.0 } else { -1.0 }, list.len() as u32 + 1)
        }
    }
}

pub fn extract_features(user: UserId, item: ItemId, lists: &ComponentLists, ctx: &UserContext) -> CandidateFeatures {
    let (trank_score, trank_rank) = lookup(&lists.history, item);
    let (mf_score, mf_rank) = lookup(&lists.mf, item);
    let (seq_prob, seq_rank) = lookup(&lists.seq, item);
    let history_count = ctx.history_counts.get(&item).copied().unwrap_or(0);
    CandidateFeatures {
        user,
        item,
        trank_score,
        trank_rank,
        mf_score,
        mf_rank,
        seq_prob,
        seq_rank,
        in_history: history_count > 0,
        in_last_impressions: ctx.last_impressions.contains(&item),
        history_count,
    }
}

/// Union of the component lists and the history candidates, sorted by id.
pub fn candidate_pool(lists: &ComponentLists, ctx: &UserContext) -> Vec<ItemId> {
    let pool: BTreeSet<ItemId> =
        lists.as_array().iter().flat_map(|l| l.items.iter().copied()).chain(ctx.history_candidates.iter().copied()).collect();
    pool.into_iter().collect()
}

/// Feature rows for every candidate of the user.
pub fn candidate_features(user: UserId, lists: &ComponentLists, ctx: &UserContext) -> Vec<CandidateFeatures> {
    candidate_pool(lists, ctx).into_iter().map(|i| extract_features(user, i, lists, ctx)).collect()
}

/// Top-`k` candidates by forest probability, ties by `mf_score` then item id.
pub fn ensemble_rank(forest: &Forest, user: UserId, candidates: &[CandidateFeatures], k: usize) -> RankedList {
    let mut scored: Vec<(f64, f64, ItemId)> = candidates.iter().map(|c| (forest.predict(&c.row()), c.mf_score, c.item)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored.truncate(k.min(MAX_LIST_LEN));
    RankedList { user, items: scored.iter().map(|s| s.2).collect(), scores: scored.iter().map(|s| s.0).collect() }
}

/// Per-user scores of one component min-max scaled to `[0, 1]` (all 1 when
/// constant), less `1e-9` per rank so ties keep the list order. Items
/// outside the list count as -1.
fn normalized(list: &RankedList) -> HashMap<ItemId, f64> {
    let lo = list.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = list.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    list.items
        .iter()
        .zip(&list.scores)
        .enumerate()
        .map(|(r, (&i, &s))| (i, if hi > lo { (s - lo) / (hi - lo) } else { 1.0 } - 1e-9 * r as f64))
        .collect()
}

/// Weighted sum of normalized component scores over the union of the lists.
/// A one-hot weighting reproduces that component's list as a prefix.
pub fn fuse(lists: &[&RankedList], weights: &[f64], k: usize) -> RankedList {
    let user = lists.first().map(|l| l.user).unwrap_or(UserId(0));
    let norms: Vec<HashMap<ItemId, f64>> = lists.iter().map(|l| normalized(l)).collect();
    let pool: BTreeSet<ItemId> = lists.iter().flat_map(|l| l.items.iter().copied()).collect();
    let scored = pool
        .into_iter()
        .map(|i| (i, norms.iter().zip(weights).map(|(n, w)| w * n.get(&i).copied().unwrap_or(-1.0)).sum()))
        .collect();
    RankedList::from_scored(user, scored, k)
}

/// `per_component[c][u]` is component `c`'s list for the `u`-th user.
fn fused_score(per_component: &[Vec<RankedList>], weights: &[f64], truth: &Truth) -> Result<f64> {
    let users = per_component[0].len();
    let preds: Vec<RankedList> = (0..users)
        .map(|u| {
            let lists: Vec<&RankedList> = per_component.iter().map(|c| &c[u]).collect();
            fuse(&lists, weights, MAX_LIST_LEN)
        })
        .collect();
    leaderboard_score(&preds, truth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionResult {
    pub weights: Vec<f64>,
    pub score: f64,
    /// Score after the one-hot start and after each improving move.
    pub trace: Vec<f64>,
}

/// Coordinate-wise greedy search over `grid`, starting from the best one-hot
/// weighting (weight 1) and sweeping the coordinates until a full pass
/// brings no improvement.
pub fn greedy_linear_fusion(per_component: &[Vec<RankedList>], truth: &Truth, grid: &[f64]) -> Result<FusionResult> {
    let n = per_component.len();
    if n == 0 {
        return Err(Error::Input("fusion needs at least one component".into()));
    }
    if per_component.iter().any(|c| c.len() != per_component[0].len()) {
        return Err(Error::Input("components cover different users".into()));
    }
    if grid.is_empty() {
        return Err(Error::Input("empty weight grid".into()));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in 0..n {
        let mut w = vec![0.0; n];
        w[c] = 1.0;
        let s = fused_score(per_component, &w, truth)?;
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, w));
        }
    }
    let (mut score, mut weights) = best.expect("n >= 1");
    let mut trace = vec![score];
    loop {
        let mut improved = false;
        for c in 0..n {
            for &g in grid {
                if g == weights[c] {
                    continue;
                }
                let mut w = weights.clone();
                w[c] = g;
                if w.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let s = fused_score(per_component, &w, truth)?;
                if s > score {
                    score = s;
                    weights = w;
                    trace.push(s);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(FusionResult { weights, score, trace })
}

pub const DEFAULT_GRID: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];

#[cfg(test)]
mod tests {
    use super::*;

    fn list(user: u64, items: &[(u64, f64)]) -> RankedList {
        RankedList {
            user: UserId(user),
            items: items.iter().map(|x| ItemId(x.0)).collect(),
            scores: items.iter().map(|x| x.1).collect(),
        }
    }

    fn fixture() -> (ComponentLists, UserContext) {
        let lists = ComponentLists {
            history: list(1, &[(10, 3.0), (11, 1.5)]),
            mf: list(1, &[(12, 0.9), (10, 0.4), (13, 0.1)]),
            seq: list(1, &[(13, 0.5), (12, 0.3)]),
        };
        let ctx = UserContext {
            history_counts: [(ItemId(10), 3), (ItemId(11), 1)].into_iter().collect(),
            last_impressions: [ItemId(14)].into_iter().collect(),
            history_candidates: vec![ItemId(10), ItemId(11), ItemId(14)],
        };
        (lists, ctx)
    }

    #[test]
    fn feature_table_matches_hand_built_rows() {
        let (lists, ctx) = fixture();
        let rows = candidate_features(UserId(1), &lists, &ctx);
        let ids: Vec<u64> = rows.iter().map(|r| r.item.0).collect();
        assert_eq!(ids, [10, 11, 12, 13, 14]);
        // trank_score, trank_rank, mf_score, mf_rank, seq_prob, seq_rank, hist, imp, count
        let want = [
            [3.0, 1.0, 0.4, 2.0, -0.7, 3.0, 1.0, 0.0, 3.0],
            [1.5, 2.0, -0.9, 4.0, -0.7, 3.0, 1.0, 0.0, 1.0],
            [0.5, 3.0, 0.9, 1.0, 0.3, 2.0, 0.0, 0.0, 0.0],
            [0.5, 3.0, 0.1, 3.0, 0.5, 1.0, 0.0, 0.0, 0.0],
            [0.5, 3.0, -0.9, 4.0, -0.7, 3.0, 0.0, 1.0, 0.0],
        ];
        for (r, w) in rows.iter().zip(want) {
            for (a, b) in r.row().iter().zip(w) {
                assert!((a - b).abs() < 1e-12, "{:?} vs {w:?}", r.row());
            }
        }
    }

    #[test]
    fn absent_everywhere_and_top_everywhere() {
        let lists = ComponentLists { history: list(1, &[(5, 2.0)]), mf: list(1, &[(5, 1.0)]), seq: list(1, &[(5, 0.5)]) };
        let top = extract_features(UserId(1), ItemId(5), &lists, &UserContext::default());
        assert_eq!((top.trank_rank, top.mf_rank, top.seq_rank), (1, 1, 1));
        let none = extract_features(UserId(1), ItemId(9), &lists, &UserContext::default());
        assert_eq!((none.trank_rank, none.mf_rank, none.seq_rank), (2, 2, 2));
        assert!(!none.in_history && !none.in_last_impressions);
        let empty = RankedList::empty(UserId(1));
        let lists = ComponentLists { history: empty.clone(), mf: empty.clone(), seq: empty };
        let f = extract_features(UserId(1), ItemId(9), &lists, &UserContext::default());
        assert_eq!((f.trank_rank, f.trank_score), (1, -1.0));
    }

    #[test]
    fn constant_forest_breaks_ties_by_mf_score() {
        let rows = vec![vec![0.0; N_FEATURES]; 10];
        let forest = train_forest(&rows, &[false; 10], &ForestConfig { n_trees: 2, ..ForestConfig::default() }).unwrap();
        let (lists, ctx) = fixture();
        let cands = candidate_features(UserId(1), &lists, &ctx);
        let ranked = ensemble_rank(&forest, UserId(1), &cands, 30);
        // mf: 12 (0.9), 10 (0.4), 13 (0.1), then 11 and 14 tie at -0.9
        assert_eq!(ranked.items, [12, 10, 13, 11, 14].map(ItemId));
        assert_eq!(ranked, ensemble_rank(&forest, UserId(1), &cands, 30));
    }

    #[test]
    fn single_component_fusion_keeps_the_ranking() {
        let l = list(1, &[(3, 0.9), (1, 0.5), (2, 0.1)]);
        let truth: Truth = [(UserId(1), [ItemId(1)].into_iter().collect())].into_iter().collect();
        let r = greedy_linear_fusion(&[vec![l.clone()]], &truth, &DEFAULT_GRID).unwrap();
        assert!(r.weights[0] > 0.0);
        assert_eq!(fuse(&[&l], &r.weights, 30).items, l.items);
        let tied = list(1, &[(7, 1.0), (2, 1.0), (5, 1.0)]);
        assert_eq!(fuse(&[&tied], &[1.0], 30).items, tied.items);
    }

    /// The relevant item sits third in both lists, behind different decoys.
    fn two_component_fixture() -> (Vec<Vec<RankedList>>, Truth) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut truth = Truth::new();
        for u in 0..6u64 {
            let base = 100 * u;
            a.push(list(u, &[(base + 1, 1.0), (base + 2, 0.95), (base + 9, 0.9), (base + 3, 0.0)]));
            b.push(list(u, &[(base + 4, 1.0), (base + 5, 0.95), (base + 9, 0.9), (base + 6, 0.0)]));
            truth.insert(UserId(u), [ItemId(base + 9)].into_iter().collect());
        }
        (vec![a, b], truth)
    }

    #[test]
    fn fusion_recovers_the_exhaustive_optimum() {
        let (comps, truth) = two_component_fixture();
        let r = greedy_linear_fusion(&comps, &truth, &DEFAULT_GRID).unwrap();
        let mut best = f64::NEG_INFINITY;
        for &x in &DEFAULT_GRID {
            for &y in &DEFAULT_GRID {
                if x == 0.0 && y == 0.0 {
                    continue;
                }
                best = best.max(fused_score(&comps, &[x, y], &truth).unwrap());
            }
        }
        assert_eq!(r.score, best);
        let singles: Vec<f64> = comps.iter().map(|c| leaderboard_score(c, &truth).unwrap()).collect();
        assert!(r.score > singles[0] && r.score > singles[1], "{} vs {singles:?}", r.score);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fusion_is_at_least_the_best_component() {
        let (comps, truth) = two_component_fixture();
        let r = greedy_linear_fusion(&comps, &truth, &DEFAULT_GRID).unwrap();
        for c in &comps {
            assert!(r.score >= leaderboard_score(c, &truth).unwrap());
        }
        assert!(greedy_linear_fusion(&[], &truth, &DEFAULT_GRID).is_err());
    }
}
