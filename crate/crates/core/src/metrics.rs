//! The challenge score and the `score_all` / `score_new` measures.
//!
//! ```text
//! S(u) = 20 * (P@2 + P@4 + R + UserSuccess) + 10 * (P@6 + P@20)
//! ```
//!
//! `P@N` always divides by `N`, also for lists shorter than `N`. Users
//! without any relevant item are excluded upstream.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, Truth, UserId};
use crate::error::{Error, Result};

/// Longest list a recommender may emit.
pub const MAX_LIST_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub user: UserId,
    /// Highest confidence first.
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn new(user: UserId, items: Vec<ItemId>, scores: Vec<f64>) -> Result<Self> {
        if items.len() != scores.len() {
            return Err(Error::Input(format!("user {user}: {} items but {} scores", items.len(), scores.len())));
        }
        if items.len() > MAX_LIST_LEN {
            return Err(Error::Input(format!("user {user}: list longer than {MAX_LIST_LEN}")));
        }
        let distinct: HashSet<&ItemId> = items.iter().collect();
        if distinct.len() != items.len() {
            return Err(Error::Input(format!("user {user}: duplicate items in ranked list")));
        }
        Ok(Self { user, items, scores })
    }

    pub fn empty(user: UserId) -> Self {
        Self { user, items: Vec::new(), scores: Vec::new() }
    }

    /// Sorts by score descending, then item id ascending, and keeps the top
    /// `k` (at most [`MAX_LIST_LEN`]). Items must be distinct.
    pub fn from_scored(user: UserId, mut scored: Vec<(ItemId, f64)>, k: usize) -> Self {
        sort_scored(&mut scored);
        scored.truncate(k.min(MAX_LIST_LEN));
        let (items, scores) = scored.into_iter().unzip();
        Self { user, items, scores }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Score descending, ties by item id ascending. NaN scores sort last.
pub fn sort_scored(scored: &mut [(ItemId, f64)]) {
    scored.sort_unstable_by(|a, b| {
        let (x, y) = (nan_low(a.1), nan_low(b.1));
        y.total_cmp(&x).then(a.0.cmp(&b.0))
    });
}

fn nan_low(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

pub fn precision_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, n: usize) -> f64 {
    assert!(n >= 1, "precision_at needs n >= 1");
    let hits = ranked.iter().take(n).filter(|i| relevant.contains(i)).count();
    hits as f64 / n as f64
}

pub fn recall(ranked: &[ItemId], relevant: &BTreeSet<ItemId>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

pub fn user_score(ranked: &[ItemId], relevant: &BTreeSet<ItemId>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Contract("user_score needs a non-empty relevant set".into()));
    }
    let success = if ranked.iter().any(|i| relevant.contains(i)) { 1.0 } else { 0.0 };
    let p = |n| precision_at(ranked, relevant, n);
    Ok(20.0 * (p(2) + p(4) + recall(ranked, relevant) + success) + 10.0 * (p(6) + p(20)))
}

fn index_preds(preds: &[RankedList]) -> Result<HashMap<UserId, &RankedList>> {
    let mut by_user = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_user.insert(p.user, p).is_some() {
            return Err(Error::Input(format!("duplicate predictions for user {}", p.user)));
        }
    }
    Ok(by_user)
}

/// Sum of `S(u)` over the users in `truth`; users without predictions add 0.
pub fn leaderboard_score(preds: &[RankedList], truth: &Truth) -> Result<f64> {
    let by_user = index_preds(preds)?;
    let mut total = 0.0;
    for (user, relevant) in truth {
        if let Some(p) = by_user.get(user) {
            total += user_score(&p.items, relevant)?;
        }
    }
    Ok(total)
}

/// User history removed by [`score_new`].
pub type History = HashMap<UserId, HashSet<ItemId>>;

/// Leaderboard score after deleting every history pair from both the ranked
/// lists and the truth; users whose truth empties are dropped.
pub fn score_new(preds: &[RankedList], truth: &Truth, history: &History) -> Result<f64> {
    let by_user = index_preds(preds)?;
    let empty = HashSet::new();
    let mut total = 0.0;
    for (user, relevant) in truth {
        let seen = history.get(user).unwrap_or(&empty);
        let relevant: BTreeSet<ItemId> = relevant.iter().filter(|i| !seen.contains(i)).copied().collect();
        if relevant.is_empty() {
            continue;
        }
        if let Some(p) = by_user.get(user) {
            let ranked: Vec<ItemId> = p.items.iter().filter(|i| !seen.contains(i)).copied().collect();
            total += user_score(&ranked, &relevant)?;
        }
    }
    Ok(total)
}

/// Aggregate evaluation of one prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score_all: f64,
    pub score_new: f64,
    pub users: usize,
    /// Mean over truth users of P@2, P@4, P@6, P@20.
    pub precision: BTreeMap<String, f64>,
    pub recall: f64,
    pub user_success: f64,
}

pub fn report(preds: &[RankedList], truth: &Truth, history: &History) -> Result<ScoreReport> {
    let score_all = leaderboard_score(preds, truth)?;
    let score_new = score_new(preds, truth, history)?;
    let by_user = index_preds(preds)?;
    let mut precision: BTreeMap<String, f64> = BTreeMap::new();
    let (mut rec, mut success) = (0.0, 0.0);
    for (user, relevant) in truth {
        let ranked: &[ItemId] = by_user.get(user).map(|p| p.items.as_slice()).unwrap_or(&[]);
        for n in [2, 4, 6, 20] {
            *precision.entry(format!("P@{n}")).or_default() += precision_at(ranked, relevant, n);
        }
        rec += recall(ranked, relevant);
        if ranked.iter().any(|i| relevant.contains(i)) {
            success += 1.0;
        }
    }
    let users = truth.len();
    let norm = users.max(1) as f64;
    precision.values_mut().for_each(|v| *v /= norm);
    Ok(ScoreReport { score_all, score_new, users, precision, recall: rec / norm, user_success: success / norm })
}

/// Writes `user_id<TAB>item1,item2,...`, one user per line.
pub fn write_submission(path: impl AsRef<Path>, preds: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for p in preds {
        let _ = write!(s, "{}\t", p.user);
        for (k, i) in p.items.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{i}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a submission file. Confidence scores are not stored, so each item
/// gets `-(rank)`.
pub fn read_submission(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let bad = |line: usize, msg: String| Error::Parse { file: file.clone(), line, msg };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (user, items) = line.split_once('\t').ok_or_else(|| bad(n + 1, "missing tab separator".into()))?;
        let user = UserId(user.parse().map_err(|_| bad(n + 1, format!("bad user id {user:?}")))?);
        let items: Vec<ItemId> = if items.is_empty() {
            Vec::new()
        } else {
            items
                .split(',')
                .map(|t| t.parse().map(ItemId).map_err(|_| bad(n + 1, format!("bad item id {t:?}"))))
                .collect::<Result<_>>()?
        };
        let scores = (1..=items.len()).map(|r| -(r as f64)).collect();
        out.push(RankedList::new(user, items, scores).map_err(|e| bad(n + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[u64]) -> Vec<ItemId> {
        xs.iter().map(|&x| ItemId(x)).collect()
    }

    fn set(xs: &[u64]) -> BTreeSet<ItemId> {
        xs.iter().map(|&x| ItemId(x)).collect()
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at(&ids(&[1, 2, 3, 4]), &set(&[1, 2]), 4), 0.5);
        assert_eq!(precision_at(&[], &set(&[1]), 4), 0.0);
        // denominator stays n for short lists
        assert!((precision_at(&ids(&[1, 2, 3]), &set(&[1, 2, 3]), 20) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn two_hits_at_the_top() {
        let mut ranked = ids(&[1, 2]);
        ranked.extend((100..128).map(ItemId));
        let s = user_score(&ranked, &set(&[1, 2])).unwrap();
        // 20 * (1 + 0.5 + 1 + 1) + 10 * (2/6 + 2/20)
        assert!((s - 74.333_333_333_333_33).abs() < 1e-9, "{s}");
    }

    #[test]
    fn single_hit_in_second_place() {
        let ranked: Vec<ItemId> = [ItemId(9), ItemId(1)].into_iter().chain((100..128).map(ItemId)).collect();
        let s = user_score(&ranked, &set(&[1])).unwrap();
        let expected = 20.0 * (0.5 + 0.25 + 1.0 + 1.0) + 10.0 * (1.0 / 6.0 + 0.05);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 57.1667).abs() < 1e-4);
    }

    #[test]
    fn no_hits_scores_zero_and_empty_truth_is_rejected() {
        assert_eq!(user_score(&ids(&[5, 6]), &set(&[1])).unwrap(), 0.0);
        assert!(matches!(user_score(&ids(&[1]), &BTreeSet::new()), Err(Error::Contract(_))));
    }

    #[test]
    fn leaderboard_sums_and_skips_missing_users() {
        let mut ranked = ids(&[1, 2]);
        ranked.extend((100..128).map(ItemId));
        let preds = vec![
            RankedList::new(UserId(1), ranked.clone(), vec![0.0; 30]).unwrap(),
            RankedList::new(UserId(2), ids(&[7]), vec![0.0]).unwrap(),
        ];
        let truth: Truth =
            [(UserId(1), set(&[1, 2])), (UserId(2), set(&[8])), (UserId(3), set(&[1]))].into_iter().collect();
        let s = leaderboard_score(&preds, &truth).unwrap();
        assert!((s - 74.333_333_333_333_33).abs() < 1e-9);
    }

    #[test]
    fn duplicate_users_are_rejected() {
        let preds = vec![RankedList::empty(UserId(1)), RankedList::empty(UserId(1))];
        assert!(matches!(leaderboard_score(&preds, &Truth::new()), Err(Error::Input(_))));
    }

    #[test]
    fn score_new_removes_history_from_both_sides() {
        let preds = vec![
            RankedList::new(UserId(1), ids(&[1, 2, 3]), vec![3.0, 2.0, 1.0]).unwrap(),
            RankedList::new(UserId(2), ids(&[4]), vec![1.0]).unwrap(),
        ];
        let truth: Truth = [(UserId(1), set(&[2, 3])), (UserId(2), set(&[4]))].into_iter().collect();
        let history: History = [(UserId(1), [ItemId(1), ItemId(2)].into()), (UserId(2), [ItemId(4)].into())]
            .into_iter()
            .collect();
        // user 1: list [3], truth {3}; user 2: truth emptied
        let expected = user_score(&ids(&[3]), &set(&[3])).unwrap();
        assert!((score_new(&preds, &truth, &history).unwrap() - expected).abs() < 1e-12);
        assert_eq!(
            score_new(&preds, &truth, &History::new()).unwrap(),
            leaderboard_score(&preds, &truth).unwrap()
        );
    }

    #[test]
    fn ranked_list_contract() {
        assert!(RankedList::new(UserId(1), ids(&[1, 1]), vec![0.0, 0.0]).is_err());
        assert!(RankedList::new(UserId(1), (0..31).map(ItemId).collect(), vec![0.0; 31]).is_err());
        let l = RankedList::from_scored(UserId(1), vec![(ItemId(3), 1.0), (ItemId(1), 1.0), (ItemId(2), 5.0)], 30);
        assert_eq!(l.items, ids(&[2, 1, 3]));
    }

    #[test]
    fn submission_round_trip_and_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.tsv");
        let preds = vec![
            RankedList::new(UserId(4), ids(&[3, 1]), vec![2.0, 1.0]).unwrap(),
            RankedList::empty(UserId(5)),
        ];
        write_submission(&path, &preds).unwrap();
        let back = read_submission(&path).unwrap();
        assert_eq!(back[0].items, preds[0].items);
        assert!(back[1].items.is_empty());

        fs::write(&path, "1\t2,3\n2\tx\n").unwrap();
        match read_submission(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    fn case() -> impl Strategy<Value = (Vec<u64>, BTreeSet<u64>)> {
        (prop::collection::btree_set(0u64..60, 0..30), prop::collection::btree_set(0u64..60, 1..10)).prop_flat_map(
            |(items, rel)| {
                let items: Vec<u64> = items.into_iter().collect();
                (Just(items).prop_shuffle(), Just(rel))
            },
        )
    }

    proptest! {
        #[test]
        fn score_is_bounded((ranked, rel) in case()) {
            let ranked: Vec<ItemId> = ranked.into_iter().map(ItemId).collect();
            let rel: BTreeSet<ItemId> = rel.into_iter().map(ItemId).collect();
            let s = user_score(&ranked, &rel).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        }

        #[test]
        fn promoting_a_relevant_item_never_hurts((ranked, rel) in case(), pick in 0usize..30) {
            let mut ranked: Vec<ItemId> = ranked.into_iter().map(ItemId).collect();
            let rel: BTreeSet<ItemId> = rel.into_iter().map(ItemId).collect();
            let hits: Vec<usize> = (0..ranked.len()).filter(|&k| rel.contains(&ranked[k])).collect();
            prop_assume!(!hits.is_empty());
            let k = hits[pick % hits.len()];
            prop_assume!(k > 0);
            let before = user_score(&ranked, &rel).unwrap();
            ranked.swap(k - 1, k);
            prop_assert!(user_score(&ranked, &rel).unwrap() >= before - 1e-12);
        }

        #[test]
        fn precision_ignores_order_inside_prefix((ranked, rel) in case(), n in 1usize..25) {
            let ranked: Vec<ItemId> = ranked.into_iter().map(ItemId).collect();
            let rel: BTreeSet<ItemId> = rel.into_iter().map(ItemId).collect();
            let mut rev = ranked.clone();
            let cut = n.min(rev.len());
            rev[..cut].reverse();
            prop_assert_eq!(precision_at(&ranked, &rel, n), precision_at(&rev, &rel, n));
        }
    }
}
