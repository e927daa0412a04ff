use std::collections::{BTreeMap, BTreeSet};

use super::*;

/// Ground truth: target users with at least one positive interaction in the
/// target week.
pub type Truth = BTreeMap<UserId, BTreeSet<ItemId>>;

#[derive(Clone, Debug)]
pub struct Split {
    pub train: DatasetBundle,
    pub truth: Truth,
    pub target_week: Week,
}

/// Training data is every event with `week <= train_end`; the truth is the
/// positive items of each target user at `target`.
pub fn split_by_week(bundle: &DatasetBundle, train_end: Week, target: Week) -> Result<Split> {
    let (first, last) = bundle.weeks();
    if !(first <= train_end && train_end < target && target <= last) {
        return Err(Error::Range(format!(
            "need {first} <= train_end ({train_end}) < target ({target}) <= {last}"
        )));
    }
    let interactions: Vec<Interaction> =
        bundle.interactions().iter().filter(|x| x.week <= train_end).copied().collect();
    let impressions: Vec<ImpressionRecord> =
        bundle.impressions().iter().filter(|r| r.week <= train_end).cloned().collect();

    let targets: BTreeSet<UserId> = bundle.target_users().iter().copied().collect();
    let mut truth = Truth::new();
    for x in bundle.interactions() {
        if x.week == target && x.kind.is_positive() && targets.contains(&x.user) {
            truth.entry(x.user).or_default().insert(x.item);
        }
    }

    let train = DatasetBundle::with_weeks(
        bundle.users().to_vec(),
        bundle.items().to_vec(),
        interactions,
        impressions,
        bundle.target_users().to_vec(),
        (first, train_end),
    )?;
    Ok(Split { train, truth, target_week: target })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn train_excludes_later_weeks() {
        let b = small_bundle();
        let s = split_by_week(&b, 3, 4).unwrap();
        assert!(s.train.interactions().iter().all(|x| x.week <= 3));
        assert_eq!(s.train.weeks(), (1, 3));
        assert_eq!(s.target_week, 4);
    }

    #[test]
    fn delete_only_user_is_absent_from_truth() {
        let s = split_by_week(&small_bundle(), 3, 4).unwrap();
        // user 2's only week-4 event is a delete
        assert!(!s.truth.contains_key(&UserId(2)));
        assert_eq!(s.truth[&UserId(1)], BTreeSet::from([ItemId(11)]));
        assert_eq!(s.truth[&UserId(3)], BTreeSet::from([ItemId(14)]));
    }

    #[test]
    fn out_of_window_target_is_range_error() {
        let b = small_bundle();
        assert!(matches!(split_by_week(&b, 3, 5), Err(Error::Range(_))));
        assert!(matches!(split_by_week(&b, 3, 3), Err(Error::Range(_))));
        assert!(matches!(split_by_week(&b, 0, 2), Err(Error::Range(_))));
    }

    #[test]
    fn split_partitions_interactions() {
        let b = small_bundle();
        let s = split_by_week(&b, 2, 4).unwrap();
        let later: Vec<_> = b.interactions().iter().filter(|x| x.week > 2).copied().collect();
        let mut joined = s.train.interactions().to_vec();
        joined.extend(later);
        let mut a = joined.clone();
        let mut o = b.interactions().to_vec();
        let key = |x: &Interaction| (x.week, x.user, x.item, x.kind);
        a.sort_by_key(key);
        o.sort_by_key(key);
        assert_eq!(a, o);
    }
}
