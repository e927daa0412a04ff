//! Users, items, interactions and impressions, plus TSV ingestion,
//! temporal splitting and item vocabularies.

mod split;
mod tsv;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{split_by_week, Split, Truth};
pub use tsv::{load_bundle, save_bundle};
pub use vocab::{build_item_vocab, ItemVocab};

/// Integer week index. All timestamps have week granularity.
pub type Week = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InteractionKind {
    Click = 1,
    Bookmark = 2,
    Reply = 3,
    Delete = 4,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 4] = [
        InteractionKind::Click,
        InteractionKind::Bookmark,
        InteractionKind::Reply,
        InteractionKind::Delete,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(InteractionKind::Click),
            2 => Some(InteractionKind::Bookmark),
            3 => Some(InteractionKind::Reply),
            4 => Some(InteractionKind::Delete),
            _ => None,
        }
    }

    /// Click, bookmark and reply are positive; delete never is.
    pub fn is_positive(self) -> bool {
        !matches!(self, InteractionKind::Delete)
    }
}

/// Missing-value id for every categorical feature.
pub const MISSING: u32 = 0;

pub const USER_CATEGORICAL: [&str; 8] = [
    "career_level",
    "discipline_id",
    "industry_id",
    "country",
    "region",
    "exp_n_entries_class",
    "exp_years",
    "exp_in_current",
];

pub const USER_DESCRIPTORS: [&str; 2] = ["job_roles", "field_of_studies"];

pub const ITEM_CATEGORICAL: [&str; 5] =
    ["career_level", "discipline_id", "country", "region", "employment"];

pub const ITEM_NUMERICAL: [&str; 3] = ["latitude", "longitude", "created_at"];

pub const ITEM_DESCRIPTORS: [&str; 2] = ["title", "tags"];

/// Index of `discipline_id` in [`ITEM_CATEGORICAL`].
pub const ITEM_DISCIPLINE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct User {
    pub id: UserId,
    /// Values in [`USER_CATEGORICAL`] order; [`MISSING`] when absent.
    pub categorical: [u32; 8],
    pub job_roles: Vec<u32>,
    pub field_of_studies: Vec<u32>,
}

impl User {
    pub fn descriptors(&self) -> [&[u32]; 2] {
        [&self.job_roles, &self.field_of_studies]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: ItemId,
    /// Values in [`ITEM_CATEGORICAL`] order; [`MISSING`] when absent.
    pub categorical: [u32; 5],
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub created_at: Week,
    pub title: Vec<u32>,
    pub tags: Vec<u32>,
    pub active: bool,
}

impl Item {
    pub fn descriptors(&self) -> [&[u32]; 2] {
        [&self.title, &self.tags]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub kind: InteractionKind,
    pub week: Week,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpressionRecord {
    pub user: UserId,
    pub week: Week,
    pub items: Vec<ItemId>,
}

/// A cross-referenced, immutable dataset.
///
/// Interactions keep their file order, which is the within-week order used
/// when building item sequences.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    users: Vec<User>,
    items: Vec<Item>,
    interactions: Vec<Interaction>,
    impressions: Vec<ImpressionRecord>,
    weeks: (Week, Week),
    target_users: Vec<UserId>,
    user_index: HashMap<UserId, usize>,
    item_index: HashMap<ItemId, usize>,
}

impl PartialEq for DatasetBundle {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users
            && self.items == other.items
            && self.interactions == other.interactions
            && self.impressions == other.impressions
            && self.weeks == other.weeks
            && self.target_users == other.target_users
    }
}

impl DatasetBundle {
    /// Builds a bundle, checking referential integrity. The observation
    /// window is the span of interaction and impression weeks.
    pub fn new(
        users: Vec<User>,
        items: Vec<Item>,
        interactions: Vec<Interaction>,
        impressions: Vec<ImpressionRecord>,
        target_users: Vec<UserId>,
    ) -> Result<Self> {
        let weeks = interactions
            .iter()
            .map(|x| x.week)
            .chain(impressions.iter().map(|x| x.week))
            .fold(None, |acc: Option<(Week, Week)>, w| match acc {
                None => Some((w, w)),
                Some((lo, hi)) => Some((lo.min(w), hi.max(w))),
            })
            .unwrap_or((0, 0));
        let bundle = Self::with_weeks(users, items, interactions, impressions, target_users, weeks)?;
        if let Some(item) = bundle.items.iter().find(|i| i.created_at > weeks.1) {
            return Err(Error::Input(format!(
                "item {} created at week {} after last observed week {}",
                item.id, item.created_at, weeks.1
            )));
        }
        Ok(bundle)
    }

    pub(crate) fn with_weeks(
        users: Vec<User>,
        items: Vec<Item>,
        interactions: Vec<Interaction>,
        impressions: Vec<ImpressionRecord>,
        mut target_users: Vec<UserId>,
        weeks: (Week, Week),
    ) -> Result<Self> {
        let mut user_index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_index.insert(u.id, i).is_some() {
                return Err(integrity("users.tsv", i + 2, format!("duplicate user id {}", u.id)));
            }
        }
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            if item_index.insert(it.id, i).is_some() {
                return Err(integrity("items.tsv", i + 2, format!("duplicate item id {}", it.id)));
            }
        }
        for (n, x) in interactions.iter().enumerate() {
            if !user_index.contains_key(&x.user) {
                return Err(integrity("interactions.tsv", n + 2, format!("unknown user {}", x.user)));
            }
            if !item_index.contains_key(&x.item) {
                return Err(integrity("interactions.tsv", n + 2, format!("unknown item {}", x.item)));
            }
        }
        for (n, rec) in impressions.iter().enumerate() {
            if !user_index.contains_key(&rec.user) {
                return Err(integrity("impressions.tsv", n + 2, format!("unknown user {}", rec.user)));
            }
            if rec.items.is_empty() {
                return Err(Error::Parse {
                    file: "impressions.tsv".into(),
                    line: n + 2,
                    msg: "empty impression list".into(),
                });
            }
            if let Some(bad) = rec.items.iter().find(|i| !item_index.contains_key(i)) {
                return Err(integrity("impressions.tsv", n + 2, format!("unknown item {bad}")));
            }
        }
        target_users.sort_unstable();
        target_users.dedup();
        for (n, u) in target_users.iter().enumerate() {
            if !user_index.contains_key(u) {
                return Err(integrity("target_users.tsv", n + 1, format!("unknown user {u}")));
            }
        }
        Ok(Self { users, items, interactions, impressions, weeks, target_users, user_index, item_index })
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn impressions(&self) -> &[ImpressionRecord] {
        &self.impressions
    }

    /// Inclusive `(first_week, last_week)`.
    pub fn weeks(&self) -> (Week, Week) {
        self.weeks
    }

    /// Sorted, deduplicated.
    pub fn target_users(&self) -> &[UserId] {
        &self.target_users
    }

    pub fn user_idx(&self, id: UserId) -> Option<usize> {
        self.user_index.get(&id).copied()
    }

    pub fn item_idx(&self, id: ItemId) -> Option<usize> {
        self.item_index.get(&id).copied()
    }

    pub fn user(&self, id: UserId) -> Option<&User> {
        self.user_idx(id).map(|i| &self.users[i])
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.item_idx(id).map(|i| &self.items[i])
    }

    /// Items that may be recommended.
    pub fn active_items(&self) -> Vec<ItemId> {
        let mut out: Vec<ItemId> = self.items.iter().filter(|i| i.active).map(|i| i.id).collect();
        out.sort_unstable();
        out
    }

    /// Items each user interacted with in any way (deletes included).
    /// This is the history removed by `score_new`.
    pub fn interaction_history(&self) -> HashMap<UserId, HashSet<ItemId>> {
        let mut out: HashMap<UserId, HashSet<ItemId>> = HashMap::new();
        for x in &self.interactions {
            out.entry(x.user).or_default().insert(x.item);
        }
        out
    }

    /// Positive interactions of each user, in (week, file) order.
    pub fn positive_sequences(&self) -> HashMap<UserId, Vec<(ItemId, Week)>> {
        let mut out: HashMap<UserId, Vec<(ItemId, Week)>> = HashMap::new();
        for x in self.interactions.iter().filter(|x| x.kind.is_positive()) {
            out.entry(x.user).or_default().push((x.item, x.week));
        }
        for seq in out.values_mut() {
            // stable: keeps file order inside a week
            seq.sort_by_key(|&(_, w)| w);
        }
        out
    }
}

fn integrity(file: &str, line: usize, msg: String) -> Error {
    Error::Integrity { file: file.into(), line, msg }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn user(id: u64) -> User {
        User {
            id: UserId(id),
            categorical: [1, 2, 3, 1, 4, 1, 2, 3],
            job_roles: vec![1, 2],
            field_of_studies: vec![],
        }
    }

    pub fn item(id: u64, created_at: Week) -> Item {
        Item {
            id: ItemId(id),
            categorical: [1, 2, 1, 3, 1],
            latitude: Some(48.5),
            longitude: None,
            created_at,
            title: vec![3, 4],
            tags: vec![],
            active: true,
        }
    }

    pub fn ix(user: u64, item: u64, kind: InteractionKind, week: Week) -> Interaction {
        Interaction { user: UserId(user), item: ItemId(item), kind, week }
    }

    /// Three users, five items, weeks 1..=4.
    pub fn small_bundle() -> DatasetBundle {
        use InteractionKind::*;
        let users = (1..=3).map(user).collect();
        let items = (10..15).map(|i| item(i, 1)).collect();
        let interactions = vec![
            ix(1, 10, Click, 1),
            ix(1, 11, Bookmark, 2),
            ix(1, 10, Click, 3),
            ix(2, 12, Reply, 2),
            ix(2, 13, Delete, 4),
            ix(3, 14, Click, 4),
            ix(1, 11, Click, 4),
        ];
        let impressions = vec![
            ImpressionRecord { user: UserId(1), week: 3, items: vec![ItemId(12), ItemId(12), ItemId(13)] },
            ImpressionRecord { user: UserId(2), week: 1, items: vec![ItemId(10)] },
        ];
        DatasetBundle::new(users, items, interactions, impressions, vec![UserId(1), UserId(2), UserId(3)])
            .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn weeks_span_events() {
        assert_eq!(small_bundle().weeks(), (1, 4));
    }

    #[test]
    fn dangling_item_is_integrity_error() {
        let err = DatasetBundle::new(
            vec![user(1)],
            vec![item(10, 1)],
            vec![ix(1, 99, InteractionKind::Click, 1)],
            vec![],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity { line: 2, .. }), "{err}");
    }

    #[test]
    fn target_must_be_known() {
        let err = DatasetBundle::new(vec![user(1)], vec![item(10, 1)], vec![], vec![], vec![UserId(5)])
            .unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
    }

    #[test]
    fn positive_sequences_keep_file_order_within_week() {
        let b = small_bundle();
        let seqs = b.positive_sequences();
        let s1: Vec<u64> = seqs[&UserId(1)].iter().map(|(i, _)| i.0).collect();
        assert_eq!(s1, vec![10, 11, 10, 11]);
        assert!(!seqs.contains_key(&UserId(2)) || seqs[&UserId(2)].len() == 1);
    }

    #[test]
    fn delete_is_not_positive() {
        assert!(!InteractionKind::Delete.is_positive());
        assert!(InteractionKind::ALL[..3].iter().all(|k| k.is_positive()));
        assert_eq!(InteractionKind::from_code(5), None);
    }
}
