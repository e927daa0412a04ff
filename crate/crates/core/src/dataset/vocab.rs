use std::collections::HashMap;

use super::*;

/// Item vocabulary for the sequence model: index 0 is `<UNK>`, index 1 is
/// `<START>`, then items by descending positive-interaction count.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemVocab {
    items: Vec<ItemId>,
    index: HashMap<ItemId, u32>,
}

impl ItemVocab {
    pub const UNK: u32 = 0;
    pub const START: u32 = 1;
    const RESERVED: u32 = 2;

    pub fn from_items(items: Vec<ItemId>) -> Self {
        let index = items.iter().enumerate().map(|(i, &id)| (id, i as u32 + Self::RESERVED)).collect();
        Self { items, index }
    }

    /// Number of symbols including the two reserved ones.
    pub fn len(&self) -> usize {
        self.items.len() + Self::RESERVED as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Symbol for an item; `<UNK>` when out of vocabulary.
    pub fn symbol(&self, item: ItemId) -> u32 {
        self.index.get(&item).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.index.contains_key(&item)
    }

    pub fn item(&self, symbol: u32) -> Option<ItemId> {
        symbol.checked_sub(Self::RESERVED).and_then(|i| self.items.get(i as usize)).copied()
    }

    /// In-vocabulary items in symbol order.
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }
}

/// Keeps the `cap` most frequent items (by positive interactions in `train`),
/// ties to the smaller id. Items without any positive interaction rank last.
pub fn build_item_vocab(train: &DatasetBundle, cap: usize) -> ItemVocab {
    let mut counts: HashMap<ItemId, u64> = train.items().iter().map(|i| (i.id, 0)).collect();
    for x in train.interactions().iter().filter(|x| x.kind.is_positive()) {
        *counts.entry(x.item).or_default() += 1;
    }
    let mut ranked: Vec<(ItemId, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cap.max(1));
    ItemVocab::from_items(ranked.into_iter().map(|(id, _)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn five_item_bundle() -> DatasetBundle {
        use InteractionKind::*;
        let interactions = vec![
            ix(1, 14, Click, 1),
            ix(1, 12, Click, 1),
            ix(2, 14, Click, 1),
            ix(2, 12, Reply, 2),
            ix(3, 11, Click, 2),
            ix(3, 13, Delete, 2),
            ix(3, 13, Delete, 2),
        ];
        DatasetBundle::new(
            (1..=3).map(user).collect(),
            (10..15).map(|i| item(i, 1)).collect(),
            interactions,
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn ties_go_to_smaller_id() {
        // counts: 12 -> 2, 14 -> 2, 11 -> 1, 10 -> 0, 13 -> 0 (deletes do not count)
        let v = build_item_vocab(&five_item_bundle(), 3);
        assert_eq!(v.items(), &[ItemId(12), ItemId(14), ItemId(11)]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.symbol(ItemId(12)), 2);
        assert_eq!(v.symbol(ItemId(10)), ItemVocab::UNK);
        assert_eq!(v.item(ItemVocab::START), None);
        assert_eq!(v.item(3), Some(ItemId(14)));
    }

    #[test]
    fn non_binding_cap_keeps_everything() {
        let b = five_item_bundle();
        let v = build_item_vocab(&b, 1000);
        assert_eq!(v.len(), 5 + 2);
        assert!(b.items().iter().all(|i| v.symbol(i.id) != ItemVocab::UNK));
    }

    #[test]
    fn frequency_is_non_increasing_in_symbol_order() {
        let b = five_item_bundle();
        let v = build_item_vocab(&b, 5);
        let count = |id: ItemId| {
            b.interactions().iter().filter(|x| x.item == id && x.kind.is_positive()).count()
        };
        let counts: Vec<usize> = v.items().iter().map(|&i| count(i)).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    }
}
