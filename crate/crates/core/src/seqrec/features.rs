use std::collections::HashMap;

use ndarray::{s, ArrayView1, ArrayViewMut1};

use super::params::{Params, ITEM_CAT, ITEM_CATS, ITEM_ID, ITEM_TOK, USER_CAT, USER_CATS, USER_TOK};
use crate::dataset::{DatasetBundle, Item, ItemId, ItemVocab, User, UserId};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct UserFeat {
    pub cats: [u32; USER_CATS],
    pub toks: [Vec<u32>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ItemFeat {
    pub sym: u32,
    pub cats: [u32; ITEM_CATS],
    pub toks: [Vec<u32>; 2],
}

/// Table heights needed to embed every value seen in a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Cards {
    pub user: [usize; USER_CATS],
    pub item: [usize; ITEM_CATS],
    pub user_tokens: usize,
    pub item_tokens: usize,
}

impl Cards {
    pub fn of(bundle: &DatasetBundle) -> Self {
        let mut c = Cards { user: [1; USER_CATS], item: [1; ITEM_CATS], user_tokens: 1, item_tokens: 1 };
        for u in bundle.users() {
            for (k, &v) in u.categorical.iter().enumerate() {
                c.user[k] = c.user[k].max(v as usize + 1);
            }
            for &t in u.descriptors().iter().flat_map(|d| d.iter()) {
                c.user_tokens = c.user_tokens.max(t as usize + 1);
            }
        }
        for i in bundle.items() {
            for (k, &v) in i.categorical.iter().enumerate() {
                c.item[k] = c.item[k].max(v as usize + 1);
            }
            for &t in i.descriptors().iter().flat_map(|d| d.iter()) {
                c.item_tokens = c.item_tokens.max(t as usize + 1);
            }
        }
        c
    }
}

/// Resolved input features of every user and item of a bundle. Values
/// outside the tables fall back to the missing entry (categorical) or are
/// dropped (tokens).
#[derive(Clone, Debug)]
pub(crate) struct SeqFeatures {
    users: HashMap<UserId, UserFeat>,
    items: HashMap<ItemId, ItemFeat>,
    pub start: ItemFeat,
    pub unk: ItemFeat,
    anonymous: UserFeat,
}

impl SeqFeatures {
    pub fn new(bundle: &DatasetBundle, vocab: &ItemVocab, cards: &Cards) -> Self {
        let users = bundle.users().iter().map(|u| (u.id, user_feat(u, cards))).collect();
        let items = bundle.items().iter().map(|i| (i.id, item_feat(i, vocab, cards))).collect();
        Self {
            users,
            items,
            start: ItemFeat { sym: ItemVocab::START, cats: [0; ITEM_CATS], toks: [vec![], vec![]] },
            unk: ItemFeat { sym: ItemVocab::UNK, cats: [0; ITEM_CATS], toks: [vec![], vec![]] },
            anonymous: UserFeat { cats: [0; USER_CATS], toks: [vec![], vec![]] },
        }
    }

    /// Unknown users get all-missing features.
    pub fn user(&self, id: UserId) -> &UserFeat {
        self.users.get(&id).unwrap_or(&self.anonymous)
    }

    /// Unknown items get `<UNK>` with all-missing features.
    pub fn item(&self, id: ItemId) -> &ItemFeat {
        self.items.get(&id).unwrap_or(&self.unk)
    }
}

fn user_feat(u: &User, cards: &Cards) -> UserFeat {
    let mut cats = u.categorical;
    for (k, v) in cats.iter_mut().enumerate() {
        if *v as usize >= cards.user[k] {
            *v = 0;
        }
    }
    let keep = |d: &[u32]| d.iter().copied().filter(|&t| (t as usize) < cards.user_tokens).collect();
    let [a, b] = u.descriptors();
    UserFeat { cats, toks: [keep(a), keep(b)] }
}

fn item_feat(i: &Item, vocab: &ItemVocab, cards: &Cards) -> ItemFeat {
    let mut cats = i.categorical;
    for (k, v) in cats.iter_mut().enumerate() {
        if *v as usize >= cards.item[k] {
            *v = 0;
        }
    }
    let keep = |d: &[u32]| d.iter().copied().filter(|&t| (t as usize) < cards.item_tokens).collect();
    let [a, b] = i.descriptors();
    ItemFeat { sym: vocab.symbol(i.id), cats, toks: [keep(a), keep(b)] }
}

fn pool<T: Scalar>(table: &ndarray::Array2<T>, toks: &[u32], mut out: ArrayViewMut1<T>) {
    out.fill(T::zero());
    if toks.is_empty() {
        return;
    }
    for &t in toks {
        out += &table.row(t as usize);
    }
    out /= T::of(toks.len() as f64);
}

fn unpool<T: Scalar>(table: &mut ndarray::Array2<T>, toks: &[u32], d: ArrayView1<T>) {
    if toks.is_empty() {
        return;
    }
    let w = T::one() / T::of(toks.len() as f64);
    for &t in toks {
        table.row_mut(t as usize).scaled_add(w, &d);
    }
}

/// `f(u)`: categorical embeddings then the mean token embedding of each
/// descriptor list.
pub(crate) fn user_concat<T: Scalar>(p: &Params<T>, f: &UserFeat, mut out: ArrayViewMut1<T>) {
    let e = p.slot(USER_TOK).ncols();
    for (k, &v) in f.cats.iter().enumerate() {
        out.slice_mut(s![k * e..(k + 1) * e]).assign(&p.slot(USER_CAT + k).row(v as usize));
    }
    for (k, toks) in f.toks.iter().enumerate() {
        let at = (USER_CATS + k) * e;
        pool(p.slot(USER_TOK), toks, out.slice_mut(s![at..at + e]));
    }
}

/// `f(i)`: id embedding, categorical embeddings, pooled descriptors.
pub(crate) fn item_concat<T: Scalar>(p: &Params<T>, f: &ItemFeat, mut out: ArrayViewMut1<T>) {
    let e = p.slot(ITEM_TOK).ncols();
    out.slice_mut(s![0..e]).assign(&p.slot(ITEM_ID).row(f.sym as usize));
    for (k, &v) in f.cats.iter().enumerate() {
        out.slice_mut(s![(k + 1) * e..(k + 2) * e]).assign(&p.slot(ITEM_CAT + k).row(v as usize));
    }
    for (k, toks) in f.toks.iter().enumerate() {
        let at = (1 + ITEM_CATS + k) * e;
        pool(p.slot(ITEM_TOK), toks, out.slice_mut(s![at..at + e]));
    }
}

pub(crate) fn user_scatter<T: Scalar>(g: &mut Params<T>, f: &UserFeat, d: ArrayView1<T>) {
    let e = g.slot(USER_TOK).ncols();
    for (k, &v) in f.cats.iter().enumerate() {
        g.slot_mut(USER_CAT + k).row_mut(v as usize).scaled_add(T::one(), &d.slice(s![k * e..(k + 1) * e]));
    }
    for (k, toks) in f.toks.iter().enumerate() {
        let at = (USER_CATS + k) * e;
        unpool(g.slot_mut(USER_TOK), toks, d.slice(s![at..at + e]));
    }
}

pub(crate) fn item_scatter<T: Scalar>(g: &mut Params<T>, f: &ItemFeat, d: ArrayView1<T>) {
    let e = g.slot(ITEM_TOK).ncols();
    g.slot_mut(ITEM_ID).row_mut(f.sym as usize).scaled_add(T::one(), &d.slice(s![0..e]));
    for (k, &v) in f.cats.iter().enumerate() {
        g.slot_mut(ITEM_CAT + k).row_mut(v as usize).scaled_add(T::one(), &d.slice(s![(k + 1) * e..(k + 2) * e]));
    }
    for (k, toks) in f.toks.iter().enumerate() {
        let at = (1 + ITEM_CATS + k) * e;
        unpool(g.slot_mut(ITEM_TOK), toks, d.slice(s![at..at + e]));
    }
}
