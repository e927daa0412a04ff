use ndarray::{Array2, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::scalar::Scalar;

/// Number of user categorical columns and item categorical columns.
pub(crate) const USER_CATS: usize = 8;
pub(crate) const ITEM_CATS: usize = 5;

// slot layout
pub(crate) const USER_CAT: usize = 0;
pub(crate) const USER_TOK: usize = USER_CAT + USER_CATS;
pub(crate) const ITEM_ID: usize = USER_TOK + 1;
pub(crate) const ITEM_CAT: usize = ITEM_ID + 1;
pub(crate) const ITEM_TOK: usize = ITEM_CAT + ITEM_CATS;
pub(crate) const USER_PROJ: usize = ITEM_TOK + 1;
pub(crate) const USER_PROJ_B: usize = USER_PROJ + 1;
pub(crate) const ITEM_PROJ: usize = USER_PROJ_B + 1;
pub(crate) const ITEM_PROJ_B: usize = ITEM_PROJ + 1;
pub(crate) const WX: usize = ITEM_PROJ_B + 1;
pub(crate) const WH: usize = WX + 1;
pub(crate) const BIAS: usize = WH + 1;
pub(crate) const OUT_W: usize = BIAS + 1;
pub(crate) const OUT_B: usize = OUT_W + 1;
pub(crate) const SLOTS: usize = OUT_B + 1;

/// Widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqDims {
    /// Width of every feature embedding.
    pub emb: usize,
    /// Common LSTM input width `F`.
    pub input: usize,
    pub hidden: usize,
    /// Output vocabulary size, reserved symbols included.
    pub vocab: usize,
}

impl SeqDims {
    /// Per-user feature concat: 8 categorical + 2 pooled descriptors.
    pub fn user_width(&self) -> usize {
        (USER_CATS + 2) * self.emb
    }

    /// Per-item feature concat: id + 5 categorical + 2 pooled descriptors.
    pub fn item_width(&self) -> usize {
        (1 + ITEM_CATS + 2) * self.emb
    }
}

/// Every trainable tensor, each stored as a matrix (biases are `1 × n`).
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub(crate) t: Vec<Array2<T>>,
}

impl<T: Scalar> Params<T> {
    /// Zero tensors; table heights come from `user_cards`, `item_cards` and
    /// the token vocabulary sizes.
    pub(crate) fn zeros(
        dims: SeqDims,
        user_cards: &[usize; USER_CATS],
        item_cards: &[usize; ITEM_CATS],
        user_tokens: usize,
        item_tokens: usize,
    ) -> Self {
        let e = dims.emb;
        let h4 = 4 * dims.hidden;
        let mut t = Vec::with_capacity(SLOTS);
        t.extend(user_cards.iter().map(|&n| Array2::zeros((n, e))));
        t.push(Array2::zeros((user_tokens, e)));
        t.push(Array2::zeros((dims.vocab, e)));
        t.extend(item_cards.iter().map(|&n| Array2::zeros((n, e))));
        t.push(Array2::zeros((item_tokens, e)));
        t.push(Array2::zeros((dims.user_width(), dims.input)));
        t.push(Array2::zeros((1, dims.input)));
        t.push(Array2::zeros((dims.item_width(), dims.input)));
        t.push(Array2::zeros((1, dims.input)));
        t.push(Array2::zeros((dims.input, h4)));
        t.push(Array2::zeros((dims.hidden, h4)));
        t.push(Array2::zeros((1, h4)));
        t.push(Array2::zeros((dims.hidden, dims.vocab)));
        t.push(Array2::zeros((1, dims.vocab)));
        debug_assert_eq!(t.len(), SLOTS);
        Self { t }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self { t: self.t.iter().map(|a| Array2::zeros(a.raw_dim())).collect() }
    }

    pub(crate) fn init_uniform<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        let d = Uniform::new_inclusive(-scale, scale);
        for a in &mut self.t {
            a.mapv_inplace(|_| T::of(d.sample(rng)));
        }
    }

    pub(crate) fn fill_zero(&mut self) {
        for a in &mut self.t {
            a.fill(T::zero());
        }
    }

    pub fn norm(&self) -> f64 {
        self.t.iter().flat_map(|a| a.iter()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    /// `self -= lr * g`.
    pub(crate) fn descend(&mut self, g: &Self, lr: T) {
        for (p, g) in self.t.iter_mut().zip(&g.t) {
            Zip::from(p).and(g).for_each(|p, &g| *p -= lr * g);
        }
    }

    pub(crate) fn scale(&mut self, s: T) {
        for a in &mut self.t {
            a.mapv_inplace(|v| v * s);
        }
    }

    /// Rescales to global norm `max` if larger; returns the norm before.
    pub(crate) fn clip(&mut self, max: f64) -> f64 {
        let n = self.norm();
        if n > max {
            self.scale(T::of(max / n));
        }
        n
    }

    pub fn slot(&self, k: usize) -> &Array2<T> {
        &self.t[k]
    }

    pub fn slot_mut(&mut self, k: usize) -> &mut Array2<T> {
        &mut self.t[k]
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}
