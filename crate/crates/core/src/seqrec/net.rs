use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Bernoulli, Distribution};
use rand::Rng;

use super::features::{item_concat, item_scatter, user_concat, user_scatter, ItemFeat, UserFeat};
use super::params::{Params, SeqDims, BIAS, ITEM_PROJ, ITEM_PROJ_B, OUT_B, OUT_W, USER_PROJ, USER_PROJ_B, WH, WX};
use crate::scalar::{sigmoid, Scalar};

/// Activated gates `[i | f | o | g]` and the new states of one LSTM step
/// over a batch.
#[derive(Clone, Debug)]
pub(crate) struct CellOut<T> {
    pub gates: Array2<T>,
    pub c: Array2<T>,
    pub tanh_c: Array2<T>,
    pub h: Array2<T>,
}

/// `z = x·Wx + h·Wh + b`, gates `i, f, o = σ(z)`, `g = tanh(z)`,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`. Rows are batch entries.
pub(crate) fn cell<T: Scalar>(p: &Params<T>, x: ArrayView2<T>, h: ArrayView2<T>, c: ArrayView2<T>) -> CellOut<T> {
    let hidden = h.ncols();
    let mut z = Array2::zeros((x.nrows(), 4 * hidden));
    z += &p.slot(BIAS).row(0);
    general_mat_mul(T::one(), &x, p.slot(WX), T::one(), &mut z);
    general_mat_mul(T::one(), &h, p.slot(WH), T::one(), &mut z);
    z.slice_mut(s![.., ..3 * hidden]).mapv_inplace(sigmoid);
    z.slice_mut(s![.., 3 * hidden..]).mapv_inplace(T::tanh);
    let mut c_new = Array2::zeros(c.raw_dim());
    Zip::from(&mut c_new)
        .and(&c)
        .and(z.slice(s![.., ..hidden]))
        .and(z.slice(s![.., hidden..2 * hidden]))
        .and(z.slice(s![.., 3 * hidden..]))
        .for_each(|cn, &c, &i, &f, &g| *cn = f * c + i * g);
    let tanh_c = c_new.mapv(T::tanh);
    let h_new = &z.slice(s![.., 2 * hidden..3 * hidden]) * &tanh_c;
    CellOut { gates: z, c: c_new, tanh_c, h: h_new }
}

/// Gradients w.r.t. the cell's input and previous states.
pub(crate) struct CellGrad<T> {
    pub dx: Array2<T>,
    pub dh: Array2<T>,
    pub dc: Array2<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cell_backward<T: Scalar>(
    p: &Params<T>,
    g: &mut Params<T>,
    x: ArrayView2<T>,
    h_prev: ArrayView2<T>,
    c_prev: ArrayView2<T>,
    out: &CellOut<T>,
    dh: &Array2<T>,
    dc_next: &Array2<T>,
) -> CellGrad<T> {
    let hidden = dh.ncols();
    let gates = &out.gates;
    let mut dz = Array2::<T>::zeros(gates.raw_dim());
    let mut dc_prev = Array2::<T>::zeros(dh.raw_dim());
    let one = T::one();
    for b in 0..dh.nrows() {
        for k in 0..hidden {
            let i = gates[(b, k)];
            let f = gates[(b, hidden + k)];
            let o = gates[(b, 2 * hidden + k)];
            let gg = gates[(b, 3 * hidden + k)];
            let tc = out.tanh_c[(b, k)];
            let dhk = dh[(b, k)];
            let dc = dhk * o * (one - tc * tc) + dc_next[(b, k)];
            let d_o = dhk * tc;
            dz[(b, k)] = dc * gg * i * (one - i);
            dz[(b, hidden + k)] = dc * c_prev[(b, k)] * f * (one - f);
            dz[(b, 2 * hidden + k)] = d_o * o * (one - o);
            dz[(b, 3 * hidden + k)] = dc * i * (one - gg * gg);
            dc_prev[(b, k)] = dc * f;
        }
    }
    general_mat_mul(one, &x.t(), &dz, one, g.slot_mut(WX));
    general_mat_mul(one, &h_prev.t(), &dz, one, g.slot_mut(WH));
    g.slot_mut(BIAS).row_mut(0).scaled_add(one, &dz.sum_axis(Axis(0)));
    let dx = dz.dot(&p.slot(WX).t());
    let dh_prev = dz.dot(&p.slot(WH).t());
    CellGrad { dx, dh: dh_prev, dc: dc_prev }
}

/// Inverted-dropout mask (kept entries scaled by `1/(1-rate)`).
fn dropout_mask<T: Scalar, R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<T> {
    let keep = Bernoulli::new(1.0 - rate).expect("rate in [0, 1)");
    let scale = T::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if keep.sample(rng) { scale } else { T::zero() })
}

/// One batch of sequences, padded to the longest. Decoder step `s` feeds
/// `inputs[s]` and predicts `targets[s]` (`None` past a row's end).
pub(crate) struct Batch<'a> {
    pub users: Vec<&'a UserFeat>,
    pub inputs: Vec<Vec<&'a ItemFeat>>,
    pub targets: Vec<Vec<Option<u32>>>,
}

impl<'a> Batch<'a> {
    /// `seqs[b]` is the item feature list of row `b`; inputs are
    /// `<START>, i^1, .., i^{T-1}` and targets `i^1, .., i^T`.
    pub fn new(users: Vec<&'a UserFeat>, seqs: &[Vec<&'a ItemFeat>], start: &'a ItemFeat) -> Self {
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        for s in 0..steps {
            inputs.push(seqs.iter().map(|q| if s == 0 || s > q.len() { start } else { q[s - 1] }).collect());
            targets.push(seqs.iter().map(|q| q.get(s).map(|f| f.sym)).collect());
        }
        Self { users, inputs, targets }
    }

    pub fn rows(&self) -> usize {
        self.users.len()
    }
}

struct StepCache<T> {
    feats: Array2<T>,
    x: Array2<T>,
    x_mask: Option<Array2<T>>,
    h_prev: Array2<T>,
    c_prev: Array2<T>,
    out: CellOut<T>,
    h_drop: Array2<T>,
    h_mask: Option<Array2<T>>,
    dlogits: Array2<T>,
}

/// Everything backward needs from a forward pass.
pub struct ForwardCache<'a, T> {
    batch: Batch<'a>,
    enc: StepCache<T>,
    steps: Vec<StepCache<T>>,
}

fn project<T: Scalar>(feats: &Array2<T>, w: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut x = feats.dot(w);
    x += &b.row(0);
    x
}

/// Mean cross-entropy is `loss / tokens`. `dlogits` in the cache are those
/// of `loss / norm`.
pub(crate) struct Forward<'a, T> {
    pub loss: f64,
    pub tokens: usize,
    pub cache: ForwardCache<'a, T>,
}

pub(crate) fn forward<'a, T: Scalar, R: Rng>(
    p: &Params<T>,
    dims: SeqDims,
    batch: Batch<'a>,
    dropout: Option<(f64, &mut R)>,
    norm: f64,
) -> Forward<'a, T> {
    let rows = batch.rows();
    let hidden = dims.hidden;
    let mut dropout = dropout.filter(|(rate, _)| *rate > 0.0);
    let mut mask = |shape: (usize, usize)| dropout.as_mut().map(|(rate, rng)| dropout_mask::<T, R>(shape, *rate, rng));

    let mut feats = Array2::zeros((rows, dims.user_width()));
    for (b, u) in batch.users.iter().enumerate() {
        user_concat(p, u, feats.row_mut(b));
    }
    let mut x = project(&feats, p.slot(USER_PROJ), p.slot(USER_PROJ_B));
    let x_mask = mask(x.dim());
    if let Some(m) = &x_mask {
        x *= m;
    }
    let zero = Array2::zeros((rows, hidden));
    let out = cell(p, x.view(), zero.view(), zero.view());
    let mut h = out.h.clone();
    let mut c = out.c.clone();
    let enc = StepCache {
        feats,
        x,
        x_mask,
        h_prev: zero.clone(),
        c_prev: zero,
        out,
        h_drop: Array2::zeros((0, 0)),
        h_mask: None,
        dlogits: Array2::zeros((0, 0)),
    };

    let inv_norm = 1.0 / norm;
    let mut loss = 0.0;
    let mut tokens = 0;
    let mut steps = Vec::with_capacity(batch.inputs.len());
    for (inputs, targets) in batch.inputs.iter().zip(&batch.targets) {
        let mut feats = Array2::zeros((rows, dims.item_width()));
        for (b, f) in inputs.iter().enumerate() {
            item_concat(p, f, feats.row_mut(b));
        }
        let mut x = project(&feats, p.slot(ITEM_PROJ), p.slot(ITEM_PROJ_B));
        let x_mask = mask(x.dim());
        if let Some(m) = &x_mask {
            x *= m;
        }
        let out = cell(p, x.view(), h.view(), c.view());
        let h_mask = mask(out.h.dim());
        let h_drop = match &h_mask {
            Some(m) => &out.h * m,
            None => out.h.clone(),
        };
        let mut logits = h_drop.dot(p.slot(OUT_W));
        logits += &p.slot(OUT_B).row(0);
        // softmax rows, turned in place into d(loss/norm)/dlogits
        for (mut row, target) in logits.outer_iter_mut().zip(targets) {
            let Some(t) = *target else {
                row.fill(T::zero());
                continue;
            };
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            let pt = row[t as usize] / sum;
            loss -= pt.as_f64().ln();
            tokens += 1;
            let scale = T::of(inv_norm) / sum;
            row.mapv_inplace(|v| v * scale);
            row[t as usize] -= T::of(inv_norm);
        }
        let h_prev = std::mem::replace(&mut h, out.h.clone());
        let c_prev = std::mem::replace(&mut c, out.c.clone());
        steps.push(StepCache { feats, x, x_mask, h_prev, c_prev, out, h_drop, h_mask, dlogits: logits });
    }
    Forward { loss, tokens, cache: ForwardCache { batch, enc, steps } }
}

/// Accumulates the gradient of `loss / norm` into `g`.
pub(crate) fn backward<T: Scalar>(p: &Params<T>, g: &mut Params<T>, cache: &ForwardCache<'_, T>) {
    let one = T::one();
    let rows = cache.batch.rows();
    let hidden = p.slot(WH).nrows();
    let mut dh_next = Array2::<T>::zeros((rows, hidden));
    let mut dc_next = Array2::<T>::zeros((rows, hidden));
    for (s, st) in cache.steps.iter().enumerate().rev() {
        general_mat_mul(one, &st.h_drop.t(), &st.dlogits, one, g.slot_mut(OUT_W));
        g.slot_mut(OUT_B).row_mut(0).scaled_add(one, &st.dlogits.sum_axis(Axis(0)));
        let mut dh = st.dlogits.dot(&p.slot(OUT_W).t());
        if let Some(m) = &st.h_mask {
            dh *= m;
        }
        dh += &dh_next;
        let cg = cell_backward(p, g, st.x.view(), st.h_prev.view(), st.c_prev.view(), &st.out, &dh, &dc_next);
        let mut dx = cg.dx;
        if let Some(m) = &st.x_mask {
            dx *= m;
        }
        general_mat_mul(one, &st.feats.t(), &dx, one, g.slot_mut(ITEM_PROJ));
        g.slot_mut(ITEM_PROJ_B).row_mut(0).scaled_add(one, &dx.sum_axis(Axis(0)));
        let dfeats = dx.dot(&p.slot(ITEM_PROJ).t());
        for (b, f) in cache.batch.inputs[s].iter().enumerate() {
            item_scatter(g, f, dfeats.row(b));
        }
        dh_next = cg.dh;
        dc_next = cg.dc;
    }
    let st = &cache.enc;
    let cg = cell_backward(p, g, st.x.view(), st.h_prev.view(), st.c_prev.view(), &st.out, &dh_next, &dc_next);
    let mut dx = cg.dx;
    if let Some(m) = &st.x_mask {
        dx *= m;
    }
    general_mat_mul(one, &st.feats.t(), &dx, one, g.slot_mut(USER_PROJ));
    g.slot_mut(USER_PROJ_B).row_mut(0).scaled_add(one, &dx.sum_axis(Axis(0)));
    let dfeats = dx.dot(&p.slot(USER_PROJ).t());
    for (b, u) in cache.batch.users.iter().enumerate() {
        user_scatter(g, u, dfeats.row(b));
    }
}

/// Hidden state after the encoder and `history[b]` decoder steps, for each
/// row (`<START>` first, so row `b` runs `len + 1` steps).
pub(crate) fn final_states<T: Scalar>(
    p: &Params<T>,
    dims: SeqDims,
    users: &[&UserFeat],
    history: &[Vec<&ItemFeat>],
    start: &ItemFeat,
) -> Array2<T> {
    let rows = users.len();
    let mut feats = Array2::zeros((rows, dims.user_width()));
    for (b, u) in users.iter().enumerate() {
        user_concat(p, u, feats.row_mut(b));
    }
    let x = project(&feats, p.slot(USER_PROJ), p.slot(USER_PROJ_B));
    let zero = Array2::zeros((rows, dims.hidden));
    let out = cell(p, x.view(), zero.view(), zero.view());
    let (mut h, mut c) = (out.h, out.c);
    let mut last = Array2::zeros((rows, dims.hidden));
    let steps = history.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let mut feats = Array2::zeros((rows, dims.item_width()));
    for s in 0..steps {
        for (b, q) in history.iter().enumerate() {
            let f = if s == 0 || s > q.len() { start } else { q[s - 1] };
            item_concat(p, f, feats.row_mut(b));
        }
        let x = project(&feats, p.slot(ITEM_PROJ), p.slot(ITEM_PROJ_B));
        let out = cell(p, x.view(), h.view(), c.view());
        h = out.h;
        c = out.c;
        for (b, q) in history.iter().enumerate() {
            if q.len() == s {
                last.row_mut(b).assign(&h.row(b));
            }
        }
    }
    last
}

/// Softmax over the vocabulary of `h · W + b`, one row per state.
pub(crate) fn next_item_probs<T: Scalar>(p: &Params<T>, h: &Array2<T>) -> Array2<T> {
    let mut logits = h.dot(p.slot(OUT_W));
    logits += &p.slot(OUT_B).row(0);
    for mut row in logits.outer_iter_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}
