use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingModel;
use crate::scalar::Scalar;

/// `Φ(r) = Σ_{s=1..r} 1/s`, with `Φ(0) = 0`.
pub fn harmonic(r: usize) -> f64 {
    (1..=r).map(|s| 1.0 / s as f64).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpOutcome {
    /// A violating negative was found after `trials` draws.
    Updated { trials: usize, rank: usize },
    NoViolation,
    /// No admissible negative in the pool.
    EmptyPool,
    ZeroWeight,
}

/// Gradient of `1 - S(u, pos) + S(u, neg)` with one entry per feature
/// occurrence; repeated rows accumulate.
#[derive(Clone, Debug)]
pub struct PairGradient<T> {
    pub user_vecs: Vec<(u32, Array1<T>)>,
    pub item_vecs: Vec<(u32, Array1<T>)>,
    pub item_bias: Vec<(u32, T)>,
}

pub fn pair_gradient<T: Scalar>(model: &EmbeddingModel<T>, user: usize, pos: usize, neg: usize) -> PairGradient<T> {
    let (qu, _) = model.embed_user(user);
    let (qp, _) = model.embed_item(pos);
    let (qn, _) = model.embed_item(neg);
    let du = &qn - &qp;
    let space = model.space();
    let user_vecs = space.user_rows(user).iter().map(|&r| (r, du.clone())).collect();
    let neg_q = qu.mapv(|v| -v);
    let mut item_vecs = Vec::new();
    let mut item_bias = Vec::new();
    for &r in space.item_rows(pos) {
        item_vecs.push((r, neg_q.clone()));
        item_bias.push((r, -T::one()));
    }
    for &r in space.item_rows(neg) {
        item_vecs.push((r, qu.clone()));
        item_bias.push((r, T::one()));
    }
    PairGradient { user_vecs, item_vecs, item_bias }
}

pub const ADAGRAD_INIT: f64 = 1e-6;

/// Per-element step rule for the sparse updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Sgd,
    /// Step `lr / sqrt(1 + Σ g²)` per parameter.
    #[default]
    Adagrad,
}

/// Learning rate plus the Adagrad accumulators, shaped like the model.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    lr: T,
    acc: Option<(Array2<T>, Array2<T>, Array1<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: f64) -> Self {
        Self { lr: T::of(lr), acc: None }
    }

    pub fn new(model: &EmbeddingModel<T>, schedule: Schedule, lr: f64) -> Self {
        let acc = match schedule {
            Schedule::Sgd => None,
            Schedule::Adagrad => Some((
                Array2::from_elem(model.user_vecs.raw_dim(), T::of(ADAGRAD_INIT)),
                Array2::from_elem(model.item_vecs.raw_dim(), T::of(ADAGRAD_INIT)),
                Array1::from_elem(model.item_bias.raw_dim(), T::of(ADAGRAD_INIT)),
            )),
        };
        Self { lr: T::of(lr), acc }
    }
}

#[inline]
fn descend<T: Scalar>(p: &mut T, acc: Option<&mut T>, g: T, lr: T) {
    match acc {
        None => *p -= lr * g,
        Some(a) => {
            *a += g * g;
            *p -= lr * g / a.sqrt();
        }
    }
}

fn apply<T: Scalar>(model: &mut EmbeddingModel<T>, g: &PairGradient<T>, scale: T, opt: &mut Optimizer<T>) {
    let lr = opt.lr;
    for (r, v) in &g.user_vecs {
        let r = *r as usize;
        for (k, &gk) in v.iter().enumerate() {
            let acc = opt.acc.as_mut().map(|a| &mut a.0[(r, k)]);
            descend(&mut model.user_vecs[(r, k)], acc, scale * gk, lr);
        }
    }
    for (r, v) in &g.item_vecs {
        let r = *r as usize;
        for (k, &gk) in v.iter().enumerate() {
            let acc = opt.acc.as_mut().map(|a| &mut a.1[(r, k)]);
            descend(&mut model.item_vecs[(r, k)], acc, scale * gk, lr);
        }
    }
    for &(r, b) in &g.item_bias {
        let r = r as usize;
        let acc = opt.acc.as_mut().map(|a| &mut a.2[r]);
        descend(&mut model.item_bias[r], acc, scale * b, lr);
    }
}

/// One WARP update for the positive `(user, pos)`.
///
/// Negatives are drawn uniformly from `pool` (item indices), skipping
/// `excluded(item)`, until one scores within margin 1 of the positive or
/// `max_trials` admissible draws fail. A violation after `q` draws estimates
/// rank `r = floor((|pool| - 1) / q)` and takes a step of `lr · weight · Φ(r)`
/// along the hinge gradient.
#[allow(clippy::too_many_arguments)]
pub fn warp_step<T: Scalar, R: Rng>(
    model: &mut EmbeddingModel<T>,
    user: usize,
    pos: usize,
    weight: f64,
    pool: &[u32],
    excluded: impl Fn(usize) -> bool,
    max_trials: usize,
    lr: f64,
    rng: &mut R,
) -> WarpOutcome {
    let mut opt = Optimizer::sgd(lr);
    warp_step_with(model, user, pos, weight, pool, excluded, max_trials, &mut opt, rng)
}

/// [`warp_step`] with an explicit step rule.
#[allow(clippy::too_many_arguments)]
pub fn warp_step_with<T: Scalar, R: Rng>(
    model: &mut EmbeddingModel<T>,
    user: usize,
    pos: usize,
    weight: f64,
    pool: &[u32],
    excluded: impl Fn(usize) -> bool,
    max_trials: usize,
    opt: &mut Optimizer<T>,
    rng: &mut R,
) -> WarpOutcome {
    if weight <= 0.0 {
        return WarpOutcome::ZeroWeight;
    }
    if pool.is_empty() {
        return WarpOutcome::EmptyPool;
    }
    let (qu, bu) = model.embed_user(user);
    let (qp, bp) = model.embed_item(pos);
    let s_pos = qu.dot(&qp) + bu + bp;
    let mut trials = 0;
    // skipped draws are bounded so a pool made of exclusions terminates
    let mut draws = 0;
    while trials < max_trials && draws < 10 * max_trials + pool.len() {
        draws += 1;
        let neg = pool[rng.gen_range(0..pool.len())] as usize;
        if neg == pos || excluded(neg) {
            continue;
        }
        trials += 1;
        let (qn, bn) = model.embed_item(neg);
        if qu.dot(&qn) + bu + bn + T::one() > s_pos {
            let rank = (pool.len() - 1) / trials;
            let g = pair_gradient(model, user, pos, neg);
            apply(model, &g, T::of(weight * harmonic(rank)), opt);
            return WarpOutcome::Updated { trials, rank };
        }
    }
    if trials == 0 {
        WarpOutcome::EmptyPool
    } else {
        WarpOutcome::NoViolation
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::fixtures::small_bundle;
    use crate::factorization::FeatureSpace;

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(0), 0.0);
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(100) - 5.1874).abs() < 5e-5);
        assert!((1..200).all(|r| harmonic(r + 1) >= harmonic(r)));
    }

    #[test]
    fn first_draw_violation_estimates_full_rank() {
        let b = small_bundle();
        let mut m = EmbeddingModel::<f64>::zeros(FeatureSpace::new(&b, false), 2);
        let pool = vec![3u32; 101];
        let before = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = warp_step(&mut m, 0, 0, 1.0, &pool, |_| false, 10, 0.1, &mut rng);
        assert_eq!(out, WarpOutcome::Updated { trials: 1, rank: 100 });
        // zero vectors: only the biases move, by lr · Φ(100)
        assert!((m.item_bias(0) - 0.1 * harmonic(100)).abs() < 1e-12);
        assert!((m.item_bias(3) + 0.1 * harmonic(100)).abs() < 1e-12);
        assert_ne!(m, before);
    }

    #[test]
    fn no_violation_and_zero_weight_leave_model_unchanged() {
        let b = small_bundle();
        let mut m = EmbeddingModel::<f64>::zeros(FeatureSpace::new(&b, false), 2);
        m.set_item_row(0, 5.0, &[0.0, 0.0]);
        let before = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = [1u32, 2, 3, 4];
        assert_eq!(warp_step(&mut m, 0, 0, 1.0, &pool, |_| false, 5, 0.1, &mut rng), WarpOutcome::NoViolation);
        assert_eq!(m, before);
        m.set_item_row(0, 0.0, &[0.0, 0.0]);
        let before = m.clone();
        assert_eq!(warp_step(&mut m, 0, 0, 0.0, &pool, |_| false, 5, 0.1, &mut rng), WarpOutcome::ZeroWeight);
        assert_eq!(m, before);
        assert_eq!(warp_step(&mut m, 0, 0, 1.0, &pool, |_| true, 5, 0.1, &mut rng), WarpOutcome::EmptyPool);
        assert_eq!(m, before);
    }

    fn pair_loss(m: &EmbeddingModel<f64>, u: usize, p: usize, n: usize) -> f64 {
        (1.0 - m.score_pair(u, p) + m.score_pair(u, n)).max(0.0)
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let b = small_bundle();
        let space = FeatureSpace::new(&b, true);
        let mut m = EmbeddingModel::<f64>::init(space, 4, 3);
        // scale up so the gradients are not tiny, keeping the hinge active
        let n_user = m.space().n_user_rows();
        let n_item = m.space().n_item_rows();
        m.user_vecs.mapv_inplace(|v| 10.0 * v);
        m.item_vecs.mapv_inplace(|v| 10.0 * v);
        let (u, p, n) = (0, 1, 3);
        assert!(1.0 - m.score_pair(u, p) + m.score_pair(u, n) > 0.1);
        let g = pair_gradient(&m, u, p, n);
        let mut gu = ndarray::Array2::<f64>::zeros((n_user, 4));
        let mut gi = ndarray::Array2::<f64>::zeros((n_item, 4));
        let mut gb = ndarray::Array1::<f64>::zeros(n_item);
        for (r, v) in &g.user_vecs {
            gu.row_mut(*r as usize).scaled_add(1.0, v);
        }
        for (r, v) in &g.item_vecs {
            gi.row_mut(*r as usize).scaled_add(1.0, v);
        }
        for &(r, v) in &g.item_bias {
            gb[r as usize] += v;
        }
        let h = 1e-5;
        let check = |fd: f64, an: f64, what: &str| {
            let denom = fd.abs().max(an.abs()).max(1e-3);
            assert!((fd - an).abs() / denom < 1e-4, "{what}: fd {fd} vs {an}");
        };
        for &r in m.space().user_rows(u) {
            for k in 0..4 {
                let mut a = m.clone();
                a.user_vecs[(r as usize, k)] += h;
                let mut z = m.clone();
                z.user_vecs[(r as usize, k)] -= h;
                let fd = (pair_loss(&a, u, p, n) - pair_loss(&z, u, p, n)) / (2.0 * h);
                check(fd, gu[(r as usize, k)], "user vec");
            }
        }
        for item in [p, n] {
            for &r in m.space().item_rows(item) {
                let r = r as usize;
                for k in 0..4 {
                    let mut a = m.clone();
                    a.item_vecs[(r, k)] += h;
                    let mut z = m.clone();
                    z.item_vecs[(r, k)] -= h;
                    let fd = (pair_loss(&a, u, p, n) - pair_loss(&z, u, p, n)) / (2.0 * h);
                    check(fd, gi[(r, k)], "item vec");
                }
                let mut a = m.clone();
                a.item_bias[r] += h;
                let mut z = m.clone();
                z.item_bias[r] -= h;
                let fd = (pair_loss(&a, u, p, n) - pair_loss(&z, u, p, n)) / (2.0 * h);
                check(fd, gb[r], "item bias");
            }
        }
    }

    #[test]
    fn single_pair_overfits_to_rank_one() {
        let b = small_bundle();
        let mut m = EmbeddingModel::<f64>::init(FeatureSpace::new(&b, false), 8, 1);
        let pool: Vec<u32> = (0..5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            warp_step(&mut m, 0, 2, 1.0, &pool, |_| false, 10, 0.05, &mut rng);
        }
        let s2 = m.score_pair(0, 2);
        assert!((0..5).filter(|&i| i != 2).all(|i| m.score_pair(0, i) < s2));
    }
}
