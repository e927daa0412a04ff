use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HistoryIndex, TemporalWeights, Triplet, TripletDiffs, DEFAULT_LAGS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Quadratically smoothed hinge on margin `m`:
/// 0 for `m >= 1`, `(1 - m)^2 / 2` on `(0, 1)`, `1/2 - m` for `m <= 0`.
pub fn smoothed_hinge<T: Scalar>(m: T) -> T {
    let one = T::one();
    let half = T::of(0.5);
    if m >= one {
        T::zero()
    } else if m > T::zero() {
        half * (one - m) * (one - m)
    } else {
        half - m
    }
}

pub fn smoothed_hinge_grad<T: Scalar>(m: T) -> T {
    let one = T::one();
    if m >= one {
        T::zero()
    } else if m > T::zero() {
        m - one
    } else {
        -one
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrankConfig {
    pub lags: usize,
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrankConfig {
    fn default() -> Self {
        Self { lags: DEFAULT_LAGS, lr: 0.5, epochs: 15, l2: 1e-4, batch: 512, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrankFit<T> {
    pub weights: TemporalWeights<T>,
    /// Full objective before training, then after every epoch.
    pub loss_trace: Vec<f64>,
}

#[inline]
fn margin<T: Scalar>(w: &[T], row: &[(u16, i32)]) -> T {
    row.iter().fold(T::zero(), |acc, &(k, d)| acc + w[k as usize] * T::of(f64::from(d)))
}

/// Mean smoothed hinge over all triplets plus `l2 * |w|^2`, and its gradient.
pub fn objective<T: Scalar>(w: &TemporalWeights<T>, diffs: &TripletDiffs, l2: f64) -> (T, Vec<T>) {
    let flat = w.flat();
    let mut grad = vec![T::zero(); flat.len()];
    let mut loss = T::zero();
    let n = T::of(diffs.len().max(1) as f64);
    for t in 0..diffs.len() {
        let row = diffs.row(t);
        let m = margin(flat, row);
        loss += smoothed_hinge(m);
        let g = smoothed_hinge_grad(m);
        if g != T::zero() {
            for &(k, d) in row {
                grad[k as usize] += g * T::of(f64::from(d));
            }
        }
    }
    let l2t = T::of(l2);
    let reg = flat.iter().fold(T::zero(), |acc, &v| acc + v * v);
    for (g, &v) in grad.iter_mut().zip(flat) {
        *g = *g / n + T::of(2.0) * l2t * v;
    }
    (loss / n + l2t * reg, grad)
}

/// Seeded mini-batch descent on [`objective`] with step `lr / (1 + epoch)`.
/// An epoch that raises the full objective is rolled back and the step
/// halved, so the trace never increases.
pub fn train_trank<T: Scalar>(
    index: &HistoryIndex,
    triplets: &[Triplet],
    cfg: &TrankConfig,
) -> Result<TrankFit<T>> {
    if triplets.is_empty() {
        return Err(Error::Training("no triplets to learn from".into()));
    }
    let diffs = TripletDiffs::new(index, triplets, cfg.lags);
    train_on_diffs(&diffs, cfg)
}

pub(crate) fn train_on_diffs<T: Scalar>(diffs: &TripletDiffs, cfg: &TrankConfig) -> Result<TrankFit<T>> {
    if diffs.is_empty() {
        return Err(Error::Training("no triplets to learn from".into()));
    }
    if cfg.batch == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("batch must be >= 1 and lr > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = TemporalWeights::<T>::zeros(diffs.lags());
    let (loss0, _) = objective(&w, diffs, cfg.l2);
    let mut trace = vec![loss0.as_f64()];
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut scale = 1.0;
    let l2 = T::of(cfg.l2);

    for epoch in 0..cfg.epochs {
        let step = T::of(scale * cfg.lr / (1.0 + epoch as f64));
        let before = w.clone();
        order.shuffle(&mut rng);
        let mut grad = vec![T::zero(); w.flat().len()];
        for batch in order.chunks(cfg.batch) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let flat = w.flat();
            for &t in batch {
                let row = diffs.row(t);
                let g = smoothed_hinge_grad(margin(flat, row));
                if g != T::zero() {
                    for &(k, d) in row {
                        grad[k as usize] += g * T::of(f64::from(d));
                    }
                }
            }
            let nb = T::of(batch.len() as f64);
            for (v, g) in w.flat_mut().iter_mut().zip(&grad) {
                *v -= step * (*g / nb + T::of(2.0) * l2 * *v);
            }
        }
        let (loss, _) = objective(&w, diffs, cfg.l2);
        let prev = *trace.last().expect("non-empty");
        if loss.as_f64() > prev || !loss.is_finite() {
            w = before;
            scale *= 0.5;
            trace.push(prev);
        } else {
            trace.push(loss.as_f64());
        }
    }
    Ok(TrankFit { weights: w, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, InteractionKind, ItemId, UserId};
    use crate::history::{generate_triplets, trank_score};

    #[test]
    fn hinge_pieces() {
        assert_eq!(smoothed_hinge(1.0f64), 0.0);
        assert_eq!(smoothed_hinge(3.0f64), 0.0);
        assert_eq!(smoothed_hinge(0.5f64), 0.125);
        assert_eq!(smoothed_hinge(0.0f64), 0.5);
        assert_eq!(smoothed_hinge(-2.0f64), 2.5);
    }

    #[test]
    fn hinge_is_c1_at_the_joints() {
        let h = 1e-6;
        for m in [0.0f64, 1.0, -0.7, 0.3, 1.8] {
            let fd = (smoothed_hinge(m + h) - smoothed_hinge(m - h)) / (2.0 * h);
            assert!((fd - smoothed_hinge_grad(m)).abs() < 1e-6, "m={m}: fd {fd}");
        }
    }

    #[test]
    fn violated_constraint_gradient_matches_finite_differences() {
        // one violated triplet: preferred seen two weeks ago, other last week
        let ints = vec![
            Interaction { user: UserId(1), item: ItemId(1), kind: InteractionKind::Click, week: 3 },
            Interaction { user: UserId(1), item: ItemId(2), kind: InteractionKind::Bookmark, week: 4 },
            Interaction { user: UserId(1), item: ItemId(2), kind: InteractionKind::Click, week: 3 },
            Interaction { user: UserId(1), item: ItemId(1), kind: InteractionKind::Click, week: 5 },
        ];
        let index = HistoryIndex::from_events(&ints, &[]);
        let triplets = generate_triplets(&index, 5..=5, 10, 0);
        assert_eq!(triplets.len(), 1);
        let diffs = TripletDiffs::new(&index, &triplets, 4);
        let mut w = TemporalWeights::<f64>::zeros(4);
        for (k, v) in w.flat_mut().iter_mut().enumerate() {
            *v = 0.3 * ((k as f64) * 0.7).sin();
        }
        let (_, grad) = objective(&w, &diffs, 0.01);
        let h = 1e-6;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = w.clone();
            plus.flat_mut()[k] += h;
            let mut minus = w.clone();
            minus.flat_mut()[k] -= h;
            let fd = (objective(&plus, &diffs, 0.01).0 - objective(&minus, &diffs, 0.01).0) / (2.0 * h);
            let denom = fd.abs().max(g.abs()).max(1e-8);
            assert!((fd - g).abs() / denom < 1e-6, "k={k}: {fd} vs {g}");
        }
    }

    #[test]
    fn single_satisfiable_triplet_converges() {
        let ints = vec![
            Interaction { user: UserId(1), item: ItemId(1), kind: InteractionKind::Click, week: 4 },
            Interaction { user: UserId(1), item: ItemId(2), kind: InteractionKind::Click, week: 2 },
            Interaction { user: UserId(1), item: ItemId(1), kind: InteractionKind::Click, week: 5 },
        ];
        let index = HistoryIndex::from_events(&ints, &[]);
        let triplets = generate_triplets(&index, 5..=5, 10, 0);
        let cfg = TrankConfig { lags: 4, lr: 1.0, epochs: 200, l2: 0.0, batch: 8, seed: 1 };
        let fit = train_trank::<f64>(&index, &triplets, &cfg).unwrap();
        let t = triplets[0];
        let margin = trank_score(&fit.weights, &index.matrix(t.user, t.preferred, 5, 4)).unwrap()
            - trank_score(&fit.weights, &index.matrix(t.user, t.other, 5, 4)).unwrap();
        assert!(margin > 0.0);
        assert!(*fit.loss_trace.last().unwrap() < 1e-3, "{:?}", fit.loss_trace.last());
        assert!(fit.loss_trace.windows(2).all(|p| p[1] <= p[0] + 1e-6));
    }

    #[test]
    fn empty_triplets_is_training_error() {
        let index = HistoryIndex::default();
        assert!(matches!(train_trank::<f64>(&index, &[], &TrankConfig::default()), Err(Error::Training(_))));
    }
}
