use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_training_pairs, recommend_with_table, warp_step_with, EmbeddingModel, FeatureSpace, Gamma, Optimizer, Schedule,
    WarpOutcome,
};
use crate::dataset::{DatasetBundle, ItemId, Truth, Week};
use crate::error::{Error, Result};
use crate::metrics::{leaderboard_score, score_new, History, RankedList, MAX_LIST_LEN};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub dim: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub max_trials: usize,
    pub seed: u64,
    pub use_features: bool,
    pub use_impressions: bool,
    /// Epochs without a new best validation score before stopping.
    pub patience: usize,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            lr: 0.05,
            schedule: Schedule::Adagrad,
            epochs: 30,
            max_trials: 10,
            seed: 0,
            use_features: true,
            use_impressions: false,
            patience: 3,
        }
    }
}

/// Held-out week used for early stopping.
#[derive(Clone, Debug)]
pub struct Validation {
    pub truth: Truth,
    pub history: History,
    pub candidates: Vec<ItemId>,
}

impl Validation {
    /// Candidates are the active items, history the training interactions.
    pub fn new(train: &DatasetBundle, truth: Truth) -> Self {
        Self { truth, history: train.interaction_history(), candidates: train.active_items() }
    }

    pub fn predict<T: Scalar>(&self, model: &EmbeddingModel<T>) -> Vec<RankedList> {
        let table = model.item_table();
        self.truth
            .keys()
            .map(|&u| recommend_with_table(model, &table, u, &self.candidates, MAX_LIST_LEN))
            .collect()
    }

    /// `(score_all, score_new)` of the model's top-30 lists.
    pub fn evaluate<T: Scalar>(&self, model: &EmbeddingModel<T>) -> Result<(f64, f64)> {
        let preds = self.predict(model);
        Ok((leaderboard_score(&preds, &self.truth)?, score_new(&preds, &self.truth, &self.history)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epoch: usize,
    pub score_all: f64,
    pub score_new: f64,
    pub updates: usize,
}

#[derive(Clone, Debug)]
pub struct MfFit<T> {
    /// Model of the best validation epoch (the last one without validation).
    pub model: EmbeddingModel<T>,
    pub trace: Vec<EpochScore>,
    /// 1-based epoch of `model`.
    pub best_epoch: usize,
}

/// WARP training over [`build_training_pairs`]. Each pair's negatives come
/// from the items created by its week, minus the user's positive items.
/// With `valid`, every epoch is scored and training stops `patience`
/// epochs after the best `score_new`.
pub fn train_mf<T: Scalar>(
    train: &DatasetBundle,
    cfg: &MfConfig,
    gamma: &Gamma,
    valid: Option<&Validation>,
) -> Result<MfFit<T>> {
    if cfg.dim < 1 {
        return Err(Error::Config("dim must be >= 1".into()));
    }
    if cfg.lr <= 0.0 || cfg.max_trials == 0 {
        return Err(Error::Config("lr must be > 0 and max_trials >= 1".into()));
    }
    let space = FeatureSpace::new(train, cfg.use_features);
    let pairs: Vec<(usize, usize, Week, f64)> = build_training_pairs(train, gamma, cfg.use_impressions)
        .into_iter()
        .filter_map(|p| Some((space.user_idx(p.user)?, space.item_idx(p.item)?, p.week, p.weight)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Training("no positive pairs with non-zero weight".into()));
    }

    // pool of a pair at week τ: prefix of the items sorted by creation week
    let mut by_created: Vec<u32> = (0..train.items().len() as u32).collect();
    by_created.sort_by_key(|&i| (train.items()[i as usize].created_at, i));
    let created: Vec<Week> = by_created.iter().map(|&i| train.items()[i as usize].created_at).collect();
    let pool_len = |week: Week| created.partition_point(|&c| c <= week);

    let mut positives: HashMap<usize, Vec<usize>> = HashMap::new();
    for x in train.interactions().iter().filter(|x| x.kind.is_positive()) {
        if let (Some(u), Some(i)) = (space.user_idx(x.user), space.item_idx(x.item)) {
            positives.entry(u).or_default().push(i);
        }
    }
    for v in positives.values_mut() {
        v.sort_unstable();
        v.dedup();
    }

    let mut model = EmbeddingModel::<T>::init(space, cfg.dim, cfg.seed);
    let mut opt = Optimizer::new(&model, cfg.schedule, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingModel<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut updates = 0;
        for &k in &order {
            let (u, i, week, weight) = pairs[k];
            let pool = &by_created[..pool_len(week)];
            let seen = positives.get(&u).map(Vec::as_slice).unwrap_or(&[]);
            let out = warp_step_with(
                &mut model,
                u,
                i,
                weight,
                pool,
                |j| seen.binary_search(&j).is_ok(),
                cfg.max_trials,
                &mut opt,
                &mut rng,
            );
            if matches!(out, WarpOutcome::Updated { .. }) {
                updates += 1;
            }
        }
        let Some(valid) = valid else {
            trace.push(EpochScore { epoch, score_all: f64::NAN, score_new: f64::NAN, updates });
            continue;
        };
        let (score_all, new) = valid.evaluate(&model)?;
        trace.push(EpochScore { epoch, score_all, score_new: new, updates });
        match &best {
            Some((s, _, _)) if new <= *s => {}
            _ => best = Some((new, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, trace.len()),
    };
    Ok(MfFit { model, trace, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::small_bundle;

    #[test]
    fn zero_dim_is_config_error() {
        let cfg = MfConfig { dim: 0, ..MfConfig::default() };
        let err = train_mf::<f64>(&small_bundle(), &cfg, &Gamma::Uniform, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn unit_gamma_equals_uniform() {
        let b = small_bundle();
        let cfg = MfConfig { epochs: 1, dim: 4, ..MfConfig::default() };
        let ones = Gamma::PerWeek((1..=4).map(|w| (w, 1.0)).collect());
        let a = train_mf::<f64>(&b, &cfg, &Gamma::Uniform, None).unwrap();
        let c = train_mf::<f64>(&b, &cfg, &ones, None).unwrap();
        assert_eq!(a.model, c.model);
        let updates = |f: &MfFit<f64>| f.trace.iter().map(|e| e.updates).collect::<Vec<_>>();
        assert_eq!(updates(&a), updates(&c));
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let b = small_bundle();
        let split = crate::dataset::split_by_week(&b, 3, 4).unwrap();
        let valid = Validation::new(&split.train, split.truth);
        let cfg = MfConfig { epochs: 12, dim: 4, patience: 2, ..MfConfig::default() };
        let fit = train_mf::<f64>(&split.train, &cfg, &Gamma::Uniform, Some(&valid)).unwrap();
        let best = fit.trace.iter().map(|e| e.score_new).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(fit.trace[fit.best_epoch - 1].score_new, best);
        assert!(fit.trace.len() <= fit.best_epoch + 2);
        assert!((valid.evaluate(&fit.model).unwrap().1 - best).abs() < 1e-9);
    }
}
