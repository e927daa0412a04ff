//! End-to-end runs shared by the command line and the test suites: train
//! the three components on one split, list their recommendations, and fit
//! the fusion models.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_by_week, DatasetBundle, ItemId, Split, Truth, UserId, Week};
use crate::ensemble::{
    candidate_features, ensemble_rank, fuse, greedy_linear_fusion, train_forest, CandidateFeatures, ComponentLists,
    Forest, ForestConfig, UserContext, DEFAULT_GRID,
};
use crate::error::{Error, Result};
use crate::factorization::{gamma_from_w, recommend_with_table, train_mf, EmbeddingModel, EpochScore, Gamma, MfConfig, Validation};
use crate::history::{generate_triplets, splitmix, train_trank, HistoryIndex, HistoryRanker, TemporalWeights, TrankConfig, TrankFit};
use crate::metrics::{leaderboard_score, score_new, RankedList, MAX_LIST_LEN};
use crate::seqrec::{build_sequences, histories, train_seq_ensemble, SeqConfig, SeqEnsemble, SeqEpoch};

/// Triplets are drawn from the last `triplet_weeks` training weeks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryConfig {
    pub trank: TrankConfig,
    pub triplet_weeks: u32,
    pub triplet_cap: usize,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self { trank: TrankConfig::default(), triplet_weeks: 8, triplet_cap: 10 }
    }
}

/// Triplets from the trailing weeks of `train`, then TRank.
pub fn fit_trank(train: &DatasetBundle, cfg: &HistoryConfig) -> Result<(HistoryIndex, TrankFit<f64>)> {
    let (first, last) = train.weeks();
    let window = last.saturating_sub(cfg.triplet_weeks.saturating_sub(1)).max(first + 1)..=last;
    let index = HistoryIndex::new(train);
    let triplets = generate_triplets(&index, window, cfg.triplet_cap, cfg.trank.seed);
    let fit = train_trank(&index, &triplets, &cfg.trank)?;
    Ok((index, fit))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub history: HistoryConfig,
    pub mf: MfConfig,
    pub seq: SeqConfig,
    pub forest: ForestConfig,
    /// Negative rows kept per positive row of a user.
    pub negative_ratio: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            history: HistoryConfig::default(),
            mf: MfConfig { use_impressions: true, ..MfConfig::default() },
            seq: SeqConfig::default(),
            forest: ForestConfig::default(),
            negative_ratio: 5,
        }
    }
}

impl PipelineConfig {
    /// Same seed in every block.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.history.trank.seed = seed;
        self.mf.seed = seed;
        self.seq.seed = seed;
        self.forest.seed = seed;
        self
    }
}

/// The three components trained on one bundle, ready to rank week
/// `last + 1`.
pub struct Components {
    pub train: DatasetBundle,
    pub index: HistoryIndex,
    pub weights: TemporalWeights<f64>,
    pub mf: EmbeddingModel<f32>,
    pub seq: SeqEnsemble<f32>,
}

/// Training traces of [`train_components`].
#[derive(Clone, Debug)]
pub struct ComponentTraces {
    pub trank_loss: Vec<f64>,
    pub mf: Vec<EpochScore>,
    pub mf_best_epoch: usize,
    pub seq: Vec<Vec<SeqEpoch>>,
}

/// TRank, THMF with last-week impressions (γ from the TRank weights) and
/// the LSTM ensemble. `valid` drives MF early stopping.
pub fn train_components(
    train: DatasetBundle,
    cfg: &PipelineConfig,
    valid: Option<&Validation>,
) -> Result<(Components, ComponentTraces)> {
    let (index, trank) = fit_trank(&train, &cfg.history)?;
    let gamma = Gamma::PerWeek(gamma_from_w(&trank.weights, train.weeks().1));
    let mf = train_mf::<f32>(&train, &cfg.mf, &gamma, valid)?;
    let (seq, seq_fits) = train_seq_ensemble::<f32>(&train, &build_sequences(&train), &cfg.seq)?;
    let traces = ComponentTraces {
        trank_loss: trank.loss_trace,
        mf: mf.trace,
        mf_best_epoch: mf.best_epoch,
        seq: seq_fits.into_iter().map(|f| f.trace).collect(),
    };
    Ok((Components { train, index, weights: trank.weights, mf: mf.model, seq }, traces))
}

impl Components {
    /// Component lists and contexts for `users`, ranking week `last + 1`.
    pub fn lists(&self, users: &[UserId]) -> (Vec<ComponentLists>, Vec<UserContext>) {
        let at = self.train.weeks().1 + 1;
        let ranker = HistoryRanker::TRank(self.weights.clone());
        let table = self.mf.item_table();
        let active = self.train.active_items();
        let seq = self.seq.predict(users, &histories(&self.train), &active, MAX_LIST_LEN);
        let mut counts: HashMap<UserId, HashMap<ItemId, u32>> = HashMap::new();
        for x in self.train.interactions() {
            *counts.entry(x.user).or_default().entry(x.item).or_default() += 1;
        }
        let mut shown: HashMap<UserId, HashSet<ItemId>> = HashMap::new();
        for r in self.train.impressions().iter().filter(|r| r.week + 1 == at) {
            shown.entry(r.user).or_default().extend(r.items.iter().copied());
        }
        let mut lists = Vec::with_capacity(users.len());
        let mut ctxs = Vec::with_capacity(users.len());
        for (&u, seq) in users.iter().zip(seq) {
            lists.push(ComponentLists {
                history: ranker.recommend(&self.index, u, at, self.weights.lags(), MAX_LIST_LEN),
                mf: recommend_with_table(&self.mf, &table, u, &active, MAX_LIST_LEN),
                seq,
            });
            ctxs.push(UserContext {
                history_counts: counts.remove(&u).unwrap_or_default(),
                last_impressions: shown.remove(&u).unwrap_or_default(),
                history_candidates: self.index.candidates(u, at),
            });
        }
        (lists, ctxs)
    }
}

/// Labelled rows: every positive candidate, and per user at most
/// `ratio` negatives per positive (users without a positive candidate are
/// skipped).
pub fn supervision_rows(
    users: &[UserId],
    lists: &[ComponentLists],
    ctxs: &[UserContext],
    truth: &Truth,
    ratio: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for ((&u, l), c) in users.iter().zip(lists).zip(ctxs) {
        let Some(relevant) = truth.get(&u) else { continue };
        let cands = candidate_features(u, l, c);
        let (pos, neg): (Vec<&CandidateFeatures>, Vec<&CandidateFeatures>) =
            cands.iter().partition(|f| relevant.contains(&f.item));
        if pos.is_empty() {
            continue;
        }
        let keep = (ratio * pos.len()).min(neg.len());
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ u.0));
        let mut picks = sample(&mut rng, neg.len(), keep).into_vec();
        picks.sort_unstable();
        for f in pos {
            rows.push(f.row());
            labels.push(true);
        }
        for k in picks {
            rows.push(neg[k].row());
            labels.push(false);
        }
    }
    (rows, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub score_all: f64,
    pub score_new: f64,
}

pub fn scores(preds: &[RankedList], truth: &Truth, train: &DatasetBundle) -> Result<Scores> {
    Ok(Scores { score_all: leaderboard_score(preds, truth)?, score_new: score_new(preds, truth, &train.interaction_history())? })
}

/// Component-versus-fusion comparison on one week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekTable {
    pub week: Week,
    /// `History`, `MF`, `LSTM`, then the fused rows.
    pub rows: BTreeMap<String, Scores>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub supervision_week: Week,
    pub target_week: Week,
    pub fusion_weights: Vec<f64>,
    /// Components and linear fusion on the supervision week, where the
    /// fusion weights were searched.
    pub supervision: WeekTable,
    /// Components, linear fusion and forest on the target week.
    pub target: WeekTable,
    pub forest_rows: usize,
    pub forest_positives: usize,
}

pub struct EnsembleRun {
    pub report: EnsembleReport,
    pub forest: Forest,
    /// Forest lists on the target week.
    pub predictions: Vec<RankedList>,
    pub components: Components,
}

fn component_rows(lists: &[ComponentLists], truth: &Truth, train: &DatasetBundle) -> Result<BTreeMap<String, Scores>> {
    let mut rows = BTreeMap::new();
    for (name, k) in [("History", 0), ("MF", 1), ("LSTM", 2)] {
        let preds: Vec<RankedList> = lists.iter().map(|l| l.as_array()[k].clone()).collect();
        rows.insert(name.to_string(), scores(&preds, truth, train)?);
    }
    Ok(rows)
}

fn fused_preds(lists: &[ComponentLists], weights: &[f64]) -> Vec<RankedList> {
    lists.iter().map(|l| fuse(&l.as_array(), weights, MAX_LIST_LEN)).collect()
}

/// Components are first trained on weeks `<= train_end - 1`; their lists
/// for week `train_end` supervise the forest and the fusion weights. Then
/// the components for weeks `<= train_end` rank `target`: `trained` when
/// given, otherwise retrained here (MF for the epoch count selected in the
/// first stage).
pub fn run_ensemble(
    bundle: &DatasetBundle,
    train_end: Week,
    target: Week,
    cfg: &PipelineConfig,
    trained: Option<Components>,
) -> Result<EnsembleRun> {
    let sup_week = train_end;
    let stage1 = split_by_week(bundle, train_end - 1, sup_week)?;
    let valid = Validation::new(&stage1.train, stage1.truth.clone());
    let (comps1, traces1) = train_components(stage1.train, cfg, Some(&valid))?;
    let sup_users: Vec<UserId> = stage1.truth.keys().copied().collect();
    let (lists1, ctxs1) = comps1.lists(&sup_users);
    let (rows, labels) = supervision_rows(&sup_users, &lists1, &ctxs1, &stage1.truth, cfg.negative_ratio, cfg.forest.seed);
    if rows.is_empty() {
        return Err(Error::Training("no positive candidates in the supervision week".into()));
    }
    let forest = train_forest(&rows, &labels, &cfg.forest)?;
    let per_component: Vec<Vec<RankedList>> =
        (0..3).map(|k| lists1.iter().map(|l| l.as_array()[k].clone()).collect()).collect();
    let fusion = greedy_linear_fusion(&per_component, &stage1.truth, &DEFAULT_GRID)?;
    let mut sup_rows = component_rows(&lists1, &stage1.truth, &comps1.train)?;
    sup_rows.insert("Linear fusion".into(), scores(&fused_preds(&lists1, &fusion.weights), &stage1.truth, &comps1.train)?);

    let Split { train, truth, .. } = split_by_week(bundle, train_end, target)?;
    let comps = match trained {
        Some(c) => {
            if c.train.weeks().1 != train_end {
                return Err(Error::Input(format!(
                    "components were trained through week {}, expected {train_end}",
                    c.train.weeks().1
                )));
            }
            c
        }
        None => {
            let epochs = traces1.mf_best_epoch.max(1);
            let final_cfg = PipelineConfig { mf: MfConfig { epochs, ..cfg.mf.clone() }, ..cfg.clone() };
            train_components(train, &final_cfg, None)?.0
        }
    };
    let users: Vec<UserId> = truth.keys().copied().collect();
    let (lists, ctxs) = comps.lists(&users);
    let predictions: Vec<RankedList> = users
        .iter()
        .zip(&lists)
        .zip(&ctxs)
        .map(|((&u, l), c)| ensemble_rank(&forest, u, &candidate_features(u, l, c), MAX_LIST_LEN))
        .collect();
    let mut target_rows = component_rows(&lists, &truth, &comps.train)?;
    target_rows.insert("Linear fusion".into(), scores(&fused_preds(&lists, &fusion.weights), &truth, &comps.train)?);
    target_rows.insert("Ensemble".into(), scores(&predictions, &truth, &comps.train)?);

    let report = EnsembleReport {
        supervision_week: sup_week,
        target_week: target,
        fusion_weights: fusion.weights,
        supervision: WeekTable { week: sup_week, rows: sup_rows },
        target: WeekTable { week: target, rows: target_rows },
        forest_rows: rows.len(),
        forest_positives: labels.iter().filter(|&&l| l).count(),
    };
    Ok(EnsembleRun { report, forest, predictions, components: comps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ComponentLists;

    fn list(user: u64, items: &[u64]) -> RankedList {
        RankedList {
            user: UserId(user),
            items: items.iter().map(|&i| ItemId(i)).collect(),
            scores: (0..items.len()).map(|k| -(k as f64)).collect(),
        }
    }

    #[test]
    fn supervision_keeps_all_positives_and_caps_negatives() {
        let lists = vec![
            ComponentLists { history: list(1, &[1, 2]), mf: list(1, &[3, 4, 5, 6]), seq: list(1, &[7, 8, 9]) },
            ComponentLists { history: list(2, &[1]), mf: list(2, &[2]), seq: list(2, &[3]) },
        ];
        let ctxs = vec![UserContext::default(), UserContext::default()];
        let truth: Truth = [(UserId(1), [ItemId(4)].into_iter().collect()), (UserId(2), [ItemId(99)].into_iter().collect())]
            .into_iter()
            .collect();
        let (rows, labels) = supervision_rows(&[UserId(1), UserId(2)], &lists, &ctxs, &truth, 5, 0);
        assert_eq!(rows.len(), 6);
        assert_eq!(labels.iter().filter(|&&l| l).count(), 1);
        let again = supervision_rows(&[UserId(1), UserId(2)], &lists, &ctxs, &truth, 5, 0);
        assert_eq!((rows, labels), again);
    }
}
