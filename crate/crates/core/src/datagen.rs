//! Seeded synthetic data with three planted signals:
//!
//! * recency-biased re-interaction: an item the user met before comes back
//!   with hazard `reinteract_rate * Σ kind_weight * ρ^(lag-1)` over its past
//!   events (capped at [`HAZARD_CAP`]),
//! * feature-driven affinity: user and item latent factors are sums of
//!   per-feature-value vectors, so identical features give identical scores,
//! * cluster transitions: fresh (first-time) items follow a Markov chain over
//!   item clusters (`discipline_id`), moving to the next cluster on the cycle
//!   with probability `transition_sharpness`.
//!
//! Impressions are the generative top list of each active user-week with each
//! slot replaced by a random item with probability `noise`. Impressions raise
//! the hazard of an item only once the user has interacted with it, so the
//! first interaction with any item is always a step of the chain.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    DatasetBundle, ImpressionRecord, Interaction, InteractionKind, Item, ItemId, User, UserId, Week,
};
use crate::error::{Error, Result};

/// Upper bound on any per-week re-interaction probability.
pub const HAZARD_CAP: f64 = 0.9;

/// Re-interaction weight of each past event: impression, click, bookmark,
/// reply, delete.
pub const KIND_HAZARD_WEIGHT: [f64; 5] = [0.12, 1.0, 2.0, 3.0, 0.0];

/// Probability of click, bookmark, reply, delete for every generated event.
pub const KIND_MIX: [f64; 4] = [0.80, 0.12, 0.06, 0.02];

const USER_CARDINALITY: [u32; 8] = [6, 0, 20, 4, 16, 5, 8, 8];
const ITEM_CARDINALITY: [u32; 5] = [6, 0, 4, 16, 5];
const MISSING_RATE: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_weeks: u32,
    pub k_latent: usize,
    /// Per-week decay ρ of the re-interaction hazard.
    pub recency_decay: f64,
    pub transition_clusters: usize,
    pub transition_sharpness: f64,
    pub impressions_per_user_week: usize,
    pub noise: f64,
    pub seed: u64,
    /// Share of items created in the last `cold_weeks` weeks.
    pub cold_fraction: f64,
    pub cold_weeks: u32,
    /// Share of older items that close before the last week.
    pub closed_fraction: f64,
    /// Probability a user is active in a given week.
    pub activity: f64,
    pub reinteract_rate: f64,
    /// Inverse temperature of the within-cluster item choice.
    pub affinity_sharpness: f64,
    /// Score bonus for items created this week or the week before.
    pub freshness_bonus: f64,
    /// Norm scale of each user's linear taste drift over the horizon.
    pub taste_drift: f64,
    /// Impression score bonus for items in the user's next cluster.
    pub transition_bonus: f64,
    /// Relative weights of 1, 2, 3, .. fresh picks in an active week.
    pub fresh_counts: Vec<f64>,
    pub descriptor_vocab: u32,
    pub target_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 2000,
            n_weeks: 16,
            k_latent: 8,
            recency_decay: 0.5,
            transition_clusters: 20,
            transition_sharpness: 0.9,
            impressions_per_user_week: 10,
            noise: 0.2,
            seed: 0,
            cold_fraction: 0.2,
            cold_weeks: 2,
            closed_fraction: 0.1,
            activity: 0.6,
            reinteract_rate: 0.25,
            affinity_sharpness: 1.5,
            freshness_bonus: 1.0,
            taste_drift: 0.0,
            transition_bonus: 1.0,
            fresh_counts: vec![0.4, 0.3, 0.2, 0.1],
            descriptor_vocab: 200,
            target_fraction: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.n_weeks == 0 || self.k_latent == 0 {
            return bad("n_users, n_items, n_weeks and k_latent must be >= 1");
        }
        if self.transition_clusters == 0 || self.impressions_per_user_week == 0 {
            return bad("transition_clusters and impressions_per_user_week must be >= 1");
        }
        if !(self.recency_decay > 0.0 && self.recency_decay < 1.0) {
            return bad("recency_decay must lie in (0, 1)");
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.transition_sharpness) {
            return bad("transition_sharpness must lie in [0, 1]");
        }
        if !unit(self.noise) || !unit(self.cold_fraction) || !unit(self.closed_fraction) {
            return bad("noise, cold_fraction and closed_fraction must lie in [0, 1]");
        }
        if !unit(self.activity) || !unit(self.reinteract_rate) || !unit(self.target_fraction) {
            return bad("activity, reinteract_rate and target_fraction must lie in [0, 1]");
        }
        if self.fresh_counts.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.fresh_counts.iter().sum::<f64>() <= 0.0 {
            return bad("fresh_counts must be finite, >= 0 and not all zero");
        }
        if !(self.taste_drift >= 0.0 && self.taste_drift.is_finite()) {
            return bad("taste_drift must be finite and >= 0");
        }
        if self.cold_weeks >= self.n_weeks && self.cold_fraction < 1.0 {
            return bad("cold_weeks must be smaller than n_weeks");
        }
        if self.descriptor_vocab < 5 * self.transition_clusters as u32 {
            return bad("descriptor_vocab must be at least 5 * transition_clusters");
        }
        Ok(())
    }

    /// Cluster of an item with this `discipline_id`.
    pub fn cluster_of(discipline_id: u32) -> usize {
        discipline_id as usize - 1
    }
}

struct Latents {
    dim: usize,
    /// Shared by user and item columns of the same name.
    career: Vec<Vec<f64>>,
    country: Vec<Vec<f64>>,
    region: Vec<Vec<f64>>,
    industry: Vec<Vec<f64>>,
    employment: Vec<Vec<f64>>,
    tokens: Vec<Vec<f64>>,
}

impl Latents {
    fn new(rng: &mut ChaCha8Rng, dim: usize, tokens: u32) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut table = |n: u32, s: f64| -> Vec<Vec<f64>> {
            (0..=n)
                .map(|v| {
                    if v == 0 {
                        vec![0.0; dim]
                    } else {
                        (0..dim).map(|_| s * scale * gaussian(rng)).collect()
                    }
                })
                .collect()
        };
        Self {
            dim,
            career: table(6, 1.0),
            country: table(4, 0.6),
            region: table(16, 1.0),
            industry: table(20, 0.8),
            employment: table(5, 0.8),
            tokens: table(tokens, 1.2),
        }
    }

    fn add_mean(&self, acc: &mut [f64], tokens: &[u32]) {
        if tokens.is_empty() {
            return;
        }
        let w = 1.0 / tokens.len() as f64;
        for &t in tokens {
            for (a, v) in acc.iter_mut().zip(&self.tokens[t as usize]) {
                *a += w * v;
            }
        }
    }

    fn user(&self, u: &User) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for table in [
            &self.career[u.categorical[0] as usize],
            &self.industry[u.categorical[2] as usize],
            &self.country[u.categorical[3] as usize],
            &self.region[u.categorical[4] as usize],
        ] {
            z.iter_mut().zip(table).for_each(|(a, v)| *a += v);
        }
        self.add_mean(&mut z, &u.job_roles);
        z
    }

    fn item(&self, i: &Item) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for table in [
            &self.career[i.categorical[0] as usize],
            &self.country[i.categorical[2] as usize],
            &self.region[i.categorical[3] as usize],
            &self.employment[i.categorical[4] as usize],
        ] {
            z.iter_mut().zip(table).for_each(|(a, v)| *a += v);
        }
        self.add_mean(&mut z, &i.tags);
        z
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn category(rng: &mut ChaCha8Rng, card: u32) -> u32 {
    if rng.gen_bool(MISSING_RATE) {
        0
    } else {
        rng.gen_range(1..=card)
    }
}

fn tokens(rng: &mut ChaCha8Rng, vocab: u32, min: usize, max: usize) -> Vec<u32> {
    let n = rng.gen_range(min..=max);
    let mut out: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=vocab)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn sample_kind(rng: &mut ChaCha8Rng, mix: &WeightedIndex<f64>) -> InteractionKind {
    InteractionKind::ALL[mix.sample(rng)]
}

struct ItemState {
    created_at: Week,
    closes_at: Option<Week>,
}

impl ItemState {
    fn available(&self, week: Week) -> bool {
        self.created_at <= week && self.closes_at.is_none_or(|c| week < c)
    }
}

/// Generates a bundle over weeks `1..=n_weeks`. Equal configs give equal
/// bundles.
pub fn generate(cfg: &GenConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_weeks = cfg.n_weeks;
    let clusters = cfg.transition_clusters;
    let latents = Latents::new(&mut rng, cfg.k_latent, cfg.descriptor_vocab);

    let users: Vec<User> = (0..cfg.n_users)
        .map(|u| {
            let mut categorical = [0u32; 8];
            for (k, slot) in categorical.iter_mut().enumerate() {
                let card = if k == 1 { clusters as u32 } else { USER_CARDINALITY[k] };
                *slot = category(&mut rng, card);
            }
            User {
                id: UserId(u as u64 + 1),
                categorical,
                job_roles: tokens(&mut rng, cfg.descriptor_vocab, 1, 4),
                field_of_studies: tokens(&mut rng, cfg.descriptor_vocab, 0, 2),
            }
        })
        .collect();

    let first_cold_week = n_weeks + 1 - cfg.cold_weeks.min(n_weeks);
    let mut states = Vec::with_capacity(cfg.n_items);
    let items: Vec<Item> = (0..cfg.n_items)
        .map(|i| {
            let cold = rng.gen_bool(cfg.cold_fraction);
            let created_at = if cold || first_cold_week <= 1 {
                rng.gen_range(first_cold_week.max(1)..=n_weeks)
            } else {
                rng.gen_range(1..first_cold_week)
            };
            let closes_at = if !cold && created_at + 1 < n_weeks && rng.gen_bool(cfg.closed_fraction) {
                Some(rng.gen_range(created_at + 1..n_weeks))
            } else {
                None
            };
            states.push(ItemState { created_at, closes_at });

            let discipline = rng.gen_range(1..=clusters as u32);
            let mut categorical = [0u32; 5];
            for (k, slot) in categorical.iter_mut().enumerate() {
                *slot = if k == crate::dataset::ITEM_DISCIPLINE {
                    discipline
                } else {
                    category(&mut rng, ITEM_CARDINALITY[k])
                };
            }
            let region = categorical[3];
            let (lat, lon) = if region == 0 || rng.gen_bool(0.05) {
                (None, None)
            } else {
                let lat = 45.0 + f64::from(region % 4) * 2.0 + 0.5 * gaussian(&mut rng);
                let lon = 6.0 + f64::from(region / 4) * 2.0 + 0.5 * gaussian(&mut rng);
                (Some(round4(lat)), Some(round4(lon)))
            };
            // the first title token names the discipline
            let mut title = vec![(discipline - 1) * 5 + rng.gen_range(1..=5)];
            title.extend(tokens(&mut rng, cfg.descriptor_vocab, 0, 3));
            Item {
                id: ItemId(i as u64 + 1),
                categorical,
                latitude: lat,
                longitude: lon,
                created_at,
                title,
                tags: tokens(&mut rng, cfg.descriptor_vocab, 1, 3),
                active: closes_at.is_none(),
            }
        })
        .collect();

    let base_z: Vec<Vec<f64>> = users.iter().map(|u| latents.user(u)).collect();
    let drift_scale = cfg.taste_drift / (cfg.k_latent as f64).sqrt();
    let drift: Vec<Vec<f64>> = if cfg.taste_drift > 0.0 {
        (0..cfg.n_users).map(|_| (0..cfg.k_latent).map(|_| drift_scale * gaussian(&mut rng)).collect()).collect()
    } else {
        Vec::new()
    };
    let mut user_z = base_z.clone();
    let item_z: Vec<Vec<f64>> = items.iter().map(|i| latents.item(i)).collect();
    let item_cluster: Vec<usize> = items
        .iter()
        .map(|i| GenConfig::cluster_of(i.categorical[crate::dataset::ITEM_DISCIPLINE]))
        .collect();
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, &c) in item_cluster.iter().enumerate() {
        by_cluster[c].push(i);
    }

    let kind_mix = WeightedIndex::new(KIND_MIX).expect("static weights");
    let fresh_mix = WeightedIndex::new(&cfg.fresh_counts).expect("validated weights");
    let rho = cfg.recency_decay;

    struct UserState {
        cluster: usize,
        /// item -> Σ kind_weight * ρ^(t-1-week) over events before week t
        decayed: BTreeMap<usize, f64>,
        seen: HashSet<usize>,
    }
    let mut ustates: Vec<UserState> = (0..cfg.n_users)
        .map(|_| UserState { cluster: rng.gen_range(0..clusters), decayed: BTreeMap::new(), seen: HashSet::new() })
        .collect();

    let mut interactions = Vec::new();
    let mut impressions = Vec::new();
    let mut scores: Vec<(f64, usize)> = Vec::with_capacity(cfg.n_items);

    for week in 1..=n_weeks {
        if !drift.is_empty() {
            let t = f64::from(week - 1) / f64::from(n_weeks.max(2) - 1);
            for (z, (b, d)) in user_z.iter_mut().zip(base_z.iter().zip(&drift)) {
                for (zk, (bk, dk)) in z.iter_mut().zip(b.iter().zip(d)) {
                    *zk = bk + t * dk;
                }
            }
        }
        let available: Vec<usize> = (0..cfg.n_items).filter(|&i| states[i].available(week)).collect();
        for (u, st) in ustates.iter_mut().enumerate() {
            let mut touched: Vec<(usize, f64)> = Vec::new();
            if rng.gen_bool(cfg.activity) && !available.is_empty() {
                let uid = users[u].id;
                let next_cluster = (st.cluster + 1) % clusters;

                // impressions: generative top list, corrupted
                scores.clear();
                for &i in &available {
                    let mut g = dot(&user_z[u], &item_z[i]) + freshness(cfg, &states[i], week);
                    if item_cluster[i] == next_cluster {
                        g += cfg.transition_bonus;
                    }
                    if let Some(s) = st.decayed.get(&i) {
                        g += s.min(1.0);
                    }
                    scores.push((g, i));
                }
                let m = cfg.impressions_per_user_week.min(scores.len());
                if m < scores.len() {
                    scores.select_nth_unstable_by(m - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                }
                let mut top: Vec<(f64, usize)> = scores[..m].to_vec();
                top.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let shown: Vec<usize> = top
                    .iter()
                    .map(|&(_, i)| {
                        if rng.gen_bool(cfg.noise) {
                            available[rng.gen_range(0..available.len())]
                        } else {
                            i
                        }
                    })
                    .collect();
                impressions.push(ImpressionRecord {
                    user: uid,
                    week,
                    items: shown.iter().map(|&i| items[i].id).collect(),
                });
                for &i in &shown {
                    touched.push((i, KIND_HAZARD_WEIGHT[0]));
                }

                // re-interactions, driven only by events of earlier weeks
                let mut re: Vec<usize> = Vec::new();
                for (&i, &s) in &st.decayed {
                    if !st.seen.contains(&i) {
                        continue;
                    }
                    let p = (cfg.reinteract_rate * s).min(HAZARD_CAP);
                    if p > 0.0 && rng.gen_bool(p) && states[i].available(week) {
                        re.push(i);
                    }
                }
                for i in re {
                    let kind = sample_kind(&mut rng, &kind_mix);
                    interactions.push(Interaction { user: uid, item: items[i].id, kind, week });
                    touched.push((i, KIND_HAZARD_WEIGHT[kind.code() as usize]));
                }

                // fresh items along the cluster chain
                let n_fresh = fresh_mix.sample(&mut rng) + 1;
                for _ in 0..n_fresh {
                    let cluster = if rng.gen_bool(cfg.transition_sharpness) {
                        (st.cluster + 1) % clusters
                    } else {
                        rng.gen_range(0..clusters)
                    };
                    let pool: Vec<usize> = by_cluster[cluster]
                        .iter()
                        .copied()
                        .filter(|&i| states[i].available(week) && !st.seen.contains(&i))
                        .collect();
                    if pool.is_empty() {
                        break;
                    }
                    st.cluster = cluster;
                    let logits: Vec<f64> = pool
                        .iter()
                        .map(|&i| {
                            cfg.affinity_sharpness * (dot(&user_z[u], &item_z[i]) + freshness(cfg, &states[i], week))
                        })
                        .collect();
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let pick = pool[WeightedIndex::new(&weights).expect("finite weights").sample(&mut rng)];
                    let kind = sample_kind(&mut rng, &kind_mix);
                    interactions.push(Interaction { user: uid, item: items[pick].id, kind, week });
                    touched.push((pick, KIND_HAZARD_WEIGHT[kind.code() as usize]));
                    st.seen.insert(pick);
                }
            }
            // roll the decayed sums forward to the start of next week
            for s in st.decayed.values_mut() {
                *s *= rho;
            }
            st.decayed.retain(|_, s| *s > 1e-9);
            for (i, w) in touched {
                if w > 0.0 {
                    *st.decayed.entry(i).or_insert(0.0) += w;
                }
            }
        }
    }

    let target_users: Vec<UserId> =
        users.iter().filter(|_| rng.gen_bool(cfg.target_fraction)).map(|u| u.id).collect();

    DatasetBundle::with_weeks(users, items, interactions, impressions, target_users, (1, n_weeks))
}

fn freshness(cfg: &GenConfig, state: &ItemState, week: Week) -> f64 {
    if week.saturating_sub(state.created_at) <= 1 {
        cfg.freshness_bonus
    } else {
        0.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
