use std::collections::HashMap;

use crate::dataset::{
    DatasetBundle, Item, ItemId, User, UserId, ITEM_CATEGORICAL, ITEM_NUMERICAL, MISSING, USER_CATEGORICAL,
};

/// Number of quantile buckets for each numerical item field.
pub const NUMERIC_BUCKETS: usize = 16;

/// Feature rows of every user and item. Row 0..n of each side are named
/// `name=value`; an entity's embedding is the sum over its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    use_features: bool,
    user_names: Vec<String>,
    item_names: Vec<String>,
    user_rows: Vec<Vec<u32>>,
    item_rows: Vec<Vec<u32>>,
    user_lookup: HashMap<UserId, usize>,
    item_lookup: HashMap<ItemId, usize>,
    item_ids: Vec<ItemId>,
}

#[derive(Default)]
struct Namer {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Namer {
    fn row(&mut self, name: String) -> u32 {
        if let Some(&r) = self.index.get(&name) {
            return r;
        }
        let r = self.names.len() as u32;
        self.index.insert(name.clone(), r);
        self.names.push(name);
        r
    }
}

/// Upper bucket boundaries at the 1/16 .. 15/16 quantiles.
fn quantile_edges(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_unstable_by(f64::total_cmp);
    if values.is_empty() {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..NUMERIC_BUCKETS)
        .map(|j| values[(j * values.len() / NUMERIC_BUCKETS).min(values.len() - 1)])
        .collect();
    edges.dedup();
    edges
}

/// 0 for missing, else `1 + #edges <= v`.
fn bucket(edges: &[f64], v: Option<f64>) -> usize {
    match v {
        None => 0,
        Some(v) => 1 + edges.partition_point(|&e| e <= v),
    }
}

impl FeatureSpace {
    /// With `use_features` off only the id rows exist (plain matrix
    /// factorization); otherwise ids plus every categorical value, bucketized
    /// numerical field and descriptor token. Descriptor tokens share one
    /// table per side.
    pub fn new(bundle: &DatasetBundle, use_features: bool) -> Self {
        let mut un = Namer::default();
        let user_rows: Vec<Vec<u32>> = bundle
            .users()
            .iter()
            .map(|u| {
                let mut rows = vec![un.row(format!("id={}", u.id))];
                if use_features {
                    rows.extend(user_feature_rows(&mut un, u));
                }
                rows
            })
            .collect();
        if use_features {
            // every categorical column has a missing-value row
            for name in USER_CATEGORICAL {
                un.row(format!("{name}={MISSING}"));
            }
        }

        let edges: Vec<Vec<f64>> = (0..ITEM_NUMERICAL.len())
            .map(|k| quantile_edges(bundle.items().iter().filter_map(|i| numeric(i, k)).collect()))
            .collect();
        let mut inames = Namer::default();
        let item_rows: Vec<Vec<u32>> = bundle
            .items()
            .iter()
            .map(|it| {
                let mut rows = vec![inames.row(format!("id={}", it.id))];
                if use_features {
                    rows.extend(item_feature_rows(&mut inames, it, &edges));
                }
                rows
            })
            .collect();
        if use_features {
            for name in ITEM_CATEGORICAL {
                inames.row(format!("{name}={MISSING}"));
            }
            for name in ITEM_NUMERICAL {
                inames.row(format!("{name}_bucket=0"));
            }
        }

        Self {
            use_features,
            user_names: un.names,
            item_names: inames.names,
            user_rows,
            item_rows,
            user_lookup: bundle.users().iter().enumerate().map(|(k, u)| (u.id, k)).collect(),
            item_lookup: bundle.items().iter().enumerate().map(|(k, i)| (i.id, k)).collect(),
            item_ids: bundle.items().iter().map(|i| i.id).collect(),
        }
    }

    pub fn use_features(&self) -> bool {
        self.use_features
    }

    pub fn n_user_rows(&self) -> usize {
        self.user_names.len()
    }

    pub fn n_item_rows(&self) -> usize {
        self.item_names.len()
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn user_idx(&self, id: UserId) -> Option<usize> {
        self.user_lookup.get(&id).copied()
    }

    pub fn item_idx(&self, id: ItemId) -> Option<usize> {
        self.item_lookup.get(&id).copied()
    }

    pub fn item_id(&self, idx: usize) -> ItemId {
        self.item_ids[idx]
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_rows(&self, idx: usize) -> &[u32] {
        &self.user_rows[idx]
    }

    pub fn item_rows(&self, idx: usize) -> &[u32] {
        &self.item_rows[idx]
    }
}

fn numeric(item: &Item, k: usize) -> Option<f64> {
    match k {
        0 => item.latitude,
        1 => item.longitude,
        _ => Some(f64::from(item.created_at)),
    }
}

fn user_feature_rows(n: &mut Namer, u: &User) -> Vec<u32> {
    let mut rows: Vec<u32> =
        USER_CATEGORICAL.iter().zip(u.categorical).map(|(name, v)| n.row(format!("{name}={v}"))).collect();
    for tokens in u.descriptors() {
        rows.extend(tokens.iter().map(|t| n.row(format!("token={t}"))));
    }
    rows
}

fn item_feature_rows(n: &mut Namer, it: &Item, edges: &[Vec<f64>]) -> Vec<u32> {
    let mut rows: Vec<u32> =
        ITEM_CATEGORICAL.iter().zip(it.categorical).map(|(name, v)| n.row(format!("{name}={v}"))).collect();
    for (k, name) in ITEM_NUMERICAL.iter().enumerate() {
        rows.push(n.row(format!("{name}_bucket={}", bucket(&edges[k], numeric(it, k)))));
    }
    for tokens in it.descriptors() {
        rows.extend(tokens.iter().map(|t| n.row(format!("token={t}"))));
    }
    rows
}
