use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::history::splitmix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(F))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 5, max_features: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(p) => return p,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Bagged CART classifiers; the prediction is the mean leaf positive rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    cfg: &'a ForestConfig,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> u32 {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        let p = if idx.is_empty() { 0.0 } else { pos as f64 / idx.len() as f64 };
        self.nodes.push(Node::Leaf(p));
        self.nodes.len() as u32 - 1
    }

    /// Best `(gini decrease, feature, threshold)` over a random feature subset.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(f64, usize, f64)> {
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.labels[i]).count() as f64;
        let parent = gini(total_pos, n);
        let n_features = self.rows[0].len();
        let features = rand::seq::index::sample(rng, n_features, self.max_features.min(n_features));
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(idx.len());
        for f in features.iter() {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.rows[i][f], self.labels[i])));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for k in 1..sorted.len() {
                left_pos += f64::from(u8::from(sorted[k - 1].1));
                if sorted[k - 1].0 == sorted[k].0 || k < self.cfg.min_leaf || sorted.len() - k < self.cfg.min_leaf {
                    continue;
                }
                let (nl, nr) = (k as f64, n - k as f64);
                let child = (nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr)) / n;
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (sorted[k - 1].0 + sorted[k].0)));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf || pos == 0 || pos == idx.len() {
            return self.leaf(&idx);
        }
        let Some((_, feature, threshold)) = self.best_split(&idx, rng) else {
            return self.leaf(&idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.rows[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(f64::NAN));
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at as u32
    }
}

/// Gini CART trees on seeded bootstrap samples, each split choosing among a
/// random subset of features.
pub fn train_forest(rows: &[Vec<f64>], labels: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    if rows.len() != labels.len() {
        return Err(Error::Input(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if rows.is_empty() {
        return Err(Error::Input("no training rows".into()));
    }
    let n_features = rows[0].len();
    if n_features == 0 || rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::Input("rows must share a non-zero width".into()));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::Config("n_trees and min_leaf must be >= 1".into()));
    }
    let max_features = cfg.max_features.unwrap_or(((n_features as f64).sqrt().round() as usize).max(1));
    if max_features == 0 {
        return Err(Error::Config("max_features must be >= 1".into()));
    }
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed.wrapping_add(t as u64)));
        let sample: Vec<usize> = (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect();
        let mut b = Builder { rows, labels, cfg, max_features, nodes: Vec::new() };
        b.grow(sample, 0, &mut rng);
        trees.push(Tree { nodes: b.nodes });
    }
    Ok(Forest { trees, n_features })
}

const MAGIC: &[u8; 8] = b"JRFOREST";
const VERSION: u32 = 1;

/// Versioned binary: feature count, tree count, then each tree's nodes
/// (tag 0 = leaf with rate, tag 1 = split with feature, threshold, children).
pub fn write_forest(path: impl AsRef<Path>, forest: &Forest) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(forest.n_features as u32);
    w.u32(forest.trees.len() as u32);
    for t in &forest.trees {
        w.u32(t.nodes.len() as u32);
        for n in &t.nodes {
            match *n {
                Node::Leaf(p) => {
                    w.u8(0);
                    w.f64(p);
                }
                Node::Split { feature, threshold, left, right } => {
                    w.u8(1);
                    w.u32(feature as u32);
                    w.f64(threshold);
                    w.u32(left);
                    w.u32(right);
                }
            }
        }
    }
    fs::write(path, w.buf).map_err(|e| Error::io(path, e))
}

pub fn read_forest(path: impl AsRef<Path>) -> Result<Forest> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, version) = Reader::open(&data, MAGIC, "forest")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported forest version {version}")));
    }
    let n_features = r.u32()? as usize;
    let n_trees = r.u32()? as usize;
    let bad = |msg: &str| Error::Checkpoint(format!("forest: {msg}"));
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        let n = r.u32()? as usize;
        if n == 0 || n > r.remaining() {
            return Err(bad("bad node count"));
        }
        let mut nodes = Vec::with_capacity(n);
        for at in 0..n {
            nodes.push(match r.u8()? {
                0 => Node::Leaf(r.f64()?),
                1 => {
                    let feature = r.u32()? as usize;
                    let threshold = r.f64()?;
                    let (left, right) = (r.u32()?, r.u32()?);
                    if feature >= n_features || left as usize <= at || right as usize <= at || left as usize >= n || right as usize >= n {
                        return Err(bad("split references out of range"));
                    }
                    Node::Split { feature, threshold, left, right }
                }
                _ => return Err(bad("unknown node tag")),
            });
        }
        trees.push(Tree { nodes });
    }
    r.finish()?;
    Ok(Forest { trees, n_features })
}
