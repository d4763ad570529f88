//! Random forest of CART classification trees over small-integer features,
//! used to rank SNPs by mean decrease in Gini impurity.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnpError};

pub const TREE_COUNTS: [usize; 4] = [50, 100, 150, 200];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            max_depth: 8,
            min_samples_split: 2,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(usize),
    /// Samples with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: u8,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[u8]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Mean over trees of each tree's normalized impurity decrease.
    pub importances: Vec<f64>,
    n_classes: usize,
}

impl Forest {
    pub fn predict(&self, row: &[u8]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        argmax(&votes)
    }

    /// All features, most important first; ties go to the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.importances)
    }
}

pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<u8>],
    y: &'a [usize],
    n_classes: usize,
    max_value: &'a [u8],
    mtry: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let n = idx.len();
        let impurity = gini(&counts, n);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(argmax(&counts)));
        if depth >= self.params.max_depth || n < self.params.min_samples_split || impurity == 0.0 {
            return id;
        }

        let n_features = self.max_value.len();
        let mut features = sample(rng, n_features, self.mtry).into_vec();
        features.sort_unstable();
        // (gain, feature, threshold); strict improvement keeps the lowest index.
        let mut best: Option<(f64, usize, u8)> = None;
        let mut hist = Vec::new();
        for &f in &features {
            let levels = self.max_value[f] as usize + 1;
            if levels < 2 {
                continue;
            }
            hist.clear();
            hist.resize(levels * self.n_classes, 0usize);
            for &i in idx.iter() {
                hist[self.x[i][f] as usize * self.n_classes + self.y[i]] += 1;
            }
            let mut left = vec![0usize; self.n_classes];
            for t in 1..levels {
                for c in 0..self.n_classes {
                    left[c] += hist[(t - 1) * self.n_classes + c];
                }
                let n_left = left.iter().sum::<usize>();
                if n_left == 0 || n_left == n {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(a, b)| a - b).collect();
                let n_right = n - n_left;
                let child = (n_left as f64 * gini(&left, n_left) + n_right as f64 * gini(&right, n_right)) / n as f64;
                let gain = impurity - child;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, t as u8));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        self.importance[feature] += n as f64 * gain;

        let mid = partition(idx, |i| self.x[i][feature] < threshold);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut k = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(k, j);
            k += 1;
        }
    }
    k
}

/// Fits `params.n_trees` trees, each on a bootstrap resample, drawing
/// `floor(sqrt(F))` candidate features per split. Impurity decreases are
/// weighted by node size, normalized to sum to 1 within each tree, then
/// averaged across trees.
pub fn fit_forest(x: &[Vec<u8>], labels: &[usize], params: &ForestParams) -> Result<Forest> {
    let n = x.len();
    if n != labels.len() {
        return Err(SnpError::Data(format!("{n} rows but {} labels", labels.len())));
    }
    if params.n_trees == 0 {
        return Err(SnpError::Data("forest needs at least one tree".into()));
    }
    let n_features = x.first().map_or(0, |r| r.len());
    if n_features == 0 {
        return Err(SnpError::Data("no features".into()));
    }
    if x.iter().any(|r| r.len() != n_features) {
        return Err(SnpError::Data("ragged feature matrix".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let present = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(SnpError::Degenerate("labels contain a single class".into()));
    }

    let mut max_value = vec![0u8; n_features];
    for row in x {
        for (m, &v) in max_value.iter_mut().zip(row) {
            *m = (*m).max(v);
        }
    }
    let mtry = ((n_features as f64).sqrt().floor() as usize).clamp(1, n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut importances = vec![0.0; n_features];

    for _ in 0..params.n_trees {
        let mut tree_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut idx: Vec<usize> = (0..n).map(|_| tree_rng.random_range(0..n)).collect();
        let mut b = Builder {
            x,
            y: labels,
            n_classes,
            max_value: &max_value,
            mtry,
            params,
            nodes: Vec::new(),
            importance: vec![0.0; n_features],
        };
        b.grow(&mut idx, 0, &mut tree_rng);
        let total: f64 = b.importance.iter().sum();
        if total > 0.0 {
            for (acc, v) in importances.iter_mut().zip(&b.importance) {
                *acc += v / total;
            }
        }
        trees.push(Tree { nodes: b.nodes });
    }
    for v in &mut importances {
        *v /= params.n_trees as f64;
    }
    Ok(Forest {
        trees,
        importances,
        n_classes,
    })
}

/// Top `k_out` features by forest importance (all features when `k_out`
/// exceeds the count).
pub fn forest_feature_select(
    x: &[Vec<u8>],
    labels: &[usize],
    params: &ForestParams,
    k_out: usize,
) -> Result<Vec<usize>> {
    let mut ranked = fit_forest(x, labels, params)?.ranking();
    ranked.truncate(k_out);
    Ok(ranked)
}
