//! CART classification trees with Gini impurity, and bagged forests of them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, BaselineError, Prediction};
use crate::corpus::Label;
use crate::textproc::SparseVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Training counts in class order.
    Leaf { counts: [u64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub dim: usize,
    /// Root at index 0; children always have larger indices than their parent.
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of the feature space examined at each split, in `(0, 1]`.
    pub feature_frac: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 20,
            min_leaf: 2,
            feature_frac: 1.0,
        }
    }
}

fn gini(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

fn leaf_prediction(counts: [u64; 2]) -> Prediction {
    let n = counts[0] + counts[1];
    let score = if n == 0 { 0.0 } else { counts[1] as f64 / n as f64 };
    Prediction::from_score(score, counts[1] > counts[0])
}

impl DecisionTreeModel {
    fn leaf_for(&self, x: &SparseVec) -> [u64; 2] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { counts } => return *counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x.get(*feature) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &SparseVec) -> Prediction {
        leaf_prediction(self.leaf_for(x))
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + go(nodes, *left as usize).max(go(nodes, *right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let TreeNode::Split {
                left,
                right,
                feature,
                threshold,
            } = n
            {
                let ok = |c: u32| (c as usize) > i && (c as usize) < self.nodes.len();
                if !ok(*left) || !ok(*right) {
                    return Err(format!("node {i} has an invalid child"));
                }
                if *feature as usize >= self.dim || !threshold.is_finite() {
                    return Err(format!("node {i} has an invalid split"));
                }
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    x: &'a [SparseVec],
    y: &'a [Label],
    params: TreeParams,
    n_features: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: u32,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, samples: &[usize]) -> [u64; 2] {
        let mut c = [0u64; 2];
        for &s in samples {
            c[self.y[s].index()] += 1;
        }
        c
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(&samples);
        self.nodes.push(TreeNode::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.params.max_depth || samples.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&samples, counts, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| self.x[s].get(best.feature) <= best.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id as usize] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&self, samples: &[usize], counts: [u64; 2], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        // (feature, value, class) for every non-zero entry of the node's samples.
        let mut entries: Vec<(u32, f64, usize)> = Vec::new();
        for &s in samples {
            let c = self.y[s].index();
            entries.extend(self.x[s].iter().filter(|(_, v)| *v != 0.0).map(|(j, v)| (j, v, c)));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut groups: Vec<(u32, std::ops::Range<usize>)> = Vec::new();
        let mut start = 0;
        while start < entries.len() {
            let f = entries[start].0;
            let mut end = start;
            while end < entries.len() && entries[end].0 == f {
                end += 1;
            }
            groups.push((f, start..end));
            start = end;
        }
        if self.params.feature_frac < 1.0 {
            let k = ((self.params.feature_frac * self.n_features as f64).round() as usize).max(1);
            if k < groups.len() {
                let mut picked: Vec<usize> = sample(rng, groups.len(), k).into_vec();
                picked.sort_unstable();
                groups = picked.into_iter().map(|i| groups[i].clone()).collect();
            }
        }

        let n = samples.len() as u64;
        let parent = gini(counts);
        let min_leaf = self.params.min_leaf.max(1) as u64;
        let mut best: Option<BestSplit> = None;
        for (feature, range) in groups {
            let nz = &entries[range];
            let mut nz_counts = [0u64; 2];
            for e in nz {
                nz_counts[e.2] += 1;
            }
            // Distinct values in ascending order, absent entries forming the 0 group.
            let zero = [counts[0] - nz_counts[0], counts[1] - nz_counts[1]];
            let mut values: Vec<(f64, [u64; 2])> = Vec::new();
            let mut zero_pending = zero[0] + zero[1] > 0;
            for e in nz {
                if zero_pending && e.1 > 0.0 {
                    values.push((0.0, zero));
                    zero_pending = false;
                }
                match values.last_mut() {
                    Some((v, c)) if *v == e.1 => c[e.2] += 1,
                    _ => {
                        let mut c = [0u64; 2];
                        c[e.2] += 1;
                        values.push((e.1, c));
                    }
                }
            }
            if zero_pending {
                values.push((0.0, zero));
            }
            let mut left = [0u64; 2];
            for g in 0..values.len().saturating_sub(1) {
                left[0] += values[g].1[0];
                left[1] += values[g].1[1];
                let n_left = left[0] + left[1];
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let imp = (n_left as f64 * gini(left) + n_right as f64 * gini(right)) / n as f64;
                if imp < parent - 1e-12 && best.as_ref().map_or(true, |b| imp < b.impurity) {
                    let (lo, hi) = (values[g].0, values[g + 1].0);
                    best = Some(BestSplit {
                        feature,
                        threshold: lo + (hi - lo) / 2.0,
                        impurity: imp,
                    });
                }
            }
        }
        best
    }
}

fn train_tree_on(
    x: &[SparseVec],
    y: &[Label],
    samples: Vec<usize>,
    dim: usize,
    params: TreeParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTreeModel {
    let mut b = Builder {
        x,
        y,
        params,
        n_features: dim,
        nodes: Vec::new(),
    };
    b.grow(samples, 0, rng);
    DecisionTreeModel { dim, nodes: b.nodes }
}

fn check_params(max_depth: usize, feature_frac: f64) -> Result<(), BaselineError> {
    if max_depth == 0 {
        return Err(BaselineError::InvalidParameter("max_depth must be at least 1".into()));
    }
    if !(feature_frac > 0.0 && feature_frac <= 1.0) {
        return Err(BaselineError::InvalidParameter(format!(
            "feature_frac must lie in (0, 1], got {feature_frac}"
        )));
    }
    Ok(())
}

pub fn train_decision_tree(
    x: &[SparseVec],
    y: &[Label],
    max_depth: usize,
    min_leaf: usize,
) -> Result<DecisionTreeModel, BaselineError> {
    check_params(max_depth, 1.0)?;
    let dim = check_training(x, y)?;
    let params = TreeParams {
        max_depth,
        min_leaf,
        feature_frac: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(train_tree_on(x, y, (0..x.len()).collect(), dim, params, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub dim: usize,
    pub seed: u64,
    pub feature_frac: f64,
    pub bootstrap: bool,
    pub trees: Vec<DecisionTreeModel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` selects `sqrt(dim) / dim`.
    pub feature_frac: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 20,
            min_leaf: 2,
            feature_frac: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// SplitMix64 step, used to derive independent per-tree seeds.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn train_random_forest(
    x: &[SparseVec],
    y: &[Label],
    params: &ForestParams,
) -> Result<RandomForestModel, BaselineError> {
    if params.n_trees == 0 {
        return Err(BaselineError::InvalidParameter("n_trees must be at least 1".into()));
    }
    let dim = check_training(x, y)?;
    let feature_frac = params
        .feature_frac
        .unwrap_or_else(|| ((dim as f64).sqrt() / dim as f64).min(1.0));
    check_params(params.max_depth, feature_frac)?;
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        feature_frac,
    };
    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
        let samples: Vec<usize> = if params.bootstrap {
            (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
        } else {
            (0..x.len()).collect()
        };
        trees.push(train_tree_on(x, y, samples, dim, tree_params, &mut rng));
    }
    Ok(RandomForestModel {
        dim,
        seed: params.seed,
        feature_frac,
        bootstrap: params.bootstrap,
        trees,
    })
}

impl RandomForestModel {
    pub fn votes(&self, x: &SparseVec) -> usize {
        self.trees
            .iter()
            .filter(|t| t.predict(x).label == Label::Coachable)
            .count()
    }

    /// Majority vote; an even split goes to `NotCoachable`.
    pub fn predict(&self, x: &SparseVec) -> Prediction {
        let c = self.votes(x);
        let n = self.trees.len();
        Prediction::from_score(c as f64 / n as f64, 2 * c > n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Coachable as C, NotCoachable as N};

    fn data() -> (Vec<SparseVec>, Vec<Label>) {
        // Feature 2 present exactly in the coachable rows; 0 and 1 are noise.
        let rows = [
            (vec![(0, 0.3), (2, 0.8)], C),
            (vec![(1, 0.5), (2, 0.4)], C),
            (vec![(0, 0.9), (1, 0.1), (2, 0.2)], C),
            (vec![(0, 0.2)], N),
            (vec![(1, 0.7)], N),
            (vec![(0, 0.6), (1, 0.6)], N),
        ];
        let x = rows.iter().map(|(r, _)| SparseVec::from_pairs(3, r.clone())).collect();
        let y = rows.iter().map(|(_, l)| *l).collect();
        (x, y)
    }

    #[test]
    fn single_split_separates() {
        let (x, y) = data();
        let t = train_decision_tree(&x, &y, 1, 1).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 2, .. }));
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(t.predict(xi).label, *yi);
        }
        t.validate().unwrap();
    }

    #[test]
    fn pure_input_is_root_leaf() {
        let (x, _) = data();
        let mut y = vec![C; x.len()];
        y[0] = N;
        let x1 = vec![x[1].clone(), x[2].clone()];
        let t = train_decision_tree(&x1, &[C, C], 5, 1);
        assert_eq!(t, Err(BaselineError::SingleClassTraining));
        // A pure node inside training still collapses to a leaf.
        let t = train_decision_tree(&x, &y, 5, 1).unwrap();
        assert!(t.nodes.iter().any(|n| matches!(n, TreeNode::Leaf { counts: [0, _] })));
    }

    #[test]
    fn forest_of_one_matches_tree() {
        let (x, y) = data();
        let tree = train_decision_tree(&x, &y, 4, 1).unwrap();
        let forest = train_random_forest(
            &x,
            &y,
            &ForestParams {
                n_trees: 1,
                max_depth: 4,
                min_leaf: 1,
                feature_frac: Some(1.0),
                bootstrap: false,
                seed: 99,
            },
        )
        .unwrap();
        assert_eq!(forest.trees[0], tree);
        for xi in &x {
            assert_eq!(forest.predict(xi).label, tree.predict(xi).label);
        }
    }

    #[test]
    fn vote_fraction_score() {
        let leaf = |c: [u64; 2]| DecisionTreeModel { dim: 1, nodes: vec![TreeNode::Leaf { counts: c }] };
        let forest = RandomForestModel {
            dim: 1,
            seed: 0,
            feature_frac: 1.0,
            bootstrap: false,
            trees: vec![leaf([0, 3]), leaf([1, 2]), leaf([0, 1]), leaf([4, 0])],
        };
        let p = forest.predict(&SparseVec::new(1));
        assert_eq!(p.score, 0.75);
        assert_eq!(p.label, C);
        let tie = RandomForestModel { trees: vec![leaf([0, 3]), leaf([3, 0])], ..forest };
        assert_eq!(tie.predict(&SparseVec::new(1)).label, N);
    }

    #[test]
    fn invalid_params() {
        let (x, y) = data();
        assert!(train_decision_tree(&x, &y, 0, 1).is_err());
        let bad = ForestParams { feature_frac: Some(1.5), ..Default::default() };
        assert!(train_random_forest(&x, &y, &bad).is_err());
        let bad = ForestParams { n_trees: 0, ..Default::default() };
        assert!(train_random_forest(&x, &y, &bad).is_err());
    }
}
