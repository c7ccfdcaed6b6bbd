//! Axis-aligned decision tree grown with information-gain splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 10;
pub const DEFAULT_MIN_LEAF: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
    pub max_depth: usize,
    pub min_leaf: usize,
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl DecisionTree {
    pub fn fit(xs: &[Vec<f64>], ys: &[usize], classes: usize) -> Result<Self> {
        DecisionTree::fit_with(xs, ys, classes, DEFAULT_MAX_DEPTH, DEFAULT_MIN_LEAF)
    }

    pub fn fit_with(
        xs: &[Vec<f64>],
        ys: &[usize],
        classes: usize,
        max_depth: usize,
        min_leaf: usize,
    ) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Invalid("cannot grow a tree on an empty dataset".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::Invalid("features and labels differ in length".into()));
        }
        if let Some(bad) = ys.iter().find(|&&y| y >= classes) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {classes})")));
        }
        let min_leaf = min_leaf.max(1);
        let idx: Vec<usize> = (0..xs.len()).collect();
        let root = grow(xs, ys, classes, idx, 0, max_depth, min_leaf);
        Ok(DecisionTree {
            root,
            max_depth,
            min_leaf,
        })
    }

    /// Class counts at the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &[f64]) -> &[usize] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn c(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => c(left) + c(right),
            }
        }
        c(&self.root)
    }
}

fn grow(
    xs: &[Vec<f64>],
    ys: &[usize],
    classes: usize,
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> Node {
    let mut counts = vec![0usize; classes];
    for &i in &idx {
        counts[ys[i]] += 1;
    }
    let n = idx.len();
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= max_depth || n < 2 * min_leaf {
        return Node::Leaf { counts };
    }
    let parent_h = entropy(&counts, n);
    let features = xs[idx[0]].len();
    let mut best: Option<Best> = None;
    let mut sorted = idx.clone();
    for f in 0..features {
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let mut left = vec![0usize; classes];
        let mut right = counts.clone();
        for k in 0..n - 1 {
            let i = sorted[k];
            left[ys[i]] += 1;
            right[ys[i]] -= 1;
            let nl = k + 1;
            let nr = n - nl;
            let (v, next) = (xs[i][f], xs[sorted[k + 1]][f]);
            if v == next || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let h = (nl as f64 * entropy(&left, nl) + nr as f64 * entropy(&right, nr)) / n as f64;
            let gain = parent_h - h;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                best = Some(Best {
                    gain,
                    feature: f,
                    threshold: v + (next - v) / 2.0,
                });
            }
        }
    }
    let Some(best) = best else {
        return Node::Leaf { counts };
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| xs[i][best.feature] <= best.threshold);
    Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(grow(xs, ys, classes, l, depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(xs, ys, classes, r, depth + 1, max_depth, min_leaf)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_threshold_gives_one_split() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let ys: Vec<usize> = (0..20).map(|i| usize::from(i >= 12)).collect();
        let tree = DecisionTree::fit(&xs, &ys, 2).unwrap();
        assert_eq!(tree.depth(), 1);
        match &tree.root {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 11.5);
            }
            Node::Leaf { .. } => panic!("expected a split"),
        }
        let acc = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| {
                let c = tree.leaf_counts(x);
                c[**y] == c.iter().copied().max().unwrap()
            })
            .count();
        assert_eq!(acc, 20);
    }

    #[test]
    fn identical_features_make_a_single_leaf() {
        let xs = vec![vec![1.0, 1.0]; 10];
        let ys = vec![0, 1, 1, 0, 1, 1, 1, 0, 1, 1];
        let tree = DecisionTree::fit(&xs, &ys, 2).unwrap();
        assert_eq!(tree.root, Node::Leaf { counts: vec![3, 7] });
    }

    #[test]
    fn depth_is_capped() {
        // alternating labels need many splits
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64]).collect();
        let ys: Vec<usize> = (0..200).map(|i| (i / 2) % 2).collect();
        let tree = DecisionTree::fit(&xs, &ys, 2).unwrap();
        assert!(tree.depth() <= DEFAULT_MAX_DEPTH);
    }

    #[test]
    fn leaves_respect_min_size() {
        fn check(n: &Node, min: usize) {
            match n {
                Node::Leaf { counts } => assert!(counts.iter().sum::<usize>() >= min),
                Node::Split { left, right, .. } => {
                    check(left, min);
                    check(right, min);
                }
            }
        }
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 37 % 50) as f64]).collect();
        let ys: Vec<usize> = (0..50).map(|i| (i * 7 % 3) as usize).collect();
        let tree = DecisionTree::fit(&xs, &ys, 3).unwrap();
        check(&tree.root, DEFAULT_MIN_LEAF);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(DecisionTree::fit(&[], &[], 2).is_err());
    }
}
