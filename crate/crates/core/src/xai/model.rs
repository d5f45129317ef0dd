//! Surrogate regressors: gradient-boosted regression trees and ridge regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Gbm { n_trees: usize, max_depth: usize, learning_rate: f64, min_leaf: usize },
    Ridge { lambda: f64 },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::Gbm { n_trees: 100, max_depth: 3, learning_rate: 0.1, min_leaf: 5 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { column: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { column, threshold, left, right } => {
                if key(x[*column]) <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Missing values sort below every observed value.
fn key(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

struct TreeParams<'a> {
    max_depth: usize,
    min_leaf: usize,
    /// Column visiting order; ties between equally good splits go to the earlier column.
    column_order: &'a [usize],
}

fn mean_of(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

fn grow(x: &[Vec<f64>], y: &[f64], idx: &[usize], depth: usize, p: &TreeParams<'_>) -> Node {
    let leaf = Node::Leaf(mean_of(idx, y));
    if depth >= p.max_depth || idx.len() < 2 * p.min_leaf {
        return leaf;
    }
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let n = idx.len() as f64;
    // best split maximizes the between-child sum of squares
    let mut best: Option<(f64, usize, f64)> = None;
    for &c in p.column_order {
        let mut pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (key(x[i][c]), y[i])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for k in 0..pairs.len() - 1 {
            left_sum += pairs[k].1;
            let nl = (k + 1) as f64;
            if k + 1 < p.min_leaf || pairs.len() - k - 1 < p.min_leaf || pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let gain = left_sum * left_sum / nl + (total - left_sum).powi(2) / (n - nl) - total * total / n;
            if best.is_none_or(|(g, _, _)| gain > g + 1e-12) {
                let threshold = if pairs[k].0 == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (pairs[k].0 + pairs[k + 1].0) / 2.0
                };
                best = Some((gain, c, threshold));
            }
        }
    }
    let Some((gain, column, threshold)) = best else { return leaf };
    if gain <= 1e-12 {
        return leaf;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| key(x[i][column]) <= threshold);
    Node::Split {
        column,
        threshold,
        left: Box::new(grow(x, y, &l, depth + 1, p)),
        right: Box::new(grow(x, y, &r, depth + 1, p)),
    }
}

#[derive(Debug, Clone)]
pub struct Gbm {
    base: f64,
    learning_rate: f64,
    trees: Vec<Node>,
}

#[derive(Debug, Clone)]
pub struct Ridge {
    means: Vec<f64>,
    scales: Vec<f64>,
    coefficients: Vec<f64>,
    intercept: f64,
}

#[derive(Debug, Clone)]
pub enum Regressor {
    Gbm(Gbm),
    Ridge(Ridge),
    Constant(f64),
}

impl Regressor {
    pub fn fit(kind: &ModelKind, x: &[Vec<f64>], y: &[f64], column_order: &[usize]) -> Regressor {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        if y.iter().all(|v| (v - mean).abs() <= 1e-12 * mean.abs().max(1.0)) {
            return Regressor::Constant(mean);
        }
        match *kind {
            ModelKind::Gbm { n_trees, max_depth, learning_rate, min_leaf } => {
                let params = TreeParams { max_depth, min_leaf, column_order };
                let idx: Vec<usize> = (0..y.len()).collect();
                let mut pred = vec![mean; y.len()];
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
                    let tree = grow(x, &resid, &idx, 0, &params);
                    for (p, row) in pred.iter_mut().zip(x) {
                        *p += learning_rate * tree.predict(row);
                    }
                    trees.push(tree);
                }
                Regressor::Gbm(Gbm { base: mean, learning_rate, trees })
            }
            ModelKind::Ridge { lambda } => Regressor::Ridge(fit_ridge(x, y, lambda)),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::Constant(c) => *c,
            Regressor::Gbm(g) => g.base + g.learning_rate * g.trees.iter().map(|t| t.predict(x)).sum::<f64>(),
            Regressor::Ridge(r) => {
                r.intercept
                    + x.iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let z = if v.is_nan() { 0.0 } else { (v - r.means[j]) / r.scales[j] };
                            z * r.coefficients[j]
                        })
                        .sum::<f64>()
            }
        }
    }
}

/// Standardized ridge; missing values are imputed with the column mean.
fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Ridge {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    for j in 0..p {
        let obs: Vec<f64> = x.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
        if obs.is_empty() {
            continue;
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let s = (obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / obs.len() as f64).sqrt();
        means[j] = m;
        scales[j] = if s > 0.0 { s } else { 1.0 };
    }
    let z = DMatrix::from_fn(n, p, |i, j| {
        let v = x[i][j];
        if v.is_nan() {
            0.0
        } else {
            (v - means[j]) / scales[j]
        }
    });
    let ym = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let gram = z.transpose() * &z + DMatrix::identity(p, p) * lambda.max(1e-9);
    let rhs = z.transpose() * yc;
    let beta = gram.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(p));
    Ridge { means, scales, coefficients: beta.iter().copied().collect(), intercept: ym }
}
