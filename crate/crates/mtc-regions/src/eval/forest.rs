//! Random-forest regression for the density task: bagged CART trees with
//! exhaustive SSE split search, grown to purity, averaged at prediction.
//!
//! Randomness enters only through the per-tree bootstrap (substream
//! `rf/tree{t}` of the forest seed); the split search itself is
//! deterministic, scanning features in index order and thresholds in
//! ascending value order, keeping the first strict improvement.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::substream;

/// Regression-forest hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Nodes smaller than this become leaves (2 = grow to purity).
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// A fitted ensemble; predictions are the mean over trees.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
}

/// Best split of `idx` by SSE reduction: scans every feature, thresholds
/// at midpoints between consecutive distinct values.
fn best_split(
    x: &Array2<f64>,
    y: &[f64],
    idx: &[usize],
) -> Option<(usize, f64, f64)> {
    let n = idx.len() as f64;
    let sum: f64 = idx.iter().map(|&i| y[i]).sum();
    let sum_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = sum_sq - sum * sum / n;

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, sse)
    let mut order: Vec<usize> = idx.to_vec();
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[(a, f)].partial_cmp(&x[(b, f)]).expect("finite features"));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
            left_sum += y[i];
            left_sq += y[i] * y[i];
            let v = x[(i, f)];
            let next = x[(order[pos + 1], f)];
            if next <= v {
                continue; // no boundary between equal values
            }
            let nl = (pos + 1) as f64;
            let nr = n - nl;
            let right_sum = sum - left_sum;
            let sse = (left_sq - left_sum * left_sum / nl)
                + ((sum_sq - left_sq) - right_sum * right_sum / nr);
            if best.map_or(sse < parent_sse - 1e-12, |(_, _, b)| sse < b) {
                best = Some((f, (v + next) / 2.0, sse));
            }
        }
    }
    best
}

fn grow_tree(x: &Array2<f64>, y: &[f64], sample: Vec<usize>, min_split: usize) -> Tree {
    let mut nodes = Vec::new();
    // worklist of (node slot, member indices); slots are pre-allocated so
    // children can be linked before they are grown
    let mut work = vec![(0usize, sample)];
    nodes.push(Node::Leaf(0.0));
    while let Some((slot, idx)) = work.pop() {
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if idx.len() < min_split || pure {
            nodes[slot] = Node::Leaf(mean);
            continue;
        }
        match best_split(x, y, &idx) {
            None => nodes[slot] = Node::Leaf(mean),
            Some((feature, threshold, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| x[(i, feature)] <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                let right = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                work.push((left, l));
                work.push((right, r));
            }
        }
    }
    Tree { nodes }
}

impl RandomForest {
    /// Fit on rows of `x` against targets `y`.
    pub fn fit(x: &Array2<f64>, y: &[f64], cfg: &ForestConfig) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::Eval(format!(
                "forest needs matching rows and targets, got {n} rows / {} targets",
                y.len()
            )));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Eval("forest needs at least one tree".into()));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eval("non-finite value in forest inputs".into()));
        }
        let tree_ids: Vec<usize> = (0..cfg.n_trees).collect();
        let trees = crate::util::par_map_ordered(&tree_ids, |&t| {
            let mut rng = substream(cfg.seed, &format!("rf/tree{t}"));
            let sample: Vec<usize> =
                (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            grow_tree(x, y, sample, cfg.min_samples_split.max(2))
        });
        Ok(Self {
            trees,
            n_features: x.ncols(),
        })
    }

    /// Predict one target per row of `x`.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "forest was fit on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let row = x.row(i).to_vec();
                self.trees.iter().map(|t| t.predict(&row)).sum::<f64>()
                    / self.trees.len() as f64
            })
            .collect())
    }
}

/// MAE / RMSE / R² of predictions against held-out targets. R² compares
/// against the held-out mean and is `None` when the targets are constant
/// (zero total variance makes it undefined).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Eval(format!(
            "metrics need matching nonempty slices, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let rmse = (ss_res / n).sqrt();
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - ss_res / ss_tot)
    } else {
        None
    };
    Ok(RegressionMetrics { mae, rmse, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_data(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = substream(seed, "t/forest-data");
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| 3.0 * x[(i, 0)] + 1.0).collect();
        (x, y)
    }

    #[test]
    fn noiseless_linear_target_is_learned() {
        let (x, y) = linear_data(200, 4, 1);
        let train = 160;
        let xtr = x.slice(ndarray::s![..train, ..]).to_owned();
        let xte = x.slice(ndarray::s![train.., ..]).to_owned();
        let forest = RandomForest::fit(&xtr, &y[..train], &ForestConfig::default()).unwrap();
        let pred = forest.predict(&xte).unwrap();
        let m = regression_metrics(&pred, &y[train..]).unwrap();
        assert!(
            m.r2.unwrap() >= 0.99,
            "expected near-perfect fit, got {m:?}"
        );
    }

    #[test]
    fn train_mean_predictor_has_nonpositive_r2() {
        let (_, y) = linear_data(100, 3, 2);
        let train_mean = y[..80].iter().sum::<f64>() / 80.0;
        let pred = vec![train_mean; 20];
        let m = regression_metrics(&pred, &y[80..]).unwrap();
        assert!(m.r2.unwrap() <= 0.0, "{m:?}");
    }

    #[test]
    fn constant_targets_leave_r2_undefined() {
        let pred = vec![4.9, 5.1, 5.0];
        let truth = vec![5.0, 5.0, 5.0];
        let m = regression_metrics(&pred, &truth).unwrap();
        assert!(m.r2.is_none());
        assert!(m.mae > 0.0 && m.rmse > 0.0);
    }

    #[test]
    fn metrics_match_hand_computation() {
        let pred = vec![1.0, 2.0, 4.0];
        let truth = vec![1.0, 3.0, 3.0];
        let m = regression_metrics(&pred, &truth).unwrap();
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // ss_tot about mean 7/3: (1-7/3)^2*1 + (3-7/3)^2*2 = 16/9+8/9 = 8/3
        assert!((m.r2.unwrap() - (1.0 - 2.0 / (8.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_predictions() {
        let (x, y) = linear_data(60, 5, 3);
        let cfg = ForestConfig {
            n_trees: 20,
            ..Default::default()
        };
        let a = RandomForest::fit(&x, &y, &cfg).unwrap().predict(&x).unwrap();
        let b = RandomForest::fit(&x, &y, &cfg).unwrap().predict(&x).unwrap();
        assert_eq!(a, b);
        let other = ForestConfig {
            n_trees: 20,
            seed: 9,
            ..Default::default()
        };
        let c = RandomForest::fit(&x, &y, &other)
            .unwrap()
            .predict(&x)
            .unwrap();
        assert_ne!(a, c, "different seed should bootstrap differently");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = linear_data(10, 2, 4);
        assert!(RandomForest::fit(&x, &y[..5], &ForestConfig::default()).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(RandomForest::fit(&bad, &y, &ForestConfig::default()).is_err());
        let forest = RandomForest::fit(&x, &y, &ForestConfig::default()).unwrap();
        let narrow = Array2::<f64>::zeros((3, 1));
        assert!(forest.predict(&narrow).is_err());
    }
}
