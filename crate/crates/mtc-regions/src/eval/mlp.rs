//! Two-layer perceptron for land-use distribution inference: a 512-unit
//! ReLU hidden layer into a softmax over the K land-use categories,
//! trained full-batch with Adam on the KL divergence from the true
//! distributions, early-stopped on validation KL.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::layers::{relu, relu_backward, softmax_rows, Linear};
use crate::nn::{adam::Adam, flat_params, set_flat_params, ParamVisitor, Parametrized};
use crate::rng::substream;

/// Distributions are floored here before taking logs so that an exact
/// zero in a target (a region with none of some category) stays finite.
const PROB_FLOOR: f64 = 1e-8;

/// Training hyperparameters for the land-use perceptron.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            max_epochs: 100,
            lr: 1e-3,
            patience: 10,
            seed: 0,
        }
    }
}

/// 2-layer softmax regressor over distributions.
#[derive(Debug, Clone)]
pub struct DistributionMlp {
    fc1: Linear,
    fc2: Linear,
}

impl Parametrized for DistributionMlp {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        self.fc1.visit("fc1", f);
        self.fc2.visit("fc2", f);
    }
}

impl DistributionMlp {
    pub fn new(in_dim: usize, k: usize, cfg: &MlpConfig) -> Self {
        let mut rng = substream(cfg.seed, "mlp/init");
        Self {
            fc1: Linear::new(in_dim, cfg.hidden, &mut rng),
            fc2: Linear::new(cfg.hidden, k, &mut rng),
        }
    }

    pub fn k(&self) -> usize {
        self.fc2.out_dim()
    }

    /// Predicted distributions, one row per input row.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let h = relu(&self.fc1.forward(x));
        softmax_rows(&self.fc2.forward(&h))
    }

    /// Forward + backward on a batch; accumulates parameter gradients and
    /// returns the mean KL divergence. `targets` rows must be simplexes.
    fn backward_batch(&mut self, x: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        let h_pre = self.fc1.forward(x);
        let h = relu(&h_pre);
        let logits = self.fc2.forward(&h);
        let p = softmax_rows(&logits);
        let n = x.nrows() as f64;
        // KL and cross-entropy differ by the constant target entropy, so
        // d(mean KL)/d(logits) is the classic (p - t)/n
        let dlogits = (&p - targets) / n;
        let dh = self.fc2.backward(&h, &dlogits);
        let dh_pre = relu_backward(&h_pre, &dh);
        self.fc1.backward(x, &dh_pre);
        mean_kl(targets, &p)
    }

    /// Mean KL divergence of predictions from `targets` (no gradients).
    pub fn loss(&self, x: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        mean_kl(targets, &self.predict(x))
    }
}

/// Floor an observed distribution and renormalize to a strict simplex.
pub fn floor_distribution(row: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = row.iter().map(|v| v.max(PROB_FLOOR)).collect();
    let s: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / s).collect()
}

/// Mean over rows of KL(t‖p) in nats, with both sides floored.
pub fn mean_kl(targets: &Array2<f64>, pred: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (t_row, p_row) in targets.rows().into_iter().zip(pred.rows()) {
        for (t, p) in t_row.iter().zip(p_row) {
            let t = t.max(PROB_FLOOR);
            let p = p.max(PROB_FLOOR);
            acc += t * (t / p).ln();
        }
    }
    acc / targets.nrows() as f64
}

/// KL(t‖p) for a single pair of distributions.
pub fn kl_divergence(t: &[f64], p: &[f64]) -> f64 {
    t.iter()
        .zip(p)
        .map(|(t, p)| {
            let t = t.max(PROB_FLOOR);
            let p = p.max(PROB_FLOOR);
            t * (t / p).ln()
        })
        .sum()
}

/// Σ |tᵢ − pᵢ|, in [0, 2] for distributions.
pub fn l1_distance(t: &[f64], p: &[f64]) -> f64 {
    t.iter().zip(p).map(|(a, b)| (a - b).abs()).sum()
}

/// Cosine similarity; zero vectors are rejected upstream (distributions
/// always have unit mass), so division is safe.
pub fn cosine_similarity(t: &[f64], p: &[f64]) -> f64 {
    let dot: f64 = t.iter().zip(p).map(|(a, b)| a * b).sum();
    let nt: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let np: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (nt * np)
}

/// What training did, for the report echo.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpTrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_kl: f64,
}

/// Train full-batch with early stopping on validation KL; the returned
/// model carries the weights from the best validation epoch.
pub fn train_distribution_mlp(
    x_train: &Array2<f64>,
    t_train: &Array2<f64>,
    x_val: &Array2<f64>,
    t_val: &Array2<f64>,
    cfg: &MlpConfig,
) -> Result<(DistributionMlp, MlpTrainSummary)> {
    let k = t_train.ncols();
    if k < 2 {
        return Err(Error::Eval("need at least two categories".into()));
    }
    if t_val.ncols() != k {
        return Err(Error::Eval(format!(
            "category count mismatch: train has {k}, validation has {}",
            t_val.ncols()
        )));
    }
    if x_train.nrows() != t_train.nrows()
        || x_val.nrows() != t_val.nrows()
        || x_train.nrows() == 0
        || x_val.nrows() == 0
    {
        return Err(Error::Shape(
            "train/validation rows must be nonempty and match their targets".into(),
        ));
    }
    if x_val.ncols() != x_train.ncols() {
        return Err(Error::Shape(format!(
            "feature width mismatch: train {}, validation {}",
            x_train.ncols(),
            x_val.ncols()
        )));
    }

    let mut model = DistributionMlp::new(x_train.ncols(), k, cfg);
    let mut opt = Adam::new(cfg.lr);
    let mut best_val = model.loss(x_val, t_val);
    let mut best_epoch = 0usize;
    let mut best_params = flat_params(&mut model);
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    for epoch in 1..=cfg.max_epochs {
        crate::nn::zero_grads(&mut model);
        let train_kl = model.backward_batch(x_train, t_train);
        if !train_kl.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "training KL became non-finite".into(),
            });
        }
        opt.step(&mut model);
        epochs_run = epoch;
        let val = model.loss(x_val, t_val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = flat_params(&mut model);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    set_flat_params(&mut model, &best_params);
    Ok((
        model,
        MlpTrainSummary {
            epochs_run,
            best_epoch,
            best_val_kl: best_val,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_problem(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        // targets are a deterministic soft function of the inputs, so the
        // mapping is learnable
        let mut rng = substream(seed, "t/mlp-data");
        let x = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0..1.0));
        let mut t = Array2::zeros((n, 3));
        for i in 0..n {
            let logits = [x[(i, 0)], x[(i, 1)] - x[(i, 2)], 0.5 * x[(i, 3)]];
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                t[(i, j)] = e / s;
            }
        }
        (x, t)
    }

    #[test]
    fn perfect_predictor_metrics() {
        let t = vec![0.2, 0.5, 0.3];
        assert!(kl_divergence(&t, &t) < 1e-12);
        assert_eq!(l1_distance(&t, &t), 0.0);
        assert!((cosine_similarity(&t, &t) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn metric_hand_values() {
        let t = [0.5, 0.5];
        let p = [0.25, 0.75];
        let expect = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl_divergence(&t, &p) - expect).abs() < 1e-15);
        assert!((l1_distance(&t, &p) - 0.5).abs() < 1e-15);
        // orthogonal distributions: cosine 0, L1 at its maximum of 2
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-15);
        assert!((l1_distance(&[1.0, 0.0], &[0.0, 1.0]) - 2.0).abs() < 1e-15);
        // zero targets stay finite through the floor
        assert!(kl_divergence(&[1.0, 0.0], &[0.9, 0.1]).is_finite());
        let f = floor_distribution(&[1.0, 0.0]);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12 && f[1] > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (x, t) = toy_problem(8, 1);
        let cfg = MlpConfig {
            hidden: 16,
            ..Default::default()
        };
        let mut model = DistributionMlp::new(x.ncols(), t.ncols(), &cfg);
        let report = crate::nn::gradcheck::finite_diff_check(
            &mut model,
            |m| m.loss(&x, &t),
            |m| {
                crate::nn::zero_grads(m);
                m.backward_batch(&x, &t);
            },
            120,
            7,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn learns_a_soft_mapping() {
        let (x, t) = toy_problem(40, 2);
        let cfg = MlpConfig {
            hidden: 64,
            max_epochs: 300,
            patience: 300, // disable stopping; this checks raw capacity
            ..Default::default()
        };
        let (model, summary) =
            train_distribution_mlp(&x, &t, &x, &t, &cfg).unwrap();
        let initial = DistributionMlp::new(x.ncols(), t.ncols(), &cfg).loss(&x, &t);
        let fitted = model.loss(&x, &t);
        assert!(
            fitted < 0.1 * initial,
            "KL {initial} -> {fitted} ({summary:?})"
        );
    }

    #[test]
    fn early_stopping_restores_best_weights() {
        let (x, t) = toy_problem(30, 3);
        let xtr = x.slice(ndarray::s![..20, ..]).to_owned();
        let ttr = t.slice(ndarray::s![..20, ..]).to_owned();
        let xv = x.slice(ndarray::s![20.., ..]).to_owned();
        let tv = t.slice(ndarray::s![20.., ..]).to_owned();
        let cfg = MlpConfig {
            hidden: 32,
            max_epochs: 100,
            patience: 5,
            ..Default::default()
        };
        let (model, summary) = train_distribution_mlp(&xtr, &ttr, &xv, &tv, &cfg).unwrap();
        // the returned weights must reproduce the reported best validation KL
        assert!(
            (model.loss(&xv, &tv) - summary.best_val_kl).abs() < 1e-12,
            "{summary:?}"
        );
        assert!(summary.best_epoch <= summary.epochs_run);
    }

    #[test]
    fn same_seed_same_model() {
        let (x, t) = toy_problem(20, 4);
        let cfg = MlpConfig {
            hidden: 16,
            max_epochs: 20,
            ..Default::default()
        };
        let (mut a, _) = train_distribution_mlp(&x, &t, &x, &t, &cfg).unwrap();
        let (mut b, _) = train_distribution_mlp(&x, &t, &x, &t, &cfg).unwrap();
        assert_eq!(flat_params(&mut a), flat_params(&mut b));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let (x, t) = toy_problem(10, 5);
        let narrow = Array2::<f64>::zeros((10, 1));
        assert!(train_distribution_mlp(&x, &narrow, &x, &narrow, &MlpConfig::default()).is_err());
        let (xv, tv) = toy_problem(4, 6);
        let wide = Array2::<f64>::zeros((4, 4));
        assert!(train_distribution_mlp(&x, &t, &xv, &wide, &MlpConfig::default()).is_err());
        assert!(train_distribution_mlp(&x, &t, &xv, &tv, &MlpConfig::default()).is_ok());
    }
}
