//! Downstream evaluation of region embeddings: land-use distribution
//! inference (perceptron, KL/L1/cosine), population-density regression
//! (random forest, MAE/RMSE/R²), Ward clustering with k-selection
//! diagnostics, and area-weighted clustering comparison (entropy, mutual
//! information, AMI).
//!
//! Each harness runs `repeats` independent seeded train/test splits and
//! reports per-repeat metrics plus mean ± sample standard deviation, so
//! a single lucky split can't carry a conclusion.

pub mod ami;
pub mod forest;
pub mod mlp;
pub mod ward;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::aggregator::RegionEmbeddings;
use crate::error::{Error, Result};
use crate::rng::substream;

/// One metric across the repeats of a harness. `None` entries mark
/// repeats where the metric was undefined (e.g. R² on constant targets);
/// the mean and std are taken over the defined entries only.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub per_repeat: Vec<Option<f64>>,
    pub n_defined: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n−1); needs ≥ 2 defined repeats.
    pub std: Option<f64>,
}

impl MetricSummary {
    fn from_values(name: &str, values: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
        let n = defined.len();
        let mean = (n >= 1).then(|| defined.iter().sum::<f64>() / n as f64);
        let std = (n >= 2).then(|| {
            let m = mean.expect("mean exists when n >= 2");
            (defined.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            name: name.to_string(),
            per_repeat: values,
            n_defined: n,
            mean,
            std,
        }
    }
}

/// Aggregated outcome of one evaluation harness.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub repeats: usize,
    pub metrics: Vec<MetricSummary>,
    /// Echo of everything that shaped the run: splits, seeds, epochs.
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Result<&MetricSummary> {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Eval(format!("report has no metric named {name:?}")))
    }

    pub fn mean_of(&self, name: &str) -> Result<f64> {
        self.metric(name)?
            .mean
            .ok_or_else(|| Error::Eval(format!("metric {name:?} was undefined in every repeat")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Eval(format!("report serialization failed: {e}")))
    }

    /// Fixed-width table for terminal output.
    pub fn render_text(&self) -> String {
        let mut out = format!("task: {}  repeats: {}\n", self.task, self.repeats);
        let name_w = self
            .metrics
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(6)
            .max("metric".len());
        out.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>12}  {:>7}\n",
            "metric", "mean", "std", "defined"
        ));
        for m in &self.metrics {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.5}"),
                None => "undefined".to_string(),
            };
            out.push_str(&format!(
                "{:<name_w$}  {:>12}  {:>12}  {:>4}/{}\n",
                m.name,
                fmt(m.mean),
                fmt(m.std),
                m.n_defined,
                self.repeats
            ));
        }
        for (k, v) in &self.config {
            out.push_str(&format!("  {k} = {v}\n"));
        }
        out
    }
}

/// Region-level ground truth the harnesses consume.
#[derive(Debug, Clone)]
pub struct LabeledRegions {
    pub region_ids: Vec<String>,
    /// Land-use distribution per region (simplex rows), if present.
    pub landuse: Option<Vec<Vec<f64>>>,
    /// People per km² per region, if present.
    pub density: Option<Vec<f64>>,
}

impl LabeledRegions {
    fn index_of(&self, region_id: &str) -> Option<usize> {
        self.region_ids.iter().position(|r| r == region_id)
    }
}

/// Align embeddings with labels: one feature row and one label index per
/// embedded region, erroring on any embedded region without a label.
fn align<'a>(
    emb: &RegionEmbeddings,
    labels: &'a LabeledRegions,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rows = Vec::with_capacity(emb.region_ids.len());
    for id in &emb.region_ids {
        match labels.index_of(id) {
            Some(i) => rows.push(i),
            None => {
                return Err(Error::UnknownRegion {
                    region_id: id.clone(),
                })
            }
        }
    }
    Ok((emb.matrix.clone(), rows))
}

/// Shuffled index split into consecutive fractions. Every part gets at
/// least one element or the split errors out.
fn split_indices(
    n: usize,
    fractions: &[f64],
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<usize>>> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut parts = Vec::with_capacity(fractions.len());
    let mut at = 0usize;
    for (pi, f) in fractions.iter().enumerate() {
        let len = if pi + 1 == fractions.len() {
            n - at // last part takes the remainder
        } else {
            ((n as f64 * f).floor() as usize).max(1)
        };
        if at + len > n || len == 0 {
            return Err(Error::Eval(format!(
                "split {fractions:?} leaves an empty part on {n} regions"
            )));
        }
        parts.push(idx[at..at + len].to_vec());
        at += len;
    }
    Ok(parts)
}

fn take_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (o, &r) in rows.iter().enumerate() {
        out.row_mut(o).assign(&x.row(r));
    }
    out
}

/// Land-use harness configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LanduseEvalConfig {
    pub repeats: usize,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub mlp: mlp::MlpConfig,
}

impl Default for LanduseEvalConfig {
    fn default() -> Self {
        Self {
            repeats: 30,
            split: (0.7, 0.1, 0.2),
            seed: 0,
            mlp: mlp::MlpConfig::default(),
        }
    }
}

/// Infer land-use distributions from embeddings with a 2-layer
/// perceptron over `repeats` random 70/10/20 splits. Reports KL, L1 and
/// cosine on test regions, next to the uniform-distribution baseline
/// computed on the same splits.
pub fn landuse_eval(
    emb: &RegionEmbeddings,
    labels: &LabeledRegions,
    cfg: &LanduseEvalConfig,
) -> Result<EvalReport> {
    let landuse = labels
        .landuse
        .as_ref()
        .ok_or_else(|| Error::Eval("land-use labels missing".into()))?;
    let (x, label_rows) = align(emb, labels)?;
    let k = landuse.first().map(|r| r.len()).unwrap_or(0);
    if k < 2 {
        return Err(Error::Eval(format!(
            "land-use inference needs K ≥ 2 categories, got {k}"
        )));
    }
    if cfg.repeats < 2 {
        return Err(Error::Eval("need at least 2 repeats for mean ± std".into()));
    }
    let n = x.nrows();
    let mut targets = Array2::zeros((n, k));
    for (row, &li) in label_rows.iter().enumerate() {
        if landuse[li].len() != k {
            return Err(Error::Eval(format!(
                "region {} has {} categories, expected {k}",
                labels.region_ids[li],
                landuse[li].len()
            )));
        }
        let floored = mlp::floor_distribution(&landuse[li]);
        for (j, v) in floored.iter().enumerate() {
            targets[(row, j)] = *v;
        }
    }
    let uniform = vec![1.0 / k as f64; k];

    let names = [
        "kl",
        "l1",
        "cosine",
        "baseline_kl",
        "baseline_l1",
        "baseline_cosine",
    ];
    let mut per: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(cfg.repeats); names.len()];
    for rep in 0..cfg.repeats {
        let mut rng = substream(cfg.seed, &format!("eval/landuse/rep{rep}"));
        let parts = split_indices(n, &[cfg.split.0, cfg.split.1, cfg.split.2], &mut rng)?;
        let mlp_cfg = mlp::MlpConfig {
            seed: rng.random::<u64>(),
            ..cfg.mlp.clone()
        };
        let (model, _) = mlp::train_distribution_mlp(
            &take_rows(&x, &parts[0]),
            &take_rows(&targets, &parts[0]),
            &take_rows(&x, &parts[1]),
            &take_rows(&targets, &parts[1]),
            &mlp_cfg,
        )?;
        let x_test = take_rows(&x, &parts[2]);
        let t_test = take_rows(&targets, &parts[2]);
        let pred = model.predict(&x_test);
        let nt = parts[2].len() as f64;
        let mut sums = [0.0f64; 6];
        for (p_row, t_row) in pred.rows().into_iter().zip(t_test.rows()) {
            let p: Vec<f64> = p_row.to_vec();
            let t: Vec<f64> = t_row.to_vec();
            sums[0] += mlp::kl_divergence(&t, &p);
            sums[1] += mlp::l1_distance(&t, &p);
            sums[2] += mlp::cosine_similarity(&t, &p);
            sums[3] += mlp::kl_divergence(&t, &uniform);
            sums[4] += mlp::l1_distance(&t, &uniform);
            sums[5] += mlp::cosine_similarity(&t, &uniform);
        }
        for (acc, s) in per.iter_mut().zip(sums) {
            acc.push(Some(s / nt));
        }
    }

    let metrics = names
        .iter()
        .zip(per)
        .map(|(name, values)| MetricSummary::from_values(name, values))
        .collect();
    let mut config = BTreeMap::new();
    config.insert("task".into(), "landuse".into());
    config.insert("repeats".into(), cfg.repeats.to_string());
    config.insert(
        "split".into(),
        format!("{}/{}/{}", cfg.split.0, cfg.split.1, cfg.split.2),
    );
    config.insert("seed".into(), cfg.seed.to_string());
    config.insert("mlp_hidden".into(), cfg.mlp.hidden.to_string());
    config.insert("mlp_max_epochs".into(), cfg.mlp.max_epochs.to_string());
    config.insert("mlp_patience".into(), cfg.mlp.patience.to_string());
    config.insert("mlp_lr".into(), cfg.mlp.lr.to_string());
    config.insert("k".into(), k.to_string());
    Ok(EvalReport {
        task: "landuse".into(),
        repeats: cfg.repeats,
        metrics,
        config,
    })
}

/// Density harness configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DensityEvalConfig {
    pub repeats: usize,
    /// Train / test fractions.
    pub split: (f64, f64),
    pub seed: u64,
    pub forest: forest::ForestConfig,
}

impl Default for DensityEvalConfig {
    fn default() -> Self {
        Self {
            repeats: 30,
            split: (0.8, 0.2),
            seed: 0,
            forest: forest::ForestConfig::default(),
        }
    }
}

/// Regress population density from embeddings with a random forest over
/// `repeats` random 80/20 splits; reports MAE, RMSE and R².
pub fn density_eval(
    emb: &RegionEmbeddings,
    labels: &LabeledRegions,
    cfg: &DensityEvalConfig,
) -> Result<EvalReport> {
    let density = labels
        .density
        .as_ref()
        .ok_or_else(|| Error::Eval("density labels missing".into()))?;
    let (x, label_rows) = align(emb, labels)?;
    if cfg.repeats < 2 {
        return Err(Error::Eval("need at least 2 repeats for mean ± std".into()));
    }
    for &li in &label_rows {
        if !(density[li].is_finite() && density[li] >= 0.0) {
            return Err(Error::Eval(format!(
                "region {} has invalid density {}",
                labels.region_ids[li], density[li]
            )));
        }
    }
    let y: Vec<f64> = label_rows.iter().map(|&li| density[li]).collect();
    let n = x.nrows();

    let names = ["mae", "rmse", "r2"];
    let mut per: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(cfg.repeats); names.len()];
    for rep in 0..cfg.repeats {
        let mut rng = substream(cfg.seed, &format!("eval/density/rep{rep}"));
        let parts = split_indices(n, &[cfg.split.0, cfg.split.1], &mut rng)?;
        let forest_cfg = forest::ForestConfig {
            seed: rng.random::<u64>(),
            ..cfg.forest.clone()
        };
        let y_train: Vec<f64> = parts[0].iter().map(|&i| y[i]).collect();
        let model = forest::RandomForest::fit(&take_rows(&x, &parts[0]), &y_train, &forest_cfg)?;
        let pred = model.predict(&take_rows(&x, &parts[1]))?;
        let y_test: Vec<f64> = parts[1].iter().map(|&i| y[i]).collect();
        let m = forest::regression_metrics(&pred, &y_test)?;
        per[0].push(Some(m.mae));
        per[1].push(Some(m.rmse));
        per[2].push(m.r2);
    }

    let metrics = names
        .iter()
        .zip(per)
        .map(|(name, values)| MetricSummary::from_values(name, values))
        .collect();
    let mut config = BTreeMap::new();
    config.insert("task".into(), "density".into());
    config.insert("repeats".into(), cfg.repeats.to_string());
    config.insert("split".into(), format!("{}/{}", cfg.split.0, cfg.split.1));
    config.insert("seed".into(), cfg.seed.to_string());
    config.insert("n_trees".into(), cfg.forest.n_trees.to_string());
    Ok(EvalReport {
        task: "density".into(),
        repeats: cfg.repeats,
        metrics,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::{AggregatorKind, Provenance};
    use rand::Rng;

    fn fake_embeddings(n: usize, d: usize, seed: u64) -> RegionEmbeddings {
        let mut rng = substream(seed, "t/eval-emb");
        RegionEmbeddings {
            region_ids: (0..n).map(|i| format!("R{i:03}")).collect(),
            matrix: Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0)),
            provenance: Provenance {
                kind: AggregatorKind::WeightedSum,
                time_slot: "all".into(),
                hops: 2,
                margin: 0.5,
                seed,
            },
        }
    }

    /// Labels carrying real signal: the land-use distribution and the
    /// density are both deterministic functions of the embedding.
    fn informative_labels(emb: &RegionEmbeddings) -> LabeledRegions {
        let mut landuse = Vec::new();
        let mut density = Vec::new();
        for row in emb.matrix.rows() {
            let logits = [row[0], row[1], -row[0] + 0.5 * row[2]];
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            landuse.push(e.iter().map(|v| v / s).collect());
            density.push(1000.0 + 500.0 * row[3]);
        }
        LabeledRegions {
            region_ids: emb.region_ids.clone(),
            landuse: Some(landuse),
            density: Some(density),
        }
    }

    #[test]
    fn split_fractions_partition_everything() {
        let mut rng = substream(1, "t/eval-split");
        let parts = split_indices(32, &[0.7, 0.1, 0.2], &mut rng).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0].len(), 22);
        assert_eq!(parts[1].len(), 3);
        assert_eq!(parts[2].len(), 7);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..32).collect::<Vec<_>>());
        // impossible split errors instead of silently producing empties
        assert!(split_indices(2, &[0.7, 0.1, 0.2], &mut rng).is_err());
    }

    #[test]
    fn landuse_harness_beats_uniform_on_informative_labels() {
        let emb = fake_embeddings(40, 8, 2);
        let labels = informative_labels(&emb);
        let cfg = LanduseEvalConfig {
            repeats: 5,
            mlp: mlp::MlpConfig {
                hidden: 32,
                max_epochs: 60,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = landuse_eval(&emb, &labels, &cfg).unwrap();
        let cos = report.mean_of("cosine").unwrap();
        let base = report.mean_of("baseline_cosine").unwrap();
        assert!(
            cos > base,
            "model {cos} should beat uniform baseline {base}\n{}",
            report.render_text()
        );
        let kl = report.mean_of("kl").unwrap();
        assert!(kl >= 0.0 && kl.is_finite());
        let l1 = report.mean_of("l1").unwrap();
        assert!((0.0..=2.0).contains(&l1));
        assert!(report.metric("cosine").unwrap().std.unwrap().is_finite());
    }

    #[test]
    fn density_harness_learns_linear_density() {
        let emb = fake_embeddings(50, 6, 3);
        let labels = informative_labels(&emb);
        let cfg = DensityEvalConfig {
            repeats: 4,
            forest: forest::ForestConfig {
                n_trees: 30,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = density_eval(&emb, &labels, &cfg).unwrap();
        let r2 = report.mean_of("r2").unwrap();
        assert!(r2 > 0.3, "expected usable fit, got {}", report.render_text());
        assert_eq!(report.metric("r2").unwrap().n_defined, 4);
    }

    #[test]
    fn constant_density_reports_undefined_r2_not_nan() {
        let emb = fake_embeddings(20, 4, 4);
        let mut labels = informative_labels(&emb);
        labels.density = Some(vec![100.0; 20]);
        let cfg = DensityEvalConfig {
            repeats: 3,
            forest: forest::ForestConfig {
                n_trees: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = density_eval(&emb, &labels, &cfg).unwrap();
        let r2 = report.metric("r2").unwrap();
        assert_eq!(r2.n_defined, 0);
        assert!(r2.mean.is_none() && r2.std.is_none());
        assert!(report.mean_of("r2").is_err());
        // MAE stays defined and the JSON round-trips the nulls
        assert!(report.mean_of("mae").is_ok());
        let json = report.to_json().unwrap();
        assert!(json.contains("null"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.metric("r2").unwrap().n_defined, 0);
    }

    #[test]
    fn unlabeled_region_is_an_error() {
        let emb = fake_embeddings(10, 4, 5);
        let mut labels = informative_labels(&emb);
        labels.region_ids[3] = "ELSEWHERE".into();
        let err = landuse_eval(&emb, &labels, &LanduseEvalConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "unknown_region");
    }

    #[test]
    fn reports_are_deterministic() {
        let emb = fake_embeddings(24, 6, 6);
        let labels = informative_labels(&emb);
        let cfg = LanduseEvalConfig {
            repeats: 2,
            mlp: mlp::MlpConfig {
                hidden: 16,
                max_epochs: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = landuse_eval(&emb, &labels, &cfg).unwrap().to_json().unwrap();
        let b = landuse_eval(&emb, &labels, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }
}
