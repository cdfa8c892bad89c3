//! Learnable aggregation of cell embeddings into region embeddings.
//!
//! Each region is represented by a fixed-capacity feature matrix of its
//! cells' embeddings (zero-padded, with a validity mask; oversized
//! regions are subsampled with a seeded draw). Two aggregators are
//! provided:
//!
//! * **weighted sum** — a sigmoid gate scores every cell embedding,
//!   gated embeddings are summed and projected to the output width;
//! * **transformer** — cell embeddings are projected up and passed
//!   through a small single-head encoder stack, then average-pooled
//!   over the real (unmasked) rows.
//!
//! Both are trained with a spatial triplet loss: a region should land
//! closer to a nearby region (within `hops` graph steps) than to a
//! distant one, by at least `margin`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::attention::{EncoderCache, EncoderLayer};
use crate::nn::layers::{sigmoid, sigmoid_backward, Linear};
use crate::nn::{ParamVisitor, Parametrized};
use crate::tcn::CellEmbeddings;
use crate::tessellation::{IntersectionMap, RegionAdjacency};

/// Default cap on cells per region feature matrix.
pub const DEFAULT_CELL_CAP: usize = 300;

// ----- feature matrices -----------------------------------------------------

/// Fixed-size per-region input to the aggregators: `cap` rows of cell
/// embeddings, zero-padded past `n_cells`, with a row validity mask.
#[derive(Debug, Clone)]
pub struct RegionFeatureMatrix {
    pub region_id: String,
    /// cap x dim
    pub x: Array2<f64>,
    pub mask: Vec<bool>,
    pub n_cells: usize,
}

impl RegionFeatureMatrix {
    /// The real (unmasked) rows, compacted.
    pub fn real_rows(&self) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        let mut out = Array2::<f64>::zeros((idx.len(), self.x.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.x.row(i));
        }
        out
    }
}

/// Build one region's feature matrix from its cell ids.
///
/// If the region owns more than `cap` cells, a uniform subsample of
/// `cap` cells is drawn from a substream keyed by `(seed, region_id)`,
/// so the choice is reproducible and independent of call order. Selected
/// cells are laid out in ascending cell-id order (the aggregators are
/// order-invariant; this just keeps artifacts canonical).
pub fn build_feature_matrix(
    region_id: &str,
    cell_ids: &[usize],
    embeddings: &CellEmbeddings,
    cap: usize,
    seed: u64,
) -> Result<RegionFeatureMatrix> {
    if cap == 0 {
        return Err(Error::Config("feature matrix cap must be positive".into()));
    }
    if cell_ids.is_empty() {
        return Err(Error::RegionWithoutCells {
            region_id: region_id.to_string(),
        });
    }
    let mut chosen: Vec<usize> = if cell_ids.len() > cap {
        let mut rng = crate::rng::substream(seed, &format!("fm/{region_id}"));
        let mut pool: Vec<usize> = cell_ids.to_vec();
        for i in 0..cap {
            let j = rand::Rng::random_range(&mut rng, i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(cap);
        pool
    } else {
        cell_ids.to_vec()
    };
    chosen.sort_unstable();
    let dim = embeddings.dim();
    let mut x = Array2::<f64>::zeros((cap, dim));
    let mut mask = vec![false; cap];
    for (row, &cell) in chosen.iter().enumerate() {
        match embeddings.row_of(cell) {
            Some(v) => {
                x.row_mut(row).assign(&v);
                mask[row] = true;
            }
            None => {
                return Err(Error::MissingCellEmbedding {
                    region_id: region_id.to_string(),
                    cell_id: cell,
                })
            }
        }
    }
    Ok(RegionFeatureMatrix {
        region_id: region_id.to_string(),
        x,
        mask,
        n_cells: chosen.len(),
    })
}

/// Feature matrices for every region of an intersection map, in region
/// order. A region with no cells is a hard error here.
pub fn build_feature_matrices(
    imap: &IntersectionMap,
    embeddings: &CellEmbeddings,
    cap: usize,
    seed: u64,
) -> Result<Vec<RegionFeatureMatrix>> {
    imap.region_ids
        .iter()
        .zip(&imap.cells)
        .map(|(id, cells)| build_feature_matrix(id, cells, embeddings, cap, seed))
        .collect()
}

// ----- config / model ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    WeightedSum,
    Transformer,
}

impl AggregatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::WeightedSum => "weighted_sum",
            AggregatorKind::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weighted_sum" => Ok(AggregatorKind::WeightedSum),
            "transformer" => Ok(AggregatorKind::Transformer),
            other => Err(Error::Config(format!(
                "unknown aggregator kind {other:?} (expected weighted_sum|transformer)"
            ))),
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    /// Cell embedding width coming in.
    pub in_dim: usize,
    /// Region embedding width going out.
    pub out_dim: usize,
    /// Feed-forward width inside transformer encoder layers.
    pub ff_width: usize,
    /// Number of transformer encoder layers.
    pub n_layers: usize,
    /// Positive-sampling radius in the region adjacency graph.
    pub hops: usize,
    /// Triplet margin.
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// L2-normalize output embeddings (off by default).
    pub l2_normalize: bool,
}

impl AggregatorConfig {
    /// Reference setup: 44 -> 64, transformer with 2 single-head layers
    /// of feed-forward width 128, 1-hop positives, margin 1, Adam at
    /// 1e-4 for 60 epochs.
    pub fn for_kind(kind: AggregatorKind) -> Self {
        AggregatorConfig {
            kind,
            in_dim: 44,
            out_dim: 64,
            ff_width: 128,
            n_layers: 2,
            hops: 1,
            margin: 1.0,
            lr: 1e-4,
            epochs: 60,
            seed: 0,
            l2_normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("embedding widths must be positive".into()));
        }
        if self.kind == AggregatorKind::Transformer && (self.ff_width == 0 || self.n_layers == 0)
        {
            return Err(Error::Config(
                "transformer needs positive ff_width and n_layers".into(),
            ));
        }
        if self.hops == 0 {
            return Err(Error::Config("hops must be at least 1".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!("bad margin {}", self.margin)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Fraction of triplets with non-zero loss this epoch.
    pub active_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AggregatorModel {
    pub config: AggregatorConfig,
    ws_gate: Option<Linear>,
    ws_out: Option<Linear>,
    tr_proj: Option<Linear>,
    tr_layers: Vec<EncoderLayer>,
    pub training_log: Vec<EpochStats>,
}

enum Cache {
    Ws {
        rows: Array2<f64>,
        g: Array2<f64>,
        s: Array2<f64>,
    },
    Tr {
        rows: Array2<f64>,
        hs: Vec<Array2<f64>>,
        layer_caches: Vec<EncoderCache>,
    },
    /// Only present when `l2_normalize` is on.
    Norm {
        inner: Box<Cache>,
        v: Array1<f64>,
    },
}

impl AggregatorModel {
    pub fn new(config: AggregatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::substream(config.seed, "agg/init");
        let mut model = AggregatorModel {
            config: config.clone(),
            ws_gate: None,
            ws_out: None,
            tr_proj: None,
            tr_layers: Vec::new(),
            training_log: Vec::new(),
        };
        match config.kind {
            AggregatorKind::WeightedSum => {
                model.ws_gate = Some(Linear::new(config.in_dim, config.in_dim, &mut rng));
                model.ws_out = Some(Linear::new(config.in_dim, config.out_dim, &mut rng));
            }
            AggregatorKind::Transformer => {
                model.tr_proj = Some(Linear::new(config.in_dim, config.out_dim, &mut rng));
                for _ in 0..config.n_layers {
                    model
                        .tr_layers
                        .push(EncoderLayer::new(config.out_dim, config.ff_width, &mut rng));
                }
            }
        }
        Ok(model)
    }

    fn forward_cached(&self, fm: &RegionFeatureMatrix) -> Result<(Array1<f64>, Cache)> {
        if fm.x.ncols() != self.config.in_dim {
            return Err(Error::Shape(format!(
                "region {}: feature width {} vs model {}",
                fm.region_id,
                fm.x.ncols(),
                self.config.in_dim
            )));
        }
        if fm.n_cells == 0 || !fm.mask.iter().any(|&m| m) {
            return Err(Error::RegionWithoutCells {
                region_id: fm.region_id.clone(),
            });
        }
        let rows = fm.real_rows();
        let (v, cache) = match self.config.kind {
            AggregatorKind::WeightedSum => {
                let gate = self.ws_gate.as_ref().expect("kind invariant");
                let out = self.ws_out.as_ref().expect("kind invariant");
                let g = sigmoid(&gate.forward(&rows));
                let gated = &rows * &g;
                let s = sum_rows(&gated);
                let e = out.forward(&s);
                (e.row(0).to_owned(), Cache::Ws { rows, g, s })
            }
            AggregatorKind::Transformer => {
                let proj = self.tr_proj.as_ref().expect("kind invariant");
                let mut h = proj.forward(&rows);
                let mut hs = vec![h.clone()];
                let mut layer_caches = Vec::with_capacity(self.tr_layers.len());
                for layer in &self.tr_layers {
                    let (next, cache) = layer.forward(&h);
                    h = next;
                    hs.push(h.clone());
                    layer_caches.push(cache);
                }
                let n = h.nrows() as f64;
                let pooled = sum_rows(&h).row(0).to_owned() / n;
                (
                    pooled,
                    Cache::Tr {
                        rows,
                        hs,
                        layer_caches,
                    },
                )
            }
        };
        if self.config.l2_normalize {
            let norm = v.dot(&v).sqrt().max(1e-12);
            let e = &v / norm;
            Ok((e, Cache::Norm { inner: Box::new(cache), v }))
        } else {
            Ok((v, cache))
        }
    }

    /// Backpropagate `dout` (gradient w.r.t. the region embedding) into
    /// the parameters. Inputs are data, so no input gradient is returned.
    fn backward(&mut self, cache: &Cache, dout: &Array1<f64>) {
        match cache {
            Cache::Norm { inner, v } => {
                let norm = v.dot(v).sqrt().max(1e-12);
                let e = v / norm;
                let dv = (dout - &(&e * e.dot(dout))) / norm;
                self.backward(inner, &dv);
            }
            Cache::Ws { rows, g, s } => {
                let de = row_matrix(dout);
                let out = self.ws_out.as_mut().expect("kind invariant");
                let ds = out.backward(s, &de); // (1, in_dim)
                // s = sum_r rows_r * g_r  =>  d(rows*g) = ds broadcast
                let n = rows.nrows();
                let mut dgated = Array2::<f64>::zeros((n, rows.ncols()));
                for mut r in dgated.rows_mut() {
                    r.assign(&ds.row(0));
                }
                let dg = &dgated * rows;
                let dg_pre = sigmoid_backward(g, &dg);
                let gate = self.ws_gate.as_mut().expect("kind invariant");
                let _ = gate.backward(rows, &dg_pre);
            }
            Cache::Tr { rows, hs, layer_caches } => {
                let n = hs.last().expect("at least the projection").nrows() as f64;
                let mut d = Array2::<f64>::zeros((n as usize, dout.len()));
                for mut r in d.rows_mut() {
                    for (j, v) in r.iter_mut().enumerate() {
                        *v = dout[j] / n;
                    }
                }
                for (layer, cache) in self
                    .tr_layers
                    .iter_mut()
                    .zip(layer_caches.iter())
                    .rev()
                {
                    d = layer.backward(cache, &d);
                }
                let proj = self.tr_proj.as_mut().expect("kind invariant");
                let _ = proj.backward(rows, &d);
            }
        }
    }

    /// Produce the embedding of one region.
    pub fn aggregate(&self, fm: &RegionFeatureMatrix) -> Result<Array1<f64>> {
        Ok(self.forward_cached(fm)?.0)
    }

    /// Forward + backward for one (anchor, positive, negative) triplet;
    /// accumulates parameter gradients when the loss is active and
    /// returns the loss value. Gradients add onto whatever is already
    /// in the buffers — call [`crate::nn::zero_grads`] first when
    /// starting a fresh step.
    pub fn accumulate_triplet(
        &mut self,
        anchor: &RegionFeatureMatrix,
        positive: &RegionFeatureMatrix,
        negative: &RegionFeatureMatrix,
        margin: f64,
    ) -> Result<f64> {
        let (ea, ca) = self.forward_cached(anchor)?;
        let (ep, cp) = self.forward_cached(positive)?;
        let (en, cn) = self.forward_cached(negative)?;
        let loss = triplet_loss(&ea, &ep, &en, margin);
        if let Some((da, dp, dn)) = triplet_grads(&ea, &ep, &en, margin) {
            self.backward(&ca, &da);
            self.backward(&cp, &dp);
            self.backward(&cn, &dn);
        }
        Ok(loss)
    }

    // ----- checkpointing ------------------------------------------------------

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        let mut me = self.clone();
        me.visit_params(&mut |name, vals, _| {
            tensors.insert(name.to_string(), vals.to_vec());
        });
        let ckpt = AggregatorCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            training_log: self.training_log.clone(),
            tensors,
        };
        let body = serde_json::to_string(&ckpt).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        crate::util::write_atomic(path, body.as_bytes())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = crate::tessellation::read_text(path)?;
        let ckpt: AggregatorCheckpoint = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                detail: format!("unknown checkpoint format {:?}", ckpt.format),
            });
        }
        let mut model = AggregatorModel::new(ckpt.config)?;
        let mut problems = Vec::new();
        model.visit_params(&mut |name, vals, _| match ckpt.tensors.get(name) {
            Some(data) if data.len() == vals.len() => vals.copy_from_slice(data),
            Some(data) => problems.push(format!(
                "{name}: expected {} values, found {}",
                vals.len(),
                data.len()
            )),
            None => problems.push(format!("{name}: missing")),
        });
        if !problems.is_empty() {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                detail: format!(
                    "checkpoint tensors do not fit the model: {}",
                    problems.join("; ")
                ),
            });
        }
        model.training_log = ckpt.training_log;
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "region-aggregator/v1";

#[derive(Serialize, Deserialize)]
struct AggregatorCheckpoint {
    format: String,
    config: AggregatorConfig,
    training_log: Vec<EpochStats>,
    tensors: BTreeMap<String, Vec<f64>>,
}

impl Parametrized for AggregatorModel {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        if let Some(gate) = &mut self.ws_gate {
            gate.visit("ws_gate", f);
        }
        if let Some(out) = &mut self.ws_out {
            out.visit("ws_out", f);
        }
        if let Some(proj) = &mut self.tr_proj {
            proj.visit("tr_proj", f);
        }
        for (i, layer) in self.tr_layers.iter_mut().enumerate() {
            layer.visit(&format!("tr_layer{i}"), f);
        }
    }
}

fn sum_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut s = Array2::<f64>::zeros((1, a.ncols()));
    for row in a.rows() {
        for (j, v) in row.iter().enumerate() {
            s[(0, j)] += v;
        }
    }
    s
}

fn row_matrix(v: &Array1<f64>) -> Array2<f64> {
    v.view().insert_axis(ndarray::Axis(0)).to_owned()
}

// ----- triplet loss ---------------------------------------------------------------

/// `max(||a-p|| - ||a-n|| + margin, 0)` with Euclidean norms.
pub fn triplet_loss(a: &Array1<f64>, p: &Array1<f64>, n: &Array1<f64>, margin: f64) -> f64 {
    let dp = l2_dist(a, p);
    let dn = l2_dist(a, n);
    (dp - dn + margin).max(0.0)
}

fn l2_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gradients of the triplet loss w.r.t. (a, p, n); zero everywhere when
/// the loss is inactive. Degenerate zero distances contribute zero
/// gradient for their branch.
fn triplet_grads(
    a: &Array1<f64>,
    p: &Array1<f64>,
    n: &Array1<f64>,
    margin: f64,
) -> Option<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    let dp = l2_dist(a, p);
    let dn = l2_dist(a, n);
    if dp - dn + margin <= 0.0 {
        return None;
    }
    let dim = a.len();
    let mut da = Array1::<f64>::zeros(dim);
    let mut dp_g = Array1::<f64>::zeros(dim);
    let mut dn_g = Array1::<f64>::zeros(dim);
    if dp > 1e-12 {
        for i in 0..dim {
            let u = (a[i] - p[i]) / dp;
            da[i] += u;
            dp_g[i] -= u;
        }
    }
    if dn > 1e-12 {
        for i in 0..dim {
            let u = (a[i] - n[i]) / dn;
            da[i] -= u;
            dn_g[i] += u;
        }
    }
    Some((da, dp_g, dn_g))
}

// ----- training --------------------------------------------------------------------

/// Train an aggregator with the spatial triplet loss.
///
/// Every adjacency region must come with a feature matrix. Anchors that
/// have no admissible positive (nothing within `hops`) or no admissible
/// negative (everything within `hops`) are skipped once with a warning.
/// Per epoch, eligible anchors are visited in a seeded shuffled order;
/// each anchor samples one triplet and takes one Adam step.
pub fn train_aggregator(
    config: AggregatorConfig,
    fms: &[RegionFeatureMatrix],
    adj: &RegionAdjacency,
) -> Result<AggregatorModel> {
    config.validate()?;
    if fms.is_empty() {
        return Err(Error::Config("no feature matrices to train on".into()));
    }
    let by_id: BTreeMap<&str, &RegionFeatureMatrix> =
        fms.iter().map(|fm| (fm.region_id.as_str(), fm)).collect();
    if by_id.len() != fms.len() {
        return Err(Error::Config("duplicate region feature matrices".into()));
    }
    for id in &adj.ids {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::Config(format!(
                "region {id} has no feature matrix"
            )));
        }
    }

    // anchors that can actually form triplets
    let mut eligible: Vec<usize> = Vec::new();
    for (i, id) in adj.ids.iter().enumerate() {
        let near = adj.hop_set(i, config.hops);
        let n_far = adj.ids.len() - 1 - near.len();
        if near.is_empty() {
            log::warn!("anchor {id}: no positive candidates within {} hops, skipping", config.hops);
        } else if n_far == 0 {
            log::warn!("anchor {id}: no negative candidates beyond {} hops, skipping", config.hops);
        } else {
            eligible.push(i);
        }
    }
    if eligible.is_empty() {
        return Err(Error::Config(
            "no anchor region admits both a positive and a negative".into(),
        ));
    }

    let mut model = AggregatorModel::new(config.clone())?;
    let mut opt = Adam::new(config.lr);
    for epoch in 0..config.epochs {
        let mut order = eligible.clone();
        let mut shuffle_rng =
            crate::rng::substream(config.seed, &format!("agg/shuffle/{epoch}"));
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }
        let mut triplet_rng =
            crate::rng::substream(config.seed, &format!("agg/triplets/{epoch}"));
        let mut loss_sum = 0.0;
        let mut active = 0usize;
        for &anchor_idx in &order {
            let anchor_id = &adj.ids[anchor_idx];
            let triplet = crate::tessellation::sample_triplet(
                adj,
                anchor_id,
                config.hops,
                &mut triplet_rng,
            )?;
            let fa = by_id[triplet.anchor.as_str()];
            let fp = by_id[triplet.positive.as_str()];
            let fn_ = by_id[triplet.negative.as_str()];
            crate::nn::zero_grads(&mut model);
            let loss = model.accumulate_triplet(fa, fp, fn_, config.margin)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("triplet loss {loss} at anchor {anchor_id}"),
                });
            }
            loss_sum += loss;
            // the loss is active exactly when gradients were accumulated
            if loss > 0.0 {
                active += 1;
                if crate::nn::grad_linf(&mut model).is_none() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite gradient at anchor {anchor_id}"),
                    });
                }
                opt.step(&mut model);
            }
        }
        let stats = EpochStats {
            mean_loss: loss_sum / order.len() as f64,
            active_fraction: active as f64 / order.len() as f64,
        };
        model.training_log.push(stats);
        if epoch == 0 || (epoch + 1) % 20 == 0 {
            log::info!(
                "aggregator({}) epoch {}/{}: loss {:.4}, active {:.2}",
                config.kind,
                epoch + 1,
                config.epochs,
                stats.mean_loss,
                stats.active_fraction
            );
        }
    }
    Ok(model)
}

// ----- region embeddings -------------------------------------------------------------

/// Provenance stamped on every region embedding artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: AggregatorKind,
    pub time_slot: String,
    pub hops: usize,
    pub margin: f64,
    pub seed: u64,
}

/// Region embedding table, rows aligned with `region_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEmbeddings {
    pub region_ids: Vec<String>,
    pub matrix: Array2<f64>,
    pub provenance: Provenance,
}

impl RegionEmbeddings {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, region_id: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.region_ids
            .iter()
            .position(|r| r == region_id)
            .map(|i| self.matrix.row(i))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("region_id");
        for j in 0..self.dim() {
            out.push_str(&format!(",e_{j}"));
        }
        out.push('\n');
        for (i, id) in self.region_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.matrix.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        crate::util::write_atomic(path, out.as_bytes())
    }

    pub fn save_provenance(&self, path: &Path) -> Result<()> {
        let body =
            serde_json::to_string_pretty(&self.provenance).map_err(|e| Error::Artifact {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        crate::util::write_atomic(path, (body + "\n").as_bytes())
    }

    pub fn load_csv(path: &Path, provenance: Provenance) -> Result<Self> {
        let text = crate::tessellation::read_text(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path.display().to_string(), "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"region_id") || cols.len() < 2 {
            return Err(Error::parse(
                path.display().to_string(),
                "expected region_id,e_0,... header",
            ));
        }
        let dim = cols.len() - 1;
        let mut region_ids = Vec::new();
        let mut data = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let id = parts.next().unwrap().to_string();
            let mut k = 0usize;
            for p in parts {
                let v: f64 = p.parse().map_err(|_| {
                    Error::parse(
                        path.display().to_string(),
                        format!("line {}: bad float {p:?}", ln + 2),
                    )
                })?;
                data.push(v);
                k += 1;
            }
            if k != dim {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: {} values, expected {dim}", ln + 2, k),
                ));
            }
            region_ids.push(id);
        }
        let matrix = Array2::from_shape_vec((region_ids.len(), dim), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(RegionEmbeddings {
            region_ids,
            matrix,
            provenance,
        })
    }
}

/// Embed every region with a trained aggregator, preserving input order.
pub fn embed_regions(
    model: &AggregatorModel,
    fms: &[RegionFeatureMatrix],
    time_slot: crate::traffic::TimeSlot,
) -> Result<RegionEmbeddings> {
    if fms.is_empty() {
        return Err(Error::Config("no regions to embed".into()));
    }
    let results = crate::util::par_map_ordered(fms, |fm| model.aggregate(fm));
    let mut region_ids = Vec::with_capacity(fms.len());
    let mut matrix = Array2::<f64>::zeros((fms.len(), model.config.out_dim));
    for (i, (fm, r)) in fms.iter().zip(results).enumerate() {
        let v = r?;
        region_ids.push(fm.region_id.clone());
        matrix.row_mut(i).assign(&v);
    }
    Ok(RegionEmbeddings {
        region_ids,
        matrix,
        provenance: Provenance {
            kind: model.config.kind,
            time_slot: time_slot.name().to_string(),
            hops: model.config.hops,
            margin: model.config.margin,
            seed: model.config.seed,
        },
    })
}
