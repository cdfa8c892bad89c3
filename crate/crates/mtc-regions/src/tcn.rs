//! Temporal convolutional autoencoder for per-cell traffic series.
//!
//! The encoder stacks causal dilated convolution blocks (ReLU after
//! each), average-pools the time axis by a fixed factor, and maps the
//! flattened feature map to a low-dimensional cell embedding with one
//! linear layer. The decoder mirrors it: linear, reshape,
//! nearest-neighbor upsampling, convolution blocks, and a kernel-1
//! projection back to the input channels. Training minimizes mean
//! squared reconstruction error with Adam.
//!
//! The model is built for a fixed input length: it must be divisible by
//! the pooling factor and at least the receptive field of the stacked
//! convolutions, so one embedding summarizes a full window.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::Adam;
use crate::nn::layers::{
    avg_pool, avg_pool_backward, relu, relu_backward, upsample_nearest,
    upsample_nearest_backward, Conv1dCausal, Linear,
};
use crate::nn::{ParamVisitor, Parametrized};
use crate::traffic::MultivariateSeries;
use crate::util::par_map_ordered;

// ----- configuration -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    /// Input channels (traffic categories).
    pub in_channels: usize,
    /// Channels in every convolution block.
    pub block_channels: usize,
    /// Dilation per encoder block, strictly increasing (decoder mirrors
    /// them in reverse).
    pub dilations: Vec<usize>,
    /// Convolution kernel width.
    pub kernel: usize,
    /// Temporal average-pooling factor between convolutions and the
    /// bottleneck.
    pub pool_factor: usize,
    /// Cell embedding width.
    pub embedding_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TcnConfig {
    /// Reference configuration for `in_channels` traffic categories:
    /// three blocks of 32 channels with dilations 1, 2, 4, kernel 3,
    /// pool factor 8, 44-dimensional embeddings, Adam at 1e-3 for 100
    /// epochs.
    pub fn for_channels(in_channels: usize) -> Self {
        TcnConfig {
            in_channels,
            block_channels: 32,
            dilations: vec![1, 2, 4],
            kernel: 3,
            pool_factor: 8,
            embedding_dim: 44,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.block_channels == 0 || self.embedding_dim == 0 {
            return Err(Error::Config(
                "channel and embedding widths must be positive".into(),
            ));
        }
        if self.kernel < 2 {
            return Err(Error::Config("kernel must be at least 2".into()));
        }
        if self.dilations.is_empty() {
            return Err(Error::Config("at least one convolution block".into()));
        }
        for w in self.dilations.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(format!(
                    "dilations must be strictly increasing, got {:?}",
                    self.dilations
                )));
            }
        }
        if self.dilations[0] == 0 {
            return Err(Error::Config("dilations must be positive".into()));
        }
        if self.pool_factor == 0 {
            return Err(Error::Config("pool factor must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }

    /// How far back the stacked causal convolutions look, in samples.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }

    /// Check that an input length fits this architecture.
    pub fn validate_input_len(&self, len: usize) -> Result<()> {
        if len % self.pool_factor != 0 {
            return Err(Error::Config(format!(
                "input length {len} not divisible by pool factor {}",
                self.pool_factor
            )));
        }
        if len < self.receptive_field() {
            return Err(Error::Config(format!(
                "input length {len} shorter than the receptive field {}",
                self.receptive_field()
            )));
        }
        Ok(())
    }
}

// ----- model -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TcnAutoencoder {
    pub config: TcnConfig,
    pub input_len: usize,
    enc_convs: Vec<Conv1dCausal>,
    enc_fc: Linear,
    dec_fc: Linear,
    dec_convs: Vec<Conv1dCausal>,
    head: Conv1dCausal,
    /// Mean training MSE per epoch, filled by [`train_autoencoder`].
    pub training_log: Vec<f64>,
}

struct ForwardCache {
    enc_inputs: Vec<Array2<f64>>,
    enc_pre: Vec<Array2<f64>>,
    flat: Array2<f64>,
    z: Array2<f64>,
    dec_inputs: Vec<Array2<f64>>,
    dec_pre: Vec<Array2<f64>>,
    head_in: Array2<f64>,
    y: Array2<f64>,
}

impl TcnAutoencoder {
    pub fn new(config: TcnConfig, input_len: usize) -> Result<Self> {
        config.validate()?;
        config.validate_input_len(input_len)?;
        let mut rng = crate::rng::substream(config.seed, "tcn/init");
        let c = config.block_channels;
        let mut enc_convs = Vec::with_capacity(config.dilations.len());
        let mut in_ch = config.in_channels;
        for &d in &config.dilations {
            enc_convs.push(Conv1dCausal::new(in_ch, c, config.kernel, d, &mut rng));
            in_ch = c;
        }
        let t_pooled = input_len / config.pool_factor;
        let flat_dim = c * t_pooled;
        let enc_fc = Linear::new(flat_dim, config.embedding_dim, &mut rng);
        let dec_fc = Linear::new(config.embedding_dim, flat_dim, &mut rng);
        let mut dec_convs = Vec::with_capacity(config.dilations.len());
        for &d in config.dilations.iter().rev() {
            dec_convs.push(Conv1dCausal::new(c, c, config.kernel, d, &mut rng));
        }
        let head = Conv1dCausal::new(c, config.in_channels, 1, 1, &mut rng);
        Ok(TcnAutoencoder {
            config,
            input_len,
            enc_convs,
            enc_fc,
            dec_fc,
            dec_convs,
            head,
            training_log: Vec::new(),
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() != self.config.in_channels || x.ncols() != self.input_len {
            return Err(Error::Shape(format!(
                "expected ({}, {}) input, got ({}, {})",
                self.config.in_channels,
                self.input_len,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// `(channels, input_len) -> embedding`
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for conv in &self.enc_convs {
            h = relu(&conv.forward(&h));
        }
        let p = avg_pool(&h, self.config.pool_factor);
        let flat = flatten_row(&p);
        let z = self.enc_fc.forward(&flat);
        Ok(z.row(0).to_owned())
    }

    /// `embedding -> (channels, input_len)` reconstruction in the
    /// normalized feature space.
    pub fn decode(&self, z: &Array1<f64>) -> Result<Array2<f64>> {
        if z.len() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "expected {}-d embedding, got {}",
                self.config.embedding_dim,
                z.len()
            )));
        }
        let zr = z.view().insert_axis(ndarray::Axis(0)).to_owned();
        let flat = self.dec_fc.forward(&zr);
        let c = self.config.block_channels;
        let t_pooled = self.input_len / self.config.pool_factor;
        let p = unflatten_row(&flat, c, t_pooled)?;
        let mut h = upsample_nearest(&p, self.config.pool_factor);
        for conv in &self.dec_convs {
            h = relu(&conv.forward(&h));
        }
        Ok(self.head.forward(&h))
    }

    fn forward_cached(&self, x: &Array2<f64>) -> ForwardCache {
        let mut enc_inputs = Vec::with_capacity(self.enc_convs.len());
        let mut enc_pre = Vec::with_capacity(self.enc_convs.len());
        let mut h = x.clone();
        for conv in &self.enc_convs {
            enc_inputs.push(h.clone());
            let pre = conv.forward(&h);
            h = relu(&pre);
            enc_pre.push(pre);
        }
        let p = avg_pool(&h, self.config.pool_factor);
        let flat = flatten_row(&p);
        let z = self.enc_fc.forward(&flat);
        let dec_flat_in = self.dec_fc.forward(&z);
        let c = self.config.block_channels;
        let t_pooled = self.input_len / self.config.pool_factor;
        let p2 = unflatten_row(&dec_flat_in, c, t_pooled).expect("shape fixed by model");
        let mut h2 = upsample_nearest(&p2, self.config.pool_factor);
        let mut dec_inputs = Vec::with_capacity(self.dec_convs.len());
        let mut dec_pre = Vec::with_capacity(self.dec_convs.len());
        for conv in &self.dec_convs {
            dec_inputs.push(h2.clone());
            let pre = conv.forward(&h2);
            h2 = relu(&pre);
            dec_pre.push(pre);
        }
        let y = self.head.forward(&h2);
        ForwardCache {
            enc_inputs,
            enc_pre,
            flat,
            z,
            dec_inputs,
            dec_pre,
            head_in: h2,
            y,
        }
    }

    /// Mean squared reconstruction error of one sample.
    pub fn reconstruction_mse(&self, x: &Array2<f64>) -> Result<f64> {
        self.check_input(x)?;
        let cache = self.forward_cached(x);
        Ok(mse(&cache.y, x))
    }

    /// Forward + backward for one sample; accumulates parameter
    /// gradients (scaled by `grad_scale`) and returns the sample MSE.
    /// Gradients add onto whatever is already in the buffers — call
    /// [`crate::nn::zero_grads`] first when starting a fresh batch.
    ///
    /// # Panics
    /// If `x` is not `in_channels x input_len` (validate with
    /// [`Self::reconstruction_mse`] or upstream shape checks first).
    pub fn accumulate_sample(&mut self, x: &Array2<f64>, grad_scale: f64) -> f64 {
        let cache = self.forward_cached(x);
        let loss = mse(&cache.y, x);
        let n = (x.nrows() * x.ncols()) as f64;
        // d(mse)/dy = 2 (y - x) / n, scaled for batch averaging
        let mut dy = &cache.y - x;
        dy.mapv_inplace(|v| v * 2.0 / n * grad_scale);

        let mut d = self.head.backward(&cache.head_in, &dy);
        for (i, conv) in self.dec_convs.iter_mut().enumerate().rev() {
            let dpre = relu_backward(&cache.dec_pre[i], &d);
            d = conv.backward(&cache.dec_inputs[i], &dpre);
        }
        let dp2 = upsample_nearest_backward(&d, self.config.pool_factor);
        let dflat_dec = flatten_row(&dp2);
        let dz = self.dec_fc.backward(&cache.z, &dflat_dec);
        let dflat_enc = self.enc_fc.backward(&cache.flat, &dz);
        let c = self.config.block_channels;
        let t_pooled = self.input_len / self.config.pool_factor;
        let dpooled = unflatten_row(&dflat_enc, c, t_pooled).expect("shape fixed by model");
        let mut dh = avg_pool_backward(&dpooled, self.config.pool_factor);
        for (i, conv) in self.enc_convs.iter_mut().enumerate().rev() {
            let dpre = relu_backward(&cache.enc_pre[i], &dh);
            dh = conv.backward(&cache.enc_inputs[i], &dpre);
        }
        loss
    }

    /// Embed one preprocessed cell series.
    pub fn embed(&self, mv: &MultivariateSeries) -> Result<Array1<f64>> {
        if !mv.normalized {
            return Err(Error::Traffic(format!(
                "cell {}: embed expects normalized series",
                mv.cell_id
            )));
        }
        if mv.n_categories() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "cell {}: {} categories, model expects {}",
                mv.cell_id,
                mv.n_categories(),
                self.config.in_channels
            )));
        }
        self.encode(&mv.array()?)
    }

    /// Reconstruct one cell series (normalized space), keeping its time
    /// axis metadata.
    pub fn reconstruct(&self, mv: &MultivariateSeries) -> Result<MultivariateSeries> {
        let z = self.embed(mv)?;
        let y = self.decode(&z)?;
        Ok(MultivariateSeries {
            cell_id: mv.cell_id,
            categories: mv.categories.clone(),
            timestamps: mv.timestamps.clone(),
            values: crate::traffic::Array2Ser::from_array(&y),
            normalized: true,
        })
    }

    /// Embed every cell, preserving input order. Parallel but
    /// order-stable, so results are independent of thread count.
    pub fn embed_all(&self, cells: &[MultivariateSeries]) -> Result<CellEmbeddings> {
        if cells.is_empty() {
            return Err(Error::Traffic("no cells to embed".into()));
        }
        let results = par_map_ordered(cells, |mv| self.embed(mv).map(|z| (mv.cell_id, z)));
        let mut cell_ids = Vec::with_capacity(cells.len());
        let mut rows = Vec::with_capacity(cells.len());
        for r in results {
            let (id, z) = r?;
            cell_ids.push(id);
            rows.push(z);
        }
        let dim = self.config.embedding_dim;
        let mut matrix = Array2::<f64>::zeros((cell_ids.len(), dim));
        for (i, z) in rows.iter().enumerate() {
            matrix.row_mut(i).assign(z);
        }
        CellEmbeddings::new(cell_ids, matrix)
    }

    // ----- checkpointing ---------------------------------------------------

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        let mut me = self.clone();
        me.visit_params(&mut |name, vals, _| {
            tensors.insert(name.to_string(), vals.to_vec());
        });
        let ckpt = TcnCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            input_len: self.input_len,
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
        let ckpt: TcnCheckpoint = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                detail: format!("unknown checkpoint format {:?}", ckpt.format),
            });
        }
        let mut model = TcnAutoencoder::new(ckpt.config, ckpt.input_len)?;
        let mut missing = Vec::new();
        model.visit_params(&mut |name, vals, _| match ckpt.tensors.get(name) {
            Some(data) if data.len() == vals.len() => vals.copy_from_slice(data),
            Some(data) => missing.push(format!(
                "{name}: expected {} values, found {}",
                vals.len(),
                data.len()
            )),
            None => missing.push(format!("{name}: missing")),
        });
        if !missing.is_empty() {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                detail: format!("checkpoint tensors do not fit the model: {}", missing.join("; ")),
            });
        }
        model.training_log = ckpt.training_log;
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "tcn-autoencoder/v1";

#[derive(Serialize, Deserialize)]
struct TcnCheckpoint {
    format: String,
    config: TcnConfig,
    input_len: usize,
    training_log: Vec<f64>,
    tensors: BTreeMap<String, Vec<f64>>,
}

impl Parametrized for TcnAutoencoder {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        for (i, conv) in self.enc_convs.iter_mut().enumerate() {
            conv.visit(&format!("enc{i}"), f);
        }
        self.enc_fc.visit("enc_fc", f);
        self.dec_fc.visit("dec_fc", f);
        for (i, conv) in self.dec_convs.iter_mut().enumerate() {
            conv.visit(&format!("dec{i}"), f);
        }
        self.head.visit("head", f);
    }
}

fn mse(y: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let n = (x.nrows() * x.ncols()) as f64;
    y.iter()
        .zip(x.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

fn flatten_row(a: &Array2<f64>) -> Array2<f64> {
    let f = a.nrows() * a.ncols();
    Array2::from_shape_vec((1, f), a.iter().copied().collect()).expect("row-major flatten")
}

fn unflatten_row(a: &Array2<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if a.nrows() != 1 || a.ncols() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot reshape (1, {}) into ({rows}, {cols})",
            a.ncols()
        )));
    }
    Array2::from_shape_vec((rows, cols), a.iter().copied().collect())
        .map_err(|e| Error::Shape(e.to_string()))
}

// ----- training -----------------------------------------------------------------

/// Train an autoencoder on preprocessed (normalized, aligned) cell
/// series. Cells are shuffled each epoch with a seeded substream;
/// per-batch gradients are averaged and applied with Adam. The returned
/// model's `training_log` holds the mean MSE of each epoch.
pub fn train_autoencoder(
    config: TcnConfig,
    cells: &[MultivariateSeries],
) -> Result<TcnAutoencoder> {
    if cells.is_empty() {
        return Err(Error::Traffic("no training cells".into()));
    }
    let first = &cells[0];
    if !first.normalized {
        return Err(Error::Traffic(
            "autoencoder trains on normalized series".into(),
        ));
    }
    for c in cells {
        if c.categories != first.categories {
            return Err(Error::Traffic(format!(
                "cell {}: category layout differs",
                c.cell_id
            )));
        }
        if c.timestamps != first.timestamps {
            return Err(Error::Traffic(format!(
                "cell {}: time axis differs from cell {}",
                c.cell_id, first.cell_id
            )));
        }
        if !c.normalized {
            return Err(Error::Traffic(format!(
                "cell {}: not normalized",
                c.cell_id
            )));
        }
    }
    if first.n_categories() != config.in_channels {
        return Err(Error::Config(format!(
            "config expects {} channels, data has {}",
            config.in_channels,
            first.n_categories()
        )));
    }
    let input_len = first.n_samples();
    let mut model = TcnAutoencoder::new(config.clone(), input_len)?;
    let xs: Vec<Array2<f64>> = cells
        .iter()
        .map(|c| c.array())
        .collect::<Result<Vec<_>>>()?;

    let mut opt = Adam::new(config.lr);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = crate::rng::substream(config.seed, &format!("tcn/shuffle/{epoch}"));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            crate::nn::zero_grads(&mut model);
            let scale = 1.0 / batch.len() as f64;
            // per-sample gradients on model clones, reduced in batch order
            let shared = &model;
            let results: Vec<(f64, Vec<f64>)> = par_map_ordered(batch, |&i| {
                let mut local = shared.clone();
                crate::nn::zero_grads(&mut local);
                let loss = local.accumulate_sample(&xs[i], scale);
                (loss, crate::nn::flat_grads(&mut local))
            });
            let mut off_template: Option<Vec<f64>> = None;
            for (loss, grads) in &results {
                epoch_loss += loss;
                match &mut off_template {
                    None => off_template = Some(grads.clone()),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            *a += g;
                        }
                    }
                }
            }
            let summed = off_template.expect("batch is never empty");
            let mut off = 0usize;
            model.visit_params(&mut |_, _, g| {
                g.copy_from_slice(&summed[off..off + g.len()]);
                off += g.len();
            });
            match crate::nn::grad_linf(&mut model) {
                Some(_) => {}
                None => {
                    return Err(Error::Divergence {
                        epoch,
                        detail: "non-finite gradient".into(),
                    })
                }
            }
            opt.step(&mut model);
        }
        let mean_loss = epoch_loss / xs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("mean loss {mean_loss}"),
            });
        }
        model.training_log.push(mean_loss);
        if epoch == 0 || (epoch + 1) % 20 == 0 {
            log::info!("autoencoder epoch {}/{}: mse {mean_loss:.6}", epoch + 1, config.epochs);
        }
    }
    Ok(model)
}

// ----- cell embeddings ------------------------------------------------------------

/// Cell embedding table: one row per cell, aligned with `cell_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEmbeddings {
    pub cell_ids: Vec<usize>,
    pub matrix: Array2<f64>,
}

impl CellEmbeddings {
    pub fn new(cell_ids: Vec<usize>, matrix: Array2<f64>) -> Result<Self> {
        if cell_ids.len() != matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} ids vs {} embedding rows",
                cell_ids.len(),
                matrix.nrows()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &cell_ids {
            if !seen.insert(*id) {
                return Err(Error::Traffic(format!("duplicate cell id {id}")));
            }
        }
        Ok(CellEmbeddings { cell_ids, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, cell_id: usize) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.cell_ids
            .iter()
            .position(|&c| c == cell_id)
            .map(|i| self.matrix.row(i))
    }

    /// `cell_id,z_0,...,z_{d-1}` with shortest-round-trip float text, so
    /// save/load is lossless and byte-deterministic.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cell_id");
        for j in 0..self.dim() {
            out.push_str(&format!(",z_{j}"));
        }
        out.push('\n');
        for (i, id) in self.cell_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for v in self.matrix.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        crate::util::write_atomic(path, out.as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = crate::tessellation::read_text(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path.display().to_string(), "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"cell_id") || cols.len() < 2 {
            return Err(Error::parse(
                path.display().to_string(),
                "expected cell_id,z_0,... header",
            ));
        }
        let dim = cols.len() - 1;
        let mut cell_ids = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let id: usize = parts
                .next()
                .unwrap()
                .parse()
                .map_err(|_| {
                    Error::parse(
                        path.display().to_string(),
                        format!("line {}: bad cell id", ln + 2),
                    )
                })?;
            let mut row = 0usize;
            for p in parts {
                let v: f64 = p.parse().map_err(|_| {
                    Error::parse(
                        path.display().to_string(),
                        format!("line {}: bad float {p:?}", ln + 2),
                    )
                })?;
                data.push(v);
                row += 1;
            }
            if row != dim {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: {} values, expected {dim}", ln + 2, row),
                ));
            }
            cell_ids.push(id);
        }
        let n = cell_ids.len();
        let matrix = Array2::from_shape_vec((n, dim), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        CellEmbeddings::new(cell_ids, matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn tiny_config() -> TcnConfig {
        TcnConfig {
            in_channels: 2,
            block_channels: 4,
            dilations: vec![1, 2],
            kernel: 2,
            pool_factor: 2,
            embedding_dim: 3,
            lr: 1e-2,
            epochs: 5,
            batch_size: 4,
            seed: 11,
        }
    }

    fn toy_series(cell_id: usize, channels: usize, len: usize, seed: u64) -> MultivariateSeries {
        let mut rng = crate::rng::substream(seed, &format!("t/tcn-series/{cell_id}"));
        let values = Array2::from_shape_fn((channels, len), |_| {
            rand::Rng::random_range(&mut rng, -1.0..1.0)
        });
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        MultivariateSeries {
            cell_id,
            categories: (0..channels).map(|i| format!("c{i}")).collect(),
            timestamps: (0..len)
                .map(|i| start + chrono::Duration::hours(i as i64))
                .collect(),
            values: crate::traffic::Array2Ser::from_array(&values),
            normalized: true,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.validate().unwrap();
        assert_eq!(c.receptive_field(), 1 + (2 - 1) * 3);
        c.dilations = vec![2, 2];
        assert!(c.validate().is_err(), "non-increasing dilations");
        let mut c = tiny_config();
        c.kernel = 1;
        assert!(c.validate().is_err());
        let c = TcnConfig::for_channels(4);
        c.validate().unwrap();
        assert_eq!(c.receptive_field(), 15);
        assert_eq!(c.embedding_dim, 44);
    }

    #[test]
    fn input_length_rules() {
        let c = tiny_config(); // rf = 4, pool = 2
        assert!(c.validate_input_len(8).is_ok());
        assert!(c.validate_input_len(7).is_err(), "not divisible by pool");
        assert!(c.validate_input_len(2).is_err(), "below receptive field");
    }

    #[test]
    fn encode_decode_shapes_across_lengths() {
        for len in [4usize, 8, 12, 32] {
            let model = TcnAutoencoder::new(tiny_config(), len).unwrap();
            let x = Array2::from_shape_fn((2, len), |(i, j)| (i + j) as f64 * 0.1);
            let z = model.encode(&x).unwrap();
            assert_eq!(z.len(), 3);
            let y = model.decode(&z).unwrap();
            assert_eq!(y.dim(), (2, len));
            assert!(y.iter().all(|v| v.is_finite()));
        }
        // wrong shapes are rejected
        let model = TcnAutoencoder::new(tiny_config(), 8).unwrap();
        let bad = Array2::<f64>::zeros((2, 10));
        assert!(model.encode(&bad).is_err());
        assert!(model.decode(&Array1::zeros(5)).is_err());
    }

    #[test]
    fn encoder_is_causal_before_pooling() {
        // perturbing the input at time t must leave every convolution
        // pre-activation strictly before t bit-identical (time is only
        // mixed later, by the pooling stage)
        let model = TcnAutoencoder::new(tiny_config(), 32).unwrap();
        let x = Array2::from_shape_fn((2, 32), |(i, j)| ((i + 2 * j) % 5) as f64 * 0.3 - 0.5);
        let base = model.forward_cached(&x);
        for &t in &[0usize, 7, 16, 31] {
            let mut xp = x.clone();
            xp[[0, t]] += 1.5;
            xp[[1, t]] -= 0.75;
            let pert = model.forward_cached(&xp);
            for (b, (a0, a1)) in base.enc_pre.iter().zip(&pert.enc_pre).enumerate() {
                for s in 0..t {
                    for ch in 0..a0.nrows() {
                        assert_eq!(
                            a0[[ch, s]],
                            a1[[ch, s]],
                            "block {b}: time {s} saw a perturbation at time {t}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        let mut model = TcnAutoencoder::new(tiny_config(), 8).unwrap();
        let x = Array2::from_shape_fn((2, 8), |(i, j)| ((i * 5 + j * 3) % 7) as f64 * 0.2 - 0.6);
        let report = crate::nn::gradcheck::finite_diff_check(
            &mut model,
            |m| m.reconstruction_mse(&x).unwrap(),
            |m| {
                crate::nn::zero_grads(m);
                m.accumulate_sample(&x, 1.0);
            },
            120,
            3,
        );
        assert!(
            report.passes(1e-4),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let mut cfg = tiny_config();
        cfg.epochs = 40;
        let cells: Vec<MultivariateSeries> =
            (0..4).map(|i| toy_series(i, 2, 8, 21)).collect();
        let model = train_autoencoder(cfg, &cells).unwrap();
        let first = model.training_log[0];
        let last = *model.training_log.last().unwrap();
        assert!(
            last < first,
            "loss should fall: first {first}, last {last}"
        );
        assert_eq!(model.training_log.len(), 40);
    }

    #[test]
    fn training_is_deterministic() {
        let cells: Vec<MultivariateSeries> =
            (0..3).map(|i| toy_series(i, 2, 8, 5)).collect();
        let m1 = train_autoencoder(tiny_config(), &cells).unwrap();
        let m2 = train_autoencoder(tiny_config(), &cells).unwrap();
        let e1 = m1.embed_all(&cells).unwrap();
        let e2 = m2.embed_all(&cells).unwrap();
        assert_eq!(e1.matrix, e2.matrix, "same seed, same data, same result");
        let mut cfg2 = tiny_config();
        cfg2.seed = 99;
        let m3 = train_autoencoder(cfg2, &cells).unwrap();
        let e3 = m3.embed_all(&cells).unwrap();
        assert_ne!(e1.matrix, e3.matrix, "different seed should differ");
    }

    #[test]
    fn train_rejects_misaligned_cells() {
        let a = toy_series(0, 2, 8, 1);
        let mut b = toy_series(1, 2, 8, 2);
        b.timestamps[3] += chrono::Duration::minutes(1);
        assert!(train_autoencoder(tiny_config(), &[a.clone(), b]).is_err());
        let mut raw = toy_series(2, 2, 8, 3);
        raw.normalized = false;
        assert!(train_autoencoder(tiny_config(), &[raw]).is_err());
        assert!(train_autoencoder(tiny_config(), &[]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cells: Vec<MultivariateSeries> =
            (0..3).map(|i| toy_series(i, 2, 8, 8)).collect();
        let mut cfg = tiny_config();
        cfg.epochs = 3;
        let model = train_autoencoder(cfg, &cells).unwrap();
        let dir = std::env::temp_dir().join(format!("tcn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ae.json");
        model.save_checkpoint(&path).unwrap();
        let back = TcnAutoencoder::load_checkpoint(&path).unwrap();
        let e1 = model.embed_all(&cells).unwrap();
        let e2 = back.embed_all(&cells).unwrap();
        assert_eq!(e1.matrix, e2.matrix, "weights must round-trip exactly");
        assert_eq!(back.training_log, model.training_log);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn embeddings_csv_round_trip_is_exact() {
        let cells: Vec<MultivariateSeries> =
            (0..3).map(|i| toy_series(i * 7, 2, 8, 14)).collect();
        let model = TcnAutoencoder::new(tiny_config(), 8).unwrap();
        let emb = model.embed_all(&cells).unwrap();
        let dir = std::env::temp_dir().join(format!("tcn-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cells.csv");
        emb.save_csv(&path).unwrap();
        let back = CellEmbeddings::load_csv(&path).unwrap();
        assert_eq!(back.cell_ids, emb.cell_ids);
        assert_eq!(back.matrix, emb.matrix, "lossless float round trip");
        // byte determinism
        let b1 = std::fs::read(&path).unwrap();
        back.save_csv(&path).unwrap();
        let b2 = std::fs::read(&path).unwrap();
        assert_eq!(b1, b2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn single_cell_memorization_smoke() {
        // miniature version of the memorization check: tiny model, one
        // cell, loss collapses quickly
        let mut cfg = tiny_config();
        cfg.epochs = 250;
        cfg.lr = 5e-3;
        let cell = toy_series(0, 2, 8, 33);
        let model = train_autoencoder(cfg, &[cell]).unwrap();
        let first = model.training_log[0];
        let last = *model.training_log.last().unwrap();
        assert!(
            last < 0.5 * first,
            "single sample should be memorized: {first} -> {last}"
        );
    }
}
