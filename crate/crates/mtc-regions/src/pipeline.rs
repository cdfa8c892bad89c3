//! Stage-oriented pipeline driver: one flat config file drives the run
//! from (optional) synthetic-city generation through per-slot region
//! embeddings to evaluation reports and cluster maps.
//!
//! Stages form a small static DAG and are idempotent: every stage
//! records the hashes of its inputs and outputs in `run_manifest.json`,
//! re-running with unchanged inputs is a cheap no-op, and all artifacts
//! are written atomically (temp file + rename) so interrupted runs never
//! leave a half-written file behind. One global seed feeds named
//! substreams, so stage order never perturbs another stage's draws.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregator::{
    build_feature_matrices, AggregatorConfig, AggregatorKind, AggregatorModel, Provenance,
    RegionEmbeddings,
};
use crate::error::{Error, Result};
use crate::eval::ami::{
    adjusted_mutual_information, load_clustering_csv, save_clustering_csv, EmiMode,
    WeightedClustering,
};
use crate::eval::{
    self, forest::ForestConfig, mlp::MlpConfig, ward, DensityEvalConfig, LabeledRegions,
    LanduseEvalConfig,
};
use crate::synth;
use crate::tcn::{train_autoencoder, CellEmbeddings, TcnAutoencoder, TcnConfig};
use crate::tessellation::{build_adjacency, intersect_grid, MtcGrid, TargetTessellation};
use crate::traffic::{
    aggregate_cells, downsample_sum, fit_norm_stats, normalize, read_traffic_csv,
    slice_time_slot, CategoryMap, MultivariateSeries, NormStats, TimeSlot,
};
use crate::util::{sha256_file, sha256_hex, write_atomic};

// ----- configuration ---------------------------------------------------------

fn d_slots() -> Vec<String> {
    vec!["full".into()]
}
fn d_step() -> u32 {
    60
}
fn d_tcn_block() -> usize {
    32
}
fn d_tcn_dil() -> Vec<usize> {
    vec![1, 2, 4]
}
fn d_tcn_kernel() -> usize {
    3
}
fn d_tcn_pool() -> usize {
    8
}
fn d_tcn_dim() -> usize {
    44
}
fn d_tcn_lr() -> f64 {
    1e-3
}
fn d_tcn_epochs() -> usize {
    100
}
fn d_tcn_batch() -> usize {
    32
}
fn d_kinds() -> Vec<String> {
    vec!["weighted_sum".into(), "transformer".into()]
}
fn d_agg_dim() -> usize {
    64
}
fn d_agg_ff() -> usize {
    128
}
fn d_agg_layers() -> usize {
    2
}
fn d_hops() -> usize {
    2
}
fn d_margin() -> f64 {
    1.0
}
fn d_agg_lr() -> f64 {
    1e-4
}
fn d_agg_epochs() -> usize {
    60
}
fn d_cap() -> usize {
    300
}
fn d_eval_slot() -> String {
    "full".into()
}
fn d_repeats() -> usize {
    30
}
fn d_l_split() -> Vec<f64> {
    vec![0.7, 0.1, 0.2]
}
fn d_d_split() -> Vec<f64> {
    vec![0.8, 0.2]
}
fn d_hidden() -> usize {
    512
}
fn d_mlp_epochs() -> usize {
    100
}
fn d_patience() -> usize {
    10
}
fn d_mlp_lr() -> f64 {
    1e-3
}
fn d_trees() -> usize {
    100
}
fn d_k() -> usize {
    4
}
fn d_krange() -> Vec<usize> {
    (2..=10).collect()
}
fn d_ami_mode() -> String {
    "analytic".into()
}
fn d_nperm() -> usize {
    200
}

/// Everything one run needs, in a single flat TOML document. Relative
/// paths are resolved against the config file's directory at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run directory: all stage artifacts and the manifest live here.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Synthetic scenario to generate (`diurnal4`, `slotfactors16`,
    /// `smoke`); leave unset when pointing at external data files.
    #[serde(default)]
    pub scenario: Option<String>,
    /// Where input data lives (default `{out_dir}/data`); the synth
    /// stage writes here, later stages read from here.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    // explicit input files override the data_dir defaults
    #[serde(default)]
    pub traffic: Option<PathBuf>,
    #[serde(default)]
    pub traffic_meta: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<PathBuf>,
    #[serde(default)]
    pub regions: Option<PathBuf>,
    #[serde(default)]
    pub categories: Option<PathBuf>,
    #[serde(default)]
    pub landuse_truth: Option<PathBuf>,
    #[serde(default)]
    pub density_truth: Option<PathBuf>,
    #[serde(default)]
    pub archetype_truth: Option<PathBuf>,

    // preprocessing
    #[serde(default = "d_slots")]
    pub slots: Vec<String>,
    /// Target sampling period; raw series are sum-downsampled to it.
    #[serde(default = "d_step")]
    pub step_minutes: u32,

    // autoencoder
    #[serde(default = "d_tcn_block")]
    pub tcn_block_channels: usize,
    #[serde(default = "d_tcn_dil")]
    pub tcn_dilations: Vec<usize>,
    #[serde(default = "d_tcn_kernel")]
    pub tcn_kernel: usize,
    #[serde(default = "d_tcn_pool")]
    pub tcn_pool_factor: usize,
    #[serde(default = "d_tcn_dim")]
    pub tcn_embedding_dim: usize,
    #[serde(default = "d_tcn_lr")]
    pub tcn_lr: f64,
    #[serde(default = "d_tcn_epochs")]
    pub tcn_epochs: usize,
    #[serde(default = "d_tcn_batch")]
    pub tcn_batch_size: usize,

    // aggregators
    #[serde(default = "d_kinds")]
    pub agg_kinds: Vec<String>,
    #[serde(default = "d_agg_dim")]
    pub agg_out_dim: usize,
    #[serde(default = "d_agg_ff")]
    pub agg_ff_width: usize,
    #[serde(default = "d_agg_layers")]
    pub agg_n_layers: usize,
    #[serde(default = "d_hops")]
    pub hops: usize,
    #[serde(default = "d_margin")]
    pub margin: f64,
    #[serde(default = "d_agg_lr")]
    pub agg_lr: f64,
    #[serde(default = "d_agg_epochs")]
    pub agg_epochs: usize,
    /// Per-region cell cap when building feature matrices.
    #[serde(default = "d_cap")]
    pub cell_cap: usize,
    #[serde(default)]
    pub l2_normalize: bool,

    // evaluation
    /// Slot whose region embeddings feed the label harnesses.
    #[serde(default = "d_eval_slot")]
    pub eval_slot: String,
    #[serde(default = "d_repeats")]
    pub eval_repeats: usize,
    /// Train/validation/test fractions for land-use inference.
    #[serde(default = "d_l_split")]
    pub landuse_split: Vec<f64>,
    /// Train/test fractions for density regression.
    #[serde(default = "d_d_split")]
    pub density_split: Vec<f64>,
    #[serde(default = "d_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "d_mlp_epochs")]
    pub mlp_max_epochs: usize,
    #[serde(default = "d_patience")]
    pub mlp_patience: usize,
    #[serde(default = "d_mlp_lr")]
    pub mlp_lr: f64,
    #[serde(default = "d_trees")]
    pub forest_trees: usize,

    // clustering
    #[serde(default = "d_k")]
    pub cluster_k: usize,
    #[serde(default = "d_krange")]
    pub k_range: Vec<usize>,
    /// Expected-MI estimator for AMI: `analytic` or `permutation`.
    #[serde(default = "d_ami_mode")]
    pub ami_mode: String,
    #[serde(default = "d_nperm")]
    pub ami_n_perm: usize,
}

/// CLI flags that override config fields after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Restricts the run to a single time slot.
    pub slot: Option<String>,
    pub hops: Option<usize>,
    pub margin: Option<f64>,
    pub k: Option<usize>,
}

/// Read, resolve, override, and validate a config file.
pub fn load_config(path: &Path, ov: &Overrides) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&p);
        }
    };
    resolve(&mut cfg.out_dir);
    for opt in [
        &mut cfg.data_dir,
        &mut cfg.traffic,
        &mut cfg.traffic_meta,
        &mut cfg.grid,
        &mut cfg.regions,
        &mut cfg.categories,
        &mut cfg.landuse_truth,
        &mut cfg.density_truth,
        &mut cfg.archetype_truth,
    ] {
        if let Some(p) = opt.as_mut() {
            resolve(p);
        }
    }
    cfg.apply(ov);
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(slot) = &ov.slot {
            self.slots = vec![slot.clone()];
            self.eval_slot = slot.clone();
        }
        if let Some(h) = ov.hops {
            self.hops = h;
        }
        if let Some(m) = ov.margin {
            self.margin = m;
        }
        if let Some(k) = ov.k {
            self.cluster_k = k;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.into()));
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir must be set");
        }
        if let Some(name) = &self.scenario {
            synth::scenario_spec(name, 0)?; // rejects unknown scenario names
        }
        if self.slots.is_empty() {
            return bad("slots must list at least one time slot");
        }
        let mut parsed = Vec::new();
        for s in &self.slots {
            let slot = TimeSlot::parse(s)?;
            if parsed.contains(&slot) {
                return Err(Error::Config(format!("duplicate slot {s:?}")));
            }
            parsed.push(slot);
        }
        let eval_slot = TimeSlot::parse(&self.eval_slot)?;
        if !parsed.contains(&eval_slot) {
            return Err(Error::Config(format!(
                "eval_slot {:?} is not in slots {:?}",
                self.eval_slot, self.slots
            )));
        }
        if self.step_minutes == 0 {
            return bad("step_minutes must be positive");
        }
        if self.tcn_block_channels == 0
            || self.tcn_kernel == 0
            || self.tcn_pool_factor == 0
            || self.tcn_embedding_dim == 0
            || self.tcn_epochs == 0
            || self.tcn_batch_size == 0
        {
            return bad("tcn_* sizes and epochs must be positive");
        }
        if self.tcn_dilations.is_empty()
            || self.tcn_dilations.windows(2).any(|w| w[1] <= w[0])
            || self.tcn_dilations[0] == 0
        {
            return bad("tcn_dilations must be strictly increasing and positive");
        }
        if !(self.tcn_lr.is_finite() && self.tcn_lr > 0.0) {
            return bad("tcn_lr must be positive");
        }
        if self.agg_kinds.is_empty() {
            return bad("agg_kinds must list at least one aggregator");
        }
        let kinds = self.kinds()?;
        if kinds.len() != self.agg_kinds.len() {
            return bad("agg_kinds contains duplicates");
        }
        if self.agg_out_dim == 0
            || self.agg_ff_width == 0
            || self.agg_n_layers == 0
            || self.agg_epochs == 0
            || self.cell_cap == 0
            || self.hops == 0
        {
            return bad("aggregator sizes, epochs, cap, and hops must be positive");
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad("margin must be finite and non-negative");
        }
        if !(self.agg_lr.is_finite() && self.agg_lr > 0.0) {
            return bad("agg_lr must be positive");
        }
        if self.eval_repeats < 2 {
            return bad("eval_repeats must be at least 2 (mean ± std needs repeats)");
        }
        check_split(&self.landuse_split, 3, "landuse_split")?;
        check_split(&self.density_split, 2, "density_split")?;
        if self.mlp_hidden == 0 || self.mlp_max_epochs == 0 || self.mlp_patience == 0 {
            return bad("mlp_* sizes must be positive");
        }
        if !(self.mlp_lr.is_finite() && self.mlp_lr > 0.0) {
            return bad("mlp_lr must be positive");
        }
        if self.forest_trees == 0 {
            return bad("forest_trees must be positive");
        }
        if self.cluster_k == 0 {
            return bad("cluster_k must be at least 1");
        }
        if self.k_range.is_empty() || self.k_range.iter().any(|&k| k < 2) {
            return bad("k_range must be non-empty with every k ≥ 2");
        }
        EmiMode::parse(&self.ami_mode)?;
        if self.ami_n_perm == 0 {
            return bad("ami_n_perm must be positive");
        }
        Ok(())
    }

    pub fn parsed_slots(&self) -> Vec<TimeSlot> {
        self.slots
            .iter()
            .map(|s| TimeSlot::parse(s).expect("validated"))
            .collect()
    }

    pub fn parsed_eval_slot(&self) -> TimeSlot {
        TimeSlot::parse(&self.eval_slot).expect("validated")
    }

    pub fn kinds(&self) -> Result<Vec<AggregatorKind>> {
        let mut out = Vec::new();
        for name in &self.agg_kinds {
            let kind = AggregatorKind::parse(name)?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        Ok(out)
    }

    pub fn tcn_config(&self, in_channels: usize) -> TcnConfig {
        TcnConfig {
            in_channels,
            block_channels: self.tcn_block_channels,
            dilations: self.tcn_dilations.clone(),
            kernel: self.tcn_kernel,
            pool_factor: self.tcn_pool_factor,
            embedding_dim: self.tcn_embedding_dim,
            lr: self.tcn_lr,
            epochs: self.tcn_epochs,
            batch_size: self.tcn_batch_size,
            seed: self.seed,
        }
    }

    pub fn agg_config(&self, kind: AggregatorKind, in_dim: usize) -> AggregatorConfig {
        AggregatorConfig {
            kind,
            in_dim,
            out_dim: self.agg_out_dim,
            ff_width: self.agg_ff_width,
            n_layers: self.agg_n_layers,
            hops: self.hops,
            margin: self.margin,
            lr: self.agg_lr,
            epochs: self.agg_epochs,
            seed: self.seed,
            l2_normalize: self.l2_normalize,
        }
    }

    /// Canonical serialization used for the manifest's config hash.
    /// Paths under `out_dir` are relativized first, so the same run
    /// placed elsewhere on disk hashes identically; paths pointing
    /// outside the run directory stay absolute and count as different
    /// configs (their contents are hashed separately as stage inputs).
    pub fn config_sha256(&self) -> String {
        let mut canon = self.clone();
        let out = self.out_dir.clone();
        let relativize = |p: &mut PathBuf| {
            if let Ok(rel) = p.strip_prefix(&out) {
                *p = Path::new(".").join(rel);
            }
        };
        canon.out_dir = PathBuf::from(".");
        for opt in [
            &mut canon.data_dir,
            &mut canon.traffic,
            &mut canon.traffic_meta,
            &mut canon.grid,
            &mut canon.regions,
            &mut canon.categories,
            &mut canon.landuse_truth,
            &mut canon.density_truth,
            &mut canon.archetype_truth,
        ] {
            if let Some(p) = opt.as_mut() {
                relativize(p);
            }
        }
        let body = serde_json::to_string(&canon).expect("config serializes");
        sha256_hex(body.as_bytes())
    }

    // -- input file locations --------------------------------------------------

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("data"))
    }

    fn input(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.data_dir().join(default_name))
    }

    pub fn traffic_path(&self) -> PathBuf {
        self.input(&self.traffic, synth::files::TRAFFIC)
    }
    pub fn traffic_meta_path(&self) -> PathBuf {
        self.input(&self.traffic_meta, synth::files::TRAFFIC_META)
    }
    pub fn grid_path(&self) -> PathBuf {
        self.input(&self.grid, synth::files::GRID)
    }
    pub fn regions_path(&self) -> PathBuf {
        self.input(&self.regions, synth::files::REGIONS)
    }
    pub fn categories_path(&self) -> PathBuf {
        self.input(&self.categories, synth::files::CATEGORIES)
    }
    pub fn landuse_truth_path(&self) -> PathBuf {
        self.input(&self.landuse_truth, synth::files::LANDUSE)
    }
    pub fn density_truth_path(&self) -> PathBuf {
        self.input(&self.density_truth, synth::files::DENSITY)
    }
    pub fn archetype_truth_path(&self) -> PathBuf {
        self.input(&self.archetype_truth, synth::files::ARCHETYPES)
    }

    // -- stage artifact locations ------------------------------------------------

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("run_manifest.json")
    }
    pub fn preprocessed_path(&self, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("preprocessed_{slot}.json"))
    }
    pub fn tcn_path(&self, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("tcn_{slot}.json"))
    }
    pub fn cell_emb_path(&self, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("cell_embeddings_{slot}.csv"))
    }
    pub fn agg_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("agg_{kind}_{slot}.json"))
    }
    pub fn region_emb_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir
            .join(format!("region_embeddings_{kind}_{slot}.csv"))
    }
    pub fn provenance_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir
            .join(format!("region_embeddings_{kind}_{slot}.provenance.json"))
    }
    pub fn landuse_eval_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("landuse_eval_{kind}_{slot}.json"))
    }
    pub fn density_eval_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("density_eval_{kind}_{slot}.json"))
    }
    pub fn clusters_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir
            .join(format!("clusters_{kind}_{slot}_k{}.csv", self.cluster_k))
    }
    pub fn cluster_map_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir
            .join(format!("cluster_map_{kind}_{slot}_k{}.geojson", self.cluster_k))
    }
    pub fn ami_path(&self, kind: AggregatorKind) -> PathBuf {
        self.out_dir
            .join(format!("ami_{kind}_k{}.json", self.cluster_k))
    }
    pub fn choose_k_path(&self, kind: AggregatorKind, slot: TimeSlot) -> PathBuf {
        self.out_dir.join(format!("choose_k_{kind}_{slot}.json"))
    }
    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.txt")
    }
}

fn check_split(fractions: &[f64], arity: usize, name: &str) -> Result<()> {
    if fractions.len() != arity {
        return Err(Error::Config(format!(
            "{name} needs exactly {arity} fractions, got {}",
            fractions.len()
        )));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0 && *f < 1.0)) {
        return Err(Error::Config(format!(
            "{name} fractions must lie strictly between 0 and 1"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} must sum to 1, got {sum}")));
    }
    Ok(())
}

// ----- stages ----------------------------------------------------------------

/// Pipeline stages, in DAG order. `All` expands to every stage that has
/// what it needs (evaluation stages are skipped when no truth labels
/// exist, the AMI stage when there is nothing to compare).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Preprocess,
    TrainAe,
    EmbedCells,
    TrainAgg,
    EmbedRegions,
    EvalLanduse,
    EvalDensity,
    Cluster,
    Ami,
    ChooseK,
    Report,
    All,
}

impl Stage {
    pub const NAMES: [&'static str; 13] = [
        "synth",
        "preprocess",
        "train-ae",
        "embed-cells",
        "train-agg",
        "embed-regions",
        "eval-landuse",
        "eval-density",
        "cluster",
        "ami",
        "choose-k",
        "report",
        "all",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::TrainAe => "train-ae",
            Stage::EmbedCells => "embed-cells",
            Stage::TrainAgg => "train-agg",
            Stage::EmbedRegions => "embed-regions",
            Stage::EvalLanduse => "eval-landuse",
            Stage::EvalDensity => "eval-density",
            Stage::Cluster => "cluster",
            Stage::Ami => "ami",
            Stage::ChooseK => "choose-k",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "synth" => Ok(Stage::Synth),
            "preprocess" => Ok(Stage::Preprocess),
            "train-ae" => Ok(Stage::TrainAe),
            "embed-cells" => Ok(Stage::EmbedCells),
            "train-agg" => Ok(Stage::TrainAgg),
            "embed-regions" => Ok(Stage::EmbedRegions),
            "eval-landuse" => Ok(Stage::EvalLanduse),
            "eval-density" => Ok(Stage::EvalDensity),
            "cluster" => Ok(Stage::Cluster),
            "ami" => Ok(Stage::Ami),
            "choose-k" => Ok(Stage::ChooseK),
            "report" => Ok(Stage::Report),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!(
                "unknown stage {other:?}; expected one of {}",
                Stage::NAMES.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage-produced files this stage reads, paired with the stage that
/// produces them; probed in order so the error names the earliest
/// unsatisfied prerequisite.
fn stage_needs(stage: Stage, cfg: &PipelineConfig) -> Vec<(PathBuf, Stage)> {
    let slots = cfg.parsed_slots();
    let kinds = cfg.kinds().expect("validated");
    let eval_slot = cfg.parsed_eval_slot();
    let mut needs = Vec::new();
    match stage {
        Stage::Synth | Stage::Report => {}
        Stage::Preprocess => {
            // inputs come from the synth stage only in scenario mode;
            // external files are the user's responsibility (checked below)
        }
        Stage::TrainAe => {
            for &slot in &slots {
                needs.push((cfg.preprocessed_path(slot), Stage::Preprocess));
            }
        }
        Stage::EmbedCells => {
            for &slot in &slots {
                needs.push((cfg.tcn_path(slot), Stage::TrainAe));
                needs.push((cfg.preprocessed_path(slot), Stage::Preprocess));
            }
        }
        Stage::TrainAgg => {
            for &slot in &slots {
                needs.push((cfg.cell_emb_path(slot), Stage::EmbedCells));
            }
        }
        Stage::EmbedRegions => {
            for &slot in &slots {
                for &kind in &kinds {
                    needs.push((cfg.agg_path(kind, slot), Stage::TrainAgg));
                }
            }
            for &slot in &slots {
                needs.push((cfg.cell_emb_path(slot), Stage::EmbedCells));
            }
        }
        Stage::EvalLanduse | Stage::EvalDensity => {
            for &kind in &kinds {
                needs.push((cfg.region_emb_path(kind, eval_slot), Stage::EmbedRegions));
                needs.push((cfg.provenance_path(kind, eval_slot), Stage::EmbedRegions));
            }
        }
        Stage::Cluster | Stage::ChooseK => {
            for &slot in &slots {
                for &kind in &kinds {
                    needs.push((cfg.region_emb_path(kind, slot), Stage::EmbedRegions));
                    needs.push((cfg.provenance_path(kind, slot), Stage::EmbedRegions));
                }
            }
        }
        Stage::Ami => {
            for &slot in &slots {
                for &kind in &kinds {
                    needs.push((cfg.clusters_path(kind, slot), Stage::Cluster));
                }
            }
        }
        Stage::All => unreachable!("All is expanded before dependency checks"),
    }
    needs
}

/// External input files a stage reads (present before the run, or
/// produced by the synth stage in scenario mode).
fn stage_external_inputs(stage: Stage, cfg: &PipelineConfig) -> Vec<PathBuf> {
    match stage {
        Stage::Preprocess => vec![
            cfg.traffic_path(),
            cfg.traffic_meta_path(),
            cfg.categories_path(),
        ],
        Stage::TrainAgg | Stage::EmbedRegions | Stage::Cluster => {
            vec![cfg.grid_path(), cfg.regions_path()]
        }
        Stage::EvalLanduse => vec![cfg.landuse_truth_path()],
        Stage::EvalDensity => vec![cfg.density_truth_path()],
        Stage::Ami => vec![cfg.regions_path()],
        _ => Vec::new(),
    }
}

fn check_dependencies(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    if stage == Stage::Synth && cfg.scenario.is_none() {
        return Err(Error::Config(
            "the synth stage needs `scenario` set in the config".into(),
        ));
    }
    for (path, producer) in stage_needs(stage, cfg) {
        if !path.exists() {
            return Err(Error::MissingStage {
                stage: stage.name().into(),
                requires: producer.name().into(),
                missing: path.display().to_string(),
            });
        }
    }
    for path in stage_external_inputs(stage, cfg) {
        if !path.exists() {
            // in scenario mode the synth stage produces these files
            if cfg.scenario.is_some() {
                return Err(Error::MissingStage {
                    stage: stage.name().into(),
                    requires: Stage::Synth.name().into(),
                    missing: path.display().to_string(),
                });
            }
            return Err(Error::Config(format!(
                "input file {} does not exist (set the path in the config or run with a scenario)",
                path.display()
            )));
        }
    }
    Ok(())
}

// ----- manifest --------------------------------------------------------------

/// What one stage consumed and produced, with file hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Input name → sha256 (includes the config under the key `config`).
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the run dir when inside it) → sha256.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock duration; informational only, excluded from
    /// reproducibility comparisons (see [`RunManifest::normalized`]).
    pub seconds: f64,
}

/// Ledger of the whole run; identical (config, inputs, seed) must yield
/// an identical `normalized()` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn fresh(cfg: &PipelineConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.config_sha256(),
            stages: BTreeMap::new(),
        }
    }

    /// Load the run's manifest, starting fresh when the config or tool
    /// version changed (stale records must not enable false no-ops).
    pub fn load_or_new(cfg: &PipelineConfig) -> Result<Self> {
        let path = cfg.manifest_path();
        if !path.exists() {
            return Ok(Self::fresh(cfg));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let loaded: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        if loaded.config_sha256 != cfg.config_sha256()
            || loaded.tool_version != env!("CARGO_PKG_VERSION")
        {
            return Ok(Self::fresh(cfg));
        }
        Ok(loaded)
    }

    pub fn save(&self, cfg: &PipelineConfig) -> Result<()> {
        let path = cfg.manifest_path();
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        write_atomic(&path, (body + "\n").as_bytes())
    }

    /// Copy with timings zeroed: the deterministic core two runs of the
    /// same config + inputs must agree on byte-for-byte.
    pub fn normalized(&self) -> RunManifest {
        let mut m = self.clone();
        for rec in m.stages.values_mut() {
            rec.seconds = 0.0;
        }
        m
    }
}

fn rel_key(path: &Path, out_dir: &Path) -> String {
    path.strip_prefix(out_dir)
        .map(|p| p.display().to_string())
        .unwrap_or_else(|_| path.display().to_string())
}

fn abs_path(key: &str, out_dir: &Path) -> PathBuf {
    let p = Path::new(key);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

/// Hash every file a stage reads (external inputs + upstream artifacts)
/// plus the config itself.
fn stage_input_hashes(stage: Stage, cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    inputs.insert("config".to_string(), cfg.config_sha256());
    let mut files: Vec<PathBuf> = stage_needs(stage, cfg).into_iter().map(|(p, _)| p).collect();
    files.extend(stage_external_inputs(stage, cfg));
    if stage == Stage::Ami && cfg.archetype_truth_path().exists() {
        files.push(cfg.archetype_truth_path());
    }
    for path in files {
        inputs.insert(rel_key(&path, &cfg.out_dir), sha256_file(&path)?);
    }
    Ok(inputs)
}

fn hash_outputs(paths: &[PathBuf], out_dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for p in paths {
        map.insert(rel_key(p, out_dir), sha256_file(p)?);
    }
    Ok(map)
}

fn outputs_still_valid(rec: &StageRecord, out_dir: &Path) -> bool {
    rec.outputs.iter().all(|(key, expected)| {
        let path = abs_path(key, out_dir);
        path.exists() && sha256_file(&path).map(|h| &h == expected).unwrap_or(false)
    })
}

// ----- the driver ------------------------------------------------------------

/// Stages `all` expands to, given what the config makes possible.
fn plan(cfg: &PipelineConfig) -> Vec<Stage> {
    let mut stages = Vec::new();
    let scenario = cfg.scenario.is_some();
    if scenario {
        stages.push(Stage::Synth);
    }
    stages.extend([
        Stage::Preprocess,
        Stage::TrainAe,
        Stage::EmbedCells,
        Stage::TrainAgg,
        Stage::EmbedRegions,
    ]);
    if scenario || cfg.landuse_truth_path().exists() {
        stages.push(Stage::EvalLanduse);
    }
    if scenario || cfg.density_truth_path().exists() {
        stages.push(Stage::EvalDensity);
    }
    stages.push(Stage::Cluster);
    if cfg.slots.len() >= 2 || scenario || cfg.archetype_truth_path().exists() {
        stages.push(Stage::Ami);
    }
    stages.push(Stage::ChooseK);
    stages.push(Stage::Report);
    stages
}

/// Run one stage (or `all`). Re-running a stage whose inputs and outputs
/// are unchanged is a no-op; otherwise it recomputes and re-records.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    if stage == Stage::All {
        let mut manifest = RunManifest::load_or_new(cfg)?;
        for s in plan(cfg) {
            manifest = run_stage(s, cfg)?;
        }
        return Ok(manifest);
    }
    check_dependencies(stage, cfg)?;
    let inputs = stage_input_hashes(stage, cfg)?;
    let mut manifest = RunManifest::load_or_new(cfg)?;
    if let Some(rec) = manifest.stages.get(stage.name()) {
        if rec.inputs == inputs && outputs_still_valid(rec, &cfg.out_dir) {
            log::info!("stage {stage} is up to date; skipping");
            return Ok(manifest);
        }
    }
    log::info!("running stage {stage}");
    let t0 = Instant::now();
    let outputs = execute(stage, cfg)?;
    let seconds = t0.elapsed().as_secs_f64();
    let record = StageRecord {
        inputs,
        outputs: hash_outputs(&outputs, &cfg.out_dir)?,
        seconds,
    };
    manifest.stages.insert(stage.name().to_string(), record);
    manifest.save(cfg)?;
    log::info!("stage {stage} finished in {seconds:.2}s");
    Ok(manifest)
}

/// Preprocessed per-slot payload: normalized per-cell series plus the
/// stats that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessedSlot {
    pub slot: String,
    pub stats: NormStats,
    pub series: Vec<MultivariateSeries>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Artifact {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    write_atomic(path, (body + "\n").as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn load_tessellation(cfg: &PipelineConfig) -> Result<TargetTessellation> {
    TargetTessellation::from_geojson(&cfg.regions_path())
}

fn load_region_embeddings(
    cfg: &PipelineConfig,
    kind: AggregatorKind,
    slot: TimeSlot,
) -> Result<RegionEmbeddings> {
    let provenance: Provenance = read_json(&cfg.provenance_path(kind, slot))?;
    RegionEmbeddings::load_csv(&cfg.region_emb_path(kind, slot), provenance)
}

fn region_weights(tess: &TargetTessellation, region_ids: &[String]) -> Result<Vec<f64>> {
    region_ids
        .iter()
        .map(|id| {
            let i = tess.index_of(id)?;
            Ok(tess.regions()[i].area_m2)
        })
        .collect()
}

fn execute(stage: Stage, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Synth => {
            let name = cfg.scenario.as_ref().expect("checked by dependencies");
            let spec = synth::scenario_spec(name, cfg.seed)?;
            let city = synth::generate_city(&spec)?;
            let dir = cfg.data_dir();
            let manifest = synth::export_city(&city, &dir)?;
            Ok(manifest.files.keys().map(|f| dir.join(f)).collect())
        }
        Stage::Preprocess => {
            let raw = read_traffic_csv(&cfg.traffic_path(), &cfg.traffic_meta_path())?;
            let map = CategoryMap::load(&cfg.categories_path())?;
            let down: Vec<_> = raw
                .iter()
                .map(|ts| downsample_sum(ts, cfg.step_minutes))
                .collect::<Result<_>>()?;
            let cells = aggregate_cells(&down, &map)?;
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                let sliced: Vec<MultivariateSeries> = cells
                    .iter()
                    .map(|mv| slice_time_slot(mv, slot))
                    .collect::<Result<_>>()?;
                let stats = fit_norm_stats(&sliced)?;
                let series: Vec<MultivariateSeries> = sliced
                    .iter()
                    .map(|mv| normalize(mv, &stats))
                    .collect::<Result<_>>()?;
                let path = cfg.preprocessed_path(slot);
                write_json(
                    &path,
                    &PreprocessedSlot {
                        slot: slot.name().to_string(),
                        stats,
                        series,
                    },
                )?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::TrainAe => {
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                let pre: PreprocessedSlot = read_json(&cfg.preprocessed_path(slot))?;
                let channels = pre
                    .series
                    .first()
                    .map(|s| s.n_categories())
                    .ok_or_else(|| Error::Traffic("no preprocessed cells".into()))?;
                let model = train_autoencoder(cfg.tcn_config(channels), &pre.series)?;
                let path = cfg.tcn_path(slot);
                model.save_checkpoint(&path)?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::EmbedCells => {
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                let pre: PreprocessedSlot = read_json(&cfg.preprocessed_path(slot))?;
                let model = TcnAutoencoder::load_checkpoint(&cfg.tcn_path(slot))?;
                let emb = model.embed_all(&pre.series)?;
                let path = cfg.cell_emb_path(slot);
                emb.save_csv(&path)?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::TrainAgg => {
            let grid = MtcGrid::load(&cfg.grid_path())?;
            let tess = load_tessellation(cfg)?;
            let (imap, warnings) = intersect_grid(&grid, &tess);
            for w in &warnings {
                log::warn!("{w}");
            }
            let adj = build_adjacency(&tess);
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                let emb = CellEmbeddings::load_csv(&cfg.cell_emb_path(slot))?;
                let fms = build_feature_matrices(&imap, &emb, cfg.cell_cap, cfg.seed)?;
                for kind in cfg.kinds()? {
                    let model =
                        crate::aggregator::train_aggregator(cfg.agg_config(kind, emb.dim()), &fms, &adj)?;
                    let path = cfg.agg_path(kind, slot);
                    model.save_checkpoint(&path)?;
                    outputs.push(path);
                }
            }
            Ok(outputs)
        }
        Stage::EmbedRegions => {
            let grid = MtcGrid::load(&cfg.grid_path())?;
            let tess = load_tessellation(cfg)?;
            let (imap, _) = intersect_grid(&grid, &tess);
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                let emb = CellEmbeddings::load_csv(&cfg.cell_emb_path(slot))?;
                let fms = build_feature_matrices(&imap, &emb, cfg.cell_cap, cfg.seed)?;
                for kind in cfg.kinds()? {
                    let model = AggregatorModel::load_checkpoint(&cfg.agg_path(kind, slot))?;
                    let regions = crate::aggregator::embed_regions(&model, &fms, slot)?;
                    let csv = cfg.region_emb_path(kind, slot);
                    let prov = cfg.provenance_path(kind, slot);
                    regions.save_csv(&csv)?;
                    regions.save_provenance(&prov)?;
                    outputs.push(csv);
                    outputs.push(prov);
                }
            }
            Ok(outputs)
        }
        Stage::EvalLanduse => {
            let (region_ids, rows) = synth::load_landuse_truth(&cfg.landuse_truth_path())?;
            let labels = LabeledRegions {
                region_ids,
                landuse: Some(rows),
                density: None,
            };
            let slot = cfg.parsed_eval_slot();
            let harness = LanduseEvalConfig {
                repeats: cfg.eval_repeats,
                split: (
                    cfg.landuse_split[0],
                    cfg.landuse_split[1],
                    cfg.landuse_split[2],
                ),
                seed: cfg.seed,
                mlp: MlpConfig {
                    hidden: cfg.mlp_hidden,
                    max_epochs: cfg.mlp_max_epochs,
                    lr: cfg.mlp_lr,
                    patience: cfg.mlp_patience,
                    seed: 0, // replaced per repeat inside the harness
                },
            };
            let mut outputs = Vec::new();
            for kind in cfg.kinds()? {
                let emb = load_region_embeddings(cfg, kind, slot)?;
                let report = eval::landuse_eval(&emb, &labels, &harness)?;
                let path = cfg.landuse_eval_path(kind, slot);
                write_atomic(&path, (report.to_json()? + "\n").as_bytes())?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::EvalDensity => {
            let (region_ids, densities) = synth::load_density_truth(&cfg.density_truth_path())?;
            let labels = LabeledRegions {
                region_ids,
                landuse: None,
                density: Some(densities),
            };
            let slot = cfg.parsed_eval_slot();
            let harness = DensityEvalConfig {
                repeats: cfg.eval_repeats,
                split: (cfg.density_split[0], cfg.density_split[1]),
                seed: cfg.seed,
                forest: ForestConfig {
                    n_trees: cfg.forest_trees,
                    min_samples_split: 2,
                    seed: 0, // replaced per repeat inside the harness
                },
            };
            let mut outputs = Vec::new();
            for kind in cfg.kinds()? {
                let emb = load_region_embeddings(cfg, kind, slot)?;
                let report = eval::density_eval(&emb, &labels, &harness)?;
                let path = cfg.density_eval_path(kind, slot);
                write_atomic(&path, (report.to_json()? + "\n").as_bytes())?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::Cluster => {
            let tess = load_tessellation(cfg)?;
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                for kind in cfg.kinds()? {
                    let emb = load_region_embeddings(cfg, kind, slot)?;
                    let labels = ward::ward_cluster(&emb.matrix, cfg.cluster_k)?;
                    let weights = region_weights(&tess, &emb.region_ids)?;
                    let clustering = WeightedClustering::new(
                        emb.region_ids.clone(),
                        labels,
                        weights,
                        cfg.cluster_k,
                    )?;
                    let csv = cfg.clusters_path(kind, slot);
                    save_clustering_csv(&clustering, &csv)?;
                    let map = cfg.cluster_map_path(kind, slot);
                    emit_cluster_map(&clustering, &tess, &map)?;
                    outputs.push(csv);
                    outputs.push(map);
                }
            }
            Ok(outputs)
        }
        Stage::Ami => {
            let tess = load_tessellation(cfg)?;
            let weight_of: BTreeMap<String, f64> = tess
                .regions()
                .iter()
                .map(|r| (r.id.clone(), r.area_m2))
                .collect();
            let mode = EmiMode::parse(&cfg.ami_mode)?;
            let truth = cfg
                .archetype_truth_path()
                .exists()
                .then(|| synth::load_archetype_truth(&cfg.archetype_truth_path()))
                .transpose()?;
            let slots = cfg.parsed_slots();
            let mut outputs = Vec::new();
            for kind in cfg.kinds()? {
                let clusterings: Vec<(TimeSlot, WeightedClustering)> = slots
                    .iter()
                    .map(|&slot| {
                        load_clustering_csv(&cfg.clusters_path(kind, slot), &weight_of)
                            .map(|c| (slot, c))
                    })
                    .collect::<Result<_>>()?;
                let mut pairs = Vec::new();
                for i in 0..clusterings.len() {
                    for j in (i + 1)..clusterings.len() {
                        let (sa, a) = &clusterings[i];
                        let (sb, b) = &clusterings[j];
                        let ami =
                            adjusted_mutual_information(a, b, mode, cfg.ami_n_perm, cfg.seed)?;
                        pairs.push(json!({
                            "slot_a": sa.name(),
                            "slot_b": sb.name(),
                            "ami": ami,
                        }));
                    }
                }
                let mut vs_truth = Vec::new();
                if let Some(truth) = &truth {
                    for (slot, c) in &clusterings {
                        // align the truth labels to the clustering's order
                        let labels = truth.slot_labels(*slot);
                        let by_id: BTreeMap<&str, usize> = truth
                            .region_ids
                            .iter()
                            .map(|s| s.as_str())
                            .zip(labels.iter().copied())
                            .collect();
                        let aligned: Vec<usize> = c
                            .region_ids
                            .iter()
                            .map(|id| {
                                by_id.get(id.as_str()).copied().ok_or_else(|| {
                                    Error::UnknownRegion {
                                        region_id: id.clone(),
                                    }
                                })
                            })
                            .collect::<Result<_>>()?;
                        let k = aligned.iter().max().map(|m| m + 1).unwrap_or(1);
                        let truth_clustering = WeightedClustering::new(
                            c.region_ids.clone(),
                            aligned,
                            c.weights.clone(),
                            k,
                        )?;
                        let ami = adjusted_mutual_information(
                            c,
                            &truth_clustering,
                            mode,
                            cfg.ami_n_perm,
                            cfg.seed,
                        )?;
                        vs_truth.push(json!({ "slot": slot.name(), "ami": ami }));
                    }
                }
                if pairs.is_empty() && vs_truth.is_empty() {
                    return Err(Error::Eval(
                        "nothing to compare: need ≥2 slots or an archetype truth file".into(),
                    ));
                }
                let path = cfg.ami_path(kind);
                write_json(
                    &path,
                    &json!({
                        "kind": kind.name(),
                        "k": cfg.cluster_k,
                        "mode": mode.name(),
                        "pairwise": pairs,
                        "vs_truth": vs_truth,
                    }),
                )?;
                outputs.push(path);
            }
            Ok(outputs)
        }
        Stage::ChooseK => {
            let mut outputs = Vec::new();
            for slot in cfg.parsed_slots() {
                for kind in cfg.kinds()? {
                    let emb = load_region_embeddings(cfg, kind, slot)?;
                    let report = ward::choose_k(&emb.matrix, &cfg.k_range)?;
                    let path = cfg.choose_k_path(kind, slot);
                    write_json(&path, &report)?;
                    outputs.push(path);
                }
            }
            Ok(outputs)
        }
        Stage::Report => {
            let path = cfg.report_path();
            let body = render_report(cfg)?;
            write_atomic(&path, body.as_bytes())?;
            Ok(vec![path])
        }
        Stage::All => unreachable!("expanded by run_stage"),
    }
}

// ----- cluster maps ----------------------------------------------------------

/// Write the clustering as a GeoJSON `FeatureCollection`: one feature
/// per region with `region_id`, `area_m2`, and `cluster` properties —
/// loadable by any standard GeoJSON viewer.
pub fn emit_cluster_map(
    clustering: &WeightedClustering,
    tess: &TargetTessellation,
    path: &Path,
) -> Result<()> {
    let missing: Vec<&str> = clustering
        .region_ids
        .iter()
        .filter(|id| tess.index_of(id).is_err())
        .map(|s| s.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Tessellation(format!(
            "clustering references regions absent from the tessellation: {}",
            missing.join(", ")
        )));
    }
    let mut extra: BTreeMap<String, BTreeMap<String, serde_json::Value>> = BTreeMap::new();
    for (id, &label) in clustering.region_ids.iter().zip(&clustering.labels) {
        let mut props = BTreeMap::new();
        props.insert("cluster".to_string(), json!(label));
        extra.insert(id.clone(), props);
    }
    let gj = tess.to_geojson_with(&extra);
    let body = serde_json::to_string_pretty(&gj).map_err(|e| Error::Artifact {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    write_atomic(path, (body + "\n").as_bytes())
}

/// Recover `region_id → cluster` from a cluster-map GeoJSON. Features
/// without a `cluster` property are skipped.
pub fn read_cluster_map(path: &Path) -> Result<BTreeMap<String, usize>> {
    let value: serde_json::Value = read_json(path)?;
    let features = value
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::parse(path, "not a GeoJSON FeatureCollection".to_string()))?;
    let mut out = BTreeMap::new();
    for feature in features {
        let props = feature
            .get("properties")
            .and_then(|p| p.as_object())
            .ok_or_else(|| Error::parse(path, "feature without properties".to_string()))?;
        let id = props
            .get("region_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::parse(path, "feature without region_id".to_string()))?;
        if let Some(cluster) = props.get("cluster") {
            let label = cluster.as_u64().ok_or_else(|| {
                Error::parse(path, format!("non-integer cluster for region {id}"))
            })?;
            out.insert(id.to_string(), label as usize);
        }
    }
    Ok(out)
}

// ----- report ----------------------------------------------------------------

fn render_report(cfg: &PipelineConfig) -> Result<String> {
    let manifest = RunManifest::load_or_new(cfg)?;
    let mut out = String::new();
    out.push_str("mtc-regions run report\n");
    out.push_str("======================\n\n");
    out.push_str(&format!("seed:     {}\n", cfg.seed));
    out.push_str(&format!("config:   sha256 {}\n", cfg.config_sha256()));
    if let Some(s) = &cfg.scenario {
        out.push_str(&format!("scenario: {s}\n"));
    }
    out.push_str(&format!(
        "slots:    {}\naggregators: {}\n\n",
        cfg.slots.join(", "),
        cfg.agg_kinds.join(", ")
    ));

    // timings stay out of the report on purpose: the report must be
    // byte-identical across reruns (they live in the manifest instead)
    out.push_str("stages\n------\n");
    for (name, rec) in &manifest.stages {
        out.push_str(&format!("{name:<14} {:>3} outputs\n", rec.outputs.len()));
    }
    out.push('\n');

    let slot = cfg.parsed_eval_slot();
    for kind in cfg.kinds()? {
        for (tag, path) in [
            ("land use", cfg.landuse_eval_path(kind, slot)),
            ("density", cfg.density_eval_path(kind, slot)),
        ] {
            if path.exists() {
                let report: eval::EvalReport = read_json(&path)?;
                out.push_str(&format!("{tag} — {kind}\n"));
                out.push_str(&report.render_text());
                out.push('\n');
            }
        }
        let ami_path = cfg.ami_path(kind);
        if ami_path.exists() {
            let value: serde_json::Value = read_json(&ami_path)?;
            out.push_str(&format!("ami — {kind} (k={})\n", cfg.cluster_k));
            for pair in value["pairwise"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    "  {} vs {}: {:.4}\n",
                    pair["slot_a"].as_str().unwrap_or("?"),
                    pair["slot_b"].as_str().unwrap_or("?"),
                    pair["ami"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            for vt in value["vs_truth"].as_array().into_iter().flatten() {
                out.push_str(&format!(
                    "  {} vs truth: {:.4}\n",
                    vt["slot"].as_str().unwrap_or("?"),
                    vt["ami"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            out.push('\n');
        }
        for slot in cfg.parsed_slots() {
            let ck = cfg.choose_k_path(kind, slot);
            if ck.exists() {
                let report: ward::ChooseKReport = read_json(&ck)?;
                out.push_str(&format!(
                    "choose-k — {kind}, {slot}: suggested k = {} (elbow), {} (silhouette)\n",
                    report.suggested_k, report.silhouette_best_k
                ));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    /// Small-but-complete config against the smoke scenario.
    fn smoke_config(dir: &Path) -> PathBuf {
        write_config(
            dir,
            r#"
out_dir = "run"
seed = 7
scenario = "smoke"
slots = ["full"]
hops = 1
tcn_epochs = 2
tcn_batch_size = 8
agg_epochs = 2
eval_repeats = 2
mlp_hidden = 16
mlp_max_epochs = 5
forest_trees = 5
cluster_k = 2
k_range = [2, 3]
"#,
        )
    }

    #[test]
    fn config_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "out_dir = \"run\"\n");
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("run"));
        assert_eq!(cfg.tcn_embedding_dim, 44);
        assert_eq!(cfg.agg_out_dim, 64);
        assert_eq!(cfg.hops, 2);
        assert_eq!(cfg.margin, 1.0);
        assert_eq!(cfg.agg_lr, 1e-4);
        assert_eq!(cfg.tcn_lr, 1e-3);
        assert_eq!(cfg.eval_repeats, 30);
        assert_eq!(cfg.cluster_k, 4);
        assert_eq!(cfg.slots, vec!["full"]);

        let ov = Overrides {
            seed: Some(9),
            slot: Some("night".into()),
            hops: Some(3),
            margin: Some(0.5),
            k: Some(6),
        };
        let cfg = load_config(&path, &ov).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.slots, vec!["night"]);
        assert_eq!(cfg.eval_slot, "night");
        assert_eq!(cfg.hops, 3);
        assert_eq!(cfg.margin, 0.5);
        assert_eq!(cfg.cluster_k, 6);
    }

    #[test]
    fn config_rejects_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "out_dir = \"r\"\nlanduse_split = [0.5, 0.5]\n",
            "out_dir = \"r\"\nlanduse_split = [0.5, 0.3, 0.1]\n",
            "out_dir = \"r\"\nslots = []\n",
            "out_dir = \"r\"\nslots = [\"brunch\"]\n",
            "out_dir = \"r\"\nslots = [\"night\"]\n", // eval_slot "full" not in slots
            "out_dir = \"r\"\nagg_kinds = [\"perceptron\"]\n",
            "out_dir = \"r\"\nscenario = \"metropolis\"\n",
            "out_dir = \"r\"\nk_range = [1, 2]\n",
            "out_dir = \"r\"\nami_mode = \"bootstrap\"\n",
            "out_dir = \"r\"\neval_repeats = 1\n",
            "out_dir = \"r\"\nnot_a_real_field = 3\n",
        ];
        for body in cases {
            let path = write_config(dir.path(), body);
            assert!(
                load_config(&path, &Overrides::default()).is_err(),
                "config should be rejected: {body}"
            );
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for name in Stage::NAMES {
            assert_eq!(Stage::parse(name).unwrap().name(), name);
        }
        assert!(Stage::parse("sync").is_err());
    }

    #[test]
    fn missing_dependency_names_prior_stage() {
        let dir = tempfile::tempdir().unwrap();
        let path = smoke_config(dir.path());
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        // embed-regions on an empty run dir: the aggregator checkpoint is
        // the first unsatisfied prerequisite
        let err = run_stage(Stage::EmbedRegions, &cfg).unwrap_err();
        match err {
            Error::MissingStage { stage, requires, .. } => {
                assert_eq!(stage, "embed-regions");
                assert_eq!(requires, "train-agg");
            }
            other => panic!("expected MissingStage, got {other:?}"),
        }
        // preprocess before synth (scenario mode): names synth
        let err = run_stage(Stage::Preprocess, &cfg).unwrap_err();
        match err {
            Error::MissingStage { requires, .. } => assert_eq!(requires, "synth"),
            other => panic!("expected MissingStage, got {other:?}"),
        }
    }

    #[test]
    fn cluster_map_round_trip_and_id_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let tess = crate::tessellation::square_tessellation(
            crate::geometry::Point { x: 0.0, y: 0.0 },
            100.0,
            2,
            2,
        )
        .unwrap();
        let ids = tess.ids();
        let clustering = WeightedClustering::new(
            ids.clone(),
            vec![0, 1, 0, 1],
            vec![1.0; 4],
            2,
        )
        .unwrap();
        let path = dir.path().join("map.geojson");
        emit_cluster_map(&clustering, &tess, &path).unwrap();
        let back = read_cluster_map(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(back[id], clustering.labels[i]);
        }

        let stranger = WeightedClustering::new(
            vec!["nowhere".to_string()],
            vec![0],
            vec![1.0],
            1,
        )
        .unwrap();
        let err = emit_cluster_map(&stranger, &tess, &path).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
    }

    #[test]
    fn smoke_pipeline_end_to_end_idempotent_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = smoke_config(dir.path());
        let cfg = load_config(&path, &Overrides::default()).unwrap();
        let manifest = run_stage(Stage::All, &cfg).unwrap();

        // every planned stage ran and left outputs
        for stage in plan(&cfg) {
            assert!(
                manifest.stages.contains_key(stage.name()),
                "missing stage record {stage}"
            );
        }
        let slot = TimeSlot::Full;
        for kind in cfg.kinds().unwrap() {
            assert!(cfg.region_emb_path(kind, slot).exists());
            assert!(cfg.landuse_eval_path(kind, slot).exists());
            assert!(cfg.density_eval_path(kind, slot).exists());
            assert!(cfg.clusters_path(kind, slot).exists());
            assert!(cfg.cluster_map_path(kind, slot).exists());
            assert!(cfg.ami_path(kind).exists());
            assert!(cfg.choose_k_path(kind, slot).exists());
        }
        assert!(cfg.report_path().exists());

        // re-run: outputs unchanged (and stages skipped via the manifest)
        let again = run_stage(Stage::All, &cfg).unwrap();
        assert_eq!(manifest.normalized(), again.normalized());

        // fresh directory, same config/seed: byte-identical artifacts
        let dir2 = tempfile::tempdir().unwrap();
        let path2 = smoke_config(dir2.path());
        let cfg2 = load_config(&path2, &Overrides::default()).unwrap();
        let other = run_stage(Stage::All, &cfg2).unwrap();
        assert_eq!(manifest.normalized().stages, other.normalized().stages);
        for kind in cfg.kinds().unwrap() {
            let a = std::fs::read(cfg.region_emb_path(kind, slot)).unwrap();
            let b = std::fs::read(cfg2.region_emb_path(kind, slot)).unwrap();
            assert_eq!(a, b, "region embeddings differ across runs");
            let a = std::fs::read(cfg.landuse_eval_path(kind, slot)).unwrap();
            let b = std::fs::read(cfg2.landuse_eval_path(kind, slot)).unwrap();
            assert_eq!(a, b, "evaluation JSONs differ across runs");
        }
    }
}
