//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! context (ids, stage names, file paths) that a failure deep inside a
//! pipeline run still produces an actionable one-line message.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid geometry (degenerate ring, bad rect, malformed polygon).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Tessellation-level validation failure (duplicate ids, overlaps,
    /// zero-area regions, inconsistent area fields).
    #[error("tessellation error: {0}")]
    Tessellation(String),

    /// A region id was referenced that the tessellation does not contain.
    #[error("unknown region {region_id}")]
    UnknownRegion { region_id: String },

    /// A region has no grid cells assigned to it.
    #[error("region {region_id} has no intersecting grid cells")]
    RegionWithoutCells { region_id: String },

    /// A region references a cell that the embedding table lacks.
    #[error("region {region_id}: no embedding for cell {cell_id}")]
    MissingCellEmbedding { region_id: String, cell_id: usize },

    /// Triplet sampling found no admissible positive for an anchor.
    #[error("no positive candidates within {hops} hops of region {region_id}")]
    NoPositiveCandidates { region_id: String, hops: usize },

    /// Triplet sampling found no admissible negative for an anchor.
    #[error("no negative candidates beyond {hops} hops of region {region_id}")]
    NoNegativeCandidates { region_id: String, hops: usize },

    /// Malformed or inconsistent traffic data (irregular spacing,
    /// non-finite volumes, mismatched lengths, bad timestamps).
    #[error("traffic data error: {0}")]
    Traffic(String),

    /// A service id was not present in the category map and the map does
    /// not mark it as ignorable.
    #[error("service {service_id} has no category mapping")]
    UnmappedService { service_id: String },

    /// Invalid model or training configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Numeric failure during training (non-finite loss or gradient).
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// Shape mismatch between tensors, embeddings, or label tables.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Evaluation-specific failure (degenerate split, undefined metric
    /// denominator, label table mismatch).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Synthetic city generation failure (seed placement, bad archetype).
    #[error("synthesis error: {0}")]
    Synth(String),

    /// A pipeline stage was invoked before the stage that produces its
    /// inputs.
    #[error("stage {stage} requires outputs of stage {requires}; run `mtc-regions {requires}` first (missing: {missing})")]
    MissingStage {
        stage: String,
        requires: String,
        missing: String,
    },

    /// Checkpoint or artifact file failed to parse or round-trip.
    #[error("artifact error in {path}: {detail}")]
    Artifact { path: String, detail: String },

    /// Parse failure in an input file (CSV, GeoJSON, TOML, category map).
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an io error with the path it occurred on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wrap a parse failure with the offending path (or origin label).
    pub fn parse(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            detail: detail.into(),
        }
    }

    /// Stable lowercase tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Tessellation(_) => "tessellation",
            Error::UnknownRegion { .. } => "unknown_region",
            Error::RegionWithoutCells { .. } => "region_without_cells",
            Error::MissingCellEmbedding { .. } => "missing_cell_embedding",
            Error::NoPositiveCandidates { .. } => "no_positive_candidates",
            Error::NoNegativeCandidates { .. } => "no_negative_candidates",
            Error::Traffic(_) => "traffic",
            Error::UnmappedService { .. } => "unmapped_service",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Shape(_) => "shape",
            Error::Eval(_) => "eval",
            Error::Synth(_) => "synth",
            Error::MissingStage { .. } => "missing_stage",
            Error::Artifact { .. } => "artifact",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
