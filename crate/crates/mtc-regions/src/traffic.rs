//! Traffic data model and preprocessing.
//!
//! Raw input is one volume time series per (grid cell, service). The
//! preprocessing chain is: downsample to a coarser sampling period by
//! summing bins, aggregate services into a small set of categories,
//! apply `log1p` and per-category standardization (statistics fitted on
//! training cells only), and optionally slice out a time-of-day slot.
//! Every step validates its input and refuses silent data loss.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tessellation::{read_text, write_text};

pub const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

// ----- time slots ---------------------------------------------------------

/// Daily time slots (night 00–08, morning 08–16, afternoon 16–24) plus
/// the full day. Slot boundaries are half-open on the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeSlot {
    Night,
    Morning,
    Afternoon,
    Full,
}

impl TimeSlot {
    pub const ALL: [TimeSlot; 4] = [
        TimeSlot::Night,
        TimeSlot::Morning,
        TimeSlot::Afternoon,
        TimeSlot::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TimeSlot::Night => "night",
            TimeSlot::Morning => "morning",
            TimeSlot::Afternoon => "afternoon",
            TimeSlot::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<TimeSlot> {
        match s {
            "night" => Ok(TimeSlot::Night),
            "morning" => Ok(TimeSlot::Morning),
            "afternoon" => Ok(TimeSlot::Afternoon),
            "full" => Ok(TimeSlot::Full),
            other => Err(Error::Config(format!(
                "unknown time slot {other:?} (expected night|morning|afternoon|full)"
            ))),
        }
    }

    pub fn contains_hour(&self, hour: u32) -> bool {
        match self {
            TimeSlot::Night => hour < 8,
            TimeSlot::Morning => (8..16).contains(&hour),
            TimeSlot::Afternoon => (16..24).contains(&hour),
            TimeSlot::Full => hour < 24,
        }
    }
}

impl std::fmt::Display for TimeSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

// ----- raw series ---------------------------------------------------------

/// Volume time series for one (cell, service) pair, sampled on a regular
/// period starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellularTimeSeries {
    pub cell_id: usize,
    pub service_id: String,
    pub start: NaiveDateTime,
    pub step_minutes: u32,
    pub values: Vec<f64>,
}

impl CellularTimeSeries {
    pub fn new(
        cell_id: usize,
        service_id: impl Into<String>,
        start: NaiveDateTime,
        step_minutes: u32,
        values: Vec<f64>,
    ) -> Result<Self> {
        let service_id = service_id.into();
        if service_id.is_empty() {
            return Err(Error::Traffic(format!(
                "cell {cell_id}: empty service id"
            )));
        }
        if step_minutes == 0 {
            return Err(Error::Traffic(format!(
                "cell {cell_id} service {service_id}: zero sampling period"
            )));
        }
        if values.is_empty() {
            return Err(Error::Traffic(format!(
                "cell {cell_id} service {service_id}: empty series"
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Traffic(format!(
                    "cell {cell_id} service {service_id}: bad volume {v} at sample {i}"
                )));
            }
        }
        Ok(CellularTimeSeries {
            cell_id,
            service_id,
            start,
            step_minutes,
            values,
        })
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + chrono::Duration::minutes(self.step_minutes as i64 * i as i64)
    }
}

/// Downsample by summing consecutive bins. The target period must be a
/// positive multiple of the current one and must divide the series
/// length evenly — a trailing partial window is an error, never silently
/// dropped. Total volume is conserved exactly for integer inputs.
pub fn downsample_sum(
    ts: &CellularTimeSeries,
    target_step_minutes: u32,
) -> Result<CellularTimeSeries> {
    if target_step_minutes == 0 || target_step_minutes % ts.step_minutes != 0 {
        return Err(Error::Traffic(format!(
            "cannot downsample from {}min to {}min: not an integer multiple",
            ts.step_minutes, target_step_minutes
        )));
    }
    let factor = (target_step_minutes / ts.step_minutes) as usize;
    if factor == 1 {
        return Ok(ts.clone());
    }
    if ts.values.len() % factor != 0 {
        return Err(Error::Traffic(format!(
            "series length {} not divisible by downsample factor {}",
            ts.values.len(),
            factor
        )));
    }
    let values: Vec<f64> = ts
        .values
        .chunks_exact(factor)
        .map(|w| w.iter().sum())
        .collect();
    Ok(CellularTimeSeries {
        cell_id: ts.cell_id,
        service_id: ts.service_id.clone(),
        start: ts.start,
        step_minutes: target_step_minutes,
        values,
    })
}

// ----- category map -------------------------------------------------------

/// Mapping from service ids to category names, parsed from a plain-text
/// file of `service_id=category` lines. A category of `-` marks the
/// service as deliberately ignored. Category channel order is the order
/// of first appearance in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMap {
    pub categories: Vec<String>,
    map: BTreeMap<String, Option<String>>,
}

impl CategoryMap {
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut categories: Vec<String> = Vec::new();
        let mut map = BTreeMap::new();
        for (svc, cat) in pairs {
            let svc = svc.into();
            let cat = cat.into();
            if svc.is_empty() {
                return Err(Error::Traffic("empty service id in category map".into()));
            }
            let entry = if cat == "-" {
                None
            } else {
                if cat.is_empty() {
                    return Err(Error::Traffic(format!(
                        "service {svc}: empty category name"
                    )));
                }
                if !categories.contains(&cat) {
                    categories.push(cat.clone());
                }
                Some(cat)
            };
            if map.insert(svc.clone(), entry).is_some() {
                return Err(Error::Traffic(format!(
                    "service {svc} mapped twice in category map"
                )));
            }
        }
        if categories.is_empty() {
            return Err(Error::Traffic(
                "category map defines no categories".into(),
            ));
        }
        Ok(CategoryMap { categories, map })
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (svc, cat) = line.split_once('=').ok_or_else(|| {
                Error::parse(origin, format!("line {}: expected service=category", ln + 1))
            })?;
            pairs.push((svc.trim().to_string(), cat.trim().to_string()));
        }
        CategoryMap::from_pairs(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (svc, cat) in &self.map {
            out.push_str(svc);
            out.push('=');
            out.push_str(cat.as_deref().unwrap_or("-"));
            out.push('\n');
        }
        write_text(path, &out)
    }

    /// Category of a service: `Ok(Some)` mapped, `Ok(None)` explicitly
    /// ignored, `Err` unknown.
    pub fn category_of(&self, service_id: &str) -> Result<Option<&str>> {
        self.map
            .get(service_id)
            .map(|c| c.as_deref())
            .ok_or_else(|| Error::UnmappedService {
                service_id: service_id.to_string(),
            })
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

// ----- multivariate per-cell series ----------------------------------------

/// Per-cell multivariate series: one row per category, one column per
/// retained sample. `timestamps` keeps the wall-clock identity of each
/// column so slot slicing stays possible after other transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSeries {
    pub cell_id: usize,
    pub categories: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    /// categories x time
    pub values: Array2Ser,
    pub normalized: bool,
}

/// Minimal serializable wrapper for a 2-d array (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array2Ser {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array2Ser {
    pub fn from_array(a: &Array2<f64>) -> Self {
        Array2Ser {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "array payload {} != {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Shape(e.to_string()))
    }
}

impl MultivariateSeries {
    pub fn n_categories(&self) -> usize {
        self.values.rows
    }

    pub fn n_samples(&self) -> usize {
        self.values.cols
    }

    pub fn array(&self) -> Result<Array2<f64>> {
        self.values.to_array()
    }
}

/// Merge all service series of one cell into a category-by-time matrix.
///
/// All series must belong to the same cell and share start, period, and
/// length. Every service must be mapped or explicitly ignored. A
/// category with no mapped service yields an all-zero row, so the
/// channel layout is always `map.categories`.
pub fn aggregate_categories(
    series: &[CellularTimeSeries],
    map: &CategoryMap,
) -> Result<MultivariateSeries> {
    if series.is_empty() {
        return Err(Error::Traffic("no series to aggregate".into()));
    }
    let first = &series[0];
    let mut seen = BTreeMap::new();
    for ts in series {
        if ts.cell_id != first.cell_id {
            return Err(Error::Traffic(format!(
                "aggregate_categories got cells {} and {}",
                first.cell_id, ts.cell_id
            )));
        }
        if ts.start != first.start
            || ts.step_minutes != first.step_minutes
            || ts.values.len() != first.values.len()
        {
            return Err(Error::Traffic(format!(
                "cell {} service {}: time axis differs from service {}",
                ts.cell_id, ts.service_id, first.service_id
            )));
        }
        if seen.insert(ts.service_id.clone(), ()).is_some() {
            return Err(Error::Traffic(format!(
                "cell {}: duplicate series for service {}",
                ts.cell_id, ts.service_id
            )));
        }
    }
    let t = first.values.len();
    let mut values = Array2::<f64>::zeros((map.categories.len(), t));
    for ts in series {
        match map.category_of(&ts.service_id)? {
            None => continue, // explicitly ignored
            Some(cat) => {
                let row = map
                    .category_index(cat)
                    .expect("category_of returned a known category");
                for (j, v) in ts.values.iter().enumerate() {
                    values[(row, j)] += v;
                }
            }
        }
    }
    let timestamps = (0..t).map(|i| first.timestamp(i)).collect();
    Ok(MultivariateSeries {
        cell_id: first.cell_id,
        categories: map.categories.clone(),
        timestamps,
        values: Array2Ser::from_array(&values),
        normalized: false,
    })
}

/// Group a flat series collection by cell and aggregate each cell.
/// Output is ordered by ascending cell id.
pub fn aggregate_cells(
    series: &[CellularTimeSeries],
    map: &CategoryMap,
) -> Result<Vec<MultivariateSeries>> {
    let mut by_cell: BTreeMap<usize, Vec<&CellularTimeSeries>> = BTreeMap::new();
    for ts in series {
        by_cell.entry(ts.cell_id).or_default().push(ts);
    }
    by_cell
        .values()
        .map(|group| {
            let owned: Vec<CellularTimeSeries> = group.iter().map(|&t| t.clone()).collect();
            aggregate_categories(&owned, map)
        })
        .collect()
}

// ----- normalization --------------------------------------------------------

/// Per-category location/scale of `log1p`-transformed volumes, fitted on
/// training cells. Applying the same stats to held-out cells keeps the
/// feature space consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub categories: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Scale floor: a category whose log-volumes are (numerically) constant
/// gets unit scale instead of a division by ~0.
const STD_FLOOR: f64 = 1e-8;

pub fn fit_norm_stats(cells: &[MultivariateSeries]) -> Result<NormStats> {
    if cells.is_empty() {
        return Err(Error::Traffic("cannot fit stats on zero cells".into()));
    }
    let categories = cells[0].categories.clone();
    for c in cells {
        if c.categories != categories {
            return Err(Error::Traffic(format!(
                "cell {}: category layout differs",
                c.cell_id
            )));
        }
        if c.normalized {
            return Err(Error::Traffic(format!(
                "cell {}: stats must be fitted on raw volumes",
                c.cell_id
            )));
        }
    }
    let k = categories.len();
    let mut sum = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for c in cells {
        let a = c.array()?;
        for (row, s) in sum.iter_mut().enumerate() {
            for v in a.row(row) {
                *s += v.ln_1p();
            }
            count[row] += a.ncols();
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| s / n.max(1) as f64)
        .collect();
    let mut ssq = vec![0.0f64; k];
    for c in cells {
        let a = c.array()?;
        for (row, s) in ssq.iter_mut().enumerate() {
            for v in a.row(row) {
                let d = v.ln_1p() - mean[row];
                *s += d * d;
            }
        }
    }
    let std: Vec<f64> = ssq
        .iter()
        .zip(&count)
        .map(|(s, &n)| {
            let var = s / n.max(1) as f64;
            let sd = var.sqrt();
            if sd < STD_FLOOR { 1.0 } else { sd }
        })
        .collect();
    Ok(NormStats {
        categories,
        mean,
        std,
    })
}

/// `x -> (log1p(x) - mean_c) / std_c` per category.
pub fn normalize(mv: &MultivariateSeries, stats: &NormStats) -> Result<MultivariateSeries> {
    if mv.normalized {
        return Err(Error::Traffic(format!(
            "cell {}: already normalized",
            mv.cell_id
        )));
    }
    if mv.categories != stats.categories {
        return Err(Error::Traffic(format!(
            "cell {}: category layout does not match normalization stats",
            mv.cell_id
        )));
    }
    let mut a = mv.array()?;
    for (row, mut r) in a.rows_mut().into_iter().enumerate() {
        for v in r.iter_mut() {
            *v = (v.ln_1p() - stats.mean[row]) / stats.std[row];
        }
    }
    Ok(MultivariateSeries {
        cell_id: mv.cell_id,
        categories: mv.categories.clone(),
        timestamps: mv.timestamps.clone(),
        values: Array2Ser::from_array(&a),
        normalized: true,
    })
}

/// Inverse of [`normalize`]; tiny negative volumes from floating-point
/// round-off clamp to zero.
pub fn denormalize(mv: &MultivariateSeries, stats: &NormStats) -> Result<MultivariateSeries> {
    if !mv.normalized {
        return Err(Error::Traffic(format!(
            "cell {}: not normalized",
            mv.cell_id
        )));
    }
    if mv.categories != stats.categories {
        return Err(Error::Traffic(format!(
            "cell {}: category layout does not match normalization stats",
            mv.cell_id
        )));
    }
    let mut a = mv.array()?;
    for (row, mut r) in a.rows_mut().into_iter().enumerate() {
        for v in r.iter_mut() {
            *v = (*v * stats.std[row] + stats.mean[row]).exp_m1().max(0.0);
        }
    }
    Ok(MultivariateSeries {
        cell_id: mv.cell_id,
        categories: mv.categories.clone(),
        timestamps: mv.timestamps.clone(),
        values: Array2Ser::from_array(&a),
        normalized: false,
    })
}

/// Keep only the columns whose timestamp falls in `slot`. The three
/// 8-hour slots partition every day, so their slices partition the full
/// series column-for-column.
pub fn slice_time_slot(mv: &MultivariateSeries, slot: TimeSlot) -> Result<MultivariateSeries> {
    let keep: Vec<usize> = mv
        .timestamps
        .iter()
        .enumerate()
        .filter(|(_, ts)| slot.contains_hour(ts.hour()))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::Traffic(format!(
            "cell {}: slot {slot} selects no samples",
            mv.cell_id
        )));
    }
    let a = mv.array()?;
    let mut out = Array2::<f64>::zeros((a.nrows(), keep.len()));
    for (new_j, &old_j) in keep.iter().enumerate() {
        for row in 0..a.nrows() {
            out[(row, new_j)] = a[(row, old_j)];
        }
    }
    Ok(MultivariateSeries {
        cell_id: mv.cell_id,
        categories: mv.categories.clone(),
        timestamps: keep.iter().map(|&i| mv.timestamps[i]).collect(),
        values: Array2Ser::from_array(&out),
        normalized: mv.normalized,
    })
}

// ----- CSV interchange ------------------------------------------------------

/// Sidecar metadata for the traffic CSV: the expected time axis and
/// service inventory, so readers can verify completeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficMeta {
    pub start: String,
    pub step_minutes: u32,
    pub n_samples: usize,
    pub services: Vec<String>,
}

/// Write `cell_id,service_id,timestamp_iso8601,volume` rows sorted by
/// (cell, service, time), plus the sidecar. Output is byte-deterministic.
pub fn write_traffic_csv(
    series: &[CellularTimeSeries],
    csv_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Traffic("refusing to write empty traffic CSV".into()));
    }
    let first = &series[0];
    let mut services: Vec<String> = Vec::new();
    for ts in series {
        if ts.start != first.start
            || ts.step_minutes != first.step_minutes
            || ts.values.len() != first.values.len()
        {
            return Err(Error::Traffic(format!(
                "cell {} service {}: inconsistent time axis in export batch",
                ts.cell_id, ts.service_id
            )));
        }
        if !services.contains(&ts.service_id) {
            services.push(ts.service_id.clone());
        }
    }
    services.sort_unstable();
    let mut order: Vec<&CellularTimeSeries> = series.iter().collect();
    order.sort_by(|a, b| (a.cell_id, &a.service_id).cmp(&(b.cell_id, &b.service_id)));

    let mut out = String::from("cell_id,service_id,timestamp_iso8601,volume\n");
    for ts in order {
        for (i, v) in ts.values.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                ts.cell_id,
                ts.service_id,
                ts.timestamp(i).format(TIMESTAMP_FMT),
                v
            ));
        }
    }
    write_text(csv_path, &out)?;

    let meta = TrafficMeta {
        start: first.start.format(TIMESTAMP_FMT).to_string(),
        step_minutes: first.step_minutes,
        n_samples: first.values.len(),
        services,
    };
    let body = serde_json::to_string_pretty(&meta).map_err(|e| Error::Artifact {
        path: meta_path.display().to_string(),
        detail: e.to_string(),
    })?;
    write_text(meta_path, &(body + "\n"))
}

#[derive(Debug, Deserialize)]
struct TrafficRow {
    cell_id: usize,
    service_id: String,
    timestamp_iso8601: String,
    volume: f64,
}

/// Read a traffic CSV against its sidecar. Every (cell, service) pair in
/// the file must form a complete, regular series on the declared time
/// axis; gaps, duplicates, or stray timestamps are errors.
pub fn read_traffic_csv(csv_path: &Path, meta_path: &Path) -> Result<Vec<CellularTimeSeries>> {
    let meta_text = read_text(meta_path)?;
    let meta: TrafficMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    let start = NaiveDateTime::parse_from_str(&meta.start, TIMESTAMP_FMT)
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    if meta.step_minutes == 0 || meta.n_samples == 0 {
        return Err(Error::parse(
            meta_path.display().to_string(),
            "step_minutes and n_samples must be positive",
        ));
    }

    let path_str = csv_path.display().to_string();
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| Error::parse(path_str.clone(), e.to_string()))?;
    // slot -> values, filled by timestamp arithmetic
    let mut acc: BTreeMap<(usize, String), Vec<Option<f64>>> = BTreeMap::new();
    let step = meta.step_minutes as i64;
    for (ri, row) in reader.deserialize::<TrafficRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path_str.clone(), format!("row {}: {e}", ri + 2)))?;
        let ts = NaiveDateTime::parse_from_str(&row.timestamp_iso8601, TIMESTAMP_FMT)
            .map_err(|e| {
                Error::parse(
                    path_str.clone(),
                    format!("row {}: bad timestamp: {e}", ri + 2),
                )
            })?;
        let minutes = (ts - start).num_minutes();
        if minutes < 0 || minutes % step != 0 {
            return Err(Error::Traffic(format!(
                "cell {} service {}: timestamp {} off the declared {}-minute axis",
                row.cell_id, row.service_id, row.timestamp_iso8601, meta.step_minutes
            )));
        }
        let idx = (minutes / step) as usize;
        if idx >= meta.n_samples {
            return Err(Error::Traffic(format!(
                "cell {} service {}: timestamp {} beyond declared {} samples",
                row.cell_id, row.service_id, row.timestamp_iso8601, meta.n_samples
            )));
        }
        if !meta.services.contains(&row.service_id) {
            return Err(Error::Traffic(format!(
                "service {} not declared in sidecar",
                row.service_id
            )));
        }
        let slots = acc
            .entry((row.cell_id, row.service_id.clone()))
            .or_insert_with(|| vec![None; meta.n_samples]);
        if slots[idx].is_some() {
            return Err(Error::Traffic(format!(
                "cell {} service {}: duplicate sample at {}",
                row.cell_id, row.service_id, row.timestamp_iso8601
            )));
        }
        slots[idx] = Some(row.volume);
    }
    if acc.is_empty() {
        return Err(Error::Traffic(format!("{path_str}: no data rows")));
    }
    let mut out = Vec::with_capacity(acc.len());
    for ((cell_id, service_id), slots) in acc {
        let mut values = Vec::with_capacity(slots.len());
        for (i, v) in slots.into_iter().enumerate() {
            match v {
                Some(v) => values.push(v),
                None => {
                    return Err(Error::Traffic(format!(
                        "cell {cell_id} service {service_id}: missing sample {i}"
                    )))
                }
            }
        }
        out.push(CellularTimeSeries::new(
            cell_id, service_id, start, meta.step_minutes, values,
        )?);
    }
    Ok(out)
}
