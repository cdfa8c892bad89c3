//! Synthetic city generator.
//!
//! Real mobile-traffic corpora are access-restricted, so tests and demos
//! run on generated cities with known ground truth. A city is a Voronoi
//! partition of a grid frame into regions, each assigned an *archetype*
//! (a diurnal traffic personality); per-cell traffic is the archetype's
//! hourly profile scaled by a base volume, a weekend multiplier, and
//! multiplicative lognormal noise. Region labels (land-use mix, density)
//! are seeded functions of the archetype, so embeddings that recover
//! archetypes can predict them — performance on the downstream tasks is
//! bounded away from chance by construction.
//!
//! Everything is a pure function of `(spec, seed)`: each stochastic site
//! draws from its own named substream (`synth/sites`, `synth/anchors`,
//! `synth/traffic/cell{id}`, `synth/landuse/region{idx}`,
//! `synth/density/region{idx}`), so per-cell generation can run in
//! parallel without perturbing any other stream.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{multi_centroid, voronoi_cells, Point, Polygon};
use crate::rng::substream;
use crate::tessellation::{intersect_grid, IntersectionMap, MtcGrid, Region, TargetTessellation};
use crate::traffic::{write_traffic_csv, CategoryMap, CellularTimeSeries, TimeSlot};
use crate::util::{par_map_ordered, sha256_file, write_atomic};

/// All generated series start on this Monday so weekday/weekend behaviour
/// is fixed regardless of the host clock.
pub fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 1, 2)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// A diurnal traffic personality: one 24-hour weight curve per category,
/// a base volume, and a weekend multiplier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// category → 24 non-negative hourly weights, at least one positive.
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub base_volume: f64,
    pub weekend_multiplier: f64,
}

impl Archetype {
    pub fn new(
        name: impl Into<String>,
        profiles: BTreeMap<String, Vec<f64>>,
        base_volume: f64,
        weekend_multiplier: f64,
    ) -> Result<Self> {
        let name = name.into();
        if !(base_volume.is_finite() && base_volume > 0.0) {
            return Err(Error::Synth(format!(
                "archetype {name}: base volume must be positive, got {base_volume}"
            )));
        }
        if !(weekend_multiplier.is_finite() && weekend_multiplier > 0.0) {
            return Err(Error::Synth(format!(
                "archetype {name}: weekend multiplier must be positive, got {weekend_multiplier}"
            )));
        }
        if profiles.is_empty() {
            return Err(Error::Synth(format!("archetype {name}: no profiles")));
        }
        for (cat, prof) in &profiles {
            if prof.len() != 24 {
                return Err(Error::Synth(format!(
                    "archetype {name}, category {cat}: profile has {} entries, expected 24",
                    prof.len()
                )));
            }
            if prof.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Synth(format!(
                    "archetype {name}, category {cat}: profile weights must be finite and non-negative"
                )));
            }
            if prof.iter().all(|w| *w == 0.0) {
                return Err(Error::Synth(format!(
                    "archetype {name}, category {cat}: profile is identically zero"
                )));
            }
        }
        Ok(Archetype {
            name,
            profiles,
            base_volume,
            weekend_multiplier,
        })
    }

    fn categories(&self) -> Vec<String> {
        self.profiles.keys().cloned().collect()
    }
}

/// Ground-truth label parameters attached to one archetype: the land-use
/// mix its regions gravitate towards and the median population density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeLabels {
    /// Mean land-use distribution (simplex over the label categories).
    pub landuse_base: Vec<f64>,
    /// Median density in people/km²; per-region values are lognormal
    /// around it.
    pub density_median: f64,
}

impl ArchetypeLabels {
    fn validate(&self, idx: usize, k: usize) -> Result<()> {
        if self.landuse_base.len() != k {
            return Err(Error::Synth(format!(
                "labels for archetype {idx}: {} land-use entries, expected {k}",
                self.landuse_base.len()
            )));
        }
        if self.landuse_base.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Synth(format!(
                "labels for archetype {idx}: land-use base must be non-negative"
            )));
        }
        let sum: f64 = self.landuse_base.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Synth(format!(
                "labels for archetype {idx}: land-use base sums to {sum}, expected 1"
            )));
        }
        if !(self.density_median.is_finite() && self.density_median > 0.0) {
            return Err(Error::Synth(format!(
                "labels for archetype {idx}: density median must be positive"
            )));
        }
        Ok(())
    }
}

/// Full recipe for one synthetic city.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CitySpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_size_m: f64,
    pub n_regions: usize,
    pub archetypes: Vec<Archetype>,
    /// Parallel to `archetypes`.
    pub labels: Vec<ArchetypeLabels>,
    pub days: usize,
    /// σ of the multiplicative lognormal traffic noise (0 disables noise).
    pub noise_sigma: f64,
    /// σ of the per-region log-space jitter applied to the land-use base.
    pub landuse_jitter: f64,
    /// σ of the per-region lognormal around the archetype density median.
    pub density_sigma: f64,
    /// Per-slot coarsening of archetypes into ground-truth classes:
    /// slot name → (archetype index → class). Missing slots default to
    /// the identity (class = archetype index).
    pub slot_classes: BTreeMap<String, Vec<usize>>,
    pub seed: u64,
}

impl CitySpec {
    /// Category names shared by every archetype, in profile order.
    pub fn categories(&self) -> Vec<String> {
        self.archetypes
            .first()
            .map(|a| a.categories())
            .unwrap_or_default()
    }

    /// Number of land-use label categories.
    pub fn landuse_k(&self) -> usize {
        self.labels.first().map(|l| l.landuse_base.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Synth("grid must have at least one cell".into()));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::Synth(format!(
                "cell size must be positive, got {}",
                self.cell_size_m
            )));
        }
        if self.n_regions < 2 {
            return Err(Error::Synth(format!(
                "need at least 2 regions, got {}",
                self.n_regions
            )));
        }
        if self.days == 0 {
            return Err(Error::Synth("need at least one day of traffic".into()));
        }
        if self.archetypes.len() < 2 {
            return Err(Error::Synth(format!(
                "need at least 2 archetypes, got {}",
                self.archetypes.len()
            )));
        }
        if self.labels.len() != self.archetypes.len() {
            return Err(Error::Synth(format!(
                "{} label sets for {} archetypes",
                self.labels.len(),
                self.archetypes.len()
            )));
        }
        let cats = self.categories();
        for a in &self.archetypes {
            if a.categories() != cats {
                return Err(Error::Synth(format!(
                    "archetype {} does not share the common category set",
                    a.name
                )));
            }
        }
        let k = self.landuse_k();
        if k < 2 {
            return Err(Error::Synth(format!(
                "need at least 2 land-use categories, got {k}"
            )));
        }
        for (i, l) in self.labels.iter().enumerate() {
            l.validate(i, k)?;
        }
        for (slot, classes) in &self.slot_classes {
            TimeSlot::parse(slot)?;
            if classes.len() != self.archetypes.len() {
                return Err(Error::Synth(format!(
                    "slot {slot}: {} class entries for {} archetypes",
                    classes.len(),
                    self.archetypes.len()
                )));
            }
        }
        for (name, sigma) in [
            ("noise_sigma", self.noise_sigma),
            ("landuse_jitter", self.landuse_jitter),
            ("density_sigma", self.density_sigma),
        ] {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::Synth(format!(
                    "{name} must be finite and non-negative, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

/// A generated city: geometry, traffic, and every ground-truth label.
#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub spec: CitySpec,
    pub grid: MtcGrid,
    pub tessellation: TargetTessellation,
    pub intersections: IntersectionMap,
    /// region index → archetype index.
    pub archetype_of: Vec<usize>,
    /// cell index → index of the region containing the cell centre.
    pub cell_region: Vec<usize>,
    /// region index → land-use distribution (simplex).
    pub landuse: Vec<Vec<f64>>,
    /// region index → people/km².
    pub density: Vec<f64>,
    pub cells: Vec<CellularTimeSeries>,
    pub category_map: CategoryMap,
    pub start: NaiveDateTime,
}

impl SyntheticCity {
    /// Ground-truth class per region for one time slot. Slots without an
    /// explicit coarsening in the spec use the archetype index itself.
    pub fn slot_truth(&self, slot: TimeSlot) -> Vec<usize> {
        match self.spec.slot_classes.get(slot.name()) {
            Some(classes) => self.archetype_of.iter().map(|&a| classes[a]).collect(),
            None => self.archetype_of.clone(),
        }
    }
}

/// Draw `n` Voronoi sites in `frame` with a minimum pairwise separation
/// (dart throwing). Separation shrinks a margin inside the frame so no
/// site sits on the boundary.
fn sample_sites<R: Rng>(rng: &mut R, n: usize, frame: &crate::geometry::Rect) -> Result<Vec<Point>> {
    let min_sep = 0.4 * (frame.area() / n as f64).sqrt();
    let margin_x = 0.02 * (frame.max_x - frame.min_x);
    let margin_y = 0.02 * (frame.max_y - frame.min_y);
    let mut sites: Vec<Point> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let max_attempts = 10_000 * n;
    while sites.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Synth(format!(
                "could not place {n} regions with separation {min_sep:.1} m \
                 after {max_attempts} attempts; enlarge the grid or reduce n_regions"
            )));
        }
        let p = Point::new(
            rng.random_range(frame.min_x + margin_x..frame.max_x - margin_x),
            rng.random_range(frame.min_y + margin_y..frame.max_y - margin_y),
        );
        if sites.iter().all(|s| s.dist2(p).sqrt() >= min_sep) {
            sites.push(p);
        }
    }
    Ok(sites)
}

/// Index of the nearest point in `points` (lowest index wins ties).
fn nearest(points: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in points.iter().enumerate() {
        let d = q.dist2(p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Assign every region the archetype of its nearest anchor point,
/// redrawing anchors until every archetype owns at least one region.
/// Nearest-anchor assignment keeps archetypes spatially contiguous, which
/// is what makes hop-based positives informative during training.
fn assign_archetypes<R: Rng>(
    rng: &mut R,
    centroids: &[Point],
    n_archetypes: usize,
    frame: &crate::geometry::Rect,
) -> Result<Vec<usize>> {
    for _ in 0..100 {
        let anchors: Vec<Point> = (0..n_archetypes)
            .map(|_| {
                Point::new(
                    rng.random_range(frame.min_x..frame.max_x),
                    rng.random_range(frame.min_y..frame.max_y),
                )
            })
            .collect();
        let assignment: Vec<usize> = centroids.iter().map(|&c| nearest(&anchors, c)).collect();
        let mut used = vec![false; n_archetypes];
        for &a in &assignment {
            used[a] = true;
        }
        if used.iter().all(|u| *u) {
            return Ok(assignment);
        }
    }
    Err(Error::Synth(format!(
        "could not cover all {n_archetypes} archetypes with {} regions after 100 anchor draws",
        centroids.len()
    )))
}

/// Generate a full city from its spec. Pure function of `(spec, seed)`.
pub fn generate_city(spec: &CitySpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let grid = MtcGrid::new(
        Point::new(0.0, 0.0),
        spec.cell_size_m,
        spec.n_rows,
        spec.n_cols,
    )?;
    let frame = grid.frame();

    let mut site_rng = substream(spec.seed, "synth/sites");
    let sites = sample_sites(&mut site_rng, spec.n_regions, &frame)?;
    let rings = voronoi_cells(&sites, &frame)?;
    let regions: Vec<Region> = rings
        .into_iter()
        .enumerate()
        .map(|(i, ring)| Region::new(format!("R{i:03}"), vec![Polygon::new(ring, vec![])?]))
        .collect::<Result<_>>()?;
    let tessellation = TargetTessellation::new(regions)?;

    let (intersections, _warnings) = intersect_grid(&grid, &tessellation);
    for region in tessellation.regions() {
        if intersections.cells_of(&region.id)?.is_empty() {
            return Err(Error::RegionWithoutCells {
                region_id: region.id.clone(),
            });
        }
    }

    let centroids: Vec<Point> = tessellation
        .regions()
        .iter()
        .map(|r| multi_centroid(&r.polygons))
        .collect();
    let mut anchor_rng = substream(spec.seed, "synth/anchors");
    let archetype_of =
        assign_archetypes(&mut anchor_rng, &centroids, spec.archetypes.len(), &frame)?;

    let landuse_k = spec.landuse_k();
    let mut landuse = Vec::with_capacity(spec.n_regions);
    let mut density = Vec::with_capacity(spec.n_regions);
    for (idx, &a) in archetype_of.iter().enumerate() {
        let labels = &spec.labels[a];
        let mut lu_rng = substream(spec.seed, &format!("synth/landuse/region{idx}"));
        let mut p: Vec<f64> = (0..landuse_k)
            .map(|j| {
                let z: f64 = StandardNormal.sample(&mut lu_rng);
                labels.landuse_base[j] * (spec.landuse_jitter * z).exp()
            })
            .collect();
        let sum: f64 = p.iter().sum();
        for v in &mut p {
            *v /= sum;
        }
        landuse.push(p);

        let mut d_rng = substream(spec.seed, &format!("synth/density/region{idx}"));
        let z: f64 = StandardNormal.sample(&mut d_rng);
        density.push(labels.density_median * (spec.density_sigma * z).exp());
    }

    // Per-cell traffic: each cell inherits the archetype of the Voronoi
    // region containing its centre (= nearest site). One noise draw per
    // (cell, hour), shared across categories, so the category mix within
    // an hour stays noise-free.
    let start = default_start();
    let categories = spec.categories();
    let n_hours = spec.days * 24;
    let cell_ids: Vec<usize> = (0..grid.n_cells()).collect();
    let cell_region: Vec<usize> = cell_ids
        .iter()
        .map(|&cid| Ok(nearest(&sites, grid.cell_center(cid)?)))
        .collect::<Result<_>>()?;
    let per_cell: Vec<Result<Vec<CellularTimeSeries>>> = par_map_ordered(&cell_ids, |&cell_id| {
        let arch = &spec.archetypes[archetype_of[cell_region[cell_id]]];
        let noise: Vec<f64> = if spec.noise_sigma > 0.0 {
            let mut rng = substream(spec.seed, &format!("synth/traffic/cell{cell_id}"));
            (0..n_hours)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (spec.noise_sigma * z).exp()
                })
                .collect()
        } else {
            vec![1.0; n_hours]
        };
        let mut series = Vec::with_capacity(categories.len());
        for cat in &categories {
            let profile = &arch.profiles[cat];
            let values: Vec<f64> = (0..n_hours)
                .map(|t| {
                    let at = start + chrono::Duration::hours(t as i64);
                    let weekend = matches!(at.weekday(), Weekday::Sat | Weekday::Sun);
                    let mult = if weekend { arch.weekend_multiplier } else { 1.0 };
                    arch.base_volume * profile[(t % 24) as usize] * mult * noise[t]
                })
                .collect();
            series.push(CellularTimeSeries::new(
                cell_id,
                cat.clone(),
                start,
                60,
                values,
            )?);
        }
        Ok(series)
    });
    let mut cells = Vec::with_capacity(grid.n_cells() * categories.len());
    for group in per_cell {
        cells.extend(group?);
    }

    let category_map = CategoryMap::from_pairs(
        categories
            .iter()
            .map(|c| (c.as_str(), c.as_str()))
            .collect::<Vec<_>>(),
    )?;

    Ok(SyntheticCity {
        spec: spec.clone(),
        grid,
        tessellation,
        intersections,
        archetype_of,
        cell_region,
        landuse,
        density,
        cells,
        category_map,
        start,
    })
}

/// What `export_city` wrote: every file name with its SHA-256, plus
/// enough spec echo to interpret the artifacts without the spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportManifest {
    pub seed: u64,
    pub days: usize,
    pub noise_sigma: f64,
    pub n_regions: usize,
    pub categories: Vec<String>,
    pub landuse_k: usize,
    /// file name → SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

/// File names used by `export_city`, in one place so the pipeline and the
/// tests cannot drift apart.
pub mod files {
    pub const TRAFFIC: &str = "traffic.csv";
    pub const TRAFFIC_META: &str = "traffic_meta.json";
    pub const GRID: &str = "grid.json";
    pub const REGIONS: &str = "regions.geojson";
    pub const CATEGORIES: &str = "categories.map";
    pub const LANDUSE: &str = "landuse_truth.csv";
    pub const DENSITY: &str = "density_truth.csv";
    pub const ARCHETYPES: &str = "archetype_truth.csv";
    pub const MANIFEST: &str = "manifest.json";
}

/// Write every interchange artifact of a city into `dir` and return the
/// manifest (also written as `manifest.json`). Deterministic given the
/// city; all writes are atomic.
pub fn export_city(city: &SyntheticCity, dir: &Path) -> Result<ExportManifest> {
    let traffic_path = dir.join(files::TRAFFIC);
    write_traffic_csv(&city.cells, &traffic_path, &dir.join(files::TRAFFIC_META))?;
    city.grid.save(&dir.join(files::GRID))?;
    city.tessellation.save_geojson(&dir.join(files::REGIONS))?;
    city.category_map.save(&dir.join(files::CATEGORIES))?;

    let k = city.spec.landuse_k();
    let mut landuse_csv = String::from("region_id");
    for j in 1..=k {
        landuse_csv.push_str(&format!(",cat_{j}"));
    }
    landuse_csv.push('\n');
    for (region, dist) in city.tessellation.regions().iter().zip(&city.landuse) {
        landuse_csv.push_str(&region.id);
        for v in dist {
            landuse_csv.push_str(&format!(",{v}"));
        }
        landuse_csv.push('\n');
    }
    write_atomic(&dir.join(files::LANDUSE), landuse_csv.as_bytes())?;

    let mut density_csv = String::from("region_id,people_per_km2\n");
    for (region, d) in city.tessellation.regions().iter().zip(&city.density) {
        density_csv.push_str(&format!("{},{}\n", region.id, d));
    }
    write_atomic(&dir.join(files::DENSITY), density_csv.as_bytes())?;

    let night = city.slot_truth(TimeSlot::Night);
    let morning = city.slot_truth(TimeSlot::Morning);
    let afternoon = city.slot_truth(TimeSlot::Afternoon);
    let mut arch_csv = String::from(
        "region_id,archetype_index,archetype_name,night_class,morning_class,afternoon_class\n",
    );
    for (idx, region) in city.tessellation.regions().iter().enumerate() {
        let a = city.archetype_of[idx];
        arch_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            region.id,
            a,
            city.spec.archetypes[a].name,
            night[idx],
            morning[idx],
            afternoon[idx]
        ));
    }
    write_atomic(&dir.join(files::ARCHETYPES), arch_csv.as_bytes())?;

    let names = [
        files::TRAFFIC,
        files::TRAFFIC_META,
        files::GRID,
        files::REGIONS,
        files::CATEGORIES,
        files::LANDUSE,
        files::DENSITY,
        files::ARCHETYPES,
    ];
    let mut hashes = BTreeMap::new();
    for name in names {
        hashes.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = ExportManifest {
        seed: city.spec.seed,
        days: city.spec.days,
        noise_sigma: city.spec.noise_sigma,
        n_regions: city.spec.n_regions,
        categories: city.spec.categories(),
        landuse_k: k,
        files: hashes,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Artifact {
            path: dir.join(files::MANIFEST).display().to_string(),
            detail: e.to_string(),
        })?;
    write_atomic(&dir.join(files::MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

/// Read `landuse_truth.csv`: region ids plus one simplex row per region.
pub fn load_landuse_truth(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty land-use truth file"))?;
    if !header.starts_with("region_id,cat_1") {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    let k = header.split(',').count() - 1;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| Error::parse(path, format!("line {}: empty row", ln + 2)))?;
        let dist: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", ln + 2)))
            })
            .collect::<Result<_>>()?;
        if dist.len() != k {
            return Err(Error::parse(
                path,
                format!("line {}: {} values, expected {k}", ln + 2, dist.len()),
            ));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::parse(
                path,
                format!("line {}: distribution sums to {sum}", ln + 2),
            ));
        }
        ids.push(id.to_string());
        rows.push(dist);
    }
    Ok((ids, rows))
}

/// Read `density_truth.csv`: region ids plus people/km².
pub fn load_density_truth(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty density truth file"))?;
    if header != "region_id,people_per_km2" {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (ln, line) in lines.enumerate() {
        let (id, v) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, format!("line {}: expected 2 columns", ln + 2)))?;
        let d: f64 = v
            .parse()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", ln + 2)))?;
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::parse(
                path,
                format!("line {}: density must be non-negative, got {d}", ln + 2),
            ));
        }
        ids.push(id.to_string());
        vals.push(d);
    }
    Ok((ids, vals))
}

/// Parsed `archetype_truth.csv`.
#[derive(Debug, Clone)]
pub struct ArchetypeTruth {
    pub region_ids: Vec<String>,
    pub archetype: Vec<usize>,
    pub names: Vec<String>,
    pub night: Vec<usize>,
    pub morning: Vec<usize>,
    pub afternoon: Vec<usize>,
}

impl ArchetypeTruth {
    /// Ground-truth class labels for one slot (full day = archetype).
    pub fn slot_labels(&self, slot: TimeSlot) -> &[usize] {
        match slot {
            TimeSlot::Night => &self.night,
            TimeSlot::Morning => &self.morning,
            TimeSlot::Afternoon => &self.afternoon,
            TimeSlot::Full => &self.archetype,
        }
    }
}

/// Read `archetype_truth.csv`.
pub fn load_archetype_truth(path: &Path) -> Result<ArchetypeTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty archetype truth file"))?;
    let expected =
        "region_id,archetype_index,archetype_name,night_class,morning_class,afternoon_class";
    if header != expected {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    let mut truth = ArchetypeTruth {
        region_ids: Vec::new(),
        archetype: Vec::new(),
        names: Vec::new(),
        night: Vec::new(),
        morning: Vec::new(),
        afternoon: Vec::new(),
    };
    for (ln, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 6 columns, got {}", ln + 2, parts.len()),
            ));
        }
        let idx = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", ln + 2)))
        };
        truth.region_ids.push(parts[0].to_string());
        truth.archetype.push(idx(parts[1])?);
        truth.names.push(parts[2].to_string());
        truth.night.push(idx(parts[3])?);
        truth.morning.push(idx(parts[4])?);
        truth.afternoon.push(idx(parts[5])?);
    }
    Ok(truth)
}

/// Gaussian bump on the 24-hour circle, used to shape diurnal profiles.
fn bump(hour: usize, center: f64, width: f64) -> f64 {
    let h = hour as f64;
    let d = (h - center).abs().min(24.0 - (h - center).abs());
    (-0.5 * (d / width).powi(2)).exp()
}

fn profile(f: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..24).map(f).collect()
}

const CATEGORIES: [&str; 4] = ["Gaming", "Social", "Streaming", "Work"];

fn diurnal4_archetypes() -> Result<(Vec<Archetype>, Vec<ArchetypeLabels>)> {
    let mk = |name: &str,
              base: f64,
              weekend: f64,
              gaming: Vec<f64>,
              social: Vec<f64>,
              streaming: Vec<f64>,
              work: Vec<f64>| {
        let mut profiles = BTreeMap::new();
        profiles.insert("Gaming".into(), gaming);
        profiles.insert("Social".into(), social);
        profiles.insert("Streaming".into(), streaming);
        profiles.insert("Work".into(), work);
        Archetype::new(name, profiles, base, weekend)
    };
    let archetypes = vec![
        mk(
            "residential",
            120.0,
            1.3,
            profile(|h| 0.30 + 1.2 * bump(h, 21.0, 2.0)),
            profile(|h| 0.50 + 1.0 * bump(h, 20.0, 3.0) + 0.3 * bump(h, 8.0, 2.0)),
            profile(|h| 0.40 + 1.8 * bump(h, 21.0, 3.0)),
            profile(|h| 0.15 + 0.1 * bump(h, 10.0, 3.0)),
        )?,
        mk(
            "office",
            150.0,
            0.4,
            profile(|h| 0.05 + 0.05 * bump(h, 13.0, 2.0)),
            profile(|h| 0.30 + 0.8 * bump(h, 12.0, 1.5)),
            profile(|h| 0.15 + 0.3 * bump(h, 13.0, 2.0)),
            profile(|h| 0.20 + 2.2 * bump(h, 10.0, 2.0) + 2.0 * bump(h, 15.0, 2.0)),
        )?,
        mk(
            "nightlife",
            100.0,
            1.6,
            profile(|h| 0.30 + 1.0 * bump(h, 0.0, 3.0)),
            profile(|h| 0.40 + 2.0 * bump(h, 23.0, 2.0) + 1.2 * bump(h, 1.0, 2.0)),
            profile(|h| 0.30 + 0.8 * bump(h, 22.0, 3.0)),
            profile(|h| 0.10 + 0.15 * bump(h, 11.0, 3.0)),
        )?,
        mk(
            "park",
            40.0,
            1.8,
            profile(|h| 0.10 + 0.2 * bump(h, 16.0, 4.0)),
            profile(|h| 0.20 + 0.6 * bump(h, 15.0, 4.0)),
            profile(|h| 0.10 + 0.25 * bump(h, 16.0, 4.0)),
            profile(|h| 0.08 + 0.05 * bump(h, 12.0, 4.0)),
        )?,
    ];
    let labels = vec![
        ArchetypeLabels {
            landuse_base: vec![0.70, 0.15, 0.10, 0.05],
            density_median: 12_000.0,
        },
        ArchetypeLabels {
            landuse_base: vec![0.15, 0.70, 0.10, 0.05],
            density_median: 3_500.0,
        },
        ArchetypeLabels {
            landuse_base: vec![0.25, 0.20, 0.50, 0.05],
            density_median: 8_000.0,
        },
        ArchetypeLabels {
            landuse_base: vec![0.10, 0.05, 0.10, 0.75],
            density_median: 800.0,
        },
    ];
    Ok((archetypes, labels))
}

/// 16 archetypes combining 4 night personalities with 4 day personalities:
/// archetype `a` is dominated by category `a / 4` during the night slot and
/// by category `a % 4` during morning and afternoon. Per-slot clusterings
/// should therefore recover different partitions.
fn slotfactors16_archetypes() -> Result<(Vec<Archetype>, Vec<ArchetypeLabels>)> {
    let mut archetypes = Vec::with_capacity(16);
    let mut labels = Vec::with_capacity(16);
    for a in 0..16usize {
        let night_cat = a / 4;
        let day_cat = a % 4;
        let mut profiles = BTreeMap::new();
        for (c, cat) in CATEGORIES.iter().enumerate() {
            let prof = profile(|h| {
                if h < 8 {
                    if c == night_cat {
                        2.5 + 0.5 * (std::f64::consts::PI * h as f64 / 8.0).sin()
                    } else {
                        0.25
                    }
                } else if h < 16 {
                    if c == day_cat {
                        2.5 + 0.5 * (std::f64::consts::PI * (h - 8) as f64 / 8.0).sin()
                    } else {
                        0.25
                    }
                } else if c == day_cat {
                    2.0 + 0.4 * (std::f64::consts::PI * (h - 16) as f64 / 8.0).sin()
                } else {
                    0.30
                }
            });
            profiles.insert((*cat).to_string(), prof);
        }
        archetypes.push(Archetype::new(
            format!("night{night_cat}_day{day_cat}"),
            profiles,
            100.0,
            1.0,
        )?);
        let mut base = vec![0.1; 4];
        base[day_cat] = 0.7;
        labels.push(ArchetypeLabels {
            landuse_base: base,
            density_median: [2_000.0, 6_000.0, 10_000.0, 15_000.0][night_cat],
        });
    }
    Ok((archetypes, labels))
}

/// Named builtin scenarios.
///
/// * `"diurnal4"` — 16×16 grid, 32 regions, the four classic diurnal
///   archetypes, 14 days, noise σ=0.2.
/// * `"slotfactors16"` — same geometry, 16 slot-factorized archetypes
///   whose night and day personalities vary independently.
pub fn scenario_spec(name: &str, seed: u64) -> Result<CitySpec> {
    match name {
        "diurnal4" => {
            let (archetypes, labels) = diurnal4_archetypes()?;
            Ok(CitySpec {
                n_rows: 16,
                n_cols: 16,
                cell_size_m: 100.0,
                n_regions: 32,
                archetypes,
                labels,
                days: 14,
                noise_sigma: 0.2,
                landuse_jitter: 0.1,
                density_sigma: 0.2,
                slot_classes: BTreeMap::new(),
                seed,
            })
        }
        "slotfactors16" => {
            let (archetypes, labels) = slotfactors16_archetypes()?;
            let mut slot_classes = BTreeMap::new();
            let night: Vec<usize> = (0..16).map(|a| a / 4).collect();
            let day: Vec<usize> = (0..16).map(|a| a % 4).collect();
            slot_classes.insert("night".to_string(), night);
            slot_classes.insert("morning".to_string(), day.clone());
            slot_classes.insert("afternoon".to_string(), day);
            Ok(CitySpec {
                n_rows: 16,
                n_cols: 16,
                cell_size_m: 100.0,
                n_regions: 32,
                archetypes,
                labels,
                days: 14,
                noise_sigma: 0.2,
                landuse_jitter: 0.1,
                density_sigma: 0.2,
                slot_classes,
                seed,
            })
        }
        // scaled-down diurnal city for fast end-to-end checks of the
        // pipeline wiring; not meant for drawing conclusions (pair with
        // hops=1 — two hops span most of a 9-region map, starving the
        // triplet sampler of negatives)
        "smoke" => {
            let (archetypes, labels) = diurnal4_archetypes()?;
            Ok(CitySpec {
                n_rows: 8,
                n_cols: 8,
                cell_size_m: 100.0,
                n_regions: 9,
                archetypes,
                labels,
                days: 3,
                noise_sigma: 0.1,
                landuse_jitter: 0.1,
                density_sigma: 0.1,
                slot_classes: BTreeMap::new(),
                seed,
            })
        }
        other => Err(Error::Config(format!(
            "unknown scenario {other:?}; available: diurnal4, slotfactors16, smoke"
        ))),
    }
}
