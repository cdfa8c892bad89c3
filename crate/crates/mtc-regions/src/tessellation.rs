//! Tessellations: the regular traffic grid and the target regions.
//!
//! Two layers of space exist side by side: the operator's regular grid
//! (`MtcGrid`, row-major square cells) on which traffic is reported, and
//! an irregular target tessellation (`TargetTessellation`) of
//! non-overlapping polygonal regions for which embeddings are produced.
//! This module computes which cells belong to which region (positive
//! overlap area), rook-style region adjacency (shared boundary of
//! positive length, corner contact excluded), hop neighborhoods, and
//! seeded triplet sampling over the adjacency graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{
    intersection_area_multi_rect, multi_area, shared_boundary_length, Point, Polygon, Rect,
    GEOM_EPS,
};

/// Minimum overlap area (m^2) for a cell to count as belonging to a
/// region. Filters out floating-point slivers along shared boundaries.
pub const MIN_INTERSECTION_AREA_M2: f64 = 1e-6;

// ----- regular grid ------------------------------------------------------

/// Regular square grid, row-major cell ids. Row 0 sits at the minimum-y
/// edge; cell `id = row * n_cols + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtcGrid {
    origin_x: f64,
    origin_y: f64,
    cell_size_m: f64,
    n_rows: usize,
    n_cols: usize,
}

impl MtcGrid {
    pub fn new(origin: Point, cell_size_m: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::Geometry(format!(
                "cell size must be positive and finite, got {cell_size_m}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Geometry(format!(
                "grid must have at least one row and column, got {n_rows}x{n_cols}"
            )));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::Geometry("grid origin must be finite".into()));
        }
        Ok(MtcGrid {
            origin_x: origin.x,
            origin_y: origin.y,
            cell_size_m,
            n_rows,
            n_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_id(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.n_rows || col >= self.n_cols {
            return Err(Error::Geometry(format!(
                "cell ({row},{col}) outside {}x{} grid",
                self.n_rows, self.n_cols
            )));
        }
        Ok(row * self.n_cols + col)
    }

    pub fn row_col(&self, cell_id: usize) -> Result<(usize, usize)> {
        if cell_id >= self.n_cells() {
            return Err(Error::Geometry(format!(
                "cell id {cell_id} outside grid with {} cells",
                self.n_cells()
            )));
        }
        Ok((cell_id / self.n_cols, cell_id % self.n_cols))
    }

    pub fn cell_rect(&self, cell_id: usize) -> Result<Rect> {
        let (row, col) = self.row_col(cell_id)?;
        let s = self.cell_size_m;
        Rect::new(
            self.origin_x + col as f64 * s,
            self.origin_y + row as f64 * s,
            self.origin_x + (col + 1) as f64 * s,
            self.origin_y + (row + 1) as f64 * s,
        )
    }

    pub fn cell_center(&self, cell_id: usize) -> Result<Point> {
        Ok(self.cell_rect(cell_id)?.center())
    }

    /// Bounding rect of the whole grid.
    pub fn frame(&self) -> Rect {
        let s = self.cell_size_m;
        Rect {
            min_x: self.origin_x,
            min_y: self.origin_y,
            max_x: self.origin_x + self.n_cols as f64 * s,
            max_y: self.origin_y + self.n_rows as f64 * s,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Artifact {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        write_text(path, &(body + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let grid: MtcGrid = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        // re-run constructor validation on externally supplied values
        MtcGrid::new(
            Point::new(grid.origin_x, grid.origin_y),
            grid.cell_size_m,
            grid.n_rows,
            grid.n_cols,
        )
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::util::write_atomic(path, text.as_bytes())
}

// ----- target tessellation -----------------------------------------------

/// One target region: an id plus a multipolygon footprint.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: String,
    pub polygons: Vec<Polygon>,
    pub area_m2: f64,
}

impl Region {
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Tessellation("region id must be non-empty".into()));
        }
        if polygons.is_empty() {
            return Err(Error::Tessellation(format!(
                "region {id} has no polygons"
            )));
        }
        let area = multi_area(&polygons);
        if !(area.is_finite() && area > GEOM_EPS * GEOM_EPS) {
            return Err(Error::Tessellation(format!(
                "region {id} has non-positive area {area}"
            )));
        }
        Ok(Region {
            id,
            polygons,
            area_m2: area,
        })
    }

    pub fn bbox(&self) -> Rect {
        let mut bb = self.polygons[0].bbox();
        for p in &self.polygons[1..] {
            let b = p.bbox();
            bb.min_x = bb.min_x.min(b.min_x);
            bb.min_y = bb.min_y.min(b.min_y);
            bb.max_x = bb.max_x.max(b.max_x);
            bb.max_y = bb.max_y.max(b.max_y);
        }
        bb
    }
}

/// Set of non-overlapping regions with unique ids. Region order is the
/// canonical order for all derived artifacts.
#[derive(Debug, Clone)]
pub struct TargetTessellation {
    regions: Vec<Region>,
    index: BTreeMap<String, usize>,
}

impl TargetTessellation {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Tessellation("tessellation has no regions".into()));
        }
        let mut index = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Tessellation(format!(
                    "duplicate region id {}",
                    r.id
                )));
            }
        }
        let tess = TargetTessellation { regions, index };
        tess.check_interior_overlaps()?;
        Ok(tess)
    }

    /// Probabilistic overlap check: for every bbox-intersecting pair,
    /// sample points in the shared bbox (fixed seed, so deterministic)
    /// and reject if a non-trivial fraction lands inside both regions.
    /// Catches real overlaps; boundary-sharing regions pass because the
    /// shared set has measure zero.
    fn check_interior_overlaps(&self) -> Result<()> {
        const SAMPLES: usize = 512;
        let bboxes: Vec<Rect> = self.regions.iter().map(|r| r.bbox()).collect();
        for i in 0..self.regions.len() {
            for j in (i + 1)..self.regions.len() {
                let (a, b) = (&bboxes[i], &bboxes[j]);
                let min_x = a.min_x.max(b.min_x);
                let min_y = a.min_y.max(b.min_y);
                let max_x = a.max_x.min(b.max_x);
                let max_y = a.max_y.min(b.max_y);
                if min_x >= max_x || min_y >= max_y {
                    continue;
                }
                // Corner coordinates computed along different arithmetic
                // paths (e.g. `o + 2s` vs `(o + s) + s`) can disagree by
                // an ulp, leaving a sliver-thin shared bbox between
                // regions that merely touch. Sampling inside the sliver
                // would count every point as "in both", so treat any
                // shared bbox thinner than rounding noise as contact.
                let eps_x = 1e-9 * max_x.abs().max(min_x.abs()).max(1.0);
                let eps_y = 1e-9 * max_y.abs().max(min_y.abs()).max(1.0);
                if max_x - min_x <= eps_x || max_y - min_y <= eps_y {
                    continue;
                }
                let mut rng = crate::rng::substream(0, "tess/overlap-check");
                let mut both = 0usize;
                for _ in 0..SAMPLES {
                    let p = Point::new(
                        rng.random_range(min_x..max_x),
                        rng.random_range(min_y..max_y),
                    );
                    if crate::geometry::point_in_multi(p, &self.regions[i].polygons)
                        && crate::geometry::point_in_multi(p, &self.regions[j].polygons)
                    {
                        both += 1;
                    }
                }
                // tolerate a handful of boundary hits, not a real overlap
                if both > SAMPLES / 50 {
                    return Err(Error::Tessellation(format!(
                        "regions {} and {} have overlapping interiors (~{:.1}% of shared bbox)",
                        self.regions[i].id,
                        self.regions[j].id,
                        100.0 * both as f64 / SAMPLES as f64
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index_of(&self, region_id: &str) -> Result<usize> {
        self.index
            .get(region_id)
            .copied()
            .ok_or_else(|| Error::UnknownRegion {
                region_id: region_id.to_string(),
            })
    }

    pub fn ids(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.id.clone()).collect()
    }

    /// Parse a GeoJSON FeatureCollection. Every feature must carry a
    /// string `region_id` property and a Polygon or MultiPolygon
    /// geometry in meters.
    pub fn from_geojson_str(text: &str, origin: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| Error::parse(origin, e.to_string()))?;
        if root["type"] != "FeatureCollection" {
            return Err(Error::parse(origin, "expected a FeatureCollection"));
        }
        let features = root["features"].as_array().ok_or_else(|| {
            Error::parse(origin, "FeatureCollection without a features array")
        })?;
        let mut regions = Vec::with_capacity(features.len());
        for (fi, feat) in features.iter().enumerate() {
            let id = feat["properties"]["region_id"]
                .as_str()
                .ok_or_else(|| {
                    Error::parse(
                        origin,
                        format!("feature {fi} lacks a string region_id property"),
                    )
                })?
                .to_string();
            let geom = &feat["geometry"];
            let polygons = match geom["type"].as_str() {
                Some("Polygon") => {
                    vec![parse_polygon(&geom["coordinates"], origin, &id)?]
                }
                Some("MultiPolygon") => {
                    let parts = geom["coordinates"].as_array().ok_or_else(|| {
                        Error::parse(origin, format!("region {id}: bad MultiPolygon"))
                    })?;
                    parts
                        .iter()
                        .map(|p| parse_polygon(p, origin, &id))
                        .collect::<Result<Vec<_>>>()?
                }
                other => {
                    return Err(Error::parse(
                        origin,
                        format!("region {id}: unsupported geometry type {other:?}"),
                    ))
                }
            };
            regions.push(Region::new(id, polygons)?);
        }
        TargetTessellation::new(regions)
    }

    pub fn from_geojson(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_geojson_str(&text, &path.display().to_string())
    }

    /// Serialize to GeoJSON. `extra` supplies additional per-region
    /// properties (e.g. cluster labels for map exports); keys are merged
    /// into each feature's properties.
    pub fn to_geojson_with(&self, extra: &BTreeMap<String, BTreeMap<String, Value>>) -> Value {
        let features: Vec<Value> = self
            .regions
            .iter()
            .map(|r| {
                let mut props = serde_json::Map::new();
                props.insert("region_id".into(), json!(r.id));
                props.insert("area_m2".into(), json!(r.area_m2));
                if let Some(more) = extra.get(&r.id) {
                    for (k, v) in more {
                        props.insert(k.clone(), v.clone());
                    }
                }
                json!({
                    "type": "Feature",
                    "properties": Value::Object(props),
                    "geometry": {
                        "type": "MultiPolygon",
                        "coordinates": multipolygon_coords(&r.polygons),
                    },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn to_geojson(&self) -> Value {
        self.to_geojson_with(&BTreeMap::new())
    }

    pub fn save_geojson(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(&self.to_geojson()).map_err(|e| {
            Error::Artifact {
                path: path.display().to_string(),
                detail: e.to_string(),
            }
        })?;
        write_text(path, &(body + "\n"))
    }
}

fn parse_polygon(coords: &Value, origin: &str, region_id: &str) -> Result<Polygon> {
    let rings = coords.as_array().ok_or_else(|| {
        Error::parse(origin, format!("region {region_id}: polygon without rings"))
    })?;
    if rings.is_empty() {
        return Err(Error::parse(
            origin,
            format!("region {region_id}: polygon with zero rings"),
        ));
    }
    let mut parsed: Vec<Vec<Point>> = Vec::with_capacity(rings.len());
    for ring in rings {
        let pts = ring.as_array().ok_or_else(|| {
            Error::parse(origin, format!("region {region_id}: ring is not an array"))
        })?;
        let mut out = Vec::with_capacity(pts.len());
        for pt in pts {
            let xy = pt.as_array().filter(|a| a.len() >= 2).ok_or_else(|| {
                Error::parse(origin, format!("region {region_id}: bad coordinate"))
            })?;
            let x = xy[0].as_f64();
            let y = xy[1].as_f64();
            match (x, y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => {
                    out.push(Point::new(x, y))
                }
                _ => {
                    return Err(Error::parse(
                        origin,
                        format!("region {region_id}: non-numeric coordinate"),
                    ))
                }
            }
        }
        parsed.push(out);
    }
    let outer = parsed.remove(0);
    Polygon::new(outer, parsed)
}

fn ring_coords(ring: &[Point]) -> Value {
    let mut pts: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = ring.first() {
        pts.push(json!([first.x, first.y])); // GeoJSON closing duplicate
    }
    Value::Array(pts)
}

fn multipolygon_coords(polys: &[Polygon]) -> Value {
    Value::Array(
        polys
            .iter()
            .map(|p| {
                let mut rings = vec![ring_coords(&p.outer)];
                rings.extend(p.holes.iter().map(|h| ring_coords(h)));
                Value::Array(rings)
            })
            .collect(),
    )
}

// ----- grid/region intersection ------------------------------------------

/// For each region, the sorted grid cell ids whose overlap area with the
/// region exceeds [`MIN_INTERSECTION_AREA_M2`]. Order matches the
/// tessellation's region order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionMap {
    pub region_ids: Vec<String>,
    pub cells: Vec<Vec<usize>>,
}

impl IntersectionMap {
    pub fn cells_of(&self, region_id: &str) -> Result<&[usize]> {
        self.region_ids
            .iter()
            .position(|id| id == region_id)
            .map(|i| self.cells[i].as_slice())
            .ok_or_else(|| Error::UnknownRegion {
                region_id: region_id.to_string(),
            })
    }

    /// Write `region_id,cell_id` rows, regions in canonical order, cells
    /// ascending within each region.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("region_id,cell_id\n");
        for (id, cells) in self.region_ids.iter().zip(&self.cells) {
            for c in cells {
                out.push_str(id);
                out.push(',');
                out.push_str(&c.to_string());
                out.push('\n');
            }
        }
        write_text(path, &out)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("region_id,cell_id") => {}
            other => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("bad header {other:?}"),
                ))
            }
        }
        let mut region_ids: Vec<String> = Vec::new();
        let mut cells: Vec<Vec<usize>> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, cell) = line.split_once(',').ok_or_else(|| {
                Error::parse(path.display().to_string(), format!("line {}: no comma", ln + 2))
            })?;
            let cell: usize = cell.parse().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    format!("line {}: bad cell id {cell:?}", ln + 2),
                )
            })?;
            let idx = *index.entry(id.to_string()).or_insert_with(|| {
                region_ids.push(id.to_string());
                cells.push(Vec::new());
                region_ids.len() - 1
            });
            cells[idx].push(cell);
        }
        for c in &mut cells {
            c.sort_unstable();
            c.dedup();
        }
        Ok(IntersectionMap { region_ids, cells })
    }
}

/// Compute the intersection map between a grid and a tessellation.
///
/// Regions that intersect no cell produce a warning string (they stay in
/// the map with an empty cell list); downstream feature-matrix
/// construction turns that into a hard error.
pub fn intersect_grid(
    grid: &MtcGrid,
    tess: &TargetTessellation,
) -> (IntersectionMap, Vec<String>) {
    let s = grid.cell_size_m();
    let frame = grid.frame();
    let mut region_ids = Vec::with_capacity(tess.len());
    let mut cells = Vec::with_capacity(tess.len());
    let mut warnings = Vec::new();
    for region in tess.regions() {
        let bb = region.bbox();
        // candidate row/col window, clamped to the grid
        let col_lo = (((bb.min_x - frame.min_x) / s).floor().max(0.0)) as usize;
        let row_lo = (((bb.min_y - frame.min_y) / s).floor().max(0.0)) as usize;
        let col_hi = (((bb.max_x - frame.min_x) / s).ceil() as isize)
            .clamp(0, grid.n_cols() as isize) as usize;
        let row_hi = (((bb.max_y - frame.min_y) / s).ceil() as isize)
            .clamp(0, grid.n_rows() as isize) as usize;
        let mut owned = Vec::new();
        for row in row_lo..row_hi {
            for col in col_lo..col_hi {
                let id = row * grid.n_cols() + col;
                let rect = grid.cell_rect(id).expect("window already clamped to grid");
                let a = intersection_area_multi_rect(&region.polygons, &rect);
                if a > MIN_INTERSECTION_AREA_M2 {
                    owned.push(id);
                }
            }
        }
        if owned.is_empty() {
            warnings.push(format!("region {} intersects no grid cells", region.id));
        }
        region_ids.push(region.id.clone());
        cells.push(owned);
    }
    (IntersectionMap { region_ids, cells }, warnings)
}

// ----- adjacency and triplet sampling ------------------------------------

/// Rook-style adjacency over the target regions: two regions are
/// adjacent iff they share boundary of positive length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionAdjacency {
    pub ids: Vec<String>,
    /// Sorted neighbor indices per region, aligned with `ids`.
    pub neighbors: Vec<Vec<usize>>,
}

impl RegionAdjacency {
    pub fn index_of(&self, region_id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|id| id == region_id)
            .ok_or_else(|| Error::UnknownRegion {
                region_id: region_id.to_string(),
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        write_text(path, &(body + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let adj: RegionAdjacency = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        adj.validate()?;
        Ok(adj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.neighbors.len() {
            return Err(Error::Tessellation(
                "adjacency ids and neighbor lists disagree in length".into(),
            ));
        }
        let n = self.ids.len();
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for &j in nbrs {
                if j >= n {
                    return Err(Error::Tessellation(format!(
                        "adjacency neighbor index {j} out of range"
                    )));
                }
                if j == i {
                    return Err(Error::Tessellation(format!(
                        "region {} listed as its own neighbor",
                        self.ids[i]
                    )));
                }
                if !self.neighbors[j].contains(&i) {
                    return Err(Error::Tessellation(format!(
                        "adjacency not symmetric between {} and {}",
                        self.ids[i], self.ids[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// All region indices whose graph distance from `anchor` is in
    /// `1..=hops` (the anchor itself is excluded). Sorted ascending.
    pub fn hop_set(&self, anchor: usize, hops: usize) -> Vec<usize> {
        let mut dist: Vec<Option<usize>> = vec![None; self.ids.len()];
        dist[anchor] = Some(0);
        let mut queue = VecDeque::from([anchor]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            if du == hops {
                continue;
            }
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        (0..self.ids.len())
            .filter(|&i| i != anchor && dist[i].is_some())
            .collect()
    }
}

/// Region ids within `hops` graph steps of `anchor` (excluding the
/// anchor), in ascending region order. `hops` must be at least 1.
pub fn hop_neighbors(
    adj: &RegionAdjacency,
    anchor: &str,
    hops: usize,
) -> Result<Vec<String>> {
    if hops == 0 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    let a = adj.index_of(anchor)?;
    Ok(adj
        .hop_set(a, hops)
        .into_iter()
        .map(|i| adj.ids[i].clone())
        .collect())
}

/// A training triple of region ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

/// Draw a triplet for `anchor`: the positive uniformly from the
/// `hops`-neighborhood, the negative uniformly from the regions strictly
/// farther than `hops` (unreachable regions count as far). Fails if
/// either candidate set is empty.
pub fn sample_triplet<R: Rng>(
    adj: &RegionAdjacency,
    anchor: &str,
    hops: usize,
    rng: &mut R,
) -> Result<Triplet> {
    if hops == 0 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    let a = adj.index_of(anchor)?;
    let near = adj.hop_set(a, hops);
    if near.is_empty() {
        return Err(Error::NoPositiveCandidates {
            region_id: anchor.to_string(),
            hops,
        });
    }
    let near_set: BTreeSet<usize> = near.iter().copied().collect();
    let far: Vec<usize> = (0..adj.ids.len())
        .filter(|&i| i != a && !near_set.contains(&i))
        .collect();
    if far.is_empty() {
        return Err(Error::NoNegativeCandidates {
            region_id: anchor.to_string(),
            hops,
        });
    }
    let p = near[rng.random_range(0..near.len())];
    let n = far[rng.random_range(0..far.len())];
    Ok(Triplet {
        anchor: anchor.to_string(),
        positive: adj.ids[p].clone(),
        negative: adj.ids[n].clone(),
    })
}

/// Build rook-style adjacency from region geometry: adjacent iff the
/// shared boundary has positive length (longer than the geometric
/// tolerance). Corner contact does not count.
pub fn build_adjacency(tess: &TargetTessellation) -> RegionAdjacency {
    let n = tess.len();
    let regions = tess.regions();
    let bboxes: Vec<Rect> = regions.iter().map(|r| r.bbox()).collect();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&bboxes[i], &bboxes[j]);
            if a.min_x > b.max_x + GEOM_EPS
                || b.min_x > a.max_x + GEOM_EPS
                || a.min_y > b.max_y + GEOM_EPS
                || b.min_y > a.max_y + GEOM_EPS
            {
                continue;
            }
            let shared =
                shared_boundary_length(&regions[i].polygons, &regions[j].polygons, GEOM_EPS);
            if shared > GEOM_EPS {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for nbrs in &mut neighbors {
        nbrs.sort_unstable();
    }
    RegionAdjacency {
        ids: tess.ids(),
        neighbors,
    }
}

/// Convenience: a rows x cols checkerboard of square regions with ids
/// `R000`, `R001`, ... in row-major order. Used by tests and demos.
pub fn square_tessellation(
    origin: Point,
    side_m: f64,
    rows: usize,
    cols: usize,
) -> Result<TargetTessellation> {
    let mut regions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = origin.x + c as f64 * side_m;
            let y0 = origin.y + r as f64 * side_m;
            let ring = vec![
                Point::new(x0, y0),
                Point::new(x0 + side_m, y0),
                Point::new(x0 + side_m, y0 + side_m),
                Point::new(x0, y0 + side_m),
            ];
            regions.push(Region::new(
                format!("R{:03}", r * cols + c),
                vec![Polygon::new(ring, vec![])?],
            )?);
        }
    }
    TargetTessellation::new(regions)
}
