//! Hexagonal tessellation of a service area, DBSCAN core filtering and
//! road-network distances between cells.
//!
//! Coordinates are planar and in meters. Hexagons are pointy-top; the
//! lattice is anchored at the center of the polygon's bounding box, so a
//! polygon that is symmetric about its center always has a cell there.
//! Cell ids are assigned row by row (south to north, then west to east).

use std::collections::HashMap;
use std::path::Path;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &GeoPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &GeoPoint) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn mean(points: impl IntoIterator<Item = GeoPoint>) -> Option<GeoPoint> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for p in points {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
        (n > 0).then(|| GeoPoint::new(sx / n as f64, sy / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub id: usize,
    pub center: GeoPoint,
    pub side: f64,
    /// Axial lattice coordinates `(q, r)`.
    pub axial: (i32, i32),
    pub neighbor_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HexGrid {
    pub cells: Vec<HexCell>,
    pub service_polygon: Vec<GeoPoint>,
    side: f64,
    origin: GeoPoint,
    by_id: HashMap<usize, usize>,
    by_axial: HashMap<(i32, i32), usize>,
}

const AXIAL_DIRS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Signed shoelace area.
pub fn polygon_area(poly: &[GeoPoint]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: &GeoPoint, poly: &[GeoPoint]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn bounding_box(poly: &[GeoPoint]) -> (GeoPoint, GeoPoint) {
    let mut lo = GeoPoint::new(f64::INFINITY, f64::INFINITY);
    let mut hi = GeoPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

/// Drops a closing vertex equal to the first one.
fn open_ring(poly: &[GeoPoint]) -> Vec<GeoPoint> {
    let mut ring = poly.to_vec();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn axial_center(origin: GeoPoint, side: f64, q: i32, r: i32) -> GeoPoint {
    GeoPoint::new(
        origin.x + SQRT3 * side * (q as f64 + r as f64 / 2.0),
        origin.y + 1.5 * side * r as f64,
    )
}

/// Covers `polygon` with pointy-top hexagons of the given side length and
/// keeps those whose center lies inside the polygon.
pub fn tessellate(polygon: &[GeoPoint], side: f64) -> Result<HexGrid> {
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::invalid(format!("hexagon side must be positive, got {side}")));
    }
    let ring = open_ring(polygon);
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("polygon has non-finite coordinates"));
    }
    if polygon_area(&ring).abs() <= f64::EPSILON {
        return Err(Error::EmptyServiceArea);
    }
    let (lo, hi) = bounding_box(&ring);
    let origin = GeoPoint::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);

    let r_min = ((lo.y - origin.y) / (1.5 * side)).floor() as i32 - 1;
    let r_max = ((hi.y - origin.y) / (1.5 * side)).ceil() as i32 + 1;
    let mut axials = Vec::new();
    for r in r_min..=r_max {
        let shift = r as f64 / 2.0;
        let q_min = ((lo.x - origin.x) / (SQRT3 * side) - shift).floor() as i32 - 1;
        let q_max = ((hi.x - origin.x) / (SQRT3 * side) - shift).ceil() as i32 + 1;
        for q in q_min..=q_max {
            let c = axial_center(origin, side, q, r);
            if point_in_polygon(&c, &ring) {
                axials.push((q, r));
            }
        }
    }
    let cells = axials
        .iter()
        .enumerate()
        .map(|(id, &(q, r))| HexCell {
            id,
            center: axial_center(origin, side, q, r),
            side,
            axial: (q, r),
            neighbor_ids: Vec::new(),
        })
        .collect();
    Ok(HexGrid::assemble(cells, ring, side, origin))
}

impl HexGrid {
    fn assemble(mut cells: Vec<HexCell>, polygon: Vec<GeoPoint>, side: f64, origin: GeoPoint) -> Self {
        let by_axial: HashMap<(i32, i32), usize> =
            cells.iter().enumerate().map(|(k, c)| (c.axial, k)).collect();
        let ids: Vec<usize> = cells.iter().map(|c| c.id).collect();
        for cell in cells.iter_mut() {
            let (q, r) = cell.axial;
            cell.neighbor_ids = AXIAL_DIRS
                .iter()
                .filter_map(|(dq, dr)| by_axial.get(&(q + dq, r + dr)).map(|&k| ids[k]))
                .collect();
            cell.neighbor_ids.sort_unstable();
        }
        let by_id = cells.iter().enumerate().map(|(k, c)| (c.id, k)).collect();
        HexGrid { cells, service_polygon: polygon, side, origin, by_id, by_axial }
    }

    /// Grid from explicit cells; neighbor links are rebuilt from the axial
    /// coordinates.
    pub fn from_cells(cells: Vec<HexCell>, polygon: Vec<GeoPoint>, side: f64, origin: GeoPoint) -> Self {
        Self::assemble(cells, polygon, side, origin)
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn cell(&self, id: usize) -> Option<&HexCell> {
        self.index_of(id).map(|k| &self.cells[k])
    }

    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        self.cell(a).is_some_and(|c| c.neighbor_ids.binary_search(&b).is_ok())
    }

    /// Id of the grid cell whose hexagon contains `p`, if that cell exists.
    pub fn cell_at(&self, p: &GeoPoint) -> Option<usize> {
        let x = (p.x - self.origin.x) / self.side;
        let y = (p.y - self.origin.y) / self.side;
        let r = 2.0 / 3.0 * y;
        let q = x / SQRT3 - r / 2.0;
        let s = -q - r;
        let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
        let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
        if dq > dr && dq > ds {
            rq = -rr - rs;
        } else if dr > ds {
            rr = -rq - rs;
        }
        self.by_axial.get(&(rq as i32, rr as i32)).map(|&k| self.cells[k].id)
    }

    /// Sub-grid holding the given cells. Ids are preserved and neighbor
    /// links are restricted to the kept cells.
    pub fn subset(&self, ids: &[usize]) -> Result<HexGrid> {
        let mut cells = Vec::with_capacity(ids.len());
        for &id in ids {
            let cell = self.cell(id).ok_or_else(|| Error::invalid(format!("unknown cell id {id}")))?;
            cells.push(cell.clone());
        }
        cells.sort_by_key(|c| c.id);
        cells.dedup_by_key(|c| c.id);
        Ok(HexGrid::assemble(cells, self.service_polygon.clone(), self.side, self.origin))
    }

    pub fn centers(&self) -> Vec<GeoPoint> {
        self.cells.iter().map(|c| c.center).collect()
    }

    /// `cell_id,center_x,center_y,neighbor_ids`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_id", "center_x", "center_y", "neighbor_ids"])?;
        for c in &self.cells {
            let nb: Vec<String> = c.neighbor_ids.iter().map(|n| n.to_string()).collect();
            w.write_record([c.id.to_string(), c.center.x.to_string(), c.center.y.to_string(), nb.join(";")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanResult {
    /// Cluster label per point, `-1` for noise.
    pub labels: Vec<i32>,
    /// Label of the largest cluster (lowest label on ties); `None` when
    /// every point is noise.
    pub core_label: Option<i32>,
}

impl DbscanResult {
    pub fn members(&self, label: i32) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(k, _)| k).collect()
    }
}

/// Classic DBSCAN with brute-force neighborhoods. A point's neighborhood
/// includes the point itself.
pub fn dbscan_filter(points: &[GeoPoint], eps: f64, min_pts: usize) -> Result<DbscanResult> {
    if points.is_empty() {
        return Err(Error::invalid("dbscan needs at least one point"));
    }
    if !(eps > 0.0) || min_pts < 1 {
        return Err(Error::invalid("dbscan requires eps > 0 and min_pts >= 1"));
    }
    let eps2 = eps * eps;
    let n = points.len();
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| points[i].dist2(&points[j]) <= eps2).collect())
        .collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|nb| nb.len() >= min_pts).collect();

    const UNSEEN: i32 = -2;
    let mut labels = vec![UNSEEN; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != UNSEEN || !is_core[start] {
            continue;
        }
        let label = next;
        next += 1;
        labels[start] = label;
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            for &q in &neighborhoods[p] {
                if labels[q] == UNSEEN || labels[q] == -1 {
                    let was_unseen = labels[q] == UNSEEN;
                    labels[q] = label;
                    if was_unseen && is_core[q] {
                        frontier.push(q);
                    }
                }
            }
        }
    }
    for l in labels.iter_mut() {
        if *l == UNSEEN {
            *l = -1;
        }
    }
    let mut sizes = vec![0usize; next as usize];
    for &l in &labels {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    let core_label = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k as i32);
    Ok(DbscanResult { labels, core_label })
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    pub nodes: Vec<GeoPoint>,
    pub edges: Vec<(usize, usize, f64)>,
    /// Cell id → index of the road node nearest to the cell center.
    pub cell_anchor: HashMap<usize, usize>,
    graph: UnGraph<(), f64>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<GeoPoint>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut graph = UnGraph::with_capacity(nodes.len(), edges.len());
        for _ in &nodes {
            graph.add_node(());
        }
        for &(a, b, len) in &edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::invalid(format!("edge ({a},{b}) references a missing node")));
            }
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::invalid(format!("edge ({a},{b}) has non-positive length {len}")));
            }
            graph.add_edge(NodeIndex::new(a), NodeIndex::new(b), len);
        }
        Ok(Self { nodes, edges, cell_anchor: HashMap::new(), graph })
    }

    /// Builds a graph from an edge list given by endpoint coordinates;
    /// endpoints closer than 1 mm are merged.
    pub fn from_segments(segments: &[(GeoPoint, GeoPoint, f64)]) -> Result<Self> {
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut node_id = |p: GeoPoint, nodes: &mut Vec<GeoPoint>| {
            let key = ((p.x * 1000.0).round() as i64, (p.y * 1000.0).round() as i64);
            *index.entry(key).or_insert_with(|| {
                nodes.push(p);
                nodes.len() - 1
            })
        };
        let mut edges = Vec::with_capacity(segments.len());
        for &(a, b, len) in segments {
            let ia = node_id(a, &mut nodes);
            let ib = node_id(b, &mut nodes);
            edges.push((ia, ib, len));
        }
        Self::new(nodes, edges)
    }

    /// Reads `node_a_x,node_a_y,node_b_x,node_b_y,length_m`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut segments = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::data(path, format!("row {}: bad field {k}", line + 2)))
            };
            segments.push((
                GeoPoint::new(field(0)?, field(1)?),
                GeoPoint::new(field(2)?, field(3)?),
                field(4)?,
            ));
        }
        Self::from_segments(&segments).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node_a_x", "node_a_y", "node_b_x", "node_b_y", "length_m"])?;
        for &(a, b, len) in &self.edges {
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            w.write_record([pa.x, pa.y, pb.x, pb.y, len].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Anchors every grid cell at the road node nearest to its center.
    pub fn anchor_cells(&mut self, grid: &HexGrid) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("road graph has no nodes"));
        }
        self.cell_anchor = grid
            .cells
            .iter()
            .map(|c| {
                let nearest = (0..self.nodes.len())
                    .min_by(|&a, &b| {
                        c.center.dist2(&self.nodes[a]).total_cmp(&c.center.dist2(&self.nodes[b]))
                    })
                    .unwrap_or(0);
                (c.id, nearest)
            })
            .collect();
        Ok(())
    }

    fn anchor(&self, cell: usize) -> Result<NodeIndex> {
        self.cell_anchor
            .get(&cell)
            .map(|&n| NodeIndex::new(n))
            .ok_or_else(|| Error::invalid(format!("cell {cell} has no road anchor")))
    }

    /// Shortest-path lengths from a cell's anchor to every road node
    /// (infinity where unreachable).
    pub fn distances_from(&self, cell: usize) -> Result<Vec<f64>> {
        let src = self.anchor(cell)?;
        let dist = dijkstra(&self.graph, src, None, |e| *e.weight());
        let mut out = vec![f64::INFINITY; self.nodes.len()];
        for (node, d) in dist {
            out[node.index()] = d;
        }
        Ok(out)
    }

    /// Road distances between every pair of neighboring cells, keyed by
    /// `(min_id, max_id)`.
    pub fn adjacent_distances(&self, grid: &HexGrid) -> Result<HashMap<(usize, usize), f64>> {
        let mut out = HashMap::new();
        for c in &grid.cells {
            if c.neighbor_ids.iter().all(|&nb| nb < c.id) {
                continue;
            }
            let dist = self.distances_from(c.id)?;
            for &nb in c.neighbor_ids.iter().filter(|&&nb| nb > c.id) {
                out.insert((c.id, nb), dist[self.anchor(nb)?.index()]);
            }
        }
        Ok(out)
    }
}

/// Road distance between the anchors of two cells. With `adjacency_only`
/// set, cells that are not grid neighbors are infinitely far apart.
pub fn road_distance(a: &HexCell, b: &HexCell, g: &RoadGraph, adjacency_only: bool) -> Result<f64> {
    if a.id == b.id {
        return Ok(0.0);
    }
    if adjacency_only && a.neighbor_ids.binary_search(&b.id).is_err() {
        return Ok(f64::INFINITY);
    }
    let src = g.anchor(a.id)?;
    let dst = g.anchor(b.id)?;
    let dist = dijkstra(&g.graph, src, Some(dst), |e| *e.weight());
    Ok(dist.get(&dst).copied().unwrap_or(f64::INFINITY))
}

/// Reads the first polygon ring from a GeoJSON `Polygon`, `Feature` or
/// `FeatureCollection`. Coordinates must already be planar meters.
pub fn read_geojson_polygon(path: &Path) -> Result<Vec<GeoPoint>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    parse_geojson_polygon(&value).ok_or_else(|| Error::data(path, "no Polygon geometry found"))
}

fn parse_geojson_polygon(v: &serde_json::Value) -> Option<Vec<GeoPoint>> {
    match v.get("type")?.as_str()? {
        "Polygon" => {
            let ring = v.get("coordinates")?.as_array()?.first()?.as_array()?;
            ring.iter()
                .map(|pt| {
                    let xy = pt.as_array()?;
                    Some(GeoPoint::new(xy.first()?.as_f64()?, xy.get(1)?.as_f64()?))
                })
                .collect()
        }
        "Feature" => parse_geojson_polygon(v.get("geometry")?),
        "FeatureCollection" => v.get("features")?.as_array()?.iter().find_map(parse_geojson_polygon),
        _ => None,
    }
}

pub fn write_geojson_polygon(path: &Path, polygon: &[GeoPoint]) -> Result<()> {
    let mut ring: Vec<[f64; 2]> = polygon.iter().map(|p| [p.x, p.y]).collect();
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
    let value = serde_json::json!({ "type": "Polygon", "coordinates": [ring] });
    std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, w: f64) -> Vec<GeoPoint> {
        vec![
            GeoPoint::new(x0, y0),
            GeoPoint::new(x0 + w, y0),
            GeoPoint::new(x0 + w, y0 + w),
            GeoPoint::new(x0, y0 + w),
        ]
    }

    #[test]
    fn square_km_cells_inside_and_interior_has_six_neighbors() {
        let poly = square(0.0, 0.0, 1000.0);
        let grid = tessellate(&poly, 250.0).unwrap();
        assert!(grid.len() > 4);
        for c in &grid.cells {
            assert!(point_in_polygon(&c.center, &poly));
            assert!(!c.neighbor_ids.contains(&c.id));
            for &nb in &c.neighbor_ids {
                assert!(grid.cell(nb).unwrap().neighbor_ids.contains(&c.id));
            }
        }
        // A cell whose full 6-ring lies inside the square must report 6 neighbors.
        let interior: Vec<_> = grid
            .cells
            .iter()
            .filter(|c| {
                (0..6).all(|k| {
                    let a = std::f64::consts::PI / 6.0 + k as f64 * std::f64::consts::PI / 3.0;
                    let d = SQRT3 * 250.0;
                    let p = GeoPoint::new(c.center.x + d * a.cos(), c.center.y + d * a.sin());
                    point_in_polygon(&p, &poly)
                })
            })
            .collect();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|c| c.neighbor_ids.len() == 6));
    }

    #[test]
    fn tiny_polygon_centered_on_lattice_point_yields_one_cell() {
        let poly = square(-40.0, -40.0, 80.0);
        let grid = tessellate(&poly, 250.0).unwrap();
        assert_eq!(grid.len(), 1);
        assert!(grid.cells[0].neighbor_ids.is_empty());
        assert_eq!(grid.cells[0].center, GeoPoint::new(0.0, 0.0));
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        let line = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(10.0, 0.0), GeoPoint::new(20.0, 0.0)];
        assert!(matches!(tessellate(&line, 250.0), Err(Error::EmptyServiceArea)));
        assert!(tessellate(&square(0.0, 0.0, 10.0), 0.0).is_err());
    }

    #[test]
    fn city_scale_polygon_gives_about_a_thousand_cells() {
        // ~ 17 km x 11 km, the order of magnitude of a mid-size city core.
        let poly = square(0.0, 0.0, 13_700.0);
        let grid = tessellate(&poly, 250.0).unwrap();
        assert!((700..=1800).contains(&grid.len()), "{}", grid.len());
    }

    #[test]
    fn dbscan_single_blob() {
        let pts: Vec<_> = (0..5).map(|k| GeoPoint::new(k as f64 * 10.0, 0.0)).collect();
        let res = dbscan_filter(&pts, 500.0, 3).unwrap();
        assert_eq!(res.labels, vec![0; 5]);
        assert_eq!(res.core_label, Some(0));
    }

    #[test]
    fn dbscan_two_blobs_and_noise() {
        let eps = 500.0;
        let mut pts = Vec::new();
        for k in 0..4 {
            pts.push(GeoPoint::new(k as f64 * 100.0, 0.0));
        }
        for k in 0..4 {
            pts.push(GeoPoint::new(10.0 * eps + k as f64 * 100.0, 0.0));
        }
        pts.push(GeoPoint::new(0.0, 20.0 * eps));
        let res = dbscan_filter(&pts, eps, 3).unwrap();
        assert_eq!(res.labels, vec![0, 0, 0, 0, 1, 1, 1, 1, -1]);
        assert_eq!(res.core_label, Some(0));
        assert!(dbscan_filter(&[], eps, 3).is_err());
    }

    fn path_graph() -> (HexGrid, RoadGraph) {
        let poly = square(-600.0, -200.0, 1200.0);
        let grid = tessellate(&poly, 250.0).unwrap();
        let nodes = vec![GeoPoint::new(-10_000.0, 0.0), GeoPoint::new(0.0, 0.0), GeoPoint::new(10_000.0, 0.0)];
        let g = RoadGraph::new(nodes, vec![(0, 1, 100.0), (1, 2, 200.0)]).unwrap();
        (grid, g)
    }

    #[test]
    fn road_distance_on_path_graph() {
        let (grid, mut g) = path_graph();
        g.cell_anchor.insert(grid.cells[0].id, 0);
        g.cell_anchor.insert(grid.cells[1].id, 2);
        let (a, b) = (&grid.cells[0], &grid.cells[1]);
        assert_eq!(road_distance(a, b, &g, false).unwrap(), 300.0);
        assert_eq!(road_distance(a, a, &g, true).unwrap(), 0.0);
    }

    #[test]
    fn non_adjacent_cells_are_infinitely_far_in_adjacency_mode() {
        let grid = tessellate(&square(0.0, 0.0, 3000.0), 250.0).unwrap();
        let nodes: Vec<_> = grid.centers();
        let mut edges = Vec::new();
        for c in &grid.cells {
            for &nb in c.neighbor_ids.iter().filter(|&&nb| nb > c.id) {
                edges.push((c.id, nb, c.center.dist(&grid.cell(nb).unwrap().center)));
            }
        }
        let mut g = RoadGraph::new(nodes, edges).unwrap();
        g.anchor_cells(&grid).unwrap();
        let a = &grid.cells[0];
        let far = grid.cells.iter().find(|c| !a.neighbor_ids.contains(&c.id) && c.id != a.id).unwrap();
        assert!(road_distance(a, far, &g, true).unwrap().is_infinite());
        assert!(road_distance(a, far, &g, false).unwrap().is_finite());
        let adj = g.adjacent_distances(&grid).unwrap();
        let nb = a.neighbor_ids[0];
        let key = (a.id.min(nb), a.id.max(nb));
        assert!((adj[&key] - road_distance(a, grid.cell(nb).unwrap(), &g, true).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn disconnected_components_are_infinitely_far() {
        let (grid, _) = path_graph();
        let nodes = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0), GeoPoint::new(5.0, 0.0), GeoPoint::new(6.0, 0.0)];
        let mut g = RoadGraph::new(nodes, vec![(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        g.cell_anchor.insert(grid.cells[0].id, 0);
        g.cell_anchor.insert(grid.cells[1].id, 3);
        assert!(road_distance(&grid.cells[0], &grid.cells[1], &g, false).unwrap().is_infinite());
    }

    #[test]
    fn geojson_roundtrip() {
        let dir = std::env::temp_dir().join(format!("ffcs-geojson-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("poly.geojson");
        let poly = square(1.0, 2.0, 30.0);
        write_geojson_polygon(&path, &poly).unwrap();
        let back = read_geojson_polygon(&path).unwrap();
        assert_eq!(open_ring(&back), poly);
    }

    fn small_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (2usize..=8).prop_flat_map(|n| {
            let edge = (0..n, 0..n, 1.0f64..100.0);
            (Just(n), prop::collection::vec(edge, 1..20))
        })
    }

    proptest! {
        #[test]
        fn road_distance_is_a_metric_on_small_graphs((n, raw) in small_graph()) {
            let edges: Vec<_> = raw.into_iter().filter(|(a, b, _)| a != b).collect();
            let nodes: Vec<_> = (0..n).map(|k| GeoPoint::new(k as f64, 0.0)).collect();
            let mut g = RoadGraph::new(nodes, edges).unwrap();
            let cells: Vec<HexCell> = (0..n)
                .map(|k| HexCell { id: k, center: GeoPoint::new(k as f64, 0.0), side: 1.0, axial: (k as i32, 0), neighbor_ids: vec![] })
                .collect();
            for k in 0..n {
                g.cell_anchor.insert(k, k);
            }
            let d: Vec<Vec<f64>> = (0..n)
                .map(|a| (0..n).map(|b| road_distance(&cells[a], &cells[b], &g, false).unwrap()).collect())
                .collect();
            for a in 0..n {
                prop_assert_eq!(d[a][a], 0.0);
                for b in 0..n {
                    prop_assert!(d[a][b] >= 0.0);
                    prop_assert!((d[a][b] - d[b][a]).abs() < 1e-9 || (d[a][b].is_infinite() && d[b][a].is_infinite()));
                    for c in 0..n {
                        if d[a][c].is_finite() && d[c][b].is_finite() {
                            prop_assert!(d[a][b] <= d[a][c] + d[c][b] + 1e-9);
                        }
                    }
                }
            }
        }

        #[test]
        fn dbscan_is_permutation_invariant(
            pts in prop::collection::vec((0.0f64..3000.0, 0.0f64..3000.0), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let points: Vec<_> = pts.iter().map(|&(x, y)| GeoPoint::new(x, y)).collect();
            let eps = 400.0;
            let min_pts = 3;
            let base = dbscan_filter(&points, eps, min_pts).unwrap();
            let mut perm: Vec<usize> = (0..points.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<_> = perm.iter().map(|&k| points[k]).collect();
            let other = dbscan_filter(&shuffled, eps, min_pts).unwrap();
            // Core points (and noise) must be labeled consistently; border points
            // reachable from two clusters may legitimately differ.
            let eps2 = eps * eps;
            let core = |k: usize| points.iter().filter(|p| p.dist2(&points[k]) <= eps2).count() >= min_pts;
            let mut mapping = std::collections::HashMap::new();
            for (pos, &k) in perm.iter().enumerate() {
                if core(k) {
                    let a = base.labels[k];
                    let b = other.labels[pos];
                    prop_assert!(a >= 0 && b >= 0);
                    let m = *mapping.entry(a).or_insert(b);
                    prop_assert_eq!(m, b);
                }
                prop_assert_eq!(base.labels[k] == -1, other.labels[pos] == -1);
            }
        }

        #[test]
        fn tessellation_covers_interior(w in 600.0f64..3000.0, h in 600.0f64..3000.0, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let side = 100.0;
            let poly = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(w, 0.0), GeoPoint::new(w, h), GeoPoint::new(0.0, h)];
            let grid = tessellate(&poly, side).unwrap();
            let p = GeoPoint::new(2.0 * side + fx * (w - 4.0 * side).max(0.0), 2.0 * side + fy * (h - 4.0 * side).max(0.0));
            if p.x < w - 2.0 * side && p.y < h - 2.0 * side {
                let id = grid.cell_at(&p);
                prop_assert!(id.is_some());
                let c = grid.cell(id.unwrap()).unwrap();
                prop_assert!(c.center.dist(&p) <= side + 1e-6);
            }
        }
    }
}
