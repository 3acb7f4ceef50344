//! Agglomerative zoning of hexagonal cells.
//!
//! Clusters are merged greedily under a weighted sum of five normalized
//! components: road distance (single linkage over adjacent cells), road
//! density difference, Ward shape cost, and DTW distances between the
//! vehicle-count and activity series. Normalization maxima are taken once
//! over the initial candidate pairs and reused for every later merge.

pub mod baselines;
pub mod validate;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexgrid::{GeoPoint, HexGrid, RoadGraph};

pub use validate::{validate_zoning, ValidationReport, ZoneMetrics};

/// Road distances between neighboring cells keyed by `(min_id, max_id)`.
pub type AdjacentDistances = HashMap<(usize, usize), f64>;

/// Classic DTW with absolute-difference cost and no warping window.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("dtw needs two nonempty series"));
    }
    let m = y.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &xi in x {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (xi - y[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Divides each finite entry by the largest finite entry. Infinities pass
/// through; an all-zero input maps to zeros.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    let max = finite_max(values.iter().copied()).ok_or(Error::AllInfinite)?;
    Ok(values.iter().map(|&v| scale(v, max)).collect())
}

fn finite_max(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn scale(v: f64, max: f64) -> f64 {
    if !v.is_finite() {
        v
    } else if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub w_rd: f64,
    pub w_dns: f64,
    pub w_sh: f64,
    pub w_cars: f64,
    pub w_act: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self { w_rd: 2.0, w_dns: 1.0, w_sh: 1.0, w_cars: 1.0, w_act: 1.0 }
    }
}

impl DistanceWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.w_rd, self.w_dns, self.w_sh, self.w_cars, self.w_act]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("zoning weights must be finite and nonnegative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("at least one zoning weight must be positive"));
        }
        Ok(())
    }
}

/// Per-cell attributes, indexed like `HexGrid::cells`.
#[derive(Debug, Clone, Default)]
pub struct CellData {
    pub density: Vec<f64>,
    pub car_series: Vec<Vec<f64>>,
    pub act_series: Vec<Vec<f64>>,
}

impl CellData {
    fn check(&self, grid: &HexGrid) -> Result<()> {
        let n = grid.len();
        if self.density.len() != n || self.car_series.len() != n || self.act_series.len() != n {
            return Err(Error::invalid(format!("cell data must have {n} rows")));
        }
        let p = self.car_series.first().map_or(0, Vec::len);
        if p == 0
            || self.car_series.iter().any(|s| s.len() != p)
            || self.act_series.iter().any(|s| s.len() != p)
        {
            return Err(Error::invalid("cell series must be nonempty and of equal length"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Sorted cell ids.
    pub members: Vec<usize>,
    pub centroid: GeoPoint,
    pub road_density: f64,
    pub car_series: Vec<f64>,
    pub act_series: Vec<f64>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn from_indices(grid: &HexGrid, data: &CellData, idx: &[usize]) -> Cluster {
        let p = data.car_series[0].len();
        let mut car = vec![0.0; p];
        let mut act = vec![0.0; p];
        let mut dens = 0.0;
        for &k in idx {
            dens += data.density[k];
            for s in 0..p {
                car[s] += data.car_series[k][s];
                act[s] += data.act_series[k][s];
            }
        }
        let mut members: Vec<usize> = idx.iter().map(|&k| grid.cells[k].id).collect();
        members.sort_unstable();
        Cluster {
            members,
            centroid: GeoPoint::mean(idx.iter().map(|&k| grid.cells[k].center)).unwrap_or(GeoPoint::new(0.0, 0.0)),
            road_density: dens / idx.len().max(1) as f64,
            car_series: car,
            act_series: act,
        }
    }
}

fn ward(na: usize, nb: usize, ca: GeoPoint, cb: GeoPoint) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    na * nb / (na + nb) * ca.dist2(&cb)
}

/// Single-linkage road distance between two clusters over their adjacent
/// cross pairs; infinity when no member of `a` touches `b`.
fn single_linkage(a: &Cluster, b: &Cluster, grid: &HexGrid, adj: &AdjacentDistances) -> f64 {
    let in_b: BTreeSet<usize> = b.members.iter().copied().collect();
    let mut best = f64::INFINITY;
    for &id in &a.members {
        if let Some(cell) = grid.cell(id) {
            for nb in cell.neighbor_ids.iter().filter(|nb| in_b.contains(nb)) {
                if let Some(&d) = adj.get(&(id.min(*nb), id.max(*nb))) {
                    best = best.min(d);
                }
            }
        }
    }
    best
}

/// `(d_rd, d_dns, d_sh, d_cars, d_act)` between two disjoint clusters.
pub fn component_distances(a: &Cluster, b: &Cluster, grid: &HexGrid, adj: &AdjacentDistances) -> Result<[f64; 5]> {
    Ok([
        single_linkage(a, b, grid, adj),
        (a.road_density - b.road_density).abs(),
        ward(a.len(), b.len(), a.centroid, b.centroid),
        dtw(&a.car_series, &b.car_series)?,
        dtw(&a.act_series, &b.act_series)?,
    ])
}

/// True when `b` cannot be reached without crossing `a`: every lattice
/// neighbor of every cell of `b` is a grid cell belonging to `a` or `b`.
/// Cells on the grid boundary are never enclosed.
pub fn contains(a: &Cluster, b: &Cluster, grid: &HexGrid) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let in_a: BTreeSet<usize> = a.members.iter().copied().collect();
    let in_b: BTreeSet<usize> = b.members.iter().copied().collect();
    b.members.iter().all(|id| {
        grid.cell(*id).is_some_and(|c| {
            c.neighbor_ids.len() == 6 && c.neighbor_ids.iter().all(|nb| in_a.contains(nb) || in_b.contains(nb))
        })
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoningResult {
    pub zones: Vec<Cluster>,
    pub zone_of: BTreeMap<usize, usize>,
    pub max_size: usize,
    /// Combined distance of each accepted merge, in merge order.
    #[serde(default)]
    pub merge_trace: Vec<f64>,
}

impl ZoningResult {
    /// Builds a result from one label per grid cell (grid order). Zones are
    /// ordered by their smallest cell id.
    pub fn from_labels(grid: &HexGrid, data: &CellData, labels: &[usize], max_size: usize) -> Result<Self> {
        data.check(grid)?;
        if labels.len() != grid.len() {
            return Err(Error::invalid("one label per cell required"));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(k);
        }
        let mut zones: Vec<Cluster> = groups.values().map(|idx| Cluster::from_indices(grid, data, idx)).collect();
        zones.sort_by_key(|z| z.members[0]);
        let zone_of = zones
            .iter()
            .enumerate()
            .flat_map(|(z, c)| c.members.iter().map(move |&id| (id, z)))
            .collect();
        Ok(ZoningResult { zones, zone_of, max_size, merge_trace: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// Zone index per grid cell, in grid order.
    pub fn labels(&self, grid: &HexGrid) -> Vec<usize> {
        grid.cells.iter().map(|c| self.zone_of[&c.id]).collect()
    }

    /// `cell_id,zone_id`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_id", "zone_id"])?;
        for (cell, zone) in &self.zone_of {
            w.write_record([cell.to_string(), zone.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let rows: Vec<_> = self
            .zones
            .iter()
            .enumerate()
            .map(|(k, z)| {
                serde_json::json!({
                    "zone_id": k,
                    "size": z.len(),
                    "centroid": [z.centroid.x, z.centroid.y],
                    "density": z.road_density,
                })
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    d: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Reversed so that `BinaryHeap` pops the smallest (d, a, b).
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then(other.a.cmp(&self.a)).then(other.b.cmp(&self.b))
    }
}

struct Work<'a> {
    grid: &'a HexGrid,
    weights: [f64; 5],
    maxima: [f64; 5],
    members: Vec<Vec<usize>>,
    sum_xy: Vec<(f64, f64)>,
    dens_sum: Vec<f64>,
    car: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    boundary: Vec<usize>,
    neighbors: Vec<BTreeSet<usize>>,
    rd: HashMap<(usize, usize), f64>,
    version: Vec<u32>,
    active: Vec<bool>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Work<'_> {
    fn size(&self, c: usize) -> usize {
        self.members[c].len()
    }

    fn centroid(&self, c: usize) -> GeoPoint {
        let n = self.size(c) as f64;
        GeoPoint::new(self.sum_xy[c].0 / n, self.sum_xy[c].1 / n)
    }

    fn components(&self, a: usize, b: usize) -> [f64; 5] {
        let weights = self.weights;
        let need = |k: usize| weights[k] > 0.0 || self.maxima[k].is_nan();
        [
            self.rd.get(&key(a, b)).copied().unwrap_or(f64::INFINITY),
            (self.dens_sum[a] / self.size(a) as f64 - self.dens_sum[b] / self.size(b) as f64).abs(),
            ward(self.size(a), self.size(b), self.centroid(a), self.centroid(b)),
            if need(3) { dtw(&self.car[a], &self.car[b]).unwrap_or(f64::INFINITY) } else { 0.0 },
            if need(4) { dtw(&self.act[a], &self.act[b]).unwrap_or(f64::INFINITY) } else { 0.0 },
        ]
    }

    fn combine(&self, c: &[f64; 5]) -> f64 {
        let mut total = 0.0;
        for k in 0..5 {
            if self.weights[k] > 0.0 {
                total += self.weights[k] * scale(c[k], self.maxima[k]);
            }
        }
        total
    }

    fn partners(&self, c: usize) -> Vec<usize> {
        if self.weights[0] > 0.0 {
            self.neighbors[c].iter().copied().collect()
        } else {
            (0..self.members.len()).filter(|&k| k != c && self.active[k]).collect()
        }
    }

    /// Moves cluster `gone` into `keep`.
    fn absorb(&mut self, keep: usize, gone: usize) {
        let moved = std::mem::take(&mut self.members[gone]);
        self.members[keep].extend(moved);
        self.sum_xy[keep].0 += self.sum_xy[gone].0;
        self.sum_xy[keep].1 += self.sum_xy[gone].1;
        self.dens_sum[keep] += self.dens_sum[gone];
        let (car, act) = (std::mem::take(&mut self.car[gone]), std::mem::take(&mut self.act[gone]));
        for (s, v) in car.into_iter().enumerate() {
            self.car[keep][s] += v;
        }
        for (s, v) in act.into_iter().enumerate() {
            self.act[keep][s] += v;
        }
        self.boundary[keep] += self.boundary[gone];
        self.rd.remove(&key(keep, gone));
        let gone_nb = std::mem::take(&mut self.neighbors[gone]);
        for k in gone_nb {
            if k == keep {
                continue;
            }
            let d = self.rd.remove(&key(gone, k)).unwrap_or(f64::INFINITY);
            let e = self.rd.entry(key(keep, k)).or_insert(f64::INFINITY);
            *e = e.min(d);
            self.neighbors[k].remove(&gone);
            self.neighbors[k].insert(keep);
            self.neighbors[keep].insert(k);
        }
        self.neighbors[keep].remove(&gone);
        self.active[gone] = false;
        self.version[keep] += 1;
        self.version[gone] += 1;
    }

    fn enclosed_by(&self, c: usize) -> Option<usize> {
        (self.boundary[c] == 0 && self.neighbors[c].len() == 1).then(|| *self.neighbors[c].iter().next().unwrap())
    }

    /// Absorbs every cluster enclosed by `c` and folds `c` into an
    /// enclosing cluster; returns the surviving index.
    fn resolve_enclosures(&mut self, mut c: usize) -> usize {
        loop {
            let inner: Vec<usize> =
                self.neighbors[c].iter().copied().filter(|&b| self.enclosed_by(b) == Some(c)).collect();
            let mut changed = !inner.is_empty();
            for b in inner {
                self.absorb(c, b);
            }
            if let Some(outer) = self.enclosed_by(c) {
                self.absorb(outer, c);
                c = outer;
                changed = true;
            }
            if !changed {
                return c;
            }
        }
    }
}

/// Greedy agglomerative zoning. Pairs whose combined distance is infinite
/// are never merged, so with `w_rd > 0` only touching clusters merge.
pub fn agglomerative_cluster(
    grid: &HexGrid,
    data: &CellData,
    weights: &DistanceWeights,
    max_size: usize,
    adj: &AdjacentDistances,
) -> Result<ZoningResult> {
    weights.validate()?;
    if max_size < 1 {
        return Err(Error::invalid("maximum zone size must be at least 1"));
    }
    if grid.is_empty() {
        return Err(Error::EmptyServiceArea);
    }
    data.check(grid)?;
    let n = grid.len();
    let w = weights.as_array();

    let mut neighbors = vec![BTreeSet::new(); n];
    let mut rd = HashMap::new();
    for (k, cell) in grid.cells.iter().enumerate() {
        for &nb in &cell.neighbor_ids {
            let j = grid.index_of(nb).expect("neighbor ids refer to grid cells");
            neighbors[k].insert(j);
            if k < j {
                rd.insert((k, j), adj.get(&key(cell.id, nb)).copied().unwrap_or(f64::INFINITY));
            }
        }
    }
    let mut work = Work {
        grid,
        weights: w,
        maxima: [f64::NAN; 5],
        members: (0..n).map(|k| vec![k]).collect(),
        sum_xy: grid.cells.iter().map(|c| (c.center.x, c.center.y)).collect(),
        dens_sum: data.density.clone(),
        car: data.car_series.clone(),
        act: data.act_series.clone(),
        boundary: grid.cells.iter().map(|c| usize::from(c.neighbor_ids.len() < 6)).collect(),
        neighbors,
        rd,
        version: vec![0; n],
        active: vec![true; n],
    };

    let initial: Vec<(usize, usize)> =
        (0..n).flat_map(|a| work.partners(a).into_iter().filter(move |&b| b > a).map(move |b| (a, b))).collect();
    let comps: Vec<[f64; 5]> = initial.par_iter().map(|&(a, b)| work.components(a, b)).collect();
    for k in 0..5 {
        work.maxima[k] = finite_max(comps.iter().map(|c| c[k])).unwrap_or(0.0);
    }

    let mut heap = BinaryHeap::new();
    for (&(a, b), c) in initial.iter().zip(&comps) {
        let d = work.combine(c);
        if d.is_finite() && work.size(a) + work.size(b) <= max_size {
            heap.push(Candidate { d, a, b, va: 0, vb: 0 });
        }
    }
    let mut trace = Vec::new();
    while let Some(top) = heap.pop() {
        let (a, b) = (top.a, top.b);
        if !work.active[a] || !work.active[b] || work.version[a] != top.va || work.version[b] != top.vb {
            continue;
        }
        if work.size(a) + work.size(b) > max_size {
            continue;
        }
        work.absorb(a, b);
        trace.push(top.d);
        let c = work.resolve_enclosures(a);
        let partners: Vec<usize> =
            work.partners(c).into_iter().filter(|&k| work.size(c) + work.size(k) <= max_size).collect();
        let dists: Vec<f64> = partners.par_iter().map(|&k| work.combine(&work.components(c, k))).collect();
        for (k, d) in partners.into_iter().zip(dists) {
            if d.is_finite() {
                let (a, b) = (c.min(k), c.max(k));
                heap.push(Candidate { d, a, b, va: work.version[a], vb: work.version[b] });
            }
        }
    }

    let mut labels = vec![0; n];
    for c in (0..n).filter(|&c| work.active[c]) {
        for &k in &work.members[c] {
            labels[k] = c;
        }
    }
    let mut result = ZoningResult::from_labels(work.grid, data, &labels, max_size)?;
    result.merge_trace = trace;
    Ok(result)
}

/// Convenience wrapper that computes adjacent road distances first.
pub fn agglomerative_cluster_on_roads(
    grid: &HexGrid,
    data: &CellData,
    weights: &DistanceWeights,
    max_size: usize,
    roads: &RoadGraph,
) -> Result<ZoningResult> {
    let adj = roads.adjacent_distances(grid)?;
    agglomerative_cluster(grid, data, weights, max_size, &adj)
}

/// Euclidean distances between neighboring cell centers, for callers
/// without a road network.
pub fn euclidean_adjacent_distances(grid: &HexGrid) -> AdjacentDistances {
    let mut out = HashMap::new();
    for c in &grid.cells {
        for &nb in c.neighbor_ids.iter().filter(|&&nb| nb > c.id) {
            out.insert((c.id, nb), c.center.dist(&grid.cell(nb).unwrap().center));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::tessellate;
    use proptest::prelude::*;

    fn square(w: f64) -> Vec<GeoPoint> {
        vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(w, 0.0), GeoPoint::new(w, w), GeoPoint::new(0.0, w)]
    }

    fn flat_data(n: usize, p: usize) -> CellData {
        CellData { density: vec![1.0; n], car_series: vec![vec![1.0; p]; n], act_series: vec![vec![1.0; p]; n] }
    }

    fn single(id: usize, center: GeoPoint) -> Cluster {
        Cluster { members: vec![id], centroid: center, road_density: 1.0, car_series: vec![1.0, 2.0], act_series: vec![0.0, 1.0] }
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(dtw(&[1.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(dtw(&[], &[1.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 4.0, 8.0]).unwrap(), vec![0.25, 0.5, 1.0]);
        assert_eq!(normalize(&[3.0, 3.0]).unwrap(), vec![1.0, 1.0]);
        let v = normalize(&[1.0, f64::INFINITY, 4.0]).unwrap();
        assert_eq!(v[2], 1.0);
        assert!(v[1].is_infinite());
        assert!(matches!(normalize(&[f64::INFINITY]), Err(Error::AllInfinite)));
    }

    #[test]
    fn component_distance_examples() {
        let grid = tessellate(&square(1000.0), 250.0).unwrap();
        let a_id = grid.cells[0].id;
        let b_id = grid.cells[0].neighbor_ids[0];
        let mut adj = AdjacentDistances::new();
        adj.insert(key(a_id, b_id), 300.0);
        let a = single(a_id, grid.cells[0].center);
        let b = Cluster { members: vec![b_id], centroid: grid.cell(b_id).unwrap().center, ..a.clone() };
        let d = component_distances(&a, &b, &grid, &adj).unwrap();
        assert_eq!(d[0], 300.0);
        assert_eq!((d[1], d[3], d[4]), (0.0, 0.0, 0.0));

        let p = single(0, GeoPoint::new(0.0, 0.0));
        let q = single(1, GeoPoint::new(10.0, 0.0));
        assert!((ward(p.len(), q.len(), p.centroid, q.centroid) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn max_size_one_never_merges() {
        let grid = tessellate(&square(1500.0), 250.0).unwrap();
        let data = flat_data(grid.len(), 4);
        let adj = euclidean_adjacent_distances(&grid);
        let zr = agglomerative_cluster(&grid, &data, &DistanceWeights::default(), 1, &adj).unwrap();
        assert_eq!(zr.len(), grid.len());
        assert!(zr.merge_trace.is_empty());
    }

    #[test]
    fn three_collinear_cells_merge_closest_pair() {
        // Cells 0-1-2 in a row; road distances d(0,1)=100 < d(1,2)=200, and
        // 0 and 2 are not adjacent.
        let poly = vec![GeoPoint::new(-100.0, -50.0), GeoPoint::new(1000.0, -50.0), GeoPoint::new(1000.0, 50.0), GeoPoint::new(-100.0, 50.0)];
        let grid = tessellate(&poly, 250.0).unwrap();
        assert_eq!(grid.len(), 3);
        let mut adj = AdjacentDistances::new();
        adj.insert((0, 1), 100.0);
        adj.insert((1, 2), 200.0);
        let w = DistanceWeights { w_rd: 1.0, w_dns: 0.0, w_sh: 0.0, w_cars: 0.0, w_act: 0.0 };
        let zr = agglomerative_cluster(&grid, &flat_data(3, 2), &w, 2, &adj).unwrap();
        assert_eq!(zr.zones.iter().map(|z| z.members.clone()).collect::<Vec<_>>(), vec![vec![0, 1], vec![2]]);
    }

    fn ring_grid() -> (HexGrid, usize) {
        let grid = tessellate(&square(3000.0), 250.0).unwrap();
        let center = grid.cell_at(&GeoPoint::new(1500.0, 1500.0)).unwrap();
        (grid, center)
    }

    fn cluster_of(grid: &HexGrid, ids: &[usize]) -> Cluster {
        let data = flat_data(grid.len(), 2);
        let idx: Vec<usize> = ids.iter().map(|&id| grid.index_of(id).unwrap()).collect();
        Cluster::from_indices(grid, &data, &idx)
    }

    #[test]
    fn contains_examples() {
        let (grid, center) = ring_grid();
        let ring = grid.cell(center).unwrap().neighbor_ids.clone();
        assert_eq!(ring.len(), 6);
        assert!(contains(&cluster_of(&grid, &ring), &cluster_of(&grid, &[center]), &grid));
        assert!(!contains(&cluster_of(&grid, &[center]), &cluster_of(&grid, &ring), &grid));

        let edge = grid.cells.iter().find(|c| c.neighbor_ids.len() < 6).unwrap();
        assert!(!contains(&cluster_of(&grid, &edge.neighbor_ids), &cluster_of(&grid, &[edge.id]), &grid));

        let other = ring[0];
        let pair = [center, other];
        let mut shell: BTreeSet<usize> = BTreeSet::new();
        for id in pair {
            shell.extend(grid.cell(id).unwrap().neighbor_ids.iter().copied());
        }
        shell.remove(&center);
        shell.remove(&other);
        assert_eq!(shell.len(), 8);
        let shell: Vec<usize> = shell.into_iter().collect();
        assert!(contains(&cluster_of(&grid, &shell), &cluster_of(&grid, &pair), &grid));
    }

    #[test]
    fn enclosed_cluster_is_absorbed() {
        // The center cell's activity series is far from everything, so it would
        // stay alone; once its ring merges it must be absorbed.
        let (grid, center) = ring_grid();
        let sub: Vec<usize> = std::iter::once(center).chain(grid.cell(center).unwrap().neighbor_ids.iter().copied()).collect();
        let mut ids = sub.clone();
        for &id in &sub {
            ids.extend(grid.cell(id).unwrap().neighbor_ids.iter().copied());
        }
        let grid = grid.subset(&ids).unwrap();
        let mut data = flat_data(grid.len(), 3);
        let k = grid.index_of(center).unwrap();
        data.act_series[k] = vec![1000.0, 0.0, 1000.0];
        let w = DistanceWeights { w_rd: 1.0, w_dns: 0.0, w_sh: 0.0, w_cars: 0.0, w_act: 10.0 };
        let adj = euclidean_adjacent_distances(&grid);
        let zr = agglomerative_cluster(&grid, &data, &w, 6, &adj).unwrap();
        let z = zr.zone_of[&center];
        assert!(zr.zones[z].len() > 1, "center stayed isolated");
        for a in &zr.zones {
            for b in &zr.zones {
                if a != b {
                    assert!(!contains(a, b, &grid));
                }
            }
        }
    }

    /// Reference implementation recomputing every component from scratch each
    /// iteration (no heap, no incremental linkage).
    fn naive(grid: &HexGrid, data: &CellData, w: &DistanceWeights, m: usize, adj: &AdjacentDistances) -> Vec<Vec<usize>> {
        let n = grid.len();
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        let build = |idx: &Vec<usize>| Cluster::from_indices(grid, data, idx);
        let wa = w.as_array();
        let pair_ok = |a: &Cluster, b: &Cluster| {
            wa[0] == 0.0 || a.members.iter().any(|id| grid.cell(*id).unwrap().neighbor_ids.iter().any(|nb| b.members.contains(nb)))
        };
        let mut maxima = [0.0f64; 5];
        let singles: Vec<Cluster> = clusters.iter().map(build).collect();
        for a in 0..n {
            for b in a + 1..n {
                if pair_ok(&singles[a], &singles[b]) {
                    let c = component_distances(&singles[a], &singles[b], grid, adj).unwrap();
                    for k in 0..5 {
                        if c[k].is_finite() {
                            maxima[k] = maxima[k].max(c[k]);
                        }
                    }
                }
            }
        }
        loop {
            let built: Vec<Cluster> = clusters.iter().map(build).collect();
            let mut best: Option<(f64, usize, usize)> = None;
            for a in 0..built.len() {
                for b in a + 1..built.len() {
                    if built[a].len() + built[b].len() > m || !pair_ok(&built[a], &built[b]) {
                        continue;
                    }
                    let c = component_distances(&built[a], &built[b], grid, adj).unwrap();
                    let d: f64 = (0..5).filter(|&k| wa[k] > 0.0).map(|k| wa[k] * scale(c[k], maxima[k])).sum();
                    if d.is_finite() && best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, a, b));
                    }
                }
            }
            let Some((_, a, b)) = best else { break };
            let gone = clusters.remove(b);
            clusters[a].extend(gone);
            // Enclosure handling mirrors the definition directly.
            loop {
                let built: Vec<Cluster> = clusters.iter().map(build).collect();
                let hit = (0..built.len())
                    .flat_map(|x| (0..built.len()).map(move |y| (x, y)))
                    .find(|&(x, y)| x != y && contains(&built[x], &built[y], grid));
                match hit {
                    Some((x, y)) => {
                        let gone = clusters[y].clone();
                        clusters[x].extend(gone);
                        clusters.remove(y);
                    }
                    None => break,
                }
            }
        }
        let mut out: Vec<Vec<usize>> = clusters
            .into_iter()
            .map(|c| {
                let mut ids: Vec<usize> = c.iter().map(|&k| grid.cells[k].id).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        out.sort();
        out
    }

    fn small_instance() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<f64>>, Vec<f64>, usize)> {
        (
            prop::collection::vec(0usize..16, 3..10),
            prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 16),
            prop::collection::vec(1.0f64..500.0, 64),
            1usize..5,
        )
    }

    fn patch(ids: &[usize]) -> HexGrid {
        let grid = tessellate(&square(1200.0), 250.0).unwrap();
        let keep: Vec<usize> = ids.iter().map(|&k| grid.cells[k % grid.len()].id).collect();
        grid.subset(&keep).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn incremental_matches_naive_recomputation((ids, series, roads, m) in small_instance(), wmask in 0usize..4) {
            let grid = patch(&ids);
            let n = grid.len();
            let data = CellData {
                density: (0..n).map(|k| series[k][0]).collect(),
                car_series: (0..n).map(|k| series[k].clone()).collect(),
                act_series: (0..n).map(|k| series[(k + 5) % 16].clone()).collect(),
            };
            let mut adj = euclidean_adjacent_distances(&grid);
            for (k, v) in adj.values_mut().enumerate() {
                *v = roads[k % roads.len()];
            }
            let w = match wmask {
                0 => DistanceWeights::default(),
                1 => DistanceWeights { w_rd: 1.0, w_dns: 0.0, w_sh: 0.0, w_cars: 0.0, w_act: 0.0 },
                2 => DistanceWeights { w_rd: 0.0, w_dns: 1.0, w_sh: 1.0, w_cars: 1.0, w_act: 0.0 },
                _ => DistanceWeights { w_rd: 1.0, w_dns: 0.5, w_sh: 2.0, w_cars: 0.0, w_act: 1.0 },
            };
            let zr = agglomerative_cluster(&grid, &data, &w, m, &adj).unwrap();
            let mut got: Vec<Vec<usize>> = zr.zones.iter().map(|z| z.members.clone()).collect();
            got.sort();
            prop_assert_eq!(got, naive(&grid, &data, &w, m, &adj));

            // Partition.
            let mut all: Vec<usize> = zr.zones.iter().flat_map(|z| z.members.iter().copied()).collect();
            all.sort_unstable();
            let mut expected: Vec<usize> = grid.cells.iter().map(|c| c.id).collect();
            expected.sort_unstable();
            prop_assert_eq!(all, expected);
        }

        #[test]
        fn road_only_merge_trace_is_monotone((ids, _series, roads, m) in small_instance()) {
            let grid = patch(&ids);
            let data = flat_data(grid.len(), 2);
            let mut adj = euclidean_adjacent_distances(&grid);
            for (k, v) in adj.values_mut().enumerate() {
                *v = roads[k % roads.len()];
            }
            let w = DistanceWeights { w_rd: 1.0, w_dns: 0.0, w_sh: 0.0, w_cars: 0.0, w_act: 0.0 };
            let zr = agglomerative_cluster(&grid, &data, &w, m + 2, &adj).unwrap();
            for pair in zr.merge_trace.windows(2) {
                prop_assert!(pair[0] <= pair[1] + 1e-12);
            }
        }

        #[test]
        fn zero_weight_component_is_scale_invariant((ids, series, roads, m) in small_instance(), factor in 0.01f64..100.0) {
            let grid = patch(&ids);
            let n = grid.len();
            let data = CellData {
                density: (0..n).map(|k| series[k][1]).collect(),
                car_series: (0..n).map(|k| series[k].clone()).collect(),
                act_series: (0..n).map(|k| series[(k + 3) % 16].clone()).collect(),
            };
            let mut scaled = data.clone();
            for s in scaled.car_series.iter_mut() {
                for v in s.iter_mut() {
                    *v *= factor;
                }
            }
            let mut adj = euclidean_adjacent_distances(&grid);
            for (k, v) in adj.values_mut().enumerate() {
                *v = roads[k % roads.len()];
            }
            let w = DistanceWeights { w_cars: 0.0, ..DistanceWeights::default() };
            let a = agglomerative_cluster(&grid, &data, &w, m + 1, &adj).unwrap();
            let b = agglomerative_cluster(&grid, &scaled, &w, m + 1, &adj).unwrap();
            prop_assert_eq!(a.zone_of, b.zone_of);
        }

        #[test]
        fn containment_is_antisymmetric(ids in prop::collection::vec(0usize..150, 1..40), split in 0usize..40) {
            let (grid, _) = ring_grid();
            let mut ids: Vec<usize> = ids.into_iter().map(|k| grid.cells[k % grid.len()].id).collect();
            ids.sort_unstable();
            ids.dedup();
            let cut = split.min(ids.len().saturating_sub(1)).max(1).min(ids.len());
            let (a, b) = ids.split_at(cut);
            prop_assume!(!a.is_empty() && !b.is_empty());
            let (a, b) = (cluster_of(&grid, a), cluster_of(&grid, b));
            prop_assert!(!(contains(&a, &b, &grid) && contains(&b, &a, &grid)));
        }
    }
}
