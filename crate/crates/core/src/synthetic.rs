//! Synthetic cities standing in for proprietary trip logs.
//!
//! Every cell mixes three land-use types (residential, business, leisure).
//! Each type has its own departure and attraction profile over the day, and
//! trips follow a gravity model with power-law distance decay. Zone-level
//! instances are obtained by aggregating cells under a partition.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::demand::{ActivityMatrix, Tensor3, TravelTimeTensor, TripStats};
use crate::error::{Error, Result};
use crate::hexgrid::{tessellate, GeoPoint, HexCell, HexGrid};
use crate::rng::{self, Stream};
use crate::SLOTS_PER_DAY;

pub const RESIDENTIAL: usize = 0;
pub const BUSINESS: usize = 1;
pub const LEISURE: usize = 2;

/// How land-use types are laid out over the city.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layout {
    /// Business core, leisure ring, residential periphery.
    Radial,
    /// Bands of constant axial `q`, `width` cells wide, cycling through the
    /// three types. Each band is a connected chain of cells.
    Stripes { width: f64 },
    /// Rhombic blocks of `size × size` cells in axial coordinates, each with
    /// a random dominant type.
    Patches { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub cells: usize,
    pub side_m: f64,
    pub seed: u64,
    /// Expected trip requests per day over the whole city.
    pub daily_demand: f64,
    pub decay: f64,
    pub delta: f64,
    pub speed_kmh: f64,
    pub rush_speed_kmh: f64,
    pub detour: f64,
    pub overhead_min: f64,
    pub attractiveness_sigma: f64,
    pub activity_noise: f64,
    /// Weight of the dominant type in a cell; the rest is shared equally.
    pub purity: f64,
    pub fleet: u32,
    pub layout: Layout,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            cells: 63,
            side_m: 1000.0,
            seed: 7,
            daily_demand: 1500.0,
            decay: 1.0,
            delta: 15.0,
            speed_kmh: 24.0,
            rush_speed_kmh: 14.0,
            detour: 1.3,
            overhead_min: 4.0,
            attractiveness_sigma: 0.6,
            activity_noise: 0.05,
            purity: 0.7,
            fleet: 300,
            layout: Layout::Radial,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("side_m", self.side_m),
            ("daily_demand", self.daily_demand),
            ("delta", self.delta),
            ("speed_kmh", self.speed_kmh),
            ("rush_speed_kmh", self.rush_speed_kmh),
            ("detour", self.detour),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("decay", self.decay),
            ("overhead_min", self.overhead_min),
            ("attractiveness_sigma", self.attractiveness_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.cells == 0 {
            return Err(Error::invalid("need at least one cell"));
        }
        if !(0.0..1.0).contains(&self.activity_noise) {
            return Err(Error::invalid("activity_noise must lie in [0, 1)"));
        }
        if !(1.0 / 3.0..=1.0).contains(&self.purity) {
            return Err(Error::invalid("purity must lie in [1/3, 1]"));
        }
        match self.layout {
            Layout::Stripes { width } if !(width > 0.0) => return Err(Error::invalid("stripe width must be positive")),
            Layout::Patches { size: 0 } => return Err(Error::invalid("patch size must be positive")),
            _ => {}
        }
        Ok(())
    }
}

fn bump(h: f64, mu: f64, sd: f64) -> f64 {
    (-0.5 * ((h - mu) / sd).powi(2)).exp()
}

fn daytime(h: f64) -> f64 {
    let up = 1.0 / (1.0 + (-(h - 6.5) * 2.0).exp());
    let down = 1.0 / (1.0 + ((h - 23.0) * 2.0).exp());
    up * down
}

/// Hour of day at the middle of 1-based slot `t`.
pub fn slot_hour(t: usize) -> f64 {
    ((t - 1) % SLOTS_PER_DAY) as f64 * 24.0 / SLOTS_PER_DAY as f64 + 0.125
}

fn rush(h: f64) -> (f64, f64, f64) {
    (bump(h, 8.0, 1.0), bump(h, 17.5, 1.3), bump(h, 21.0, 1.5))
}

/// Departure intensity per land-use type.
pub fn departure_profile(h: f64) -> [f64; 3] {
    let (m, e, n) = rush(h);
    let d = daytime(h);
    [
        1.2 * m + 0.25 * e + 0.35 * d + 0.03,
        1.2 * e + 0.15 * m + 0.35 * d + 0.03,
        1.0 * n + 0.2 * e + 0.35 * d + 0.03,
    ]
}

/// Attraction of trip ends per land-use type.
pub fn attraction_profile(h: f64) -> [f64; 3] {
    let (m, e, n) = rush(h);
    let d = daytime(h);
    [
        1.0 * e + 0.6 * n + 0.35 * d + 0.03,
        1.2 * m + 0.4 * d + 0.03,
        0.8 * n + 0.3 * e + 0.35 * d + 0.03,
    ]
}

/// Average driving speed in km/h; drops towards `rush_kmh` at peak hours.
pub fn speed_at(h: f64, free_kmh: f64, rush_kmh: f64) -> f64 {
    let (m, e, _) = rush(h);
    free_kmh - (free_kmh - rush_kmh) * m.max(e)
}

/// Gravity flows `TR[i,j] = O_i · A_j f(d_ij) / Σ_l A_l f(d_il)` with
/// `f(d) = d^(-decay)`, for one slot.
pub fn gravity(origin: &[f64], attraction: &[f64], distance: &[Vec<f64>], decay: f64) -> Vec<Vec<f64>> {
    let n = origin.len();
    (0..n)
        .map(|i| {
            let w: Vec<f64> = (0..n).map(|j| attraction[j] * distance[i][j].powf(-decay)).collect();
            let total: f64 = w.iter().sum();
            w.iter().map(|x| if total > 0.0 { origin[i] * x / total } else { 0.0 }).collect()
        })
        .collect()
}

pub struct SyntheticCity {
    pub spec: SyntheticSpec,
    pub grid: HexGrid,
    /// Land-use weights per cell, summing to one.
    pub mix: Vec<[f64; 3]>,
    pub attractiveness: Vec<f64>,
    pub density: Vec<f64>,
    /// Pairwise distances in meters; the diagonal holds a typical intra-cell
    /// trip length.
    pub distance: Vec<Vec<f64>>,
    pub trips: TripStats,
    pub activity: ActivityMatrix,
    pub travel: TravelTimeTensor,
    pub presence: Vec<f64>,
    /// Expected parked vehicles per cell over one day.
    pub car_profile: Vec<Vec<f64>>,
}

/// Hexagonal grid of exactly `cells` cells, the ones closest to the center
/// of a square that covers twice the needed area.
pub fn compact_grid(cells: usize, side: f64) -> Result<HexGrid> {
    let hex_area = 1.5 * 3f64.sqrt() * side * side;
    let half = (2.0 * cells as f64 * hex_area).sqrt() / 2.0 + 2.0 * side;
    let square = vec![
        GeoPoint::new(-half, -half),
        GeoPoint::new(half, -half),
        GeoPoint::new(half, half),
        GeoPoint::new(-half, half),
    ];
    let full = tessellate(&square, side)?;
    let mut order: Vec<(f64, usize)> = full.cells.iter().map(|c| (c.center.dist2(&full.origin()), c.id)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if order.len() < cells {
        return Err(Error::invalid("tessellation produced too few cells"));
    }
    let keep: Vec<usize> = order[..cells].iter().map(|&(_, id)| id).collect();
    let sub = full.subset(&keep)?;
    // Renumber so that cell ids equal positions.
    let mut cells_vec = sub.cells.clone();
    let pos: std::collections::HashMap<usize, usize> = cells_vec.iter().enumerate().map(|(k, c)| (c.id, k)).collect();
    for c in cells_vec.iter_mut() {
        c.id = pos[&c.id];
    }
    let ring = hull_polygon(&cells_vec, side);
    Ok(HexGrid::from_cells(cells_vec, ring, side, full.origin()))
}

fn hull_polygon(cells: &[HexCell], side: f64) -> Vec<GeoPoint> {
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in cells {
        lo_x = lo_x.min(c.center.x);
        lo_y = lo_y.min(c.center.y);
        hi_x = hi_x.max(c.center.x);
        hi_y = hi_y.max(c.center.y);
    }
    vec![
        GeoPoint::new(lo_x - side, lo_y - side),
        GeoPoint::new(hi_x + side, lo_y - side),
        GeoPoint::new(hi_x + side, hi_y + side),
        GeoPoint::new(lo_x - side, hi_y + side),
    ]
}

fn dominant(spec: &SyntheticSpec, k: usize) -> [f64; 3] {
    let rest = (1.0 - spec.purity) / 2.0;
    let mut w = [rest; 3];
    w[k] = spec.purity;
    w
}

fn land_use(spec: &SyntheticSpec, cell: &HexCell, origin: GeoPoint, radius: f64, jitter: [f64; 3]) -> [f64; 3] {
    let center = cell.center;
    let raw = match spec.layout {
        Layout::Radial => {
            let r = center.dist(&origin) / radius.max(1e-9);
            [0.25 + r, 1.6 * (-(r / 0.35).powi(2)).exp(), 0.9 * (-((r - 0.5) / 0.2).powi(2)).exp()]
        }
        Layout::Stripes { width } => {
            let band = (f64::from(cell.axial.0) / width).floor() as i64;
            dominant(spec, band.rem_euclid(3) as usize)
        }
        Layout::Patches { size } => {
            let (q, r) = cell.axial;
            let block = [q.div_euclid(size as i32) as i64 as u64, r.div_euclid(size as i32) as i64 as u64];
            dominant(spec, (rng::mix(spec.seed, &[Stream::Synthetic as u64, block[0], block[1]]) % 3) as usize)
        }
    };
    let w: Vec<f64> = raw.iter().zip(jitter).map(|(a, j)| (a * j).max(1e-6)).collect();
    let total: f64 = w.iter().sum();
    [w[0] / total, w[1] / total, w[2] / total]
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let grid = compact_grid(spec.cells, spec.side_m)?;
    let n = grid.len();
    let mut rng = rng::tagged(spec.seed, Stream::Synthetic);
    let origin = GeoPoint::mean(grid.centers()).unwrap_or(grid.origin());
    let radius = grid.cells.iter().map(|c| c.center.dist(&origin)).fold(0.0, f64::max) + spec.side_m;

    let lognormal = LogNormal::new(0.0, spec.attractiveness_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter_dist = LogNormal::new(0.0, 0.15).map_err(|e| Error::invalid(e.to_string()))?;
    let mut mix = Vec::with_capacity(n);
    let mut attractiveness = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    for c in &grid.cells {
        let jitter = match spec.layout {
            Layout::Radial => [jitter_dist.sample(&mut rng), jitter_dist.sample(&mut rng), jitter_dist.sample(&mut rng)],
            Layout::Stripes { .. } | Layout::Patches { .. } => [1.0; 3],
        };
        mix.push(land_use(spec, c, origin, radius, jitter));
        let r = c.center.dist(&origin) / radius;
        let a = lognormal.sample(&mut rng) * (1.5 - r).max(0.3);
        attractiveness.push(a);
        density.push(a * jitter_dist.sample(&mut rng));
    }

    let intra = 0.7 * spec.side_m;
    let distance: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { intra } else { grid.cells[i].center.dist(&grid.cells[j].center).max(intra) })
                .collect()
        })
        .collect();

    let p = SLOTS_PER_DAY;
    let mut origin_rate = vec![vec![0.0; p]; n];
    let mut attract = vec![vec![0.0; p]; n];
    for t in 1..=p {
        let h = slot_hour(t);
        let (dep, att) = (departure_profile(h), attraction_profile(h));
        for i in 0..n {
            origin_rate[i][t - 1] = attractiveness[i] * (0..3).map(|k| mix[i][k] * dep[k]).sum::<f64>();
            attract[i][t - 1] = attractiveness[i] * (0..3).map(|k| mix[i][k] * att[k]).sum::<f64>();
        }
    }
    let total: f64 = origin_rate.iter().flatten().sum();
    let scale = spec.daily_demand / total;
    origin_rate.iter_mut().flatten().for_each(|v| *v *= scale);

    let mut trips = Tensor3::zeros(n, p);
    let mut activity = ActivityMatrix::zeros(n, p);
    let noise = spec.activity_noise;
    for t in 1..=p {
        let o: Vec<f64> = (0..n).map(|i| origin_rate[i][t - 1]).collect();
        let a: Vec<f64> = (0..n).map(|i| attract[i][t - 1]).collect();
        let flows = gravity(&o, &a, &distance, spec.decay);
        for i in 0..n {
            for j in 0..n {
                trips.set(i, j, t, flows[i][j]);
            }
            let eps = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
            activity.set(i, t, spec.delta * o[i] * (1.0 + eps));
        }
    }

    let minutes = Tensor3::from_fn(n, p, |i, j, t| {
        let speed = speed_at(slot_hour(t), spec.speed_kmh, spec.rush_speed_kmh);
        spec.overhead_min + 60.0 * spec.detour * distance[i][j] / 1000.0 / speed
    });
    let travel = TravelTimeTensor::new(minutes);

    let presence: Vec<f64> = (0..n).map(|i| attractiveness[i] * (0.3 + mix[i][RESIDENTIAL])).collect();
    let car_profile = car_profile(&trips, &presence, spec.fleet);

    Ok(SyntheticCity {
        spec: spec.clone(),
        grid,
        mix,
        attractiveness,
        density,
        distance,
        trips,
        activity,
        travel,
        presence,
        car_profile,
    })
}

/// Parked vehicles per zone implied by net flows, starting from a fleet
/// spread by `presence`. Only a share of the flow is assumed to be served.
pub fn car_profile(trips: &TripStats, presence: &[f64], fleet: u32) -> Vec<Vec<f64>> {
    let (n, p) = (trips.zones(), trips.slots());
    let weight: f64 = presence.iter().sum();
    let served = 0.6;
    let mut cars: Vec<f64> = presence.iter().map(|w| f64::from(fleet) * w / weight.max(1e-12)).collect();
    let mut out = vec![vec![0.0; p]; n];
    for t in 1..=p {
        let mut inflow = vec![0.0; n];
        for i in 0..n {
            for (j, v) in trips.row(i, t).iter().enumerate() {
                inflow[j] += v;
            }
        }
        for i in 0..n {
            let outflow: f64 = trips.row(i, t).iter().sum();
            cars[i] = (cars[i] + served * (inflow[i] - outflow)).max(0.0);
            out[i][t - 1] = cars[i];
        }
    }
    out
}

impl SyntheticCity {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Activity per cell over one day.
    pub fn activity_series(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| (1..=self.activity.slots()).map(|t| self.activity.get(i, t)).collect()).collect()
    }

    /// Dominant land-use type per cell.
    pub fn dominant_type(&self) -> Vec<usize> {
        self.mix
            .iter()
            .map(|w| (0..3).fold(0, |best, k| if w[k] > w[best] { k } else { best }))
            .collect()
    }

    /// Multi-day parked-vehicle history per cell: the daily profile with a
    /// multiplicative AR(1) disturbance and additive noise.
    pub fn car_history(&self, days: usize, seed: u64) -> Vec<Vec<f64>> {
        car_history(&self.car_profile, days, seed)
    }

    /// Zone-level tensors for a partition given as one label per cell.
    pub fn aggregate(&self, labels: &[usize]) -> Result<ZoneInstance> {
        aggregate(&self.trips, &self.activity, &self.travel, &self.presence, &self.car_profile, labels)
    }

    /// Writes the dataset as CSV files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.grid.write_csv(&dir.join("grid.csv"))?;
        self.trips.write_csv(&dir.join("trips.csv"), true)?;
        self.activity.write_csv(&dir.join("activity.csv"))?;
        self.travel.tensor().write_csv(&dir.join("travel.csv"), true)?;
        let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
        w.write_record(["cell", "x", "y", "density", "attractiveness", "presence", "residential", "business", "leisure"])?;
        for (k, c) in self.grid.cells.iter().enumerate() {
            w.write_record([
                c.id.to_string(),
                c.center.x.to_string(),
                c.center.y.to_string(),
                self.density[k].to_string(),
                self.attractiveness[k].to_string(),
                self.presence[k].to_string(),
                self.mix[k][0].to_string(),
                self.mix[k][1].to_string(),
                self.mix[k][2].to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("cars.csv"))?;
        w.write_record(["cell", "t", "cars"])?;
        for (k, series) in self.car_profile.iter().enumerate() {
            for (s, v) in series.iter().enumerate() {
                w.write_record([k.to_string(), (s + 1).to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(dir.join("spec.json"), spec)?;
        Ok(())
    }
}

pub fn car_history(profile: &[Vec<f64>], days: usize, seed: u64) -> Vec<Vec<f64>> {
    profile
        .iter()
        .enumerate()
        .map(|(i, day)| {
            let mut rng = rng::stream(seed, Stream::Synthetic, days, i);
            let shock = Normal::new(0.0, 0.04).expect("finite sd");
            let level: f64 = day.iter().sum::<f64>() / day.len().max(1) as f64;
            let noise = Normal::new(0.0, 0.05 * level.max(0.1)).expect("finite sd");
            let mut ar = 0.0;
            let mut out = Vec::with_capacity(days * day.len());
            for _ in 0..days {
                for &v in day {
                    ar = 0.9 * ar + shock.sample(&mut rng);
                    out.push((v * (1.0 + ar) + noise.sample(&mut rng)).max(0.0));
                }
            }
            out
        })
        .collect()
}

/// Tensors of a zone-level instance built from cells.
#[derive(Debug, Clone)]
pub struct ZoneInstance {
    pub trips: TripStats,
    pub activity: ActivityMatrix,
    pub travel: TravelTimeTensor,
    pub presence: Vec<f64>,
    pub car_profile: Vec<Vec<f64>>,
    /// Cell indices of each zone.
    pub members: Vec<Vec<usize>>,
}

/// Sums trips, activity, presence and parked vehicles over zone members.
/// Travel times are trip-weighted means over member pairs.
pub fn aggregate(
    trips: &TripStats,
    activity: &ActivityMatrix,
    travel: &TravelTimeTensor,
    presence: &[f64],
    car_profile: &[Vec<f64>],
    labels: &[usize],
) -> Result<ZoneInstance> {
    let (n, p) = (trips.zones(), trips.slots());
    if labels.len() != n || presence.len() != n || activity.zones() != n || travel.zones() != n {
        return Err(Error::invalid("labels and tensors disagree on the number of cells"));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let zone: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).expect("label present")).collect();
    let z = ids.len();
    let mut members = vec![Vec::new(); z];
    for (k, &a) in zone.iter().enumerate() {
        members[a].push(k);
    }

    let mut tr = Tensor3::zeros(z, p);
    let mut tt = Tensor3::zeros(z, p);
    let mut wsum = Tensor3::zeros(z, p);
    for t in 1..=p {
        for i in 0..n {
            let row = trips.row(i, t);
            let trow = travel.row(i, t);
            for j in 0..n {
                let (a, b) = (zone[i], zone[j]);
                let w = row[j];
                tr.set(a, b, t, tr.get(a, b, t) + w);
                tt.set(a, b, t, tt.get(a, b, t) + w * trow[j]);
                wsum.set(a, b, t, wsum.get(a, b, t) + w);
            }
        }
    }
    for t in 1..=p {
        for a in 0..z {
            for b in 0..z {
                let w = wsum.get(a, b, t);
                let v = if w > 0.0 {
                    tt.get(a, b, t) / w
                } else {
                    let mut s = 0.0;
                    for &i in &members[a] {
                        for &j in &members[b] {
                            s += travel.get(i, j, t);
                        }
                    }
                    s / (members[a].len() * members[b].len()) as f64
                };
                tt.set(a, b, t, v);
            }
        }
    }

    let mut act = ActivityMatrix::zeros(z, p);
    for i in 0..n {
        for t in 1..=p {
            act.set(zone[i], t, act.get(zone[i], t) + activity.get(i, t));
        }
    }
    let mut pres = vec![0.0; z];
    let mut cars = vec![vec![0.0; car_profile.first().map_or(0, Vec::len)]; z];
    for i in 0..n {
        pres[zone[i]] += presence[i];
        if let Some(series) = car_profile.get(i) {
            for (s, v) in series.iter().enumerate() {
                cars[zone[i]][s] += v;
            }
        }
    }
    Ok(ZoneInstance {
        trips: tr,
        activity: act,
        travel: TravelTimeTensor::new(tt),
        presence: pres,
        car_profile: cars,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_city_is_finite() {
        let city = generate(&SyntheticSpec { cells: 2, ..Default::default() }).unwrap();
        assert_eq!(city.trips.zones(), 2);
        assert_eq!(city.trips.slots(), 96);
        assert_eq!(city.travel.zones(), 2);
        assert!(city.trips.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(city.travel.tensor().values().iter().all(|v| v.is_finite() && *v > 0.0));
        assert!((0..2).all(|i| (1..=96).all(|t| city.activity.get(i, t).is_finite())));
    }

    #[test]
    fn activity_tracks_delta_times_trips() {
        let city = generate(&SyntheticSpec::default()).unwrap();
        let act: f64 = city.activity.totals().iter().sum();
        let trips: f64 = city.trips.values().iter().sum();
        let ratio = act / trips;
        assert!((ratio / 15.0 - 1.0).abs() < 0.1, "ratio {ratio}");
        assert!((trips - 1500.0).abs() < 1e-6 * 1500.0);
    }

    #[test]
    fn distance_decay_on_a_line() {
        let d = vec![vec![1.0, 1000.0, 2000.0], vec![1000.0, 1.0, 1000.0], vec![2000.0, 1000.0, 1.0]];
        let flows = gravity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0], &d, 1.0);
        assert!((flows[0][1] / flows[0][2] - 2.0).abs() < 1e-12);
        assert!((flows[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec { cells: 12, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.trips, b.trips);
        assert_eq!(a.activity, b.activity);
        assert_eq!(a.car_history(2, 1), b.car_history(2, 1));
    }

    #[test]
    fn rush_hours_are_slower() {
        let spec = SyntheticSpec::default();
        let city = generate(&SyntheticSpec { cells: 7, ..spec }).unwrap();
        let night = city.travel.get(0, 3, 13);
        let morning = city.travel.get(0, 3, 33);
        assert!(morning > night);
    }

    #[test]
    fn stripes_plant_dominant_types() {
        let spec = SyntheticSpec { cells: 60, layout: Layout::Stripes { width: 1.0 }, ..Default::default() };
        let city = generate(&spec).unwrap();
        let types = city.dominant_type();
        for k in 0..3 {
            assert!(types.iter().any(|&t| t == k));
        }
    }

    #[test]
    fn aggregation_preserves_totals() {
        let city = generate(&SyntheticSpec { cells: 10, ..Default::default() }).unwrap();
        let labels: Vec<usize> = (0..10).map(|k| k / 3).collect();
        let z = city.aggregate(&labels).unwrap();
        assert_eq!(z.trips.zones(), 4);
        let a: f64 = city.trips.values().iter().sum();
        let b: f64 = z.trips.values().iter().sum();
        assert!((a - b).abs() < 1e-9 * a);
        let identity = city.aggregate(&(0..10).collect::<Vec<_>>()).unwrap();
        for (x, y) in identity.travel.tensor().values().iter().zip(city.travel.tensor().values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_ids_are_positions() {
        let g = compact_grid(19, 500.0).unwrap();
        assert_eq!(g.len(), 19);
        for (k, c) in g.cells.iter().enumerate() {
            assert_eq!(c.id, k);
            assert!(c.neighbor_ids.iter().all(|&nb| nb < 19));
        }
        assert_eq!(g.cells.iter().filter(|c| c.neighbor_ids.len() == 6).count(), 7);
    }
}
