//! Demand calibration and scenario sampling.
//!
//! Slots are 1-based in every public signature and file format; tensors
//! store them 0-based internally.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::{stats, zoning, SLOT_MINUTES};

/// Dense `N × N × P` tensor, laid out `[t][i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self { n, p, data: vec![0.0; n * n * p] }
    }

    pub fn filled(n: usize, p: usize, v: f64) -> Self {
        Self { n, p, data: vec![v; n * n * p] }
    }

    pub fn from_fn(n: usize, p: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(n, p);
        for t in 1..=p {
            for i in 0..n {
                for j in 0..n {
                    out.set(i, j, t, f(i, j, t));
                }
            }
        }
        out
    }

    pub fn zones(&self) -> usize {
        self.n
    }

    pub fn slots(&self) -> usize {
        self.p
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.p, "slot {t} out of 1..={}", self.p);
        ((t - 1) * self.n + i) * self.n + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.data[self.idx(i, j, t)]
    }

    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        let k = self.idx(i, j, t);
        self.data[k] = v;
    }

    /// Row `i` at slot `t` over all destinations.
    #[inline]
    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let k = self.idx(i, 0, t);
        &self.data[k..k + self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Restriction to a subset of zones, in the given order.
    pub fn slice(&self, zones: &[usize]) -> Self {
        Self::from_fn(zones.len(), self.p, |a, b, t| self.get(zones[a], zones[b], t))
    }

    /// Long-format CSV `i,j,t,value`; absent entries become `fill`.
    pub fn read_csv(path: &Path, n: usize, p: usize, fill: f64) -> Result<Self> {
        let mut out = Self::filled(n, p, fill);
        let mut rdr = csv::Reader::from_path(path)?;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::data(path, format!("row {}: expected i,j,t,value", line + 2));
            let get = |k: usize| rec.get(k).map(str::trim).ok_or_else(bad);
            let i: usize = get(0)?.parse().map_err(|_| bad())?;
            let j: usize = get(1)?.parse().map_err(|_| bad())?;
            let t: usize = get(2)?.parse().map_err(|_| bad())?;
            let v: f64 = get(3)?.parse().map_err(|_| bad())?;
            if i >= n || j >= n || t == 0 || t > p {
                return Err(Error::data(path, format!("row {}: index ({i},{j},{t}) out of range", line + 2)));
            }
            out.set(i, j, t, v);
        }
        Ok(out)
    }

    /// Writes nonzero entries (all entries when `dense`).
    pub fn write_csv(&self, path: &Path, dense: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "t", "value"])?;
        for t in 1..=self.p {
            for i in 0..self.n {
                for j in 0..self.n {
                    let v = self.get(i, j, t);
                    if dense || v != 0.0 {
                        w.write_record([i.to_string(), j.to_string(), t.to_string(), v.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Average trips per day from zone `i` to `j` starting at slot `t`.
pub type TripStats = Tensor3;

/// `N × P` matrix laid out `[t][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl ActivityMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self { n, p, data: vec![0.0; n * p] }
    }

    pub fn zones(&self) -> usize {
        self.n
    }

    pub fn slots(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[(t - 1) * self.n + i]
    }

    pub fn set(&mut self, i: usize, t: usize, v: f64) {
        self.data[(t - 1) * self.n + i] = v;
    }

    /// Sum over zones per slot.
    pub fn totals(&self) -> Vec<f64> {
        (1..=self.p).map(|t| (0..self.n).map(|i| self.get(i, t)).sum()).collect()
    }

    pub fn slice(&self, zones: &[usize]) -> Self {
        let mut out = Self::zeros(zones.len(), self.p);
        for t in 1..=self.p {
            for (a, &z) in zones.iter().enumerate() {
                out.set(a, t, self.get(z, t));
            }
        }
        out
    }

    /// Long-format CSV `i,t,value`.
    pub fn read_csv(path: &Path, n: usize, p: usize) -> Result<Self> {
        let mut out = Self::zeros(n, p);
        let mut rdr = csv::Reader::from_path(path)?;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::data(path, format!("row {}: expected i,t,value", line + 2));
            let get = |k: usize| rec.get(k).map(str::trim).ok_or_else(bad);
            let i: usize = get(0)?.parse().map_err(|_| bad())?;
            let t: usize = get(1)?.parse().map_err(|_| bad())?;
            let v: f64 = get(2)?.parse().map_err(|_| bad())?;
            if i >= n || t == 0 || t > p {
                return Err(Error::data(path, format!("row {}: index ({i},{t}) out of range", line + 2)));
            }
            out.set(i, t, v);
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "t", "value"])?;
        for t in 1..=self.p {
            for i in 0..self.n {
                w.write_record([i.to_string(), t.to_string(), self.get(i, t).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Adds `α = 0.1 · min{positive entries}` to every entry.
pub fn smooth_trips(trips: &TripStats) -> Result<(TripStats, f64)> {
    let min_pos = trips.values().iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return Err(Error::invalid("trip statistics have no positive entry"));
    }
    if trips.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("trip statistics must be finite and nonnegative"));
    }
    let alpha = 0.1 * min_pos;
    let mut out = trips.clone();
    for v in out.values_mut() {
        *v += alpha;
    }
    Ok((out, alpha))
}

/// Poisson intensities `Λ[i, j, t]` over the simulation horizon, with
/// cached per-row cumulative sums for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTensor {
    values: Tensor3,
    cumulative: Vec<f64>,
    pub delta: f64,
    pub alpha: f64,
}

impl LambdaTensor {
    pub fn from_values(values: Tensor3, delta: f64, alpha: f64) -> Result<Self> {
        if values.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("intensities must be finite and nonnegative"));
        }
        let n = values.zones();
        let mut cumulative = values.values().to_vec();
        for row in cumulative.chunks_mut(n.max(1)) {
            let mut acc = 0.0;
            for v in row.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        Ok(Self { values, cumulative, delta, alpha })
    }

    pub fn zones(&self) -> usize {
        self.values.zones()
    }

    pub fn horizon(&self) -> usize {
        self.values.slots()
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.values.get(i, j, t)
    }

    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        self.values.row(i, t)
    }

    pub fn row_sum(&self, i: usize, t: usize) -> f64 {
        let n = self.zones();
        self.cumulative[self.values.idx(i, n - 1, t)]
    }

    fn cumulative_row(&self, i: usize, t: usize) -> &[f64] {
        let k = self.values.idx(i, 0, t);
        &self.cumulative[k..k + self.zones()]
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.values
    }

    pub fn slice(&self, zones: &[usize]) -> Result<Self> {
        Self::from_values(self.values.slice(zones), self.delta, self.alpha)
    }

    /// Same intensities multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut v = self.values.clone();
        for x in v.values_mut() {
            *x *= factor;
        }
        Self::from_values(v, self.delta, self.alpha)
    }
}

pub const DEFAULT_DELTA: f64 = 15.0;

/// `Λ[i,j,t] = AC̄[i,t] / (δ · Σ_j TR̄s[i,j,t]) · TR̄s[i,j,t]` on smoothed trips.
pub fn calibrate_lambda(smoothed: &TripStats, activity: &ActivityMatrix, delta: f64, alpha: f64) -> Result<LambdaTensor> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta must be positive"));
    }
    let (n, p) = (smoothed.zones(), smoothed.slots());
    if activity.zones() != n || activity.slots() != p {
        return Err(Error::invalid(format!(
            "activity is {}x{}, trips are {n}x{n}x{p}",
            activity.zones(),
            activity.slots()
        )));
    }
    let mut out = Tensor3::zeros(n, p);
    for t in 1..=p {
        for i in 0..n {
            let row = smoothed.row(i, t);
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::invalid(format!("trip row ({i}, {t}) sums to zero; smooth first")));
            }
            let factor = activity.get(i, t) / (delta * total);
            for j in 0..n {
                out.set(i, j, t, factor * row[j]);
            }
        }
    }
    LambdaTensor::from_values(out, delta, alpha)
}

/// Smooths the trips and calibrates in one go.
pub fn calibrate(trips: &TripStats, activity: &ActivityMatrix, delta: f64) -> Result<LambdaTensor> {
    let (smoothed, alpha) = smooth_trips(trips)?;
    calibrate_lambda(&smoothed, activity, delta, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub r2: Option<f64>,
    pub dtw: f64,
}

/// Similarity of `trips_total` and `activity_total / δ` for each candidate.
pub fn select_delta(activity_total: &[f64], trips_total: &[f64], candidates: &[f64]) -> Result<Vec<DeltaRow>> {
    if activity_total.len() != trips_total.len() || trips_total.is_empty() {
        return Err(Error::invalid("series must be nonempty and of equal length"));
    }
    candidates
        .iter()
        .map(|&delta| {
            if !(delta > 0.0) {
                return Err(Error::invalid("delta candidates must be positive"));
            }
            let scaled: Vec<f64> = activity_total.iter().map(|a| a / delta).collect();
            Ok(DeltaRow { delta, r2: stats::r2(trips_total, &scaled), dtw: zoning::dtw(trips_total, &scaled)? })
        })
        .collect()
}

/// Travel time in minutes adjusted to the horizon: trips that would end at
/// or after slot `h` only count the time left in the horizon.
pub fn effective_travel_time(minutes: f64, t: usize, h: usize) -> f64 {
    let slots = (minutes / SLOT_MINUTES).ceil() as usize;
    if t + slots < h {
        minutes
    } else {
        h.saturating_sub(t) as f64 * SLOT_MINUTES
    }
}

/// Slots a trip of `minutes` occupies (at least one).
pub fn duration_slots(minutes: f64) -> usize {
    ((minutes / SLOT_MINUTES).ceil() as usize).max(1)
}

/// Average trip duration in minutes, `N × N × P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeTensor {
    minutes: Tensor3,
}

impl TravelTimeTensor {
    /// Entries that are NaN or non-positive are treated as missing.
    pub fn new(minutes: Tensor3) -> Self {
        Self { minutes }
    }

    pub fn zones(&self) -> usize {
        self.minutes.zones()
    }

    pub fn slots(&self) -> usize {
        self.minutes.slots()
    }

    /// Minutes from `i` to `j` departing at 1-based slot `t`; slots past the
    /// table wrap around the day.
    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        let p = self.minutes.slots();
        self.minutes.get(i, j, (t - 1) % p + 1)
    }

    #[inline]
    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let p = self.minutes.slots();
        self.minutes.row(i, (t - 1) % p + 1)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.minutes
    }

    pub fn missing(&self) -> usize {
        self.minutes.values().iter().filter(|v| !(v.is_finite() && **v > 0.0)).count()
    }

    /// Fills gaps with the mean over slots of the same pair, then with
    /// `distance_m[i][j] / speed_m_per_min`.
    pub fn impute(&mut self, distance_m: Option<&[Vec<f64>]>, speed_m_per_min: f64) -> Result<usize> {
        let (n, p) = (self.zones(), self.slots());
        let mut filled = 0;
        for i in 0..n {
            for j in 0..n {
                let known: Vec<f64> =
                    (1..=p).map(|t| self.minutes.get(i, j, t)).filter(|v| v.is_finite() && *v > 0.0).collect();
                let fallback = if !known.is_empty() {
                    Some(stats::mean(&known))
                } else {
                    distance_m
                        .and_then(|d| d.get(i).and_then(|r| r.get(j)))
                        .map(|d| d / speed_m_per_min)
                        .filter(|v| v.is_finite() && *v > 0.0)
                };
                for t in 1..=p {
                    let v = self.minutes.get(i, j, t);
                    if !(v.is_finite() && v > 0.0) {
                        let f = fallback
                            .ok_or_else(|| Error::invalid(format!("no travel time available for pair ({i}, {j})")))?;
                        self.minutes.set(i, j, t, f);
                        filled += 1;
                    }
                }
            }
        }
        Ok(filled)
    }

    pub fn slice(&self, zones: &[usize]) -> Self {
        Self { minutes: self.minutes.slice(zones) }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.minutes.clone();
        for v in m.values_mut() {
            *v *= factor;
        }
        Self { minutes: m }
    }
}

/// One sampled day: demand, initial vehicles and staff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub zones: usize,
    pub horizon: usize,
    /// `demand[t-1][i]` lists `(j, count)` with `count > 0`, sorted by `j`.
    pub demand: Vec<Vec<Vec<(u32, u32)>>>,
    pub x_v0: Vec<u32>,
    pub x_s0: Vec<u32>,
}

impl Scenario {
    pub fn empty(zones: usize, horizon: usize, x_v0: Vec<u32>, x_s0: Vec<u32>) -> Self {
        Self { seed: 0, zones, horizon, demand: vec![vec![Vec::new(); zones]; horizon], x_v0, x_s0 }
    }

    #[inline]
    pub fn demand_row(&self, i: usize, t: usize) -> &[(u32, u32)] {
        &self.demand[t - 1][i]
    }

    pub fn demand_at(&self, i: usize, j: usize, t: usize) -> u32 {
        self.demand_row(i, t).iter().find(|(d, _)| *d as usize == j).map_or(0, |e| e.1)
    }

    /// Adds `count` demands from `i` to `j` at slot `t`.
    pub fn add_demand(&mut self, i: usize, j: usize, t: usize, count: u32) {
        let row = &mut self.demand[t - 1][i];
        match row.binary_search_by_key(&(j as u32), |e| e.0) {
            Ok(k) => row[k].1 += count,
            Err(k) => row.insert(k, (j as u32, count)),
        }
    }

    pub fn total_demand(&self) -> u64 {
        self.demand.iter().flatten().flatten().map(|e| u64::from(e.1)).sum()
    }

    pub fn fleet(&self) -> u32 {
        self.x_v0.iter().sum()
    }

    pub fn staff(&self) -> u32 {
        self.x_s0.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let triplets: Vec<[u64; 4]> = self
            .demand
            .iter()
            .enumerate()
            .flat_map(|(t, rows)| {
                rows.iter().enumerate().flat_map(move |(i, row)| {
                    row.iter().map(move |&(j, c)| [i as u64, u64::from(j), t as u64 + 1, u64::from(c)])
                })
            })
            .collect();
        Ok(serde_json::to_string(&serde_json::json!({
            "seed": self.seed,
            "zones": self.zones,
            "horizon": self.horizon,
            "D": triplets,
            "x_v0": self.x_v0,
            "x_s0": self.x_s0,
        }))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            seed: u64,
            zones: usize,
            horizon: usize,
            #[serde(rename = "D")]
            d: Vec<[u64; 4]>,
            x_v0: Vec<u32>,
            x_s0: Vec<u32>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        if raw.x_v0.len() != raw.zones || raw.x_s0.len() != raw.zones {
            return Err(Error::invalid("scenario vectors do not match zone count"));
        }
        let mut sc = Scenario::empty(raw.zones, raw.horizon, raw.x_v0, raw.x_s0);
        sc.seed = raw.seed;
        for [i, j, t, c] in raw.d {
            let (i, j, t) = (i as usize, j as usize, t as usize);
            if i >= sc.zones || j >= sc.zones || t == 0 || t > sc.horizon {
                return Err(Error::invalid(format!("demand entry ({i},{j},{t}) out of range")));
            }
            sc.add_demand(i, j, t, c as u32);
        }
        Ok(sc)
    }
}

fn pick(cumulative: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cumulative.last().unwrap();
    let u = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Draws `count` items from a categorical distribution with the given
/// nonnegative weights; uniform when all weights are zero.
pub fn multinomial(count: u32, weights: &[f64], rng: &mut impl Rng) -> Vec<u32> {
    let mut out = vec![0u32; weights.len()];
    if weights.is_empty() {
        return out;
    }
    let mut cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w.max(0.0);
            Some(*acc)
        })
        .collect();
    if *cumulative.last().unwrap() <= 0.0 {
        cumulative = (1..=weights.len()).map(|k| k as f64).collect();
    }
    for _ in 0..count {
        out[pick(&cumulative, rng)] += 1;
    }
    out
}

/// Samples one scenario. For each `(i, t)` the row total is drawn from
/// `Poisson(Σ_j Λ[i,j,t])` and split over destinations in proportion to
/// `Λ[i,·,t]`, which gives independent `Poisson(Λ[i,j,t])` counts.
pub fn sample_scenario(lambda: &LambdaTensor, fleet: u32, staff: u32, presence: &[f64], seed: u64) -> Result<Scenario> {
    let (n, h) = (lambda.zones(), lambda.horizon());
    if presence.len() != n {
        return Err(Error::invalid(format!("{} presence weights for {n} zones", presence.len())));
    }
    let mut demand = vec![vec![Vec::new(); n]; h];
    for t in 1..=h {
        for i in 0..n {
            let total = lambda.row_sum(i, t);
            if total <= 0.0 {
                continue;
            }
            let mut rng = rng::stream(seed, Stream::Demand, t, i);
            let k = Poisson::new(total).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng) as u64;
            if k == 0 {
                continue;
            }
            let cum = lambda.cumulative_row(i, t);
            let mut counts: Vec<(u32, u32)> = Vec::new();
            for _ in 0..k {
                let j = pick(cum, &mut rng) as u32;
                match counts.binary_search_by_key(&j, |e| e.0) {
                    Ok(p) => counts[p].1 += 1,
                    Err(p) => counts.insert(p, (j, 1)),
                }
            }
            demand[t - 1][i] = counts;
        }
    }
    let x_v0 = multinomial(fleet, presence, &mut rng::tagged(seed, Stream::Fleet));
    let x_s0 = multinomial(staff, &vec![1.0; n], &mut rng::tagged(seed, Stream::Staff));
    Ok(Scenario { seed, zones: n, horizon: h, demand, x_v0, x_s0 })
}
