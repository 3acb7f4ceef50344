//! Discrete-time fleet simulation.
//!
//! Each slot runs four stages in order: scheduled arrivals materialize,
//! waiting clients take idle vehicles, the relocation policy (if any)
//! moves staff and vehicles, and transit decisions send staff by scooter.
//! Demand that is not served in its slot expires.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{duration_slots, effective_travel_time, sample_scenario, LambdaTensor, Scenario, TravelTimeTensor};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    /// Current 1-based slot (0 before the first slot).
    pub t: usize,
    pub horizon: usize,
    pub x_v: Vec<u32>,
    pub x_s: Vec<u32>,
    /// `arrivals_v[t'][i]`: vehicles appearing in zone `i` at slot `t'`.
    pub arrivals_v: Vec<Vec<u32>>,
    pub arrivals_s: Vec<Vec<u32>>,
    /// Staff arriving at `t'` in `i` who intend to relocate a vehicle.
    pub pending_intent: Vec<Vec<u32>>,
    /// Vehicles and staff whose arrival falls after the horizon.
    pub beyond_v: u32,
    pub beyond_s: u32,
    pub fleet: u32,
    pub staff: u32,
}

impl SimState {
    pub fn new(sc: &Scenario) -> Self {
        let (n, h) = (sc.zones, sc.horizon);
        Self {
            t: 0,
            horizon: h,
            x_v: sc.x_v0.clone(),
            x_s: sc.x_s0.clone(),
            arrivals_v: vec![vec![0; n]; h + 1],
            arrivals_s: vec![vec![0; n]; h + 1],
            pending_intent: vec![vec![0; n]; h + 1],
            beyond_v: 0,
            beyond_s: 0,
            fleet: sc.fleet(),
            staff: sc.staff(),
        }
    }

    fn schedule_vehicles(&mut self, slot: usize, zone: usize, count: u32) {
        if slot > self.horizon {
            self.beyond_v += count;
        } else {
            self.arrivals_v[slot][zone] += count;
        }
    }

    fn schedule_staff(&mut self, slot: usize, zone: usize, count: u32, intent: bool) {
        if slot > self.horizon {
            self.beyond_s += count;
        } else {
            self.arrivals_s[slot][zone] += count;
            if intent {
                self.pending_intent[slot][zone] += count;
            }
        }
    }

    /// Idle plus scheduled vehicles and staff, which must equal the fleet
    /// and staff sizes at all times.
    pub fn totals(&self) -> (u64, u64) {
        let future = self.t + 1..=self.horizon;
        let v: u64 = self.x_v.iter().map(|&x| u64::from(x)).sum::<u64>()
            + future.clone().flat_map(|s| self.arrivals_v[s].iter()).map(|&x| u64::from(x)).sum::<u64>()
            + u64::from(self.beyond_v);
        let s: u64 = self.x_s.iter().map(|&x| u64::from(x)).sum::<u64>()
            + future.flat_map(|s| self.arrivals_s[s].iter()).map(|&x| u64::from(x)).sum::<u64>()
            + u64::from(self.beyond_s);
        (v, s)
    }

    pub fn conserved(&self) -> bool {
        self.totals() == (u64::from(self.fleet), u64::from(self.staff))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Relocation,
    Transit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub from: usize,
    pub to: usize,
    pub count: u32,
}

impl Decision {
    pub fn relocate(from: usize, to: usize) -> Self {
        Self { kind: DecisionKind::Relocation, from, to, count: 1 }
    }

    pub fn transit(from: usize, to: usize) -> Self {
        Self { kind: DecisionKind::Transit, from, to, count: 1 }
    }
}

/// What a policy sees after client assignment in slot `t`.
pub struct SlotView<'a> {
    pub t: usize,
    pub horizon: usize,
    pub x_v: &'a [u32],
    pub x_s: &'a [u32],
    pub travel: &'a TravelTimeTensor,
    pub scooter_factor: f64,
    pub fleet: u32,
}

pub trait Policy: Send {
    fn name(&self) -> String;
    /// Relocations and transits for the current slot, applied in order.
    fn decide(&mut self, view: &SlotView<'_>) -> Vec<Decision>;
    /// Optimization calls that stopped on their budget so far.
    fn budget_hits(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub u_v: BTreeMap<(usize, usize, usize), u32>,
    pub u_r: BTreeMap<(usize, usize, usize), u32>,
    pub u_t: BTreeMap<(usize, usize, usize), u32>,
}

impl DecisionLog {
    fn add(map: &mut BTreeMap<(usize, usize, usize), u32>, i: usize, j: usize, t: usize, c: u32) {
        if c > 0 {
            *map.entry((i, j, t)).or_insert(0) += c;
        }
    }

    /// `kind,i,j,t,count`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kind", "i", "j", "t", "count"])?;
        for (kind, map) in [("u_v", &self.u_v), ("u_r", &self.u_r), ("u_t", &self.u_t)] {
            for (&(i, j, t), &c) in map {
                w.write_record([kind.to_string(), i.to_string(), j.to_string(), t.to_string(), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trips: u64,
    /// Hours, scored with the horizon-adjusted travel time.
    pub trip_time: f64,
    pub relocations: u64,
    pub reloc_time: f64,
    pub transits: u64,
    pub transit_time: f64,
    pub conflicts: u64,
    pub unmet_demand: u64,
}

pub const METRIC_FIELDS: [&str; 8] =
    ["trips", "trip_time", "relocations", "reloc_time", "transits", "transit_time", "conflicts", "unmet_demand"];

impl Metrics {
    pub fn fields(&self) -> [String; 8] {
        [
            self.trips.to_string(),
            self.trip_time.to_string(),
            self.relocations.to_string(),
            self.reloc_time.to_string(),
            self.transits.to_string(),
            self.transit_time.to_string(),
            self.conflicts.to_string(),
            self.unmet_demand.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub record_log: bool,
    pub check_conservation: bool,
    /// Scooter travel time as a multiple of car travel time.
    pub scooter_factor: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_log: false, check_conservation: false, scooter_factor: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub log: Option<DecisionLog>,
    /// Wall time spent inside the policy.
    pub decision_time: Duration,
    pub budget_hits: u64,
    /// Slots at which conservation failed (only when checked).
    pub violations: Vec<usize>,
}

/// Picks `min(x, Σ demand)` waiting demands uniformly without replacement
/// from the multiset described by `row` (`(destination, count)` pairs).
pub fn sample_assignments(row: &[(u32, u32)], x: u32, rng: &mut impl Rng) -> Vec<(u32, u32)> {
    let total: u32 = row.iter().map(|e| e.1).sum();
    if x >= total {
        return row.to_vec();
    }
    if x == 0 {
        return Vec::new();
    }
    let mut left: Vec<u32> = row.iter().map(|e| e.1).collect();
    let mut served = vec![0u32; row.len()];
    let mut remaining = total;
    for _ in 0..x {
        let mut u = rng.random_range(0..remaining);
        let mut k = 0;
        while u >= left[k] {
            u -= left[k];
            k += 1;
        }
        left[k] -= 1;
        served[k] += 1;
        remaining -= 1;
    }
    row.iter().zip(served).filter(|(_, s)| *s > 0).map(|(e, s)| (e.0, s)).collect()
}

/// Total client trip time in hours for a decision log.
pub fn score(log: &DecisionLog, travel: &TravelTimeTensor, horizon: usize) -> f64 {
    log.u_v
        .iter()
        .map(|(&(i, j, t), &c)| f64::from(c) * effective_travel_time(travel.get(i, j, t), t, horizon))
        .sum::<f64>()
        / 60.0
}

struct Engine<'a> {
    sc: &'a Scenario,
    travel: &'a TravelTimeTensor,
    opts: RunOptions,
    state: SimState,
    metrics: Metrics,
    log: Option<DecisionLog>,
    violations: Vec<usize>,
    intents: Vec<u32>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, travel: &'a TravelTimeTensor, opts: RunOptions, record: bool) -> Result<Self> {
        if travel.zones() != sc.zones {
            return Err(Error::invalid(format!("travel times cover {} zones, scenario has {}", travel.zones(), sc.zones)));
        }
        Ok(Self {
            sc,
            travel,
            opts,
            state: SimState::new(sc),
            metrics: Metrics::default(),
            log: record.then(DecisionLog::default),
            violations: Vec::new(),
            intents: vec![0; sc.zones],
        })
    }

    fn arrivals(&mut self, t: usize) {
        let st = &mut self.state;
        st.t = t;
        for i in 0..self.sc.zones {
            st.x_v[i] += std::mem::take(&mut st.arrivals_v[t][i]);
            st.x_s[i] += std::mem::take(&mut st.arrivals_s[t][i]);
            self.intents[i] = std::mem::take(&mut st.pending_intent[t][i]);
        }
    }

    fn serve(&mut self, i: usize, t: usize, served: &[(u32, u32)]) {
        let h = self.sc.horizon;
        for &(j, c) in served {
            let j = j as usize;
            let minutes = self.travel.get(i, j, t);
            self.state.x_v[i] -= c;
            self.state.schedule_vehicles(t + duration_slots(minutes), j, c);
            self.metrics.trips += u64::from(c);
            self.metrics.trip_time += f64::from(c) * effective_travel_time(minutes, t, h) / 60.0;
            if let Some(log) = self.log.as_mut() {
                DecisionLog::add(&mut log.u_v, i, j, t, c);
            }
        }
    }

    fn assign(&mut self, t: usize) {
        for i in 0..self.sc.zones {
            let row = self.sc.demand_row(i, t);
            if row.is_empty() {
                continue;
            }
            let total: u32 = row.iter().map(|e| e.1).sum();
            let x = self.state.x_v[i];
            self.metrics.unmet_demand += u64::from(total - x.min(total));
            let served = if x >= total {
                row.to_vec()
            } else if x == 0 {
                continue;
            } else {
                sample_assignments(row, x, &mut rng::stream(self.sc.seed, Stream::Assignment, t, i))
            };
            self.serve(i, t, &served);
        }
    }

    fn conflicts(&mut self) {
        for i in 0..self.sc.zones {
            if self.intents[i] > 0 && self.state.x_v[i] == 0 {
                self.metrics.conflicts += u64::from(self.intents[i]);
            }
        }
    }

    fn apply(&mut self, t: usize, d: &Decision) -> Result<()> {
        let n = self.sc.zones;
        if d.from >= n || d.to >= n || d.from == d.to {
            return Err(Error::invalid(format!("policy decision {d:?} has invalid zones")));
        }
        let (i, j, c) = (d.from, d.to, d.count);
        let h = self.sc.horizon;
        match d.kind {
            DecisionKind::Relocation => {
                if self.state.x_v[i] < c || self.state.x_s[i] < c {
                    return Err(Error::invalid(format!("relocation {d:?} exceeds idle vehicles or staff at slot {t}")));
                }
                let minutes = self.travel.get(i, j, t);
                let arrive = t + duration_slots(minutes);
                self.state.x_v[i] -= c;
                self.state.x_s[i] -= c;
                self.state.schedule_vehicles(arrive, j, c);
                self.state.schedule_staff(arrive, j, c, false);
                self.metrics.relocations += u64::from(c);
                self.metrics.reloc_time += f64::from(c) * effective_travel_time(minutes, t, h) / 60.0;
                if let Some(log) = self.log.as_mut() {
                    DecisionLog::add(&mut log.u_r, i, j, t, c);
                }
            }
            DecisionKind::Transit => {
                if self.state.x_s[i] < c {
                    return Err(Error::invalid(format!("transit {d:?} exceeds idle staff at slot {t}")));
                }
                let minutes = self.opts.scooter_factor * self.travel.get(i, j, t);
                self.state.x_s[i] -= c;
                self.state.schedule_staff(t + duration_slots(minutes), j, c, true);
                self.metrics.transits += u64::from(c);
                self.metrics.transit_time += f64::from(c) * effective_travel_time(minutes, t, h) / 60.0;
                if let Some(log) = self.log.as_mut() {
                    DecisionLog::add(&mut log.u_t, i, j, t, c);
                }
            }
        }
        Ok(())
    }

    fn check(&mut self, t: usize) {
        if self.opts.check_conservation && !self.state.conserved() {
            self.violations.push(t);
        }
    }

    fn finish(self, decision_time: Duration) -> RunOutcome {
        RunOutcome { metrics: self.metrics, log: self.log, decision_time, budget_hits: 0, violations: self.violations }
    }
}

/// Simulates one scenario over its horizon; `policy = None` is the
/// no-relocation baseline.
pub fn run_scenario(
    sc: &Scenario,
    mut policy: Option<&mut dyn Policy>,
    travel: &TravelTimeTensor,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let mut eng = Engine::new(sc, travel, *opts, opts.record_log)?;
    let mut decision_time = Duration::ZERO;
    for t in 1..=sc.horizon {
        eng.arrivals(t);
        eng.assign(t);
        eng.conflicts();
        if let Some(p) = policy.as_deref_mut() {
            let view = SlotView {
                t,
                horizon: sc.horizon,
                x_v: &eng.state.x_v,
                x_s: &eng.state.x_s,
                travel,
                scooter_factor: opts.scooter_factor,
                fleet: eng.state.fleet,
            };
            let start = Instant::now();
            let decisions = p.decide(&view);
            decision_time += start.elapsed();
            for d in &decisions {
                eng.apply(t, d)?;
            }
        }
        eng.check(t);
    }
    let mut out = eng.finish(decision_time);
    out.budget_hits = policy.map_or(0, |p| p.budget_hits());
    Ok(out)
}

/// Re-executes a scenario from a decision log instead of sampling and
/// policy calls. Errors if any logged decision is infeasible.
pub fn replay(sc: &Scenario, log: &DecisionLog, travel: &TravelTimeTensor, opts: &RunOptions) -> Result<Metrics> {
    let mut eng = Engine::new(sc, travel, *opts, false)?;
    let by_slot = |map: &BTreeMap<(usize, usize, usize), u32>| {
        let mut out: BTreeMap<usize, Vec<(usize, usize, u32)>> = BTreeMap::new();
        for (&(i, j, t), &c) in map {
            out.entry(t).or_default().push((i, j, c));
        }
        out
    };
    let (uv, ur, ut) = (by_slot(&log.u_v), by_slot(&log.u_r), by_slot(&log.u_t));
    for t in 1..=sc.horizon {
        eng.arrivals(t);
        let mut per_zone: BTreeMap<usize, Vec<(u32, u32)>> = BTreeMap::new();
        for &(i, j, c) in uv.get(&t).into_iter().flatten() {
            if c > sc.demand_at(i, j, t) {
                return Err(Error::invalid(format!("logged trips ({i},{j},{t}) exceed demand")));
            }
            per_zone.entry(i).or_default().push((j as u32, c));
        }
        for i in 0..sc.zones {
            let total: u32 = sc.demand_row(i, t).iter().map(|e| e.1).sum();
            let served = per_zone.remove(&i).unwrap_or_default();
            let k: u32 = served.iter().map(|e| e.1).sum();
            if k > eng.state.x_v[i] {
                return Err(Error::invalid(format!("logged trips from zone {i} at slot {t} exceed idle vehicles")));
            }
            eng.metrics.unmet_demand += u64::from(total - k);
            eng.serve(i, t, &served);
        }
        eng.conflicts();
        for (kind, src) in [(DecisionKind::Relocation, &ur), (DecisionKind::Transit, &ut)] {
            for &(from, to, count) in src.get(&t).into_iter().flatten() {
                eng.apply(t, &Decision { kind, from, to, count })?;
            }
        }
        eng.check(t);
    }
    Ok(eng.finish(Duration::ZERO).metrics)
}

/// Everything needed to sample the scenarios of a batch.
#[derive(Debug, Clone)]
pub struct ScenarioSource<'a> {
    pub lambda: &'a LambdaTensor,
    pub fleet: u32,
    pub staff: u32,
    pub presence: &'a [f64],
    pub base_seed: u64,
}

impl ScenarioSource<'_> {
    pub fn scenario(&self, index: usize) -> Result<Scenario> {
        let seed = rng::scenario_seed(self.base_seed, index as u64);
        sample_scenario(self.lambda, self.fleet, self.staff, self.presence, seed)
    }
}

/// Builds a fresh policy for a scenario; `None` means no relocation.
pub type PolicyFactory<'a> = dyn Fn(&Scenario) -> Option<Box<dyn Policy>> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub index: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub decision_time: Duration,
    pub budget_hits: u64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct SaaResult {
    pub mean: f64,
    pub std: f64,
    pub scenarios: Vec<ScenarioResult>,
}

impl SaaResult {
    fn from_scenarios(scenarios: Vec<ScenarioResult>) -> Self {
        let scores: Vec<f64> = scenarios.iter().map(|s| s.metrics.trip_time).collect();
        Self { mean: stats::mean(&scores), std: stats::std_dev(&scores), scenarios }
    }

    pub fn mean_of(&self, f: impl Fn(&Metrics) -> f64) -> f64 {
        let v: Vec<f64> = self.scenarios.iter().map(|s| f(&s.metrics)).collect();
        stats::mean(&v)
    }
}

/// Sample average over `n` scenarios. Each scenario is sampled once and run
/// under every arm, so arms are compared on identical demand.
pub fn run_arms(
    source: &ScenarioSource<'_>,
    travel: &TravelTimeTensor,
    n: usize,
    arms: &[&PolicyFactory<'_>],
    opts: &RunOptions,
) -> Result<Vec<SaaResult>> {
    if n == 0 {
        return Err(Error::invalid("scenario count must be at least 1"));
    }
    let per_scenario: Vec<Vec<ScenarioResult>> = (0..n)
        .into_par_iter()
        .map(|index| {
            let sc = source.scenario(index)?;
            arms.iter()
                .map(|make| {
                    let mut policy = make(&sc);
                    let out = run_scenario(&sc, policy.as_deref_mut().map(|p| p as &mut dyn Policy), travel, opts)?;
                    Ok(ScenarioResult {
                        index,
                        seed: sc.seed,
                        metrics: out.metrics,
                        decision_time: out.decision_time,
                        budget_hits: out.budget_hits,
                        violations: out.violations.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns: Vec<Vec<ScenarioResult>> = vec![Vec::with_capacity(n); arms.len()];
    for row in per_scenario {
        for (a, r) in row.into_iter().enumerate() {
            columns[a].push(r);
        }
    }
    Ok(columns.into_iter().map(SaaResult::from_scenarios).collect())
}

/// Single-arm sample average approximation.
pub fn run_saa(
    source: &ScenarioSource<'_>,
    travel: &TravelTimeTensor,
    n: usize,
    policy: &PolicyFactory<'_>,
    opts: &RunOptions,
) -> Result<SaaResult> {
    Ok(run_arms(source, travel, n, &[policy], opts)?.remove(0))
}

/// Per-scenario metrics CSV.
pub fn write_metrics_csv(path: &Path, rows: &[(String, &ScenarioResult)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["policy".to_string(), "scenario".to_string(), "seed".to_string()];
    header.extend(METRIC_FIELDS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (policy, r) in rows {
        let mut rec = vec![policy.clone(), r.index.to_string(), r.seed.to_string()];
        rec.extend(r.metrics.fields());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
