//! Benchmark harnesses: staff sweep, zoning impact, predictor comparison,
//! greedy versus local programs, and decision-time scaling.
//!
//! Every harness samples scenarios once per index from a fixed base seed and
//! runs all compared arms on the same scenarios.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::demand::{calibrate, ActivityMatrix, LambdaTensor, Scenario, TravelTimeTensor, TripStats};
use crate::error::{Error, Result};
use crate::localmip::{MipPolicy, MipPolicyConfig};
use crate::predictors::{
    fit_models, holdout_r2, BaselinePredictors, BufferedPredictors, LinearModel, PredictorConfig, PredictorKind, Predictors,
    SeriesBuffer,
};
use crate::relocation::{RankingPolicy, RelocParams};
use crate::rng::{self, Stream};
use crate::sim::{run_arms, Metrics, Policy, PolicyFactory, RunOptions, SaaResult, ScenarioSource};
use crate::stats;
use crate::synthetic::{SyntheticCity, ZoneInstance};
use crate::tuning::{search, Evaluator, SearchConfig, SearchResult};
use crate::zoning::baselines::{agglomerative, bisecting_kmeans, kmeans, Linkage};
use crate::zoning::{agglomerative_cluster, euclidean_adjacent_distances, CellData, DistanceWeights};

/// Calibrated tensors ready for simulation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub lambda: Arc<LambdaTensor>,
    pub travel: TravelTimeTensor,
    pub presence: Vec<f64>,
    /// Past idle-vehicle counts per zone, oldest first; feeds buffered
    /// predictors. May be empty.
    pub car_history: Vec<Vec<f64>>,
}

impl Instance {
    pub fn calibrate(trips: &TripStats, activity: &ActivityMatrix, travel: TravelTimeTensor, presence: Vec<f64>, delta: f64) -> Result<Self> {
        let lambda = calibrate(trips, activity, delta)?;
        if travel.zones() != lambda.zones() || presence.len() != lambda.zones() {
            return Err(Error::invalid("travel times, presence and demand disagree on the zone count"));
        }
        Ok(Self { lambda: Arc::new(lambda), travel, presence, car_history: Vec::new() })
    }

    pub fn from_city(city: &SyntheticCity, history_days: usize) -> Result<Self> {
        let mut inst =
            Self::calibrate(&city.trips, &city.activity, city.travel.clone(), city.presence.clone(), city.spec.delta)?;
        inst.car_history = city.car_history(history_days, city.spec.seed);
        Ok(inst)
    }

    pub fn from_zones(zones: &ZoneInstance, delta: f64, history_days: usize, seed: u64) -> Result<Self> {
        let mut inst = Self::calibrate(&zones.trips, &zones.activity, zones.travel.clone(), zones.presence.clone(), delta)?;
        inst.car_history = crate::synthetic::car_history(&zones.car_profile, history_days, seed);
        Ok(inst)
    }

    pub fn zones(&self) -> usize {
        self.lambda.zones()
    }

    pub fn source(&self, fleet: u32, staff: u32, base_seed: u64) -> ScenarioSource<'_> {
        ScenarioSource { lambda: &self.lambda, fleet, staff, presence: &self.presence, base_seed }
    }

    /// Restriction to the given zones; demand towards dropped zones is lost.
    pub fn slice(&self, zones: &[usize]) -> Result<Self> {
        Ok(Self {
            lambda: Arc::new(self.lambda.slice(zones)?),
            travel: self.travel.slice(zones),
            presence: zones.iter().map(|&z| self.presence[z]).collect(),
            car_history: zones.iter().filter_map(|&z| self.car_history.get(z).cloned()).collect(),
        })
    }
}

/// Source of `x̂` for a relocation policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Availability {
    /// Current idle count.
    Current,
    Predictor(PredictorConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    NoOpt,
    Ranking,
    Mip(MipPolicyConfig),
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NoOpt => "NoOpt",
            Self::Ranking => "RB",
            Self::Mip(_) => "MIP",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub algorithm: Algorithm,
    pub params: RelocParams,
    pub availability: Availability,
}

impl Arm {
    pub fn no_opt() -> Self {
        Self { algorithm: Algorithm::NoOpt, params: RelocParams::default(), availability: Availability::Current }
    }

    pub fn ranking(params: RelocParams) -> Self {
        Self { algorithm: Algorithm::Ranking, params, availability: Availability::Current }
    }

    pub fn mip(params: RelocParams, config: MipPolicyConfig) -> Self {
        Self { algorithm: Algorithm::Mip(config), params, availability: Availability::Current }
    }
}

/// An arm bound to an instance, with any predictor models fitted once.
pub struct PreparedArm<'a> {
    arm: Arm,
    inst: &'a Instance,
    models: Option<Arc<Vec<LinearModel>>>,
}

impl<'a> PreparedArm<'a> {
    pub fn new(arm: Arm, inst: &'a Instance) -> Result<Self> {
        arm.params.validate()?;
        let models = match arm.availability {
            Availability::Predictor(cfg) => {
                if inst.car_history.len() != inst.zones() {
                    return Err(Error::invalid("buffered predictors need one history series per zone"));
                }
                fit_models(&inst.car_history, &cfg)?.map(Arc::new)
            }
            Availability::Current => None,
        };
        Ok(Self { arm, inst, models })
    }

    fn predictors(&self) -> Box<dyn Predictors> {
        match self.arm.availability {
            Availability::Current => Box::new(BaselinePredictors::new(self.inst.lambda.clone(), self.arm.params.h)),
            Availability::Predictor(cfg) => {
                let capacity = cfg.window.max(self.inst.car_history.first().map_or(0, Vec::len)).max(1);
                let buffer = SeriesBuffer::seeded(&self.inst.car_history, capacity);
                Box::new(
                    BufferedPredictors::new(cfg, self.models.clone(), buffer, self.inst.lambda.clone())
                        .expect("history validated when the arm was prepared"),
                )
            }
        }
    }

    pub fn make(&self, _sc: &Scenario) -> Option<Box<dyn Policy>> {
        match self.arm.algorithm {
            Algorithm::NoOpt => None,
            Algorithm::Ranking => Some(Box::new(RankingPolicy::new(self.arm.params, self.predictors()))),
            Algorithm::Mip(cfg) => Some(Box::new(MipPolicy::new(self.arm.params, cfg, self.predictors()))),
        }
    }
}

/// Runs several arms on the same `n` scenarios.
pub fn run_paired(inst: &Instance, arms: &[Arm], fleet: u32, staff: u32, n: usize, seed: u64, opts: &RunOptions) -> Result<Vec<SaaResult>> {
    let prepared = arms.iter().map(|a| PreparedArm::new(a.clone(), inst)).collect::<Result<Vec<_>>>()?;
    let closures: Vec<Box<PolicyFactory<'_>>> =
        prepared.iter().map(|p| Box::new(move |sc: &Scenario| p.make(sc)) as Box<PolicyFactory<'_>>).collect();
    let refs: Vec<&PolicyFactory<'_>> = closures.iter().map(|b| b.as_ref()).collect();
    run_arms(&inst.source(fleet, staff, seed), &inst.travel, n, &refs, opts)
}

/// Percentage change of `value` over `base`; zero when `base` is zero.
pub fn pct_gain(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (value - base) / base
    }
}

fn trips_of(r: &SaaResult) -> Vec<f64> {
    r.scenarios.iter().map(|s| s.metrics.trips as f64).collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores parameter settings of one arm on a fixed scenario batch.
pub struct ArmEvaluator<'a> {
    pub inst: &'a Instance,
    pub template: Arm,
    pub fleet: u32,
    pub staff: u32,
    pub scenarios: usize,
    pub seed: u64,
    pub opts: RunOptions,
}

impl Evaluator for ArmEvaluator<'_> {
    fn evaluate(&self, params: &RelocParams) -> Result<Vec<Metrics>> {
        let arm = Arm { params: *params, ..self.template.clone() };
        let r = run_paired(self.inst, &[arm], self.fleet, self.staff, self.scenarios, self.seed, &self.opts)?.remove(0);
        Ok(r.scenarios.into_iter().map(|s| s.metrics).collect())
    }
}

/// Hyperparameter search for `template` on the instance.
pub fn tune(inst: &Instance, template: Arm, cfg: &SearchConfig, fleet: u32, staff: u32, scenarios: usize, opts: &RunOptions) -> Result<SearchResult> {
    let eval = ArmEvaluator { inst, template, fleet, staff, scenarios, seed: cfg.seed, opts: *opts };
    search(cfg, &eval)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaffRow {
    pub staff: u32,
    pub t_mean: f64,
    pub t_std: f64,
    pub dt_pct: f64,
    pub n_mean: f64,
    pub n_std: f64,
    pub dn_pct: f64,
    pub relocations: f64,
    pub transits: f64,
    pub conflicts: f64,
}

/// Ranking policy per staff size against the no-relocation baseline, all on
/// the same demand.
pub fn staff_sweep(
    inst: &Instance,
    params: RelocParams,
    fleet: u32,
    staffs: &[u32],
    n: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<StaffRow>> {
    if staffs.is_empty() {
        return Err(Error::invalid("staff range is empty"));
    }
    let base = run_paired(inst, &[Arm::no_opt()], fleet, 0, n, seed, opts)?.remove(0);
    let (bt, bn) = (base.mean, stats::mean(&trips_of(&base)));
    staffs
        .iter()
        .map(|&staff| {
            let r = if staff == 0 { base.clone() } else { run_paired(inst, &[Arm::ranking(params)], fleet, staff, n, seed, opts)?.remove(0) };
            let trips = trips_of(&r);
            let n_mean = stats::mean(&trips);
            Ok(StaffRow {
                staff,
                t_mean: r.mean,
                t_std: r.std,
                dt_pct: pct_gain(r.mean, bt),
                n_mean,
                n_std: stats::std_dev(&trips),
                dn_pct: pct_gain(n_mean, bn),
                relocations: r.mean_of(|m| m.relocations as f64),
                transits: r.mean_of(|m| m.transits as f64),
                conflicts: r.mean_of(|m| m.conflicts as f64),
            })
        })
        .collect()
}

pub fn write_staff_csv(path: &Path, rows: &[StaffRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZoningMethod {
    Full,
    KMeans,
    BisectingKMeans,
    Agglomerative(Linkage),
}

impl ZoningMethod {
    pub fn all() -> Vec<Self> {
        vec![
            Self::Full,
            Self::KMeans,
            Self::BisectingKMeans,
            Self::Agglomerative(Linkage::Average),
            Self::Agglomerative(Linkage::Complete),
            Self::Agglomerative(Linkage::Ward),
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Full => "full-zoning",
            Self::KMeans => "kmeans",
            Self::BisectingKMeans => "bisecting-kmeans",
            Self::Agglomerative(Linkage::Average) => "agglomerative-average",
            Self::Agglomerative(Linkage::Complete) => "agglomerative-complete",
            Self::Agglomerative(Linkage::Ward) => "agglomerative-ward",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|m| m.label() == s.trim() || (s.trim() == "zoning" && *m == Self::Full))
            .ok_or_else(|| Error::invalid(format!("unknown zoning method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct ZoningBenchConfig {
    pub methods: Vec<ZoningMethod>,
    pub weights: DistanceWeights,
    pub max_size: usize,
    /// Zone count for the Euclidean methods; `None` uses the count that full
    /// zoning produced.
    pub zones: Option<usize>,
    pub restarts: usize,
    pub params: RelocParams,
    pub fleet: u32,
    pub staff: u32,
    pub scenarios: usize,
    pub seed: u64,
    pub history_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoningRow {
    pub method: String,
    pub zones: usize,
    pub base_t: f64,
    pub t: f64,
    pub dt_pct: f64,
    pub base_n: f64,
    pub n: f64,
    pub dn_pct: f64,
}

/// Cell labels for one zoning method.
pub fn zone_cells(city: &SyntheticCity, method: ZoningMethod, k: usize, cfg: &ZoningBenchConfig) -> Result<Vec<usize>> {
    let points = city.grid.centers();
    match method {
        ZoningMethod::Full => {
            let data = CellData { density: city.density.clone(), car_series: city.car_profile.clone(), act_series: city.activity_series() };
            let adj = euclidean_adjacent_distances(&city.grid);
            Ok(agglomerative_cluster(&city.grid, &data, &cfg.weights, cfg.max_size, &adj)?.labels(&city.grid))
        }
        ZoningMethod::KMeans => kmeans(&points, k, cfg.restarts, cfg.seed),
        ZoningMethod::BisectingKMeans => bisecting_kmeans(&points, k, cfg.restarts, cfg.seed),
        ZoningMethod::Agglomerative(l) => agglomerative(&points, k, l),
    }
}

/// Baseline and ranking policy on zone tensors aggregated from each
/// method's partition of the same cells.
pub fn zoning_impact(city: &SyntheticCity, cfg: &ZoningBenchConfig, opts: &RunOptions) -> Result<Vec<ZoningRow>> {
    let mut k = cfg.zones;
    let mut labels = Vec::new();
    if k.is_none() || cfg.methods.contains(&ZoningMethod::Full) {
        let full = zone_cells(city, ZoningMethod::Full, 0, cfg)?;
        let count = full.iter().max().map_or(0, |m| m + 1);
        k = k.or(Some(count));
        labels.push((ZoningMethod::Full, full));
    }
    let k = k.unwrap_or(1);
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let l = match labels.iter().find(|(m, _)| *m == method) {
            Some((_, l)) => l.clone(),
            None => zone_cells(city, method, k, cfg)?,
        };
        let zones = city.aggregate(&l)?;
        let inst = Instance::from_zones(&zones, city.spec.delta, cfg.history_days, cfg.seed)?;
        let r = run_paired(&inst, &[Arm::no_opt(), Arm::ranking(cfg.params)], cfg.fleet, cfg.staff, cfg.scenarios, cfg.seed, opts)?;
        let (base_n, n) = (stats::mean(&trips_of(&r[0])), stats::mean(&trips_of(&r[1])));
        rows.push(ZoningRow {
            method: method.label().into(),
            zones: inst.zones(),
            base_t: r[0].mean,
            t: r[1].mean,
            dt_pct: pct_gain(r[1].mean, r[0].mean),
            base_n,
            n,
            dn_pct: pct_gain(n, base_n),
        });
    }
    Ok(rows)
}

pub fn write_zoning_csv(path: &Path, rows: &[ZoningRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorRow {
    pub predictor: String,
    pub r2: f64,
    pub trips: f64,
    pub trip_time: f64,
    pub relocations: f64,
    pub transits: f64,
    pub conflicts: f64,
}

/// Ranking policy driven by each availability predictor.
#[allow(clippy::too_many_arguments)]
pub fn predictor_bench(
    inst: &Instance,
    kinds: &[PredictorKind],
    params: RelocParams,
    fleet: u32,
    staff: u32,
    n: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<PredictorRow>> {
    kinds
        .iter()
        .map(|&kind| {
            let cfg = PredictorConfig::new(kind, params.h);
            let r2 = holdout_r2(&inst.car_history, &cfg)?;
            let arm = Arm { availability: Availability::Predictor(cfg), ..Arm::ranking(params) };
            let r = run_paired(inst, &[arm], fleet, staff, n, seed, opts)?.remove(0);
            Ok(PredictorRow {
                predictor: kind.label(),
                r2,
                trips: r.mean_of(|m| m.trips as f64),
                trip_time: r.mean,
                relocations: r.mean_of(|m| m.relocations as f64),
                transits: r.mean_of(|m| m.transits as f64),
                conflicts: r.mean_of(|m| m.conflicts as f64),
            })
        })
        .collect()
}

pub fn write_predictor_csv(path: &Path, rows: &[PredictorRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmRow {
    pub algorithm: String,
    pub trips: f64,
    pub dn_pct: f64,
    pub trip_time: f64,
    pub dt_pct: f64,
    pub relocations: f64,
    pub transits: f64,
    pub conflicts: f64,
    pub budget_hits: u64,
    /// Share of scenarios where this arm scores at least the previous row.
    pub paired_agree: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<AlgorithmRow>,
    /// Trip time per scenario and arm, in row order.
    pub per_scenario: Vec<Vec<f64>>,
}

/// Arms in order; rows report gains over the first arm and paired agreement
/// with the preceding arm.
pub fn compare(inst: &Instance, arms: &[Arm], fleet: u32, staff: u32, n: usize, seed: u64, opts: &RunOptions) -> Result<Comparison> {
    let r = run_paired(inst, arms, fleet, staff, n, seed, opts)?;
    let per_scenario: Vec<Vec<f64>> =
        (0..n).map(|s| r.iter().map(|a| a.scenarios[s].metrics.trip_time).collect()).collect();
    let base_t = r[0].mean;
    let base_n = stats::mean(&trips_of(&r[0]));
    let rows = arms
        .iter()
        .zip(&r)
        .enumerate()
        .map(|(a, (arm, res))| {
            let trips = stats::mean(&trips_of(res));
            let agree = if a == 0 {
                1.0
            } else {
                per_scenario.iter().filter(|row| row[a] >= row[a - 1]).count() as f64 / n as f64
            };
            AlgorithmRow {
                algorithm: arm.algorithm.label().into(),
                trips,
                dn_pct: pct_gain(trips, base_n),
                trip_time: res.mean,
                dt_pct: pct_gain(res.mean, base_t),
                relocations: res.mean_of(|m| m.relocations as f64),
                transits: res.mean_of(|m| m.transits as f64),
                conflicts: res.mean_of(|m| m.conflicts as f64),
                budget_hits: res.scenarios.iter().map(|s| s.budget_hits).sum(),
                paired_agree: agree,
            }
        })
        .collect();
    Ok(Comparison { rows, per_scenario })
}

pub fn write_algorithm_csv(path: &Path, rows: &[AlgorithmRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub zones: usize,
    pub staff: u32,
    pub fleet: u32,
    pub mean_s: f64,
    pub std_s: f64,
}

/// Decision time of the ranking policy on random zone subsets. The fleet is
/// scaled with the subset size so the vehicle density stays the same.
#[allow(clippy::too_many_arguments)]
pub fn scalability(
    inst: &Instance,
    params: RelocParams,
    zone_counts: &[usize],
    staffs: &[u32],
    fleet: u32,
    n: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<ScaleRow>> {
    let total = inst.zones();
    let mut rows = Vec::new();
    for &np in zone_counts {
        if np == 0 || np > total {
            return Err(Error::invalid(format!("cannot sample {np} of {total} zones")));
        }
        let mut ids: Vec<usize> = (0..total).collect();
        ids.shuffle(&mut rng::stream(seed, Stream::Subset, np, 0));
        let mut keep = ids[..np].to_vec();
        keep.sort_unstable();
        let sub = inst.slice(&keep)?;
        let sub_fleet = ((f64::from(fleet) * np as f64 / total as f64).round() as u32).max(1);
        for &staff in staffs {
            let r = run_paired(&sub, &[Arm::ranking(params)], sub_fleet, staff, n, seed, opts)?.remove(0);
            let secs: Vec<f64> = r.scenarios.iter().map(|s| s.decision_time.as_secs_f64()).collect();
            rows.push(ScaleRow { zones: np, staff, fleet: sub_fleet, mean_s: stats::mean(&secs), std_s: stats::std_dev(&secs) });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    stats::ols_slope(&lx, &ly)
}

pub fn write_scale_csv(path: &Path, rows: &[ScaleRow]) -> Result<()> {
    write_rows(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn small() -> Instance {
        let city = generate(&SyntheticSpec { cells: 8, daily_demand: 300.0, ..Default::default() }).unwrap();
        Instance::from_city(&city, 3).unwrap()
    }

    #[test]
    fn staff_zero_row_is_the_baseline() {
        let inst = small();
        let rows = staff_sweep(&inst, RelocParams::default(), 40, &[0, 2], 4, 1, &RunOptions::default()).unwrap();
        assert_eq!(rows[0].dt_pct, 0.0);
        assert_eq!(rows[0].dn_pct, 0.0);
        assert_eq!(rows[0].relocations, 0.0);
    }

    #[test]
    fn identical_arms_give_identical_rows() {
        let inst = small();
        let p = RelocParams::default();
        let c = compare(&inst, &[Arm::ranking(p), Arm::ranking(p)], 40, 3, 5, 9, &RunOptions::default()).unwrap();
        assert_eq!(c.rows[0].trip_time, c.rows[1].trip_time);
        assert_eq!(c.rows[1].paired_agree, 1.0);
    }

    #[test]
    fn zero_demand_rows_are_equal() {
        let mut inst = small();
        inst.lambda = Arc::new(inst.lambda.scaled(0.0).unwrap());
        let arms = [Arm::no_opt(), Arm::ranking(RelocParams::default()), Arm::mip(RelocParams::default(), MipPolicyConfig::default())];
        let c = compare(&inst, &arms, 40, 3, 3, 2, &RunOptions::default()).unwrap();
        for r in &c.rows {
            assert_eq!(r.trips, 0.0);
            assert_eq!(r.trip_time, 0.0);
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs = [10.0, 20.0, 40.0, 80.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn predictor_rows_are_reproducible() {
        let inst = small();
        let kinds = [PredictorKind::Last, PredictorKind::Ma(4)];
        let a = predictor_bench(&inst, &kinds, RelocParams::default(), 40, 2, 3, 5, &RunOptions::default()).unwrap();
        let b = predictor_bench(&inst, &kinds, RelocParams::default(), 40, 2, 3, 5, &RunOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsets_keep_density() {
        let inst = small();
        let rows = scalability(&inst, RelocParams::default(), &[4, 8], &[1], 40, 2, 3, &RunOptions::default()).unwrap();
        assert_eq!(rows[0].fleet, 20);
        assert_eq!(rows[1].fleet, 40);
    }
}
