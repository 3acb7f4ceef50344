//! Hyperparameter search for `(w_tt, w_d, r_th)`.
//!
//! Every trial is scored on the same scenario batch, so the objective is a
//! deterministic function of the parameters and trials can be compared
//! directly.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relocation::RelocParams;
use crate::rng::{self, Stream};
use crate::sim::{run_saa, Metrics, PolicyFactory, RunOptions, ScenarioSource};
use crate::demand::TravelTimeTensor;
use crate::stats;

pub const DEFAULT_IMBALANCE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub w_tt: (f64, f64),
    pub w_d: (f64, f64),
    pub r_th: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { w_tt: (1e-4, 1.0), w_d: (20.0, 1000.0), r_th: (-30.0, 30.0) }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !(ok(self.w_tt) && ok(self.w_d) && ok(self.r_th)) || self.w_tt.0 <= 0.0 || self.w_d.0 <= 0.0 {
            return Err(Error::invalid(format!("invalid search space {self:?}")));
        }
        Ok(())
    }

    /// Search coordinates: `ln w_tt`, `ln w_d`, `r_th`.
    fn bounds(&self) -> [(f64, f64); 3] {
        [(self.w_tt.0.ln(), self.w_tt.1.ln()), (self.w_d.0.ln(), self.w_d.1.ln()), self.r_th]
    }

    fn to_params(&self, c: [f64; 3], base: &RelocParams) -> RelocParams {
        let b = self.bounds();
        let clamp = |k: usize| c[k].clamp(b[k].0, b[k].1);
        RelocParams {
            w_tt: clamp(0).exp().clamp(self.w_tt.0, self.w_tt.1),
            w_d: clamp(1).exp().clamp(self.w_d.0, self.w_d.1),
            r_th: clamp(2),
            ..*base
        }
    }

    fn to_coords(&self, p: &RelocParams) -> [f64; 3] {
        [p.w_tt.max(self.w_tt.0).ln(), p.w_d.max(self.w_d.0).ln(), p.r_th]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub index: usize,
    pub params: RelocParams,
    pub objective: f64,
    /// Mean client trip time per scenario, hours.
    pub t_mean: f64,
    /// Mean relocations and transits per scenario.
    pub relocations: f64,
    pub transits: f64,
}

/// `t̄ − penalty·|R̄ − T̄|` with all three averaged per scenario.
pub fn tuning_objective(batch: &[Metrics], penalty: f64) -> Result<f64> {
    let (t, r, tr) = batch_means(batch)?;
    Ok(t - penalty * (r - tr).abs())
}

fn batch_means(batch: &[Metrics]) -> Result<(f64, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("tuning batch is empty"));
    }
    let mean = |f: fn(&Metrics) -> f64| stats::mean(&batch.iter().map(f).collect::<Vec<_>>());
    Ok((mean(|m| m.trip_time), mean(|m| m.relocations as f64), mean(|m| m.transits as f64)))
}

/// Runs one parameter setting on the shared batch.
pub trait Evaluator: Sync {
    fn evaluate(&self, params: &RelocParams) -> Result<Vec<Metrics>>;
}

/// Evaluates a policy family over a fixed scenario batch.
pub struct SaaEvaluator<'a, F>
where
    F: Fn(RelocParams) -> Box<PolicyFactory<'a>> + Sync,
{
    pub source: ScenarioSource<'a>,
    pub travel: &'a TravelTimeTensor,
    pub scenarios: usize,
    pub make: F,
    pub opts: RunOptions,
}

impl<'a, F> Evaluator for SaaEvaluator<'a, F>
where
    F: Fn(RelocParams) -> Box<PolicyFactory<'a>> + Sync,
{
    fn evaluate(&self, params: &RelocParams) -> Result<Vec<Metrics>> {
        let factory = (self.make)(*params);
        let res = run_saa(&self.source, self.travel, self.scenarios, factory.as_ref(), &self.opts)?;
        Ok(res.scenarios.into_iter().map(|s| s.metrics).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    LocalRefine,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "local-refine" | "refine" => Ok(Self::LocalRefine),
            _ => Err(Error::invalid(format!("unknown search strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub budget: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub penalty: f64,
    /// Fields other than the three searched ones are taken from here.
    pub base: RelocParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            budget: 200,
            strategy: Strategy::LocalRefine,
            seed: 0,
            penalty: DEFAULT_IMBALANCE_PENALTY,
            base: RelocParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

impl SearchResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "w_tt", "w_d", "r_th", "objective", "t_mean", "R", "T"])?;
        for t in &self.history {
            w.write_record([
                t.index.to_string(),
                t.params.w_tt.to_string(),
                t.params.w_d.to_string(),
                t.params.r_th.to_string(),
                t.objective.to_string(),
                t.t_mean.to_string(),
                t.relocations.to_string(),
                t.transits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_trial(eval: &dyn Evaluator, index: usize, params: RelocParams, penalty: f64) -> Result<Trial> {
    let batch = eval.evaluate(&params)?;
    let (t_mean, relocations, transits) = batch_means(&batch)?;
    let objective = t_mean - penalty * (relocations - transits).abs();
    if !objective.is_finite() {
        return Err(Error::invalid(format!("objective is not finite for {params:?}")));
    }
    Ok(Trial { index, params, objective, t_mean, relocations, transits })
}

fn random_point(space: &SearchSpace, seed: u64, index: usize) -> [f64; 3] {
    let mut rng = rng::stream(seed, Stream::Search, index, 0);
    let b = space.bounds();
    [rng.random_range(b[0].0..b[0].1), rng.random_range(b[1].0..b[1].1), rng.random_range(b[2].0..b[2].1)]
}

/// Number of local searches started from the best warm-up trials.
pub const LOCAL_STARTS: usize = 4;

/// Random search, or a random warm-up followed by local random searches
/// from the best distinct warm-up trials. Each local search perturbs its own
/// incumbent; its step scale grows after an improvement and shrinks after a
/// miss.
pub fn search(cfg: &SearchConfig, eval: &dyn Evaluator) -> Result<SearchResult> {
    if cfg.budget == 0 {
        return Err(Error::invalid("search budget must be at least 1"));
    }
    cfg.space.validate()?;
    let warmup = match cfg.strategy {
        Strategy::Random => cfg.budget,
        Strategy::LocalRefine => (cfg.budget / 3).max(1),
    };
    let mut history: Vec<Trial> = (0..warmup)
        .into_par_iter()
        .map(|k| run_trial(eval, k, cfg.space.to_params(random_point(&cfg.space, cfg.seed, k), &cfg.base), cfg.penalty))
        .collect::<Result<Vec<_>>>()?;

    let mut ranked: Vec<&Trial> = history.iter().collect();
    ranked.sort_by(|a, b| b.objective.total_cmp(&a.objective).then(a.index.cmp(&b.index)));
    let mut incumbents: Vec<(Trial, f64)> = ranked.iter().take(LOCAL_STARTS).map(|t| ((*t).clone(), 0.25)).collect();
    let bounds = cfg.space.bounds();
    let mut turn = 0;
    while history.len() < cfg.budget {
        let slot = turn % incumbents.len();
        turn += 1;
        let (best, scale) = incumbents[slot].clone();
        let centre = cfg.space.to_coords(&best.params);
        let mut rng = rng::stream(cfg.seed, Stream::Search, history.len(), 1);
        let mut c = centre;
        for d in 0..3 {
            let (lo, hi) = bounds[d];
            c[d] = (centre[d] + rng.random_range(-1.0..=1.0) * scale * (hi - lo)).clamp(lo, hi);
        }
        let trial = run_trial(eval, history.len(), cfg.space.to_params(c, &cfg.base), cfg.penalty)?;
        incumbents[slot] = if trial.objective > best.objective {
            (trial.clone(), (scale * 1.5).min(0.5))
        } else {
            (best, (scale * 0.9).max(0.005))
        };
        history.push(trial);
    }
    let best = best_of(&history).clone();
    Ok(SearchResult { best, history })
}

/// Highest objective, earliest trial on ties.
fn best_of(history: &[Trial]) -> &Trial {
    history.iter().fold(&history[0], |b, t| if t.objective > b.objective { t } else { b })
}
