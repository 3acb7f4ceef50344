//! Vehicle-availability and demand-density predictors queried by the
//! relocation policies.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demand::LambdaTensor;
use crate::error::{Error, Result};
use crate::{stats, SLOTS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    L1,
    L2,
}

/// `y_{t+h} = intercept + Σ_l coefs[l] · x_{t-l}`, lags `0..window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl LinearModel {
    /// `recent` is chronological and at least `coefs.len()` long; its last
    /// element is lag 0.
    pub fn predict(&self, recent: &[f64]) -> f64 {
        let last = recent.len() - 1;
        self.intercept + self.coefs.iter().enumerate().map(|(l, w)| w * recent[last - l]).sum::<f64>()
    }
}

const CD_TOL: f64 = 1e-6;
const CD_MAX_SWEEPS: usize = 10_000;

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Fits an autoregressor minimizing `(1/2m)·‖y − ŷ‖² + penalty`, where the
/// penalty is `strength·‖w‖₁` (coordinate descent) or
/// `(strength/2)·‖w‖²` (normal equations). The intercept is not penalized.
pub fn fit_linear(history: &[f64], window: usize, horizon: usize, penalty: Penalty, strength: f64) -> Result<LinearModel> {
    if window == 0 || horizon == 0 {
        return Err(Error::invalid("window and horizon must be positive"));
    }
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::invalid("regularization strength must be finite and >= 0"));
    }
    let rows = (history.len() + 1).saturating_sub(window + horizon);
    if rows < 2 {
        return Err(Error::InsufficientHistory { zone: 0, needed: window + horizon + 1, have: history.len() });
    }
    let first = history[0];
    if history.iter().all(|&v| v == first) {
        return Ok(LinearModel { intercept: first, coefs: vec![0.0; window] });
    }
    let x = DMatrix::from_fn(rows, window, |r, l| history[window - 1 + r - l]);
    let y = DVector::from_fn(rows, |r, _| history[window - 1 + r + horizon]);
    let x_mean: Vec<f64> = (0..window).map(|l| x.column(l).mean()).collect();
    let y_mean = y.mean();
    let mut xc = x;
    for l in 0..window {
        xc.column_mut(l).add_scalar_mut(-x_mean[l]);
    }
    let yc = y.add_scalar(-y_mean);
    let m = rows as f64;
    let gram = xc.tr_mul(&xc) / m;
    let corr = xc.tr_mul(&yc) / m;

    let w = match penalty {
        Penalty::L2 => {
            let a = &gram + DMatrix::identity(window, window) * strength;
            let chol = a.cholesky().ok_or(Error::SingularDesign)?;
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo <= hi * 1e-7 {
                return Err(Error::SingularDesign);
            }
            let w = chol.solve(&corr);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularDesign);
            }
            w
        }
        Penalty::L1 => {
            let mut w: DVector<f64> = DVector::zeros(window);
            let mut resid = corr.clone();
            for _ in 0..CD_MAX_SWEEPS {
                let mut delta: f64 = 0.0;
                for j in 0..window {
                    let g = gram[(j, j)];
                    if g <= 0.0 {
                        continue;
                    }
                    let rho = resid[j] + g * w[j];
                    let new = soft_threshold(rho, strength) / g;
                    let step: f64 = new - w[j];
                    if step != 0.0 {
                        resid.axpy(-step, &gram.column(j), 1.0);
                        w[j] = new;
                        delta = delta.max(step.abs());
                    }
                }
                if delta < CD_TOL {
                    break;
                }
            }
            w
        }
    };
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel { intercept, coefs: w.iter().copied().collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "w")]
pub enum PredictorKind {
    Last,
    Ma(usize),
    LinearL1,
    LinearL2,
}

impl PredictorKind {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "last" => Ok(Self::Last),
            "linear-l1" | "lasso" => Ok(Self::LinearL1),
            "linear-l2" | "ridge" => Ok(Self::LinearL2),
            _ => {
                let w = s
                    .strip_prefix("ma")
                    .map(|r| r.trim_start_matches(['(', '-']).trim_end_matches(')'))
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&w| w >= 1);
                w.map(Self::Ma).ok_or_else(|| Error::invalid(format!("unknown predictor kind '{s}'")))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Last => "last".into(),
            Self::Ma(w) => format!("ma{w}"),
            Self::LinearL1 => "linear-l1".into(),
            Self::LinearL2 => "linear-l2".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub window: usize,
    pub horizon: usize,
    pub strength: f64,
}

impl PredictorConfig {
    pub fn new(kind: PredictorKind, horizon: usize) -> Self {
        let window = match kind {
            PredictorKind::Last => 1,
            PredictorKind::Ma(w) => w,
            _ => 672,
        };
        Self { kind, window, horizon, strength: 1.0 }
    }

    fn required(&self) -> usize {
        match self.kind {
            PredictorKind::Last => 1,
            PredictorKind::Ma(w) => w,
            _ => self.window,
        }
    }
}

/// Per-zone ring buffers of recent vehicle counts, oldest first.
#[derive(Debug, Clone)]
pub struct SeriesBuffer {
    capacity: usize,
    zones: Vec<VecDeque<f64>>,
}

impl SeriesBuffer {
    pub fn new(zones: usize, capacity: usize) -> Self {
        Self { capacity: capacity.max(1), zones: vec![VecDeque::with_capacity(capacity.max(1)); zones] }
    }

    /// Buffer pre-filled with the tail of each zone's history.
    pub fn seeded(history: &[Vec<f64>], capacity: usize) -> Self {
        let mut buf = Self::new(history.len(), capacity);
        for (z, series) in history.iter().enumerate() {
            let start = series.len().saturating_sub(buf.capacity);
            buf.zones[z].extend(&series[start..]);
        }
        buf
    }

    pub fn push(&mut self, obs: &[f64]) {
        for (q, &v) in self.zones.iter_mut().zip(obs) {
            if q.len() == self.capacity {
                q.pop_front();
            }
            q.push_back(v);
        }
    }

    pub fn zones(&self) -> usize {
        self.zones.len()
    }

    pub fn len(&self, zone: usize) -> usize {
        self.zones[zone].len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.iter().all(VecDeque::is_empty)
    }

    /// Most recent `k` values of a zone, chronological.
    pub fn tail(&self, zone: usize, k: usize) -> Vec<f64> {
        let q = &self.zones[zone];
        q.iter().skip(q.len().saturating_sub(k)).copied().collect()
    }
}

/// Predicts each zone's next-horizon vehicle count from the buffer. Linear
/// kinds need one fitted model per zone.
pub fn predict_availability(buf: &SeriesBuffer, cfg: &PredictorConfig, models: Option<&[LinearModel]>) -> Result<Vec<f64>> {
    let need = cfg.required();
    (0..buf.zones())
        .map(|z| {
            if buf.len(z) < need {
                return Err(Error::InsufficientHistory { zone: z, needed: need, have: buf.len(z) });
            }
            let recent = buf.tail(z, need);
            let v = match cfg.kind {
                PredictorKind::Last => recent[need - 1],
                PredictorKind::Ma(_) => stats::mean(&recent),
                PredictorKind::LinearL1 | PredictorKind::LinearL2 => {
                    let model = models
                        .and_then(|m| m.get(z))
                        .ok_or_else(|| Error::invalid("linear predictor used without fitted models"))?;
                    model.predict(&recent)
                }
            };
            Ok(if v.is_finite() { v.max(0.0) } else { 0.0 })
        })
        .collect()
}

/// Fits one model per zone for linear kinds; `None` otherwise.
pub fn fit_models(history: &[Vec<f64>], cfg: &PredictorConfig) -> Result<Option<Vec<LinearModel>>> {
    let penalty = match cfg.kind {
        PredictorKind::LinearL1 => Penalty::L1,
        PredictorKind::LinearL2 => Penalty::L2,
        _ => return Ok(None),
    };
    history
        .iter()
        .enumerate()
        .map(|(z, s)| {
            fit_linear(s, cfg.window, cfg.horizon, penalty, cfg.strength).map_err(|e| match e {
                Error::InsufficientHistory { needed, have, .. } => Error::InsufficientHistory { zone: z, needed, have },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Mean over zones of the held-out r² (last 30% of each series) of the
/// configured predictor. Zones with constant targets are ignored.
pub fn holdout_r2(history: &[Vec<f64>], cfg: &PredictorConfig) -> Result<f64> {
    let mut scores = Vec::new();
    for series in history {
        let n_train = (series.len() as f64 * 0.7) as usize;
        let model = match cfg.kind {
            PredictorKind::LinearL1 | PredictorKind::LinearL2 => fit_models(&[series[..n_train].to_vec()], cfg)?.map(|mut v| v.remove(0)),
            _ => None,
        };
        let need = cfg.required();
        let start = n_train.max(need - 1 + cfg.horizon);
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for target in start..series.len() {
            let t = target - cfg.horizon;
            let recent = &series[t + 1 - need..=t];
            let v = match cfg.kind {
                PredictorKind::Last => recent[need - 1],
                PredictorKind::Ma(_) => stats::mean(recent),
                _ => model.as_ref().unwrap().predict(recent),
            };
            truth.push(series[target]);
            pred.push(v.max(0.0));
        }
        if let Some(r2) = stats::r2(&truth, &pred) {
            scores.push(r2);
        }
    }
    Ok(if scores.is_empty() { f64::NAN } else { stats::mean(&scores) })
}

/// Wrapped-Gaussian kernel density of event times over one day, tabulated
/// per slot and normalized so the slot values sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeDensity {
    pub per_slot: Vec<f64>,
}

pub const DEFAULT_KDE_BANDWIDTH: f64 = 4.0;

impl KdeDensity {
    /// `event_slots` are fractional time-of-day positions in slots.
    pub fn fit(event_slots: &[f64], bandwidth: f64) -> Result<Self> {
        if event_slots.is_empty() {
            return Err(Error::invalid("kde needs at least one event"));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::invalid("kde bandwidth must be positive"));
        }
        let p = SLOTS_PER_DAY as f64;
        let mut per_slot = vec![0.0; SLOTS_PER_DAY];
        for (s, v) in per_slot.iter_mut().enumerate() {
            for &e in event_slots {
                let mut d = (s as f64 - e.rem_euclid(p)).rem_euclid(p);
                if d > p / 2.0 {
                    d -= p;
                }
                for k in -1..=1 {
                    let z = (d + k as f64 * p) / bandwidth;
                    *v += (-0.5 * z * z).exp();
                }
            }
        }
        let total: f64 = per_slot.iter().sum();
        for v in per_slot.iter_mut() {
            *v /= total;
        }
        Ok(Self { per_slot })
    }

    pub fn from_epoch_seconds(events: &[i64], bandwidth: f64) -> Result<Self> {
        let slots: Vec<f64> = events.iter().map(|&s| s.rem_euclid(86_400) as f64 / 900.0).collect();
        Self::fit(&slots, bandwidth)
    }

    /// Density at 1-based slot `t` (wrapping over days).
    pub fn at(&self, t: usize) -> f64 {
        self.per_slot[(t + SLOTS_PER_DAY - 1) % SLOTS_PER_DAY]
    }
}

/// Demand at slot `t + h` for the baseline predictor: row sums of Λ.
/// Slots beyond the horizon are clamped to the last slot.
pub fn lambda_row_sums(lambda: &LambdaTensor, t: usize, h: usize) -> Vec<f64> {
    let slot = (t + h).clamp(1, lambda.horizon());
    (0..lambda.zones()).map(|i| lambda.row(i, slot).iter().sum()).collect()
}

/// The two queries a relocation policy makes, plus the per-slot feed.
pub trait Predictors: Send {
    /// Called once per slot, after client assignment, with idle counts.
    fn observe(&mut self, t: usize, idle_vehicles: &[u32]);
    /// Predicted idle vehicles per zone at `t + h`.
    fn availability(&self, t: usize) -> Vec<f64>;
    /// Predicted demand per zone at `t + h`.
    fn demand(&self, t: usize) -> Vec<f64>;
}

/// `x̂ = current idle count`, `p̂ = Σ_j Λ[i, j, t+h]`.
pub struct BaselinePredictors {
    lambda: Arc<LambdaTensor>,
    h: usize,
    last: Vec<f64>,
}

impl BaselinePredictors {
    pub fn new(lambda: Arc<LambdaTensor>, h: usize) -> Self {
        let n = lambda.zones();
        Self { lambda, h, last: vec![0.0; n] }
    }
}

impl Predictors for BaselinePredictors {
    fn observe(&mut self, _t: usize, idle: &[u32]) {
        for (l, &x) in self.last.iter_mut().zip(idle) {
            *l = f64::from(x);
        }
    }

    fn availability(&self, _t: usize) -> Vec<f64> {
        self.last.clone()
    }

    fn demand(&self, t: usize) -> Vec<f64> {
        lambda_row_sums(&self.lambda, t, self.h)
    }
}

/// Availability from a configured predictor over a seeded buffer; demand
/// from Λ row sums.
pub struct BufferedPredictors {
    cfg: PredictorConfig,
    models: Option<Arc<Vec<LinearModel>>>,
    buffer: SeriesBuffer,
    lambda: Arc<LambdaTensor>,
}

impl BufferedPredictors {
    pub fn new(cfg: PredictorConfig, models: Option<Arc<Vec<LinearModel>>>, buffer: SeriesBuffer, lambda: Arc<LambdaTensor>) -> Result<Self> {
        predict_availability(&buffer, &cfg, models.as_deref().map(Vec::as_slice))?;
        Ok(Self { cfg, models, buffer, lambda })
    }
}

impl Predictors for BufferedPredictors {
    fn observe(&mut self, _t: usize, idle: &[u32]) {
        let obs: Vec<f64> = idle.iter().map(|&x| f64::from(x)).collect();
        self.buffer.push(&obs);
    }

    fn availability(&self, _t: usize) -> Vec<f64> {
        predict_availability(&self.buffer, &self.cfg, self.models.as_deref().map(Vec::as_slice))
            .expect("buffer length only grows after construction")
    }

    fn demand(&self, t: usize) -> Vec<f64> {
        lambda_row_sums(&self.lambda, t, self.cfg.horizon)
    }
}
