//! Zoning quality measured by how well each zone's vehicle count can be
//! forecast by a sparse linear autoregressor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::predictors::{fit_linear, LinearModel, Penalty};
use crate::stats;

#[derive(Debug, Clone, Serialize)]
pub struct ZoneMetrics {
    pub zone: usize,
    pub horizon: usize,
    /// `None` for zones whose test targets have zero variance.
    pub r2: Option<f64>,
    pub mse: f64,
    pub rmse: f64,
    pub maxe: f64,
    pub med: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub horizon: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub rows: Vec<ZoneMetrics>,
    pub summary: Vec<Summary>,
    pub skipped: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn mean_r2(&self, horizon: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.horizon == horizon && s.metric == "r2").map(|s| s.mean)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["zone", "horizon", "r2", "mse", "rmse", "maxe", "med", "mae"])?;
        for r in &self.rows {
            w.write_record([
                r.zone.to_string(),
                r.horizon.to_string(),
                r.r2.map_or_else(|| "skipped".to_string(), |v| v.to_string()),
                r.mse.to_string(),
                r.rmse.to_string(),
                r.maxe.to_string(),
                r.med.to_string(),
                r.mae.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_WINDOW: usize = 672;
pub const DEFAULT_L1: f64 = 1.0;
pub const TRAIN_FRACTION: f64 = 0.7;

fn predict_at(model: &LinearModel, series: &[f64], t: usize) -> f64 {
    let w = model.coefs.len();
    model.predict(&series[t + 1 - w..=t])
}

/// Trains one L1-regularized autoregressor per zone and horizon on the
/// first 70% of each series and scores it on the remaining 30%.
pub fn validate_zoning(series_per_zone: &[Vec<f64>], horizons: &[usize], window: usize, strength: f64) -> Result<ValidationReport> {
    if window == 0 || horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::invalid("window and horizons must be positive"));
    }
    let max_h = *horizons.iter().max().unwrap();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (zone, series) in series_per_zone.iter().enumerate() {
        let n = series.len();
        let n_train = (n as f64 * TRAIN_FRACTION).floor() as usize;
        let needed = window + max_h + 1;
        if n_train < needed || n - n_train < 1 {
            return Err(Error::InsufficientHistory { zone, needed: (needed as f64 / TRAIN_FRACTION).ceil() as usize, have: n });
        }
        for &h in horizons {
            let model = fit_linear(&series[..n_train], window, h, Penalty::L1, strength)?;
            let first_target = n_train.max(window - 1 + h);
            let truth: Vec<f64> = series[first_target..].to_vec();
            let pred: Vec<f64> = (first_target..n).map(|y| predict_at(&model, series, y - h).max(0.0)).collect();
            let Some(r2) = stats::r2(&truth, &pred) else {
                skipped.push((zone, h));
                continue;
            };
            let err: Vec<f64> = truth.iter().zip(&pred).map(|(a, b)| (a - b).abs()).collect();
            let mse = err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64;
            rows.push(ZoneMetrics {
                zone,
                horizon: h,
                r2: Some(r2),
                mse,
                rmse: mse.sqrt(),
                maxe: err.iter().copied().fold(0.0, f64::max),
                med: stats::median(&err),
                mae: stats::mean(&err),
            });
        }
    }
    let mut summary = Vec::new();
    for &h in horizons {
        let sel: Vec<&ZoneMetrics> = rows.iter().filter(|r| r.horizon == h).collect();
        if sel.is_empty() {
            continue;
        }
        let metrics: [(&'static str, fn(&ZoneMetrics) -> f64); 6] = [
            ("r2", |r| r.r2.unwrap_or(f64::NAN)),
            ("mse", |r| r.mse),
            ("rmse", |r| r.rmse),
            ("maxe", |r| r.maxe),
            ("med", |r| r.med),
            ("mae", |r| r.mae),
        ];
        for (name, get) in metrics {
            let v: Vec<f64> = sel.iter().map(|r| get(r)).collect();
            summary.push(Summary { horizon: h, metric: name, mean: stats::mean(&v), std: stats::std_dev(&v), median: stats::median(&v) });
        }
    }
    Ok(ValidationReport { rows, summary, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_zone_is_skipped() {
        let series = vec![vec![3.0; 400]];
        let rep = validate_zoning(&series, &[3], 24, 1.0).unwrap();
        assert!(rep.rows.is_empty());
        assert_eq!(rep.skipped, vec![(0, 3)]);
    }

    #[test]
    fn short_series_is_an_error() {
        let series = vec![vec![1.0; 50]];
        assert!(matches!(validate_zoning(&series, &[3], 48, 1.0), Err(Error::InsufficientHistory { zone: 0, .. })));
    }

    #[test]
    fn periodic_series_are_predictable() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let series: Vec<Vec<f64>> = (0..4)
            .map(|z| {
                (0..96 * 14)
                    .map(|t| {
                        let phase = 2.0 * std::f64::consts::PI * t as f64 / 96.0;
                        20.0 + 8.0 * (phase + z as f64).sin() + rng.random_range(-1.0..1.0)
                    })
                    .collect()
            })
            .collect();
        let rep = validate_zoning(&series, &[3, 6], 96, 0.01).unwrap();
        assert_eq!(rep.rows.len(), 8);
        assert!(rep.mean_r2(3).unwrap() >= 0.8, "{:?}", rep.mean_r2(3));
        assert!(rep.mean_r2(6).unwrap() >= 0.8);
    }
}
