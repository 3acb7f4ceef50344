use std::path::{Path, PathBuf};

use anyhow::Context;
use ffcs_core::localmip::MipPolicyConfig;
use ffcs_core::relocation::RelocParams;
use ffcs_core::synthetic::SyntheticSpec;
use ffcs_core::tuning::{SearchSpace, Strategy, DEFAULT_IMBALANCE_PENALTY};
use ffcs_core::zoning::DistanceWeights;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Ranking parameters tuned on the default synthetic city.
pub const TUNED_RANKING: (f64, f64, f64) = (0.0507, 1.774, 4.309);
/// Local-program parameters tuned separately on the same city.
pub const TUNED_MIP: (f64, f64, f64) = (0.015, 3.0, 1.37);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory with `trips.csv`, `activity.csv`, `travel.csv`, `cells.csv`
    /// and optionally `cars.csv`. When absent the synthetic city is used.
    pub data_dir: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub zones: Option<usize>,
    pub horizon: usize,
    pub slot_minutes: f64,
    pub fleet: u32,
    pub staff: u32,
    pub delta: f64,
    pub history_days: usize,
    pub scenarios: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub scooter_factor: f64,
    pub policy: PolicyBlock,
    pub mip: MipBlock,
    pub search: SearchBlock,
    pub zoning: ZoningBlock,
    pub bench: BenchBlock,
    pub lp: LpBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            synthetic: SyntheticSpec::default(),
            zones: None,
            horizon: ffcs_core::SLOTS_PER_DAY,
            slot_minutes: ffcs_core::SLOT_MINUTES,
            fleet: 300,
            staff: 7,
            delta: ffcs_core::demand::DEFAULT_DELTA,
            history_days: 14,
            scenarios: 200,
            seed: 1,
            out: PathBuf::from("out"),
            threads: 0,
            scooter_factor: 1.0,
            policy: PolicyBlock::default(),
            mip: MipBlock::default(),
            search: SearchBlock::default(),
            zoning: ZoningBlock::default(),
            bench: BenchBlock::default(),
            lp: LpBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyBlock {
    /// `noopt`, `ranking` or `mip`.
    pub algorithm: String,
    /// `current` or a predictor name (`last`, `ma4`, `linear-l1`, ...).
    pub availability: String,
    #[serde(flatten)]
    pub params: RelocParams,
}

impl Default for PolicyBlock {
    fn default() -> Self {
        let (w_tt, w_d, r_th) = TUNED_RANKING;
        Self { algorithm: "ranking".into(), availability: "current".into(), params: RelocParams::new(w_tt, w_d, r_th) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MipBlock {
    #[serde(flatten)]
    pub solver: MipPolicyConfig,
    pub params: RelocParams,
    /// Exit with the budget status when any program hits its node limit.
    pub strict_budget: bool,
}

impl Default for MipBlock {
    fn default() -> Self {
        let (w_tt, w_d, r_th) = TUNED_MIP;
        Self {
            solver: MipPolicyConfig { node_limit: 50, ..MipPolicyConfig::default() },
            params: RelocParams::new(w_tt, w_d, r_th),
            strict_budget: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBlock {
    pub space: SearchSpace,
    pub budget: usize,
    pub strategy: Strategy,
    pub penalty: f64,
    /// Scenarios per trial; `None` uses the global count.
    pub scenarios: Option<usize>,
    /// Tune the local-program policy instead of the ranking policy.
    pub mip: bool,
}

impl Default for SearchBlock {
    fn default() -> Self {
        Self {
            space: SearchSpace { w_tt: (1e-4, 1.0), w_d: (1.0, 60.0), r_th: (-10.0, 10.0) },
            budget: 200,
            strategy: Strategy::LocalRefine,
            penalty: DEFAULT_IMBALANCE_PENALTY,
            scenarios: Some(30),
            mip: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoningBlock {
    pub weights: DistanceWeights,
    pub max_size: usize,
    /// Zone count for the Euclidean clusterers; defaults to the full-zoning count.
    pub zones: Option<usize>,
    pub restarts: usize,
    pub methods: Vec<String>,
    /// Zoning file (`cell_id,zone_id`) used by `validate-zones`.
    pub labels: Option<PathBuf>,
    pub horizons: Vec<usize>,
    pub window: usize,
    pub strength: f64,
}

impl Default for ZoningBlock {
    fn default() -> Self {
        Self {
            weights: DistanceWeights::default(),
            max_size: 8,
            zones: None,
            restarts: 20,
            methods: ffcs_core::bench::ZoningMethod::all().iter().map(|m| m.label().to_string()).collect(),
            labels: None,
            horizons: vec![1, 2, 4],
            window: ffcs_core::zoning::validate::DEFAULT_WINDOW,
            strength: ffcs_core::zoning::validate::DEFAULT_L1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchBlock {
    pub staff: Vec<u32>,
    pub predictors: Vec<String>,
    pub zone_counts: Vec<usize>,
    pub scale_staff: Vec<u32>,
    pub delta_candidates: Vec<f64>,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self {
            staff: (0..=20).collect(),
            predictors: ["last", "ma2", "ma4", "ma6", "linear-l1", "linear-l2"].map(String::from).to_vec(),
            zone_counts: vec![5, 25, 50, 100, 200],
            scale_staff: vec![7, 20],
            delta_candidates: vec![5.0, 10.0, 15.0, 20.0, 25.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpBlock {
    /// Zones kept for the full-information model.
    pub zones: usize,
    pub horizon: usize,
    /// Slot of the exported per-slot relocation program.
    pub slot: usize,
}

impl Default for LpBlock {
    fn default() -> Self {
        Self { zones: 4, horizon: 8, slot: 32 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(|e| ConfigError(format!("{e:#}")))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(dir) = &cfg.data_dir {
            if dir.is_relative() {
                cfg.data_dir = Some(path.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if self.horizon < 2 || self.horizon > ffcs_core::SLOTS_PER_DAY {
            return bad("horizon must be within 2..=96 slots");
        }
        if self.slot_minutes != ffcs_core::SLOT_MINUTES {
            return bad("only 15-minute slots are supported");
        }
        if self.scenarios == 0 {
            return bad("scenarios must be positive");
        }
        if !(self.delta > 0.0) || !(self.scooter_factor > 0.0) {
            return bad("delta and scooter_factor must be positive");
        }
        self.policy.params.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.mip.params.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.search.space.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.zoning.weights.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.data_dir.is_none() {
            self.synthetic.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(())
    }
}
