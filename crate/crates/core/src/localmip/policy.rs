use serde::{Deserialize, Serialize};

use crate::predictors::Predictors;
use crate::relocation::{imbalance, schedule_relocation, RelocParams};
use crate::sim::{Decision, Policy, SlotView};

use super::models::{build_relocation_ip, build_transit_ip};
use super::solver::{solve_exact, IpStatus, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MipPolicyConfig {
    /// Branch-and-bound nodes per program.
    pub node_limit: u64,
    /// Optional wall-clock cap per program. Makes runs machine-dependent.
    pub time_budget_ms: Option<u64>,
    /// Seed each relocation program with the greedy ranking decisions.
    pub greedy_warm_start: bool,
}

impl Default for MipPolicyConfig {
    fn default() -> Self {
        Self { node_limit: 2000, time_budget_ms: None, greedy_warm_start: true }
    }
}

/// Replaces both greedy passes with the per-slot relocation and transit
/// programs.
pub struct MipPolicy {
    params: RelocParams,
    config: MipPolicyConfig,
    predictors: Box<dyn Predictors>,
    budget_hits: u64,
}

impl MipPolicy {
    pub fn new(params: RelocParams, config: MipPolicyConfig, predictors: Box<dyn Predictors>) -> Self {
        Self { params, config, predictors, budget_hits: 0 }
    }

    fn options(&self, warm: Option<Vec<u32>>) -> SolveOptions {
        SolveOptions {
            node_limit: Some(self.config.node_limit),
            time_budget: self.config.time_budget_ms.map(std::time::Duration::from_millis),
            warm_start: warm,
            local_search: true,
        }
    }
}

impl Policy for MipPolicy {
    fn name(&self) -> String {
        "local-mip".into()
    }

    fn decide(&mut self, view: &SlotView<'_>) -> Vec<Decision> {
        self.predictors.observe(view.t, view.x_v);
        let x_hat = self.predictors.availability(view.t);
        let p_hat = self.predictors.demand(view.t);
        let mut u = imbalance(&x_hat, &p_hat, self.params.w_d);
        let mut decisions = Vec::new();

        let (ip, idx) = build_relocation_ip(&u, view.travel, view.x_v, view.x_s, &self.params, view.t);
        if !idx.arcs.is_empty() {
            let warm = self.config.greedy_warm_start.then(|| {
                let mut scratch = u.clone();
                let greedy = schedule_relocation(&mut scratch, view.x_v, view.x_s, view.travel, view.t, &self.params);
                let mut x = vec![0u32; idx.arcs.len()];
                for d in greedy {
                    if let Some(k) = idx.arcs.iter().position(|&a| a == (d.from, d.to)) {
                        x[k] += d.count;
                    }
                }
                x
            });
            let sol = solve_exact(&ip, &self.options(warm));
            if sol.status == IpStatus::BudgetExhausted {
                self.budget_hits += 1;
            }
            if let Some(x) = sol.assignment {
                for (i, j, c) in idx.decode(&x) {
                    u[i] -= f64::from(c);
                    u[j] += f64::from(c);
                    decisions.push(Decision { count: c, ..Decision::relocate(i, j) });
                }
            }
        }

        let mut idle = view.x_s.to_vec();
        for d in &decisions {
            idle[d.from] -= d.count;
        }
        let (ip, idx) = build_transit_ip(&u, view.travel, &idle, &self.params, view.t, view.scooter_factor);
        if !idx.arcs.is_empty() {
            let sol = solve_exact(&ip, &self.options(None));
            if sol.status == IpStatus::BudgetExhausted {
                self.budget_hits += 1;
            }
            if let Some(x) = sol.assignment {
                for (i, j, c) in idx.decode(&x) {
                    decisions.push(Decision { count: c, ..Decision::transit(i, j) });
                }
            }
        }
        decisions
    }

    fn budget_hits(&self) -> u64 {
        self.budget_hits
    }
}
