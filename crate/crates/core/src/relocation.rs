//! Ranking-based relocation policy.
//!
//! Each slot the policy forms an imbalance vector `U` from predicted supply
//! and demand, relocates vehicles out of zones that can spare them toward
//! the lowest `R_r = U + w_tt·T`, and sends remaining idle staff on scooters
//! toward the highest `R_t = U − w_tt·T`.

use serde::{Deserialize, Serialize};

use crate::demand::TravelTimeTensor;
use crate::error::{Error, Result};
use crate::predictors::Predictors;
use crate::sim::{Decision, Policy, SlotView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelocParams {
    /// Weight per minute of travel time.
    pub w_tt: f64,
    /// Scale applied to predicted demand density.
    pub w_d: f64,
    /// Zones with `U` below this keep their vehicles.
    pub r_th: f64,
    /// Prediction horizon in slots.
    pub h: usize,
    /// Decrement `R_r` of a chosen destination instead of incrementing it.
    pub decrement_rank: bool,
}

impl Default for RelocParams {
    fn default() -> Self {
        Self::new(0.07, 280.32, -17.35)
    }
}

impl RelocParams {
    pub const fn new(w_tt: f64, w_d: f64, r_th: f64) -> Self {
        Self { w_tt, w_d, r_th, h: 2, decrement_rank: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_tt >= 0.0 && self.w_d >= 0.0 && self.r_th.is_finite() && self.w_tt.is_finite() && self.w_d.is_finite()) {
            return Err(Error::invalid(format!("invalid relocation parameters {self:?}")));
        }
        if self.h == 0 {
            return Err(Error::invalid("prediction horizon must be at least one slot"));
        }
        Ok(())
    }
}

/// `U[i] = x̂_v[i] − w_d·p̂_d[i]`.
pub fn imbalance(x_hat: &[f64], p_hat: &[f64], w_d: f64) -> Vec<f64> {
    assert_eq!(x_hat.len(), p_hat.len(), "predictions cover different zone counts");
    x_hat.iter().zip(p_hat).map(|(x, p)| x - w_d * p).collect()
}

pub fn relocation_ranking(u: &[f64], t_row: &[f64], w_tt: f64) -> Vec<f64> {
    u.iter().zip(t_row).map(|(u, t)| u + w_tt * t).collect()
}

pub fn transit_ranking(u: &[f64], t_row: &[f64], w_tt: f64) -> Vec<f64> {
    u.iter().zip(t_row).map(|(u, t)| u - w_tt * t).collect()
}

/// Lowest-index minimum over finite entries, skipping `skip`.
pub fn argmin_excluding(v: &[f64], skip: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &x) in v.iter().enumerate() {
        if j != skip && x.is_finite() && best.is_none_or(|b| x < v[b]) {
            best = Some(j);
        }
    }
    best
}

pub fn argmax_excluding(v: &[f64], skip: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &x) in v.iter().enumerate() {
        if j != skip && x.is_finite() && best.is_none_or(|b| x > v[b]) {
            best = Some(j);
        }
    }
    best
}

/// Greedy relocation pass. `u` is updated in place so that later sources
/// and the transit pass see earlier picks.
pub fn schedule_relocation(
    u: &mut [f64],
    x_v: &[u32],
    x_s: &[u32],
    travel: &TravelTimeTensor,
    t: usize,
    params: &RelocParams,
) -> Vec<Decision> {
    let mut out = Vec::new();
    for i in 0..u.len() {
        if u[i] < params.r_th {
            continue;
        }
        let mut r = relocation_ranking(u, travel.row(i, t), params.w_tt);
        let m = x_v[i].min(x_s[i]);
        for _ in 0..m {
            let Some(dest) = argmin_excluding(&r, i) else { break };
            out.push(Decision::relocate(i, dest));
            if params.decrement_rank {
                r[dest] -= 1.0;
            } else {
                r[dest] += 1.0;
                u[dest] += 1.0;
            }
        }
    }
    out
}

/// Scooter transits for staff left idle in zones with nothing to relocate.
/// `x_v` and `x_s` are the counts remaining after the relocation pass.
pub fn schedule_transits(
    u: &mut [f64],
    x_v: &[u32],
    x_s: &[u32],
    travel: &TravelTimeTensor,
    t: usize,
    params: &RelocParams,
    scooter_factor: f64,
) -> Vec<Decision> {
    let mut out = Vec::new();
    for i in 0..u.len() {
        if x_s[i] == 0 || (x_v[i] > 0 && u[i] >= params.r_th) {
            continue;
        }
        let mut r = transit_ranking(u, travel.row(i, t), params.w_tt * scooter_factor);
        for _ in 0..x_s[i] {
            let Some(dest) = argmax_excluding(&r, i) else { break };
            if r[dest] <= u[i] {
                break;
            }
            out.push(Decision::transit(i, dest));
            r[dest] -= 1.0;
            u[dest] -= 1.0;
        }
    }
    out
}

/// Both passes for one slot given the imbalance vector.
pub fn schedule_slot(
    mut u: Vec<f64>,
    view: &SlotView<'_>,
    params: &RelocParams,
) -> Vec<Decision> {
    let mut decisions = schedule_relocation(&mut u, view.x_v, view.x_s, view.travel, view.t, params);
    let mut x_v = view.x_v.to_vec();
    let mut x_s = view.x_s.to_vec();
    for d in &decisions {
        x_v[d.from] -= d.count;
        x_s[d.from] -= d.count;
    }
    decisions.extend(schedule_transits(&mut u, &x_v, &x_s, view.travel, view.t, params, view.scooter_factor));
    decisions
}

pub struct RankingPolicy {
    params: RelocParams,
    predictors: Box<dyn Predictors>,
}

impl RankingPolicy {
    pub fn new(params: RelocParams, predictors: Box<dyn Predictors>) -> Self {
        Self { params, predictors }
    }

    pub fn params(&self) -> &RelocParams {
        &self.params
    }
}

impl Policy for RankingPolicy {
    fn name(&self) -> String {
        "ranking".into()
    }

    fn decide(&mut self, view: &SlotView<'_>) -> Vec<Decision> {
        self.predictors.observe(view.t, view.x_v);
        let x_hat = self.predictors.availability(view.t);
        let p_hat = self.predictors.demand(view.t);
        let u = imbalance(&x_hat, &p_hat, self.params.w_d);
        schedule_slot(u, view, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Tensor3;
    use crate::sim::DecisionKind;
    use proptest::prelude::*;

    fn flat(n: usize, minutes: f64) -> TravelTimeTensor {
        TravelTimeTensor::new(Tensor3::filled(n, 96, minutes))
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&[1.0, 4.0], &[0.0, 0.0], 280.32), vec![1.0, 4.0]);
        let u = imbalance(&[5.0], &[0.03], 100.0);
        assert!((u[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_examples() {
        let r = relocation_ranking(&[-5.0, 2.0], &[10.0, 5.0], 0.07);
        assert!((r[0] + 4.3).abs() < 1e-12 && (r[1] - 2.35).abs() < 1e-12);
        assert_eq!(argmin_excluding(&r, 99), Some(0));
        let r = transit_ranking(&[4.0, 4.0], &[10.0, 30.0], 0.1);
        assert!((r[0] - 3.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        assert_eq!(argmax_excluding(&r, 99), Some(0));
        assert_eq!(argmax_excluding(&[-3.0, -1.0, -2.0], 99), Some(1));
        assert_eq!(argmin_excluding(&[1.0, 1.0, 1.0], 0), Some(1));
    }

    #[test]
    fn no_idle_staff_no_decisions() {
        let tt = flat(3, 10.0);
        let mut u = vec![5.0, -5.0, 0.0];
        let p = RelocParams::new(0.0, 1.0, 0.0);
        assert!(schedule_relocation(&mut u, &[3, 0, 0], &[0, 0, 0], &tt, 1, &p).is_empty());
        assert!(schedule_transits(&mut u, &[3, 0, 0], &[0, 0, 0], &tt, 1, &p, 1.0).is_empty());
    }

    #[test]
    fn single_relocation_trace() {
        let tt = flat(3, 10.0);
        let mut u = vec![3.0, -4.0, -1.0];
        let p = RelocParams::new(0.0, 1.0, 0.0);
        let d = schedule_relocation(&mut u, &[2, 0, 0], &[1, 0, 0], &tt, 1, &p);
        assert_eq!(d, vec![Decision::relocate(0, 1)]);
        assert_eq!(u, vec![3.0, -3.0, -1.0]);
    }

    #[test]
    fn source_gate_at_tuned_threshold() {
        let tt = flat(2, 10.0);
        let mut u = vec![-20.0, -30.0];
        let p = RelocParams::default();
        assert!(schedule_relocation(&mut u, &[5, 0], &[2, 0], &tt, 1, &p).is_empty());
    }

    #[test]
    fn transit_trace() {
        let tt = flat(3, 10.0);
        let mut u = vec![0.0, 6.0, 1.0];
        let p = RelocParams::new(0.0, 1.0, 0.0);
        let d = schedule_transits(&mut u, &[0, 0, 0], &[1, 0, 0], &tt, 1, &p, 1.0);
        assert_eq!(d, vec![Decision::transit(0, 1)]);
        assert_eq!(u[1], 5.0);
    }

    #[test]
    fn transit_requires_improvement() {
        let tt = flat(2, 10.0);
        let mut u = vec![3.0, 2.0];
        let p = RelocParams::new(0.0, 1.0, 0.0);
        assert!(schedule_transits(&mut u, &[0, 0], &[1, 0], &tt, 1, &p, 1.0).is_empty());
    }

    #[test]
    fn repeated_picks_spread_out() {
        let tt = flat(3, 10.0);
        let mut u = vec![10.0, -1.0, -1.5];
        let p = RelocParams::new(0.0, 1.0, 0.0);
        let d = schedule_relocation(&mut u, &[3, 0, 0], &[3, 0, 0], &tt, 1, &p);
        let dests: Vec<usize> = d.iter().map(|d| d.to).collect();
        assert_eq!(dests, vec![2, 1, 2]);
    }

    #[test]
    fn literal_update_keeps_choosing_same_target() {
        let tt = flat(3, 10.0);
        let mut u = vec![10.0, -1.0, -1.5];
        let p = RelocParams { decrement_rank: true, ..RelocParams::new(0.0, 1.0, 0.0) };
        let d = schedule_relocation(&mut u, &[3, 0, 0], &[3, 0, 0], &tt, 1, &p);
        assert!(d.iter().all(|d| d.to == 2));
        assert_eq!(d.len(), 3);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<u32>, Vec<f64>, f64, f64)> {
        (2usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(-20.0f64..20.0, n),
                prop::collection::vec(0u32..4, n),
                prop::collection::vec(0u32..3, n),
                prop::collection::vec(1.0f64..60.0, n * n),
                0.0f64..0.5,
                -10.0f64..10.0,
            )
        })
    }

    fn tensor_from(n: usize, minutes: &[f64]) -> TravelTimeTensor {
        TravelTimeTensor::new(Tensor3::from_fn(n, 96, |i, j, _| minutes[i * n + j]))
    }

    proptest! {
        #[test]
        fn gate_capacity_and_no_self((u, xv, xs, m, w_tt, r_th) in arb_case()) {
            let n = u.len();
            let tt = tensor_from(n, &m);
            let p = RelocParams::new(w_tt, 1.0, r_th);
            let mut work = u.clone();
            let d = schedule_relocation(&mut work, &xv, &xs, &tt, 1, &p);
            for i in 0..n {
                let out: u32 = d.iter().filter(|d| d.from == i).map(|d| d.count).sum();
                prop_assert!(out <= xv[i].min(xs[i]));
                // U at the moment zone i is considered includes vehicles
                // already routed to it by lower-indexed sources.
                let received = d.iter().filter(|d| d.to == i && d.from < i).count() as f64;
                if u[i] + received < r_th {
                    prop_assert_eq!(out, 0);
                }
            }
            prop_assert!(d.iter().all(|d| d.from != d.to && d.kind == DecisionKind::Relocation));
            let mut xv2 = xv.clone();
            let mut xs2 = xs.clone();
            for x in &d {
                xv2[x.from] -= 1;
                xs2[x.from] -= 1;
            }
            let tr = schedule_transits(&mut work, &xv2, &xs2, &tt, 1, &p, 1.0);
            for i in 0..n {
                let out: u32 = tr.iter().filter(|d| d.from == i).count() as u32;
                prop_assert!(out <= xs2[i]);
            }
            prop_assert!(tr.iter().all(|d| d.from != d.to));
        }

        #[test]
        fn translation_invariance((u, xv, xs, m, w_tt, r_th) in arb_case(), c in 0.5f64..50.0) {
            let n = u.len();
            let tt = tensor_from(n, &m);
            let p = RelocParams::new(w_tt, 1.0, r_th);
            let shifted_p = RelocParams::new(w_tt, 1.0, r_th + c);
            let mut a = u.clone();
            let mut b: Vec<f64> = u.iter().map(|x| x + c).collect();
            let da = schedule_relocation(&mut a, &xv, &xs, &tt, 1, &p);
            let db = schedule_relocation(&mut b, &xv, &xs, &tt, 1, &shifted_p);
            prop_assert_eq!(da, db);
            let row = tt.row(0, 1);
            let ra = relocation_ranking(&u, row, w_tt);
            let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
            let rb = relocation_ranking(&shifted, row, w_tt);
            prop_assert_eq!(argmin_excluding(&ra, 0), argmin_excluding(&rb, 0));
            let ta = transit_ranking(&u, row, w_tt);
            let tb = transit_ranking(&shifted, row, w_tt);
            prop_assert_eq!(argmax_excluding(&ta, 0), argmax_excluding(&tb, 0));
        }
    }
}
