//! Independent reference implementations shared by the oracle tests.
#![allow(dead_code)]

use ffcs_core::demand::{duration_slots, effective_travel_time, Scenario, Tensor3, TravelTimeTensor};
use ffcs_core::localmip::{IntegerProgram, Piecewise, Sense};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Top-down memoized recursion over warping paths.
pub fn dtw_reference(x: &[f64], y: &[f64]) -> f64 {
    fn go(x: &[f64], y: &[f64], i: usize, j: usize, memo: &mut Vec<Vec<Option<f64>>>) -> f64 {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let c = (x[i] - y[j]).abs();
        let v = match (i, j) {
            (0, 0) => c,
            (0, _) => c + go(x, y, 0, j - 1, memo),
            (_, 0) => c + go(x, y, i - 1, 0, memo),
            _ => {
                let a = go(x, y, i - 1, j - 1, memo);
                let b = go(x, y, i - 1, j, memo);
                let d = go(x, y, i, j - 1, memo);
                c + a.min(b).min(d)
            }
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; y.len()]; x.len()];
    go(x, y, x.len() - 1, y.len() - 1, &mut memo)
}

pub fn random_program(rng: &mut ChaCha8Rng) -> IntegerProgram {
    let mut ip = IntegerProgram::new("random");
    let n = rng.random_range(1..=6);
    for k in 0..n {
        ip.add_var(format!("x{k}"), rng.random_range(0..=3));
    }
    let coef = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(-8i32..=8)) / 4.0;
    for v in 0..n {
        if rng.random_bool(0.8) {
            ip.objective.push((v, coef(rng)));
        }
    }
    for k in 0..rng.random_range(0..=2) {
        let mut terms = Vec::new();
        for v in 0..n {
            let a = coef(rng);
            if rng.random_bool(0.6) && a != 0.0 {
                terms.push((v, a));
            }
        }
        ip.piecewise.push(Piecewise {
            name: format!("p{k}"),
            coef: coef(rng),
            constant: coef(rng) * 2.0,
            terms,
            threshold: f64::from(rng.random_range(-4i32..=4)),
        });
    }
    for k in 0..rng.random_range(0..=3) {
        let mut terms = Vec::new();
        for v in 0..n {
            let a = f64::from(rng.random_range(-2i32..=3));
            if rng.random_bool(0.7) {
                terms.push((v, a));
            }
        }
        let sense = [Sense::Le, Sense::Le, Sense::Ge, Sense::Eq][rng.random_range(0..4)];
        ip.add_constraint(format!("c{k}"), terms, sense, f64::from(rng.random_range(-1i32..=6)));
    }
    // Every variable must appear somewhere.
    for v in 0..n {
        let used = ip.objective.iter().any(|t| t.0 == v)
            || ip.piecewise.iter().any(|p| p.terms.iter().any(|t| t.0 == v))
            || ip.constraints.iter().any(|c| c.terms.iter().any(|t| t.0 == v));
        if !used {
            ip.objective.push((v, 0.5));
        }
    }
    ip
}

pub fn enumerate_best(ip: &IntegerProgram) -> Option<f64> {
    let ubs: Vec<u32> = ip.vars.iter().map(|v| v.ub).collect();
    let mut x = vec![0u32; ubs.len()];
    let mut best: Option<f64> = None;
    loop {
        if ip.is_feasible(&x) {
            let v = ip.evaluate(&x);
            best = Some(best.map_or(v, |b| b.max(v)));
        }
        let mut k = 0;
        loop {
            if k == x.len() {
                return best;
            }
            if x[k] < ubs[k] {
                x[k] += 1;
                break;
            }
            x[k] = 0;
            k += 1;
        }
    }
}

/// Best total effective trip time over every sequence of client services,
/// relocations and transits, found by recursion over slots.
pub struct Enumerator<'a> {
    pub sc: &'a Scenario,
    pub travel: &'a TravelTimeTensor,
    pub h: usize,
}

#[derive(Clone)]
struct State {
    xv: Vec<u32>,
    xs: Vec<u32>,
    /// `(slot, zone, vehicles, staff)` arrivals not yet applied.
    pending: Vec<(usize, usize, u32, u32)>,
}

impl Enumerator<'_> {
    pub fn optimum(&self) -> f64 {
        self.best(1, State { xv: self.sc.x_v0.clone(), xs: self.sc.x_s0.clone(), pending: Vec::new() })
    }

    fn best(&self, t: usize, mut st: State) -> f64 {
        if t > self.h {
            return 0.0;
        }
        st.pending.retain(|&(slot, z, v, s)| {
            if slot == t {
                st.xv[z] += v;
                st.xs[z] += s;
                false
            } else {
                true
            }
        });
        // Move types out of each zone: (from, to, moves a vehicle, moves staff, score, max count).
        let mut moves = Vec::new();
        for i in 0..self.sc.zones {
            for &(j, c) in self.sc.demand_row(i, t) {
                let minutes = self.travel.get(i, j as usize, t);
                moves.push((i, j as usize, true, false, effective_travel_time(minutes, t, self.h) / 60.0, c));
            }
            for j in (0..self.sc.zones).filter(|&j| j != i) {
                moves.push((i, j, true, true, 0.0, u32::MAX));
                moves.push((i, j, false, true, 0.0, u32::MAX));
            }
        }
        self.choose(t, &moves, 0, st.clone(), st, 0.0)
    }

    /// Picks a count for each move type in turn; `avail` tracks what is
    /// still free at slot `t`, `next` the state carried to `t + 1`.
    #[allow(clippy::type_complexity)]
    fn choose(&self, t: usize, moves: &[(usize, usize, bool, bool, f64, u32)], k: usize, avail: State, next: State, acc: f64) -> f64 {
        if k == moves.len() {
            return acc + self.best(t + 1, next);
        }
        let (i, j, veh, staff, score, max) = moves[k];
        let mut cap = max;
        if veh {
            cap = cap.min(avail.xv[i]);
        }
        if staff {
            cap = cap.min(avail.xs[i]);
        }
        let arrive = t + duration_slots(self.travel.get(i, j, t));
        let mut best = f64::NEG_INFINITY;
        for c in 0..=cap {
            let (mut a, mut n) = (avail.clone(), next.clone());
            if veh {
                a.xv[i] -= c;
                n.xv[i] -= c;
            }
            if staff {
                a.xs[i] -= c;
                n.xs[i] -= c;
            }
            if c > 0 && arrive <= self.h {
                n.pending.push((arrive, j, if veh { c } else { 0 }, if staff { c } else { 0 }));
            }
            best = best.max(self.choose(t, moves, k + 1, a, n, acc + score * f64::from(c)));
        }
        best
    }
}

/// Two zones, `h` slots, at most three vehicles and one staff member.
pub fn toy_case(rng: &mut ChaCha8Rng, h: usize) -> (Scenario, TravelTimeTensor) {
        // Multiples of 7.5 minutes keep every objective term a binary fraction.
        let minutes: Vec<f64> = (0..4).map(|_| 7.5 * f64::from(rng.random_range(1..=4))).collect();
        let travel = TravelTimeTensor::new(Tensor3::from_fn(2, 96, |i, j, _| minutes[2 * i + j]));
        let x_v0 = vec![rng.random_range(0..=2), rng.random_range(0..=1)];
        let x_s0 = vec![rng.random_range(0..=1), 0];
        let mut sc = Scenario::empty(2, h, x_v0, x_s0);
        for t in 1..=h {
            for i in 0..2 {
                if rng.random_bool(0.4) {
                    sc.add_demand(i, rng.random_range(0..2), t, rng.random_range(1..=2));
                }
            }
        }
    (sc, travel)
}
