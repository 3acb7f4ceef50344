//! Program builders: the per-slot relocation and transit programs and the
//! full-information model of a whole scenario.

use crate::demand::{duration_slots, effective_travel_time, Scenario, TravelTimeTensor};
use crate::relocation::RelocParams;

use super::{IntegerProgram, Piecewise, Sense};

/// Arc `(from, to)` behind each variable of a per-slot program.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalIpIndex {
    pub arcs: Vec<(usize, usize)>,
}

impl LocalIpIndex {
    /// `(from, to, count)` for every arc with a positive value.
    pub fn decode(&self, x: &[u32]) -> Vec<(usize, usize, u32)> {
        self.arcs.iter().zip(x).filter(|(_, &c)| c > 0).map(|(&(i, j), &c)| (i, j, c)).collect()
    }
}

/// Relocation program at slot `t`: variables `u_r[i, j]` for sources with
/// an idle vehicle and idle staff member, objective
/// `Σ_k U''[k]·1(U''[k] < r_th) − w_tt·Σ u_r[i,j]·T[i,j,t]`.
pub fn build_relocation_ip(
    u: &[f64],
    travel: &TravelTimeTensor,
    x_v: &[u32],
    x_s: &[u32],
    params: &RelocParams,
    t: usize,
) -> (IntegerProgram, LocalIpIndex) {
    let n = u.len();
    let mut ip = IntegerProgram::new(format!("relocation_t{t}"));
    let mut index = LocalIpIndex::default();
    let mut flow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let cap = x_v[i].min(x_s[i]);
        if cap == 0 {
            continue;
        }
        let mut row = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| j != i) {
            let v = ip.add_var(format!("r_{i}_{j}"), cap);
            index.arcs.push((i, j));
            ip.objective.push((v, -params.w_tt * travel.get(i, j, t)));
            flow[i].push((v, -1.0));
            flow[j].push((v, 1.0));
            row.push((v, 1.0));
        }
        ip.add_constraint(format!("cap_{i}"), row, Sense::Le, f64::from(cap));
    }
    for (k, terms) in flow.into_iter().enumerate() {
        ip.piecewise.push(Piecewise { name: format!("g_{k}"), coef: 1.0, constant: u[k], terms, threshold: params.r_th });
    }
    (ip, index)
}

/// Transit program at slot `t`: variables `u_t[i, j]` for zones with idle
/// staff, objective `Σ_j U[j]·Σ_i u_t[i,j] − w_tt·Σ u_t[i,j]·T_s[i,j,t]`
/// where `T_s` is the scooter travel time.
pub fn build_transit_ip(
    u: &[f64],
    travel: &TravelTimeTensor,
    x_s: &[u32],
    params: &RelocParams,
    t: usize,
    scooter_factor: f64,
) -> (IntegerProgram, LocalIpIndex) {
    let n = u.len();
    let mut ip = IntegerProgram::new(format!("transit_t{t}"));
    let mut index = LocalIpIndex::default();
    for i in 0..n {
        if x_s[i] == 0 {
            continue;
        }
        let mut row = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| j != i) {
            let v = ip.add_var(format!("s_{i}_{j}"), x_s[i]);
            index.arcs.push((i, j));
            ip.objective.push((v, u[j] - params.w_tt * scooter_factor * travel.get(i, j, t)));
            row.push((v, 1.0));
        }
        ip.add_constraint(format!("staff_{i}"), row, Sense::Le, f64::from(x_s[i]));
    }
    (ip, index)
}

/// Variable positions of the full model, `(i, j, t, var)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FullModelIndex {
    pub u_v: Vec<(usize, usize, usize, usize)>,
    pub u_r: Vec<(usize, usize, usize, usize)>,
    pub u_t: Vec<(usize, usize, usize, usize)>,
}

/// Full-information model of one scenario: client assignments, relocations
/// and transits over all slots, with state variables `x_v[i,t]`,
/// `x_s[i,t]` linked by the simulator's update rules. The objective is the
/// total effective trip time in hours.
pub fn build_full_model(sc: &Scenario, travel: &TravelTimeTensor, horizon: usize) -> (IntegerProgram, FullModelIndex) {
    let (n, h) = (sc.zones, horizon.min(sc.horizon));
    let (fleet, staff) = (sc.fleet(), sc.staff());
    let mut ip = IntegerProgram::new("full");
    let mut index = FullModelIndex::default();
    let mut xv = vec![vec![0usize; h + 1]; n];
    let mut xs = vec![vec![0usize; h + 1]; n];
    // Vehicle and staff moves leaving (i, t) and arriving at (i, t).
    let mut v_out = vec![vec![Vec::new(); h + 1]; n];
    let mut v_in = vec![vec![Vec::new(); h + 1]; n];
    let mut s_out = vec![vec![Vec::new(); h + 1]; n];
    let mut s_in = vec![vec![Vec::new(); h + 1]; n];
    for t in 1..=h {
        for i in 0..n {
            xv[i][t] = ip.add_var(format!("xv_{i}_{t}"), fleet);
        }
        if staff > 0 {
            for i in 0..n {
                xs[i][t] = ip.add_var(format!("xs_{i}_{t}"), staff);
            }
        }
        for i in 0..n {
            for &(j, c) in sc.demand_row(i, t) {
                let j = j as usize;
                let v = ip.add_var(format!("v_{i}_{j}_{t}"), c);
                let minutes = travel.get(i, j, t);
                ip.objective.push((v, effective_travel_time(minutes, t, h) / 60.0));
                index.u_v.push((i, j, t, v));
                v_out[i][t].push(v);
                let arrive = t + duration_slots(minutes);
                if arrive <= h {
                    v_in[j][arrive].push(v);
                }
            }
        }
        if staff == 0 {
            continue;
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let v = ip.add_var(format!("r_{i}_{j}_{t}"), fleet.min(staff));
                index.u_r.push((i, j, t, v));
                v_out[i][t].push(v);
                s_out[i][t].push(v);
                let arrive = t + duration_slots(travel.get(i, j, t));
                if arrive <= h {
                    v_in[j][arrive].push(v);
                    s_in[j][arrive].push(v);
                }
            }
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let v = ip.add_var(format!("s_{i}_{j}_{t}"), staff);
                index.u_t.push((i, j, t, v));
                s_out[i][t].push(v);
                let arrive = t + duration_slots(travel.get(i, j, t));
                if arrive <= h {
                    s_in[j][arrive].push(v);
                }
            }
        }
    }
    let link = |ip: &mut IntegerProgram, name: String, x: &[usize], outs: &[Vec<usize>], ins: &[Vec<usize>], t: usize, x0: u32| {
        let mut terms = vec![(x[t], 1.0)];
        let rhs = if t == 1 {
            f64::from(x0)
        } else {
            terms.push((x[t - 1], -1.0));
            terms.extend(outs[t - 1].iter().map(|&v| (v, 1.0)));
            0.0
        };
        terms.extend(ins[t].iter().map(|&v| (v, -1.0)));
        ip.add_constraint(name, terms, Sense::Eq, rhs);
    };
    for t in 1..=h {
        for i in 0..n {
            link(&mut ip, format!("fv_{i}_{t}"), &xv[i], &v_out[i], &v_in[i], t, sc.x_v0[i]);
            let mut cap: Vec<(usize, f64)> = v_out[i][t].iter().map(|&v| (v, 1.0)).collect();
            cap.push((xv[i][t], -1.0));
            ip.add_constraint(format!("cv_{i}_{t}"), cap, Sense::Le, 0.0);
            if staff > 0 {
                link(&mut ip, format!("fs_{i}_{t}"), &xs[i], &s_out[i], &s_in[i], t, sc.x_s0[i]);
                let mut cap: Vec<(usize, f64)> = s_out[i][t].iter().map(|&v| (v, 1.0)).collect();
                cap.push((xs[i][t], -1.0));
                ip.add_constraint(format!("cs_{i}_{t}"), cap, Sense::Le, 0.0);
            }
        }
    }
    (ip, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Tensor3;
    use crate::localmip::{solve_exact, IpStatus, SolveOptions};

    fn flat(n: usize, minutes: f64) -> TravelTimeTensor {
        TravelTimeTensor::new(Tensor3::filled(n, 96, minutes))
    }

    #[test]
    fn no_staffed_zone_gives_constant_program() {
        let p = RelocParams::new(0.07, 1.0, 0.0);
        let (ip, idx) = build_relocation_ip(&[-2.0, 3.0, -1.0], &flat(3, 10.0), &[1, 1, 0], &[0, 0, 0], &p, 1);
        assert_eq!(ip.num_vars(), 0);
        assert!(idx.arcs.is_empty());
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.objective, -3.0);
    }

    #[test]
    fn two_zone_relocation_example() {
        let p = RelocParams::new(0.0, 1.0, 0.0);
        let (ip, idx) = build_relocation_ip(&[3.0, -2.0], &flat(2, 10.0), &[1, 0], &[1, 0], &p, 1);
        assert_eq!(ip.evaluate(&[0]), -2.0);
        assert_eq!(ip.evaluate(&[1]), -1.0);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.status, IpStatus::Optimal);
        assert_eq!(idx.decode(s.assignment.as_ref().unwrap()), vec![(0, 1, 1)]);
        assert_eq!(s.objective, -1.0);
    }

    #[test]
    fn relocation_cannot_help_when_all_above_threshold() {
        let p = RelocParams::new(0.0, 1.0, -5.0);
        let (ip, _) = build_relocation_ip(&[1.0, 0.0, 2.0], &flat(3, 10.0), &[2, 1, 0], &[1, 1, 1], &p, 1);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.objective, ip.evaluate(&vec![0; ip.num_vars()]));
    }

    #[test]
    fn transit_examples() {
        let p = RelocParams::new(0.0, 1.0, 0.0);
        let (ip, _) = build_transit_ip(&[0.0, 5.0], &flat(2, 10.0), &[0, 0], &p, 1, 1.0);
        assert_eq!(ip.num_vars(), 0);
        let (ip, idx) = build_transit_ip(&[0.0, 5.0], &flat(2, 10.0), &[1, 0], &p, 1, 1.0);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.objective, 5.0);
        assert_eq!(idx.decode(s.assignment.as_ref().unwrap()), vec![(0, 1, 1)]);
        let p = RelocParams::new(0.1, 1.0, 0.0);
        let (ip, _) = build_transit_ip(&[0.0, 0.0, 0.0], &flat(3, 10.0), &[2, 1, 0], &p, 1, 1.0);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.objective, 0.0);
        assert!(s.assignment.unwrap().iter().all(|&x| x == 0));
    }

    #[test]
    fn full_model_without_demand_is_zero() {
        let sc = Scenario::empty(2, 4, vec![1, 1], vec![1, 0]);
        let (ip, _) = build_full_model(&sc, &flat(2, 10.0), 4);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.status, IpStatus::Optimal);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn full_model_single_reachable_demand() {
        // The only vehicle sits in zone 0; the client waits in zone 1 at
        // slot 3. A relocation at slot 1 or 2 brings the vehicle in time.
        let mut sc = Scenario::empty(2, 4, vec![1, 0], vec![1, 0]);
        sc.add_demand(1, 0, 3, 1);
        let tt = flat(2, 15.0);
        let (ip, idx) = build_full_model(&sc, &tt, 4);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.status, IpStatus::Optimal);
        assert_eq!(s.objective, effective_travel_time(15.0, 3, 4) / 60.0);
        let x = s.assignment.unwrap();
        assert_eq!(idx.u_v.iter().map(|e| x[e.3]).sum::<u32>(), 1);
    }
}
