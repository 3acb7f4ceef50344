mod support;

use ffcs_core::demand::Scenario;
use ffcs_core::localmip::{build_full_model, solve_exact, IpStatus, SolveOptions};
use ffcs_core::zoning::dtw;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{dtw_reference, enumerate_best, random_program, toy_case, Enumerator};

#[test]
fn dtw_matches_quadratic_reference_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..200 {
        let (n, m) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let scale = [1.0, 10.0, 1000.0][case % 3];
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
        assert_eq!(dtw(&x, &y).unwrap(), dtw_reference(&x, &y), "case {case}");
        assert_eq!(dtw(&x, &y).unwrap(), dtw(&y, &x).unwrap(), "symmetry, case {case}");
    }
}

#[test]
fn branch_and_bound_matches_enumeration_on_random_programs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut infeasible = 0;
    for case in 0..100 {
        let ip = random_program(&mut rng);
        ip.validate().unwrap();
        let sol = solve_exact(&ip, &SolveOptions::exhaustive());
        match enumerate_best(&ip) {
            None => {
                infeasible += 1;
                assert_eq!(sol.status, IpStatus::Infeasible, "case {case}: {ip:?}");
            }
            Some(best) => {
                assert_eq!(sol.status, IpStatus::Optimal, "case {case}");
                let x = sol.assignment.as_ref().unwrap();
                assert!(ip.is_feasible(x), "case {case}");
                assert_eq!(ip.evaluate(x), best, "case {case}: {ip:?}");
                assert_eq!(sol.objective, best, "case {case}");
            }
        }
        let warm = solve_exact(&ip, &SolveOptions::with_nodes(1_000_000));
        assert_eq!(warm.status, sol.status, "local search changes nothing at the optimum, case {case}");
        assert_eq!(warm.objective, sol.objective, "case {case}");
    }
    assert!(infeasible < 50, "the generator should mostly give feasible programs");
}

#[test]
fn full_model_matches_decision_enumeration_on_toy_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 4;
    let (mut positive, mut staff_helps) = (0, 0);
    for case in 0..25 {
        let (sc, travel) = toy_case(&mut rng, h);
        let (ip, _) = build_full_model(&sc, &travel, h);
        let sol = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(sol.status, IpStatus::Optimal, "case {case}");
        let e = Enumerator { sc: &sc, travel: &travel, h };
        let best = e.optimum();
        assert_eq!(sol.objective, best, "case {case}: {sc:?}");
        let idle = Enumerator { sc: &Scenario { x_s0: vec![0, 0], ..sc.clone() }, travel: &travel, h }.optimum();
        positive += usize::from(best > 0.0);
        staff_helps += usize::from(best > idle);
    }
    assert!(positive >= 15, "{positive} cases with trips");
    assert!(staff_helps >= 3, "{staff_helps} cases where staff moves matter");
}
