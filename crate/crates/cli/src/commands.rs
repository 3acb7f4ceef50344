use std::path::Path;

use anyhow::{bail, Context};
use ffcs_core::bench::{self, Algorithm, Arm, Availability, Instance, ZoningBenchConfig, ZoningMethod};
use ffcs_core::demand::{sample_scenario, select_delta};
use ffcs_core::localmip::lp;
use ffcs_core::localmip::{build_full_model, build_relocation_ip};
use ffcs_core::predictors::{lambda_row_sums, PredictorConfig, PredictorKind};
use ffcs_core::relocation::{imbalance, RelocParams};
use ffcs_core::rng;
use ffcs_core::sim::{write_metrics_csv, RunOptions};
use ffcs_core::synthetic::{self, SyntheticCity};
use ffcs_core::tuning::SearchConfig;
use ffcs_core::zoning::{agglomerative_cluster, euclidean_adjacent_distances, validate_zoning, CellData};

use crate::config::RunConfig;
use crate::data::{self, Dataset};
use crate::{BudgetExceeded, ConfigError};

fn opts(cfg: &RunConfig) -> RunOptions {
    RunOptions { scooter_factor: cfg.scooter_factor, ..RunOptions::default() }
}

fn out(cfg: &RunConfig, name: &str) -> std::path::PathBuf {
    cfg.out.join(name)
}

fn instance(cfg: &RunConfig) -> anyhow::Result<Instance> {
    Ok(data::dataset(cfg)?.instance(cfg)?)
}

fn availability(cfg: &RunConfig) -> anyhow::Result<Availability> {
    match cfg.policy.availability.trim() {
        "current" => Ok(Availability::Current),
        s => {
            let kind = PredictorKind::parse(s).map_err(|e| ConfigError(e.to_string()))?;
            Ok(Availability::Predictor(PredictorConfig::new(kind, cfg.policy.params.h)))
        }
    }
}

/// The policy arm described by the `[policy]` block.
fn policy_arm(cfg: &RunConfig) -> anyhow::Result<Arm> {
    // The program policy has its own tuned parameters under `[mip.params]`.
    let (algorithm, params) = match cfg.policy.algorithm.trim() {
        "noopt" | "none" => (Algorithm::NoOpt, cfg.policy.params),
        "ranking" | "rb" => (Algorithm::Ranking, cfg.policy.params),
        "mip" | "local-mip" => (Algorithm::Mip(cfg.mip.solver), cfg.mip.params),
        other => bail!(ConfigError(format!("unknown policy algorithm '{other}'"))),
    };
    Ok(Arm { algorithm, params, availability: availability(cfg)? })
}

fn check_budget(cfg: &RunConfig, hits: u64) -> anyhow::Result<()> {
    if cfg.mip.strict_budget && hits > 0 {
        bail!(BudgetExceeded(hits));
    }
    Ok(())
}

fn cell_data(city: &SyntheticCity) -> CellData {
    CellData { density: city.density.clone(), car_series: city.car_profile.clone(), act_series: city.activity_series() }
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    let city = synthetic::generate(&cfg.synthetic)?;
    city.write(&cfg.out)?;
    println!("wrote {} cells to {}", city.len(), cfg.out.display());
    Ok(())
}

pub fn zone(cfg: &RunConfig) -> anyhow::Result<()> {
    let city = data::city(cfg)?;
    let adj = euclidean_adjacent_distances(&city.grid);
    let z = agglomerative_cluster(&city.grid, &cell_data(&city), &cfg.zoning.weights, cfg.zoning.max_size, &adj)?;
    z.write_csv(&out(cfg, "zones.csv"))?;
    z.write_summary_json(&out(cfg, "zones.json"))?;
    let zones = city.aggregate(&z.labels(&city.grid))?;
    Dataset::from_zones(&zones, &city.grid.centers()).write(&out(cfg, "zone-data"))?;
    println!("{} cells -> {} zones (max size {})", city.len(), z.len(), cfg.zoning.max_size);
    Ok(())
}

fn read_labels(path: &Path, city: &SyntheticCity) -> anyhow::Result<Vec<usize>> {
    let mut labels = vec![usize::MAX; city.len()];
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| rec.get(k).and_then(|v| v.trim().parse::<usize>().ok());
        let (Some(cell), Some(zone)) = (parse(0), parse(1)) else {
            return Err(ffcs_core::Error::data(path, format!("row {}: expected cell_id,zone_id", line + 2)).into());
        };
        let Some(k) = city.grid.index_of(cell) else {
            return Err(ffcs_core::Error::data(path, format!("row {}: unknown cell {cell}", line + 2)).into());
        };
        labels[k] = zone;
    }
    if labels.contains(&usize::MAX) {
        return Err(ffcs_core::Error::data(path, "some cells have no zone").into());
    }
    Ok(labels)
}

pub fn validate_zones(cfg: &RunConfig) -> anyhow::Result<()> {
    let city = data::city(cfg)?;
    let labels = match &cfg.zoning.labels {
        Some(path) => read_labels(path, &city)?,
        None => {
            let adj = euclidean_adjacent_distances(&city.grid);
            agglomerative_cluster(&city.grid, &cell_data(&city), &cfg.zoning.weights, cfg.zoning.max_size, &adj)?
                .labels(&city.grid)
        }
    };
    let zones = city.aggregate(&labels)?;
    let series = synthetic::car_history(&zones.car_profile, cfg.history_days, cfg.seed);
    let report = validate_zoning(&series, &cfg.zoning.horizons, cfg.zoning.window, cfg.zoning.strength)?;
    report.write_csv(&out(cfg, "validation.csv"))?;
    for h in &cfg.zoning.horizons {
        if let Some(r2) = report.mean_r2(*h) {
            println!("horizon {h}: mean r2 {r2:.3}");
        }
    }
    Ok(())
}

pub fn calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let d = data::dataset(cfg)?.truncate(cfg.horizon);
    let inst = Instance::calibrate(&d.trips, &d.activity, d.travel.clone(), d.presence.clone(), cfg.delta)?;
    inst.lambda.tensor().write_csv(&out(cfg, "lambda.csv"), false)?;
    let slots = d.trips.slots();
    let n = d.zones();
    let act: Vec<f64> = (1..=slots).map(|t| (0..n).map(|i| d.activity.get(i, t)).sum()).collect();
    let trips: Vec<f64> = (1..=slots).map(|t| (0..n).map(|i| d.trips.row(i, t).iter().sum::<f64>()).sum()).collect();
    let rows = select_delta(&act, &trips, &cfg.bench.delta_candidates)?;
    let mut w = csv::Writer::from_path(out(cfg, "delta.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("calibrated {n} zones x {slots} slots, alpha {:.4e}", inst.lambda.alpha);
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let arm = policy_arm(cfg)?;
    let res = bench::run_paired(&inst, &[Arm::no_opt(), arm.clone()], cfg.fleet, cfg.staff, cfg.scenarios, cfg.seed, &opts(cfg))?;
    let labels = ["NoOpt", arm.algorithm.label()];
    let rows: Vec<(String, _)> =
        labels.iter().zip(&res).flat_map(|(l, r)| r.scenarios.iter().map(move |s| (l.to_string(), s))).collect();
    write_metrics_csv(&out(cfg, "metrics.csv"), &rows)?;
    let cmp = bench::compare(&inst, &[Arm::no_opt(), arm], cfg.fleet, cfg.staff, cfg.scenarios, cfg.seed, &opts(cfg))?;
    bench::write_algorithm_csv(&out(cfg, "summary.csv"), &cmp.rows)?;
    for r in &cmp.rows {
        println!("{:6} trips {:8.2}  trip time {:8.2} h ({:+.2}%)", r.algorithm, r.trips, r.trip_time, r.dt_pct);
    }
    check_budget(cfg, cmp.rows.iter().map(|r| r.budget_hits).sum())
}

pub fn tune(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let (template, base) = if cfg.search.mip {
        (Arm::mip(cfg.mip.params, cfg.mip.solver), cfg.mip.params)
    } else {
        (Arm { availability: availability(cfg)?, ..Arm::ranking(cfg.policy.params) }, cfg.policy.params)
    };
    let search = SearchConfig {
        space: cfg.search.space,
        budget: cfg.search.budget,
        strategy: cfg.search.strategy,
        seed: cfg.seed,
        penalty: cfg.search.penalty,
        base,
    };
    let n = cfg.search.scenarios.unwrap_or(cfg.scenarios);
    let res = bench::tune(&inst, template, &search, cfg.fleet, cfg.staff, n, &opts(cfg))?;
    res.write_csv(&out(cfg, "trials.csv"))?;
    let b = &res.best;
    let best = toml::to_string(&BestParams { w_tt: b.params.w_tt, w_d: b.params.w_d, r_th: b.params.r_th })?;
    std::fs::write(out(cfg, "best.toml"), best)?;
    println!(
        "best of {} trials: w_tt {:.4} w_d {:.3} r_th {:.3} -> t {:.2} h, R {:.1}, T {:.1}",
        res.history.len(),
        b.params.w_tt,
        b.params.w_d,
        b.params.r_th,
        b.t_mean,
        b.relocations,
        b.transits
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct BestParams {
    w_tt: f64,
    w_d: f64,
    r_th: f64,
}

pub fn bench_staff(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let rows = bench::staff_sweep(&inst, cfg.policy.params, cfg.fleet, &cfg.bench.staff, cfg.scenarios, cfg.seed, &opts(cfg))?;
    bench::write_staff_csv(&out(cfg, "staff.csv"), &rows)?;
    for r in &rows {
        println!("staff {:3}: t {:8.2} ({:+.2}%)  n {:8.2} ({:+.2}%)", r.staff, r.t_mean, r.dt_pct, r.n_mean, r.dn_pct);
    }
    Ok(())
}

pub fn zoning_config(cfg: &RunConfig) -> anyhow::Result<ZoningBenchConfig> {
    let methods = cfg
        .zoning
        .methods
        .iter()
        .map(|m| ZoningMethod::parse(m).map_err(|e| ConfigError(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ZoningBenchConfig {
        methods,
        weights: cfg.zoning.weights,
        max_size: cfg.zoning.max_size,
        zones: cfg.zoning.zones,
        restarts: cfg.zoning.restarts,
        params: cfg.policy.params,
        fleet: cfg.fleet,
        staff: cfg.staff,
        scenarios: cfg.scenarios,
        seed: cfg.seed,
        history_days: cfg.history_days,
    })
}

pub fn bench_zoning(cfg: &RunConfig) -> anyhow::Result<()> {
    let city = data::city(cfg)?;
    let rows = bench::zoning_impact(&city, &zoning_config(cfg)?, &opts(cfg))?;
    bench::write_zoning_csv(&out(cfg, "zoning.csv"), &rows)?;
    for r in &rows {
        println!("{:24} {:3} zones  dt {:+.2}%  dn {:+.2}%", r.method, r.zones, r.dt_pct, r.dn_pct);
    }
    Ok(())
}

pub fn bench_predictors(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let kinds = cfg
        .bench
        .predictors
        .iter()
        .map(|k| PredictorKind::parse(k).map_err(|e| ConfigError(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let rows =
        bench::predictor_bench(&inst, &kinds, cfg.policy.params, cfg.fleet, cfg.staff, cfg.scenarios, cfg.seed, &opts(cfg))?;
    bench::write_predictor_csv(&out(cfg, "predictors.csv"), &rows)?;
    for r in &rows {
        println!("{:10} r2 {:.3}  trips {:8.2}  conflicts {:6.2}", r.predictor, r.r2, r.trips, r.conflicts);
    }
    Ok(())
}

pub fn bench_mip(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let arms = [Arm::no_opt(), Arm::ranking(cfg.policy.params), Arm::mip(cfg.mip.params, cfg.mip.solver)];
    let cmp = bench::compare(&inst, &arms, cfg.fleet, cfg.staff, cfg.scenarios, cfg.seed, &opts(cfg))?;
    bench::write_algorithm_csv(&out(cfg, "mip.csv"), &cmp.rows)?;
    let mut w = csv::Writer::from_path(out(cfg, "mip_scenarios.csv"))?;
    w.write_record(["scenario", "NoOpt", "RB", "MIP"])?;
    for (s, row) in cmp.per_scenario.iter().enumerate() {
        let mut rec = vec![s.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    for r in &cmp.rows {
        println!(
            "{:6} t {:8.2} ({:+.2}%)  agree {:.2}  budget hits {}",
            r.algorithm, r.trip_time, r.dt_pct, r.paired_agree, r.budget_hits
        );
    }
    check_budget(cfg, cmp.rows.iter().map(|r| r.budget_hits).sum())
}

pub fn bench_scale(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let n = inst.zones();
    let mut counts: Vec<usize> = cfg.bench.zone_counts.iter().copied().filter(|&k| k >= 1 && k < n).collect();
    counts.push(n);
    counts.sort_unstable();
    counts.dedup();
    let rows = bench::scalability(&inst, cfg.policy.params, &counts, &cfg.bench.scale_staff, cfg.fleet, cfg.scenarios, cfg.seed, &opts(cfg))?;
    bench::write_scale_csv(&out(cfg, "scale.csv"), &rows)?;
    for &staff in &cfg.bench.scale_staff {
        let sel: Vec<_> = rows.iter().filter(|r| r.staff == staff).collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.zones as f64).collect();
        let ys: Vec<f64> = sel.iter().map(|r| r.mean_s).collect();
        for r in &sel {
            println!("staff {:3} zones {:4}: {:.6} s +- {:.6}", staff, r.zones, r.mean_s, r.std_s);
        }
        if sel.len() >= 2 {
            println!("staff {:3}: log-log slope {:.2}", staff, bench::loglog_slope(&xs, &ys));
        }
    }
    Ok(())
}

pub fn export_lp(cfg: &RunConfig) -> anyhow::Result<()> {
    let inst = instance(cfg)?;
    let params: RelocParams = cfg.policy.params;

    let k = cfg.lp.zones.clamp(1, inst.zones());
    let keep: Vec<usize> = (0..k).collect();
    let small = inst.slice(&keep)?;
    let fleet = ((f64::from(cfg.fleet) * k as f64 / inst.zones() as f64).round() as u32).max(1);
    let seed = rng::scenario_seed(cfg.seed, 0);
    let sc = sample_scenario(&small.lambda, fleet, cfg.staff.min(fleet), &small.presence, seed)?;
    let (full, _) = build_full_model(&sc, &small.travel, cfg.lp.horizon);
    std::fs::write(out(cfg, "full.lp"), lp::export_lp(&full)?)?;

    let sc = sample_scenario(&inst.lambda, cfg.fleet, cfg.staff, &inst.presence, seed)?;
    let t = cfg.lp.slot.clamp(1, inst.lambda.horizon());
    let x_hat: Vec<f64> = sc.x_v0.iter().map(|&v| f64::from(v)).collect();
    let u = imbalance(&x_hat, &lambda_row_sums(&inst.lambda, t, params.h), params.w_d);
    let (local, _) = build_relocation_ip(&u, &inst.travel, &sc.x_v0, &sc.x_s0, &params, t);
    std::fs::write(out(cfg, "relocation.lp"), lp::export_lp(&local)?)?;
    println!(
        "full model: {} variables, {} constraints; relocation program at slot {t}: {} variables",
        full.num_vars(),
        full.constraints.len(),
        local.num_vars()
    );
    Ok(())
}
