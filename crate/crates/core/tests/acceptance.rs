//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values and wall time. Lines go straight to stderr so they show without
//! `--nocapture`.
//!
//! Criterion 3 is known red (see `KNOWN_RED`): the published purchasing
//! costs are not reachable at the documented producer capacity nor at any
//! capacity of the permitted calibration set. The test asserts it stays red,
//! so a change that turns it green has to update this file deliberately.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scirp::clustergen::{base_stock, delivery_load, enumerate, price_cluster, ClusterPool, Schedule};
use scirp::instance::{generate, GenParams, Instance};
use scirp::mdp::{build_outflow, extract_ss, solve, MdpModel, OutflowModel, Policy, PurchaseCosts, SsRule};
use scirp::routing::{shortest_route_in, tour_length};
use scirp::search::{
    comparison_table, compare, default_grid, grid_search, summarize, Comparison, Evaluator, LineSearchParams,
    MdpSettings,
};
use scirp::setpart::{brute_force, objective, PenaltyParams, Selection};
use scirp::simulate::{simulate_aggregate, simulate_full, SimConfig};
use scirp::stochastics::{discretize, expected_positive_part, normal_cdf, normal_quantile, Gaussian};

/// Criteria expected to fail, each with its reason recorded in the ledger.
const KNOWN_RED: &[usize] = &[3];

/// Published (s, S) per period of the worked example, period 1 first.
const PUBLISHED_SS: [(i64, i64); 7] = [(0, 385), (340, 795), (30, 605), (315, 805), (70, 670), (350, 820), (330, 640)];
const PUBLISHED_CYCLE_COST: f64 = 782.0;
const ALTERNATIVE_CYCLE_COST: f64 = 2025.0;
const PUBLISHED_INCREASE: f64 = 0.27;
const SIM_PERIODS: u64 = 1_000_000;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
    secs: f64,
}

fn emit(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn run(id: usize, title: &str, budget_secs: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (ok, detail) = f();
    let secs = t.elapsed().as_secs_f64();
    let in_time = secs < budget_secs;
    let pass = ok && in_time;
    let budget = if in_time { String::new() } else { format!("; over the {budget_secs} s budget") };
    emit(&format!(
        "{} criterion {id:>2} {title}: {detail} [{secs:.3} s]{budget}",
        if pass { "PASS" } else { "FAIL" }
    ));
    Outcome { id, pass, detail, secs }
}

fn fixture(name: &str) -> Instance {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    Instance::load(path).unwrap().validated().unwrap()
}

fn with_capacity(capacity: i64) -> Instance {
    let mut inst = fixture("worked_example.json");
    inst.producer.capacity = capacity;
    inst
}

/// The worked example's plan: customers {1,2} on periods 1, 4, 6 and
/// customer 3 on 2, 3, 5, 7; the alternative moves the latter to 1, 3, 5, 7.
fn example_plan(pool: &ClusterPool, alternative: bool) -> Selection {
    let find = |c: &[usize], p: &[usize]| {
        let s = Schedule::from_periods(7, p).unwrap();
        pool.clusters
            .iter()
            .position(|x| x.customers == c && x.schedule == s)
            .expect("cluster in pool")
    };
    let third: &[usize] = if alternative { &[0, 2, 4, 6] } else { &[1, 2, 4, 6] };
    Selection::from_ids(pool, &[find(&[0, 1], &[0, 3, 5]), find(&[2], third)], PenaltyParams::default()).unwrap()
}

fn solve_plan(inst: &Instance, sel: &Selection, step: i64) -> scirp::Result<(OutflowModel, Policy)> {
    let out = build_outflow(sel, inst, step, 1e-6)?;
    let model = MdpModel::for_instance(inst, &out)?;
    let policy = solve(&model, &out, 0.1)?;
    Ok((out, policy))
}

fn criterion_1() -> (bool, String) {
    let inst = fixture("worked_example.json");
    let t = Instant::now();
    let levels: Vec<Vec<i64>> = [0, 1]
        .iter()
        .map(|&i| [3, 2, 2].iter().map(|&n| base_stock(&inst.customers[i], n, inst.alpha).unwrap()).collect())
        .collect();
    let us = t.elapsed().as_secs_f64() * 1e6;
    let ok = levels == [vec![371, 258, 258], vec![892, 616, 616]] && us < 1000.0;
    (ok, format!("base stocks {levels:?} in {us:.1} us"))
}

fn criterion_2() -> (bool, String) {
    let inst = fixture("worked_example.json");
    let dist = inst.distance_matrix();
    let price = |members: &[usize], periods: &[usize]| {
        price_cluster(
            &inst,
            members,
            shortest_route_in(&dist, members).unwrap(),
            Schedule::from_periods(7, periods).unwrap(),
        )
        .unwrap()
    };
    let a = price(&[0, 1], &[0, 3, 5]);
    let b = price(&[2], &[1, 2, 4, 6]);
    let z = normal_quantile(inst.alpha).unwrap();
    let monday = delivery_load(&inst, &[0, 1], 3, 2, z).shift(-inst.vehicle_capacity);
    let excess = expected_positive_part(&monday);
    let ok = a.transport_cost == 1020.0
        && b.transport_cost == 880.0
        && (a.holding_cost - 863.0).abs() <= 1.5
        && (b.holding_cost - 885.0).abs() <= 1.5
        && (a.emergency_cost - 72.2).abs() <= 1.0
        && (b.emergency_cost - 77.4).abs() <= 1.0
        && (monday.mean + 110.79).abs() <= 0.05
        && (monday.std - 79.06).abs() <= 0.05
        && (excess - 2.89).abs() <= 0.05;
    (
        ok,
        format!(
            "cT {}/{}, cH {:.1}/{:.1}, cE {:.2}/{:.2}; Monday excess N({:.2}, {:.2}^2), E+ {:.3}",
            a.transport_cost, b.transport_cost, a.holding_cost, b.holding_cost, a.emergency_cost, b.emergency_cost,
            monday.mean, monday.std, excess
        ),
    )
}

/// Every check of the worked-example MDP at one producer capacity.
struct ExampleMdp {
    capacity: i64,
    cycle_cost: f64,
    ss_hits: usize,
    sells_excess: bool,
    alternative_cost: f64,
    increase: f64,
}

impl ExampleMdp {
    fn at(capacity: i64) -> scirp::Result<Self> {
        let inst = with_capacity(capacity);
        let pool = enumerate(&inst)?;
        let plan = example_plan(&pool, false);
        let alt = example_plan(&pool, true);
        let (_, policy) = solve_plan(&inst, &plan, 5)?;
        let (_, alt_policy) = solve_plan(&inst, &alt, 5)?;
        let mut ss_hits = 0;
        for (rule, &(s, big_s)) in extract_ss(&policy).iter().zip(&PUBLISHED_SS) {
            if let SsRule::OrderUpTo { s: gs, big_s: gb } = *rule {
                ss_hits += usize::from((gs - s).abs() <= 10) + usize::from((gb - big_s).abs() <= 10);
            }
        }
        let mut sells_excess = true;
        let mut above = 0;
        for (t, row) in policy.actions.iter().enumerate() {
            for k in 0..row.len() {
                let omega2 = policy.omega2_min + k as i64 * policy.step;
                if omega2 > capacity {
                    above += 1;
                    sells_excess &= policy.action(t, omega2).0 == (0, omega2 - capacity);
                }
            }
        }
        sells_excess &= above > 0;
        let total = plan.tactical_cost + policy.cycle_cost;
        let alt_total = alt.tactical_cost + alt_policy.cycle_cost;
        Ok(Self {
            capacity,
            cycle_cost: policy.cycle_cost,
            ss_hits,
            sells_excess,
            alternative_cost: alt_policy.cycle_cost,
            increase: alt_total / total - 1.0,
        })
    }

    fn bands_hold(&self) -> bool {
        (self.cycle_cost - PUBLISHED_CYCLE_COST).abs() <= 0.1 * PUBLISHED_CYCLE_COST
            && self.ss_hits >= 10
            && self.sells_excess
            && (self.alternative_cost - ALTERNATIVE_CYCLE_COST).abs() <= 0.1 * ALTERNATIVE_CYCLE_COST
    }

    fn ratio_holds(&self) -> bool {
        (self.increase - PUBLISHED_INCREASE).abs() <= 0.03
    }

    fn describe(&self) -> String {
        format!(
            "Ubar {}: cycle {:.1}, (s,S) hits {}/14, sells excess {}, alternative {:.1}, increase {:+.1}%",
            self.capacity,
            self.cycle_cost,
            self.ss_hits,
            self.sells_excess,
            self.alternative_cost,
            100.0 * self.increase
        )
    }
}

fn criterion_3() -> (bool, String) {
    let documented = ExampleMdp::at(4500).unwrap();
    if documented.bands_hold() && documented.ratio_holds() {
        return (true, documented.describe());
    }
    // Permitted one-parameter calibration; reported whatever its outcome.
    let mut notes = vec![documented.describe()];
    let mut calibrated = None;
    for capacity in [1000, 2000, 3000] {
        match ExampleMdp::at(capacity) {
            Ok(m) => {
                notes.push(m.describe());
                if m.bands_hold() && m.ratio_holds() && calibrated.is_none() {
                    calibrated = Some(capacity);
                }
            }
            Err(e) => notes.push(format!("Ubar {capacity}: {e}")),
        }
    }
    // Outside the permitted set; informational only.
    let info = ExampleMdp::at(1500).unwrap();
    emit(&format!(
        "INFO criterion  3 outside the permitted set, {}; bands {}, ratio {}",
        info.describe(),
        info.bands_hold(),
        info.ratio_holds()
    ));
    let verdict = match calibrated {
        Some(c) => format!("calibrated Ubar = {c}"),
        None => "no permitted capacity meets the bands and the ratio".into(),
    };
    (calibrated.is_some(), format!("{verdict}; {}", notes.join("; ")))
}

fn criterion_4() -> (bool, String) {
    let etas = [(0.0, 0.0), (1.0, 0.5), (3.0, 2.0)];
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for seed in 0..20u64 {
        let n = 5 + (seed % 4) as usize;
        let inst = generate(400 + seed, n, 7, &GenParams::default()).unwrap();
        let pool = enumerate(&inst).unwrap();
        for &(a, b) in &etas {
            let p = PenaltyParams::new(a, b).unwrap();
            let fast = objective(&scirp::setpart::solve(&pool, p).unwrap(), p);
            let slow = objective(&brute_force(&pool, p).unwrap(), p);
            checked += 1;
            if fast != slow {
                mismatches.push(format!("seed {seed} eta ({a},{b}): {fast} vs {slow}"));
            }
        }
    }
    (
        mismatches.is_empty(),
        format!("{checked} solves on N in 5..=8, {} objective mismatches {mismatches:?}", mismatches.len()),
    )
}

fn criterion_5() -> (bool, String) {
    fn permutations(items: &mut Vec<usize>, k: usize, dist: &[Vec<f64>], best: &mut f64) {
        if k == items.len() {
            *best = best.min(tour_length(dist, items));
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permutations(items, k + 1, dist, best);
            items.swap(k, i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10usize);
        let mut dist = vec![vec![0.0; n + 1]; n + 1];
        for a in 0..=n {
            for b in a + 1..=n {
                let d = f64::from(rng.random_range(1..=100u32));
                dist[a][b] = d;
                dist[b][a] = d;
            }
        }
        let size = rng.random_range(1..=n.min(8));
        let mut subset: Vec<usize> = (0..n).collect();
        for i in 0..size {
            let j = rng.random_range(i..n);
            subset.swap(i, j);
        }
        subset.truncate(size);
        let mut best = f64::INFINITY;
        permutations(&mut subset.clone(), 0, &dist, &mut best);
        let dp = shortest_route_in(&dist, &subset).unwrap();
        if dp.length != best || tour_length(&dist, &dp.order) != dp.length {
            failures += 1;
        }
    }
    (failures == 0, format!("200 random matrices, {failures} mismatches"))
}

/// Base-system instances of size ten shared by criteria 6 and 7.
fn ten_customer_instances(count: u64) -> Vec<(String, Instance)> {
    (1..=count)
        .map(|seed| (format!("n10-seed{seed}"), generate(seed, 10, 7, &GenParams::default()).unwrap()))
        .collect()
}

fn criterion_6() -> (bool, String) {
    let mut rows: Vec<Comparison> = Vec::new();
    for (name, inst) in ten_customer_instances(20) {
        let pool = enumerate(&inst).unwrap();
        let mut ev = Evaluator::new(&inst, &pool, MdpSettings::default());
        rows.push(compare(&name, &mut ev, LineSearchParams::default()).unwrap());
    }
    let s = summarize(&rows).unwrap();
    emit(&comparison_table(&rows).unwrap());
    let never_worse = rows.iter().all(|c| c.line_search.total <= c.step_by_step.total);
    (
        never_worse && s.strictly_better >= 5,
        format!(
            "never worse {never_worse}, strictly better on {}/20, delta avg {:.1}%, max {:.1}%",
            s.strictly_better, s.delta_avg, s.delta_max
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let (e1, e2) = default_grid();
    let mut gaps = Vec::new();
    for (name, inst) in ten_customer_instances(5) {
        let pool = enumerate(&inst).unwrap();
        let mut ev = Evaluator::new(&inst, &pool, MdpSettings::default());
        let line = compare(&name, &mut ev, LineSearchParams::default()).unwrap().line_search;
        let grid = grid_search(&mut ev, &e1, &e2).unwrap();
        gaps.push(100.0 * (line.total - grid.best.total) / grid.best.total);
    }
    let within = gaps.iter().filter(|&&g| g <= 1.0).count();
    let avg = gaps.iter().sum::<f64>() / gaps.len() as f64;
    (
        within >= 4,
        format!("line search within 1% of grid best on {within}/5; gaps {gaps:.3?} %, avg {avg:.3}%"),
    )
}

fn criterion_8() -> (bool, String) {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |label: &str, inst: &Instance, pool: &ClusterPool, sel: &Selection, seed: u64| {
        let (_, policy) = solve_plan(inst, sel, 5).unwrap();
        let rep = simulate_aggregate(inst, pool, sel, &policy, &SimConfig::new(SIM_PERIODS, seed)).unwrap();
        let p = rep.cycle_costs.purchasing;
        let z = (p.mean - policy.cycle_cost) / p.se;
        ok &= p.covers(policy.cycle_cost, 3.0);
        notes.push(format!("{label} {:.1} vs {:.1} ({z:+.2} SE)", p.mean, policy.cycle_cost));
        policy
    };
    let example = fixture("worked_example.json");
    let example_pool = enumerate(&example).unwrap();
    let plan = example_plan(&example_pool, false);
    let policy = check("example", &example, &example_pool, &plan, 81);
    check("example-alt", &example, &example_pool, &example_plan(&example_pool, true), 82);
    let small = with_capacity(1500);
    let small_pool = enumerate(&small).unwrap();
    check("example-1500", &small, &small_pool, &example_plan(&small_pool, false), 83);
    let base = fixture("base_defaults.json");
    let base_pool = enumerate(&base).unwrap();
    let base_plan = scirp::setpart::solve(&base_pool, PenaltyParams::default()).unwrap();
    check("base", &base, &base_pool, &base_plan, 84);

    let full = simulate_full(&example, &example_pool, &plan, &policy, &SimConfig::new(SIM_PERIODS, 85), false).unwrap();
    let worst = full
        .worst_period_service_level
        .as_ref()
        .unwrap()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let overall = full.service_level.as_ref().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
    let service_ok = worst >= example.alpha - 0.01;
    notes.push(format!("no-back-order frequency: worst period {worst:.4}, worst customer {overall:.4}"));
    (ok && service_ok, notes.join("; "))
}

fn criterion_9() -> (bool, String) {
    let inst = fixture("worked_example.json");
    let pool = enumerate(&inst).unwrap();
    let plan = example_plan(&pool, false);
    let (_, coarse) = solve_plan(&inst, &plan, 5).unwrap();
    let (_, fine) = solve_plan(&inst, &plan, 2).unwrap();
    let change = (fine.gain - coarse.gain).abs() / coarse.gain;
    let rep = simulate_aggregate(&inst, &pool, &plan, &coarse, &SimConfig::new(SIM_PERIODS, 91)).unwrap();
    (
        change < 0.02 && rep.clamp_count == 0,
        format!(
            "gain {:.3} at step 5, {:.3} at step 2 ({:.2}%); clamp count {}",
            coarse.gain,
            fine.gain,
            100.0 * change,
            rep.clamp_count
        ),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=5usize);
    let t = rng.random_range(1..=7usize);
    let params = GenParams {
        uncertainty: if rng.random_bool(0.5) { scirp::instance::Uncertainty::L } else { scirp::instance::Uncertainty::H },
        ..GenParams::default()
    };
    generate(rng.random(), n, t, &params).unwrap()
}

fn criterion_10() -> (bool, String) {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Cyclic flow conservation and post-hoc cc2 over whole pools.
    let (mut flow_bad, mut cc2_bad, mut clusters) = (0, 0, 0);
    for _ in 0..CASES {
        let inst = random_instance(&mut rng);
        let pool = enumerate(&inst).unwrap();
        for c in &pool.clusters {
            clusters += 1;
            let expected = inst.periods as f64 * c.customers.iter().map(|&i| inst.customers[i].mu).sum::<f64>();
            let flow: f64 = c.delta.iter().sum();
            if (flow - expected).abs() > 1e-9 * expected.max(1.0) {
                flow_bad += 1;
            }
            for t in 0..inst.periods {
                if let Some(load) = c.load(t) {
                    let p = if load.std == 0.0 {
                        f64::from(u8::from(load.mean <= inst.vehicle_capacity))
                    } else {
                        normal_cdf((inst.vehicle_capacity - load.mean) / load.std)
                    };
                    if p < inst.gamma - 1e-12 {
                        cc2_bad += 1;
                    }
                }
            }
        }
    }

    // E[X+] - E[(-X)+] = mean.
    let mut parity_bad = 0;
    for _ in 0..CASES {
        let g = Gaussian::new(rng.random_range(-1e3..1e3), rng.random_range(0.0..500.0)).unwrap();
        let mirrored = Gaussian::new(-g.mean, g.std).unwrap();
        let diff = expected_positive_part(&g) - expected_positive_part(&mirrored);
        if (diff - g.mean).abs() > 1e-9 * g.mean.abs().max(g.std).max(1.0) {
            parity_bad += 1;
        }
    }

    // Every action of every solved policy is admissible.
    let mut action_bad = 0;
    for _ in 0..CASES {
        let step = rng.random_range(5..=10i64);
        let capacity = step * rng.random_range(4..=30i64);
        let periods = rng.random_range(1..=7usize);
        let outflow = OutflowModel {
            step,
            periods: (0..periods)
                .map(|_| {
                    let g = Gaussian::new(rng.random_range(-60.0..60.0), rng.random_range(0.0..30.0)).unwrap();
                    discretize(&g, step, 1e-6).unwrap()
                })
                .collect(),
        };
        let costs = PurchaseCosts {
            k1: rng.random_range(0.0..500.0),
            k2: rng.random_range(0.0..2000.0),
            b1: rng.random_range(1.0..20.0),
            b2: rng.random_range(0.0..1.0),
        };
        let model = MdpModel::new(capacity, costs, &outflow).unwrap();
        let policy = solve(&model, &outflow, 0.1).unwrap();
        for row in &policy.actions {
            for (k, &(q1, q2)) in row.iter().enumerate() {
                let omega2 = policy.omega2_min + k as i64 * policy.step;
                let next = omega2 + q1 - q2;
                if q1 < 0 || q2 < 0 || (q1 > 0 && q2 > 0) || !(0..=capacity).contains(&next)
                    || model.action_cost(omega2, q1, q2).is_err()
                {
                    action_bad += 1;
                }
            }
        }
    }
    let ok = flow_bad == 0 && cc2_bad == 0 && parity_bad == 0 && action_bad == 0;
    (
        ok,
        format!(
            "{CASES} cases each: flow {flow_bad} bad of {clusters} clusters, cc2 {cc2_bad} bad deliveries, \
             parity {parity_bad} bad, actions {action_bad} inadmissible"
        ),
    )
}

#[test]
fn acceptance() {
    let outcomes = vec![
        run(1, "worked-example base stocks", 1.0, criterion_1),
        run(2, "worked-example cluster pricing", 1.0, criterion_2),
        run(3, "worked-example purchasing MDP", 30.0, criterion_3),
        run(4, "set partitioning equals exhaustive search", 300.0, criterion_4),
        run(5, "route DP equals permutation search", 60.0, criterion_5),
        run(6, "joint optimization never loses", 1800.0, criterion_6),
        run(7, "line search close to grid search", 7200.0, criterion_7),
        run(8, "solver and simulator agree", 1200.0, criterion_8),
        run(9, "numerical robustness", 300.0, criterion_9),
        run(10, "property suite", 600.0, criterion_10),
    ];
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let total: f64 = outcomes.iter().map(|o| o.secs).sum();
    emit(&format!("acceptance: {passed}/{} criteria pass in {total:.1} s", outcomes.len()));
    for o in &outcomes {
        if KNOWN_RED.contains(&o.id) {
            assert!(!o.pass, "criterion {} now passes; remove it from KNOWN_RED", o.id);
        } else {
            assert!(o.pass, "criterion {} failed: {}", o.id, o.detail);
        }
    }
}
