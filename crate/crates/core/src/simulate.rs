//! Monte-Carlo evaluation of a delivery plan together with a purchasing
//! policy.
//!
//! The aggregate model draws each customer's order straight from its normal
//! order law, exactly as the purchasing model assumes. The full model draws
//! daily demand instead and runs every customer's base-stock replenishment,
//! so it also exposes what the closed-form cluster costs leave out: orders
//! that would be negative, and service above or below target.
//!
//! Inventory positions live on the policy's grid: each period's net outflow
//! is drawn from its continuous law and rounded to the nearest grid point.
//! Standard errors are computed from batch means of whole cycles, since
//! consecutive cycles share the producer's inventory.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustergen::{base_stock_level, order_distribution, ClusterPool};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::mdp::{MdpModel, Policy, PurchaseCosts};
use crate::setpart::Selection;
use crate::stochastics::{nearest_grid_point, normal_quantile};

pub const DEFAULT_WARMUP_CYCLES: usize = 100;
pub const MAX_BATCH_CYCLES: u64 = 100;
/// Below this many batches, batches shrink (to single cycles at worst).
const MIN_BATCHES: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Measured periods over all replications, rounded up to whole batches
    /// of cycles in every replication.
    pub periods: u64,
    pub seed: u64,
    pub warmup_cycles: usize,
    pub replications: usize,
    /// Measured periods of the first replication kept in the trace.
    pub trace_periods: usize,
}

impl SimConfig {
    pub fn new(periods: u64, seed: u64) -> Self {
        Self {
            periods,
            seed,
            warmup_cycles: DEFAULT_WARMUP_CYCLES,
            replications: 1,
            trace_periods: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Aggregate,
    Full,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0 }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

/// Expected cost per cycle by component. In the aggregate model the
/// holding cost is the closed form and carries no error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleCosts {
    pub transport: Estimate,
    pub holding: Estimate,
    pub emergency: Estimate,
    pub purchasing: Estimate,
    pub total: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub cycle: u64,
    pub t: usize,
    pub outflow: f64,
    pub omega2: i64,
    pub q1: i64,
    pub q2: i64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: Mode,
    /// Whether negative raw orders were cut to zero (full model only).
    pub clamp_orders: Option<bool>,
    pub seed: u64,
    pub replications: usize,
    pub periods: u64,
    pub cycles: u64,
    pub warmup_cycles: usize,
    pub batch_cycles: u64,
    pub cycle_costs: CycleCosts,
    /// Share of customer deliveries whose raw order was negative.
    pub negative_order_frequency: Option<f64>,
    /// Per customer, share of periods ending without back-orders.
    pub service_level: Option<Vec<f64>>,
    /// Per customer, the lowest such share over the periods of the cycle.
    pub worst_period_service_level: Option<Vec<f64>>,
    /// Holding plus emergency cost per cycle of this run minus that of the
    /// same sample path under the other order-clamping choice.
    pub clamping_effect: Option<Estimate>,
    /// Share of vehicle trips that needed an emergency shipment.
    pub emergency_frequency: f64,
    /// Positions that fell outside the policy table.
    pub clamp_count: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trace rows as CSV.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("cycle,t,outflow,omega2,q1,q2,cost\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cycle,
            r.t + 1,
            r.outflow,
            r.omega2,
            r.q1,
            r.q2,
            r.cost
        ));
    }
    out
}

/// Purchasing and tactical costs of the aggregate model.
pub fn simulate_aggregate(
    inst: &Instance,
    pool: &ClusterPool,
    sel: &Selection,
    policy: &Policy,
    cfg: &SimConfig,
) -> Result<SimReport> {
    run(inst, pool, sel, policy, cfg, Mode::Aggregate, false)
}

/// Customer-level simulation; `clamp_orders` cuts negative raw orders to zero.
pub fn simulate_full(
    inst: &Instance,
    pool: &ClusterPool,
    sel: &Selection,
    policy: &Policy,
    cfg: &SimConfig,
    clamp_orders: bool,
) -> Result<SimReport> {
    run(inst, pool, sel, policy, cfg, Mode::Full, clamp_orders)
}

/// Running mean and squared deviations (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean: self.mean, se }
    }
}

const TRANSPORT: usize = 0;
const HOLDING: usize = 1;
const EMERGENCY: usize = 2;
const PURCHASING: usize = 3;
const TOTAL: usize = 4;
const SHADOW: usize = 5;
const SLOTS: usize = 6;

/// One selected cluster as the simulator needs it.
struct Route {
    members: Vec<usize>,
    trip_cost: f64,
    /// Per period: whether it delivers.
    delivers: Vec<bool>,
}

struct Plan {
    periods: usize,
    routes: Vec<Route>,
    /// `levels[i][t]`: order-up-to level of customer `i` on a delivery in `t`.
    levels: Vec<Vec<f64>>,
    /// `orders[i][t]`: mean and std of the aggregate order in `t`.
    orders: Vec<Vec<(f64, f64)>>,
    demand: Vec<(f64, f64)>,
    supply: (f64, f64),
    holding_rate: f64,
    holding_closed_form: f64,
    vehicle_capacity: f64,
    emergency_rate: f64,
    model: MdpModel,
}

impl Plan {
    fn new(inst: &Instance, pool: &ClusterPool, sel: &Selection, policy: &Policy) -> Result<Self> {
        let periods = inst.periods;
        if policy.periods != periods || pool.periods != periods {
            return Err(Error::InvalidArgument("policy, pool and instance disagree on T".into()));
        }
        let z = normal_quantile(inst.alpha)?;
        let n = inst.num_customers();
        let mut levels = vec![vec![f64::NAN; periods]; n];
        let mut orders = vec![vec![(0.0, 0.0); periods]; n];
        let mut routes = Vec::new();
        let mut holding_closed_form = 0.0;
        for &r in &sel.cluster_ids {
            let c = pool
                .clusters
                .get(r)
                .ok_or_else(|| Error::InvalidArgument(format!("cluster id {r} outside the pool")))?;
            holding_closed_form += c.holding_cost;
            for d in c.schedule.deliveries() {
                for &i in &c.customers {
                    let cust = &inst.customers[i];
                    levels[i][d.period] = base_stock_level(cust, d.n, z);
                    let g = order_distribution(cust, d.n, d.m, z);
                    orders[i][d.period] = (g.mean, g.std);
                }
            }
            routes.push(Route {
                members: c.customers.clone(),
                trip_cost: inst.trip_cost + inst.distance_cost * c.route.length,
                delivers: (0..periods).map(|t| c.schedule.delivers(t)).collect(),
            });
        }
        let supply = inst.producer.supply();
        let model = MdpModel {
            periods,
            capacity: policy.capacity,
            step: policy.step,
            omega2_min: policy.omega2_min,
            omega2_max: policy.omega2_max(),
            costs: PurchaseCosts::of(inst),
            cost_offset: 0.0,
        };
        Ok(Self {
            periods,
            routes,
            levels,
            orders,
            demand: inst.customers.iter().map(|c| (c.mu, c.sigma)).collect(),
            supply: (supply.mean, supply.std),
            holding_rate: inst.holding_cost,
            holding_closed_form,
            vehicle_capacity: inst.vehicle_capacity,
            emergency_rate: inst.emergency_cost,
            model,
        })
    }
}

/// Independent stream `stream` of replication `rep`.
fn stream(seed: u64, rep: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&rep.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng, (mean, std): (f64, f64)) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

#[derive(Default)]
struct Partial {
    batches: [Moments; SLOTS],
    /// Customer visits and vehicle trips.
    deliveries: u64,
    trips: u64,
    negative_orders: u64,
    emergencies: u64,
    clamps: u64,
    /// `no_backorder[i][t]`: measured periods `t` in which customer `i` ended non-negative.
    no_backorder: Vec<Vec<u64>>,
    trace: Vec<TraceRow>,
}

fn replicate(plan: &Plan, policy: &Policy, mode: Mode, clamp: bool, cfg: &SimConfig, rep: usize, cycles: u64, batch: u64) -> Partial {
    let n = plan.demand.len();
    let t_len = plan.periods;
    let mut supply_rng = stream(cfg.seed, rep as u64, 0);
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream(cfg.seed, rep as u64, i as u64 + 1)).collect();
    let mut part = Partial {
        no_backorder: vec![vec![0; t_len]; n],
        ..Partial::default()
    };
    let trace_cap = if rep == 0 { cfg.trace_periods } else { 0 };
    let full = mode == Mode::Full;
    // End-of-period inventory under this run's clamping and the other one.
    let mut ie = vec![0.0; n];
    let mut shadow_ie = vec![0.0; n];
    let mut is = vec![0.0; n];
    let mut shadow_is = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut shadow_q = vec![0.0; n];
    let mut omega1 = 0i64;
    let mut batch_sum = [0.0; SLOTS];
    let mut in_batch = 0u64;
    let warmup = cfg.warmup_cycles as u64;
    for cycle in 0..warmup + cycles {
        let measured = cycle >= warmup;
        let mut cycle_sum = [0.0; SLOTS];
        for t in 0..t_len {
            let mut replenishment = 0.0;
            let mut shadow_cost = 0.0;
            for route in &plan.routes {
                if !route.delivers[t] {
                    continue;
                }
                let mut load = 0.0;
                let mut shadow_load = 0.0;
                for &i in &route.members {
                    if full {
                        let raw = plan.levels[i][t] - ie[i];
                        let shadow_raw = plan.levels[i][t] - shadow_ie[i];
                        if measured && raw < 0.0 {
                            part.negative_orders += 1;
                        }
                        q[i] = if clamp { raw.max(0.0) } else { raw };
                        shadow_q[i] = if clamp { shadow_raw } else { shadow_raw.max(0.0) };
                        shadow_load += shadow_q[i];
                    } else {
                        q[i] = normal(&mut rngs[i], plan.orders[i][t]);
                    }
                    load += q[i];
                }
                replenishment += load;
                let excess = (load - plan.vehicle_capacity).max(0.0);
                cycle_sum[TRANSPORT] += route.trip_cost;
                cycle_sum[EMERGENCY] += plan.emergency_rate * excess;
                shadow_cost += plan.emergency_rate * (shadow_load - plan.vehicle_capacity).max(0.0);
                if measured {
                    part.deliveries += route.members.len() as u64;
                    part.trips += 1;
                    if excess > 0.0 {
                        part.emergencies += 1;
                    }
                }
            }
            if full {
                let mut holding = 0.0;
                let mut shadow_holding = 0.0;
                for i in 0..n {
                    let delivers = !plan.levels[i][t].is_nan();
                    is[i] = if delivers { ie[i] + q[i] } else { ie[i] };
                    shadow_is[i] = if delivers { shadow_ie[i] + shadow_q[i] } else { shadow_ie[i] };
                    let d = normal(&mut rngs[i], plan.demand[i]);
                    ie[i] = is[i] - d;
                    shadow_ie[i] = shadow_is[i] - d;
                    holding += 0.5 * (is[i].max(0.0) + ie[i].max(0.0));
                    shadow_holding += 0.5 * (shadow_is[i].max(0.0) + shadow_ie[i].max(0.0));
                    if measured && ie[i] >= 0.0 {
                        part.no_backorder[i][t] += 1;
                    }
                }
                cycle_sum[HOLDING] += plan.holding_rate * holding;
                shadow_cost += plan.holding_rate * shadow_holding;
            }
            cycle_sum[SHADOW] -= shadow_cost;

            let outflow = replenishment - normal(&mut supply_rng, plan.supply);
            let omega2 = omega1 - nearest_grid_point(outflow, plan.model.step);
            let ((b, s), off_table) = policy.action(t, omega2);
            let anchor = omega2.clamp(policy.omega2_min, policy.omega2_max());
            let target = anchor + b - s;
            let (q1, q2) = ((target - omega2).max(0), (omega2 - target).max(0));
            let cost = plan
                .model
                .action_cost(omega2, q1, q2)
                .expect("policy targets lie in [0, capacity]");
            cycle_sum[PURCHASING] += cost;
            omega1 = target;
            if measured {
                part.clamps += off_table as u64;
                let k = (cycle - warmup) * t_len as u64 + t as u64;
                if (k as usize) < trace_cap {
                    part.trace.push(TraceRow {
                        cycle: cycle - warmup,
                        t,
                        outflow,
                        omega2,
                        q1,
                        q2,
                        cost,
                    });
                }
            }
        }
        if !measured {
            continue;
        }
        if !full {
            cycle_sum[HOLDING] = plan.holding_closed_form;
        }
        cycle_sum[SHADOW] += cycle_sum[HOLDING] + cycle_sum[EMERGENCY];
        cycle_sum[TOTAL] = cycle_sum[..TOTAL].iter().sum();
        for k in 0..SLOTS {
            batch_sum[k] += cycle_sum[k];
        }
        in_batch += 1;
        if in_batch == batch {
            for k in 0..SLOTS {
                part.batches[k].push(batch_sum[k] / batch as f64);
            }
            batch_sum = [0.0; SLOTS];
            in_batch = 0;
        }
    }
    part
}

fn run(
    inst: &Instance,
    pool: &ClusterPool,
    sel: &Selection,
    policy: &Policy,
    cfg: &SimConfig,
    mode: Mode,
    clamp: bool,
) -> Result<SimReport> {
    if cfg.replications == 0 || cfg.periods == 0 {
        return Err(Error::InvalidArgument("simulation needs periods and replications".into()));
    }
    let plan = Plan::new(inst, pool, sel, policy)?;
    let t_len = plan.periods as u64;
    let reps = cfg.replications as u64;
    let cycles_total = cfg.periods.div_ceil(t_len);
    let per_rep = cycles_total.div_ceil(reps);
    let batch = (per_rep / MIN_BATCHES).clamp(1, MAX_BATCH_CYCLES);
    // Whole batches only.
    let per_rep = per_rep.div_ceil(batch) * batch;
    let parts: Vec<Partial> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| replicate(&plan, policy, mode, clamp, cfg, rep, per_rep, batch))
        .collect();

    let mut batches = [Moments::default(); SLOTS];
    let n = plan.demand.len();
    let mut no_backorder = vec![vec![0u64; plan.periods]; n];
    let (mut deliveries, mut trips, mut negative, mut emergencies, mut clamps) = (0, 0, 0, 0, 0);
    let mut trace = Vec::new();
    for p in parts {
        for k in 0..SLOTS {
            batches[k].merge(&p.batches[k]);
        }
        for (acc, row) in no_backorder.iter_mut().zip(&p.no_backorder) {
            for (a, b) in acc.iter_mut().zip(row) {
                *a += b;
            }
        }
        deliveries += p.deliveries;
        trips += p.trips;
        negative += p.negative_orders;
        emergencies += p.emergencies;
        clamps += p.clamps;
        if trace.is_empty() {
            trace = p.trace;
        }
    }
    let cycles = per_rep * reps;
    let est = |k: usize| batches[k].estimate();
    let share = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let full = mode == Mode::Full;
    let service = full.then(|| {
        no_backorder
            .iter()
            .map(|row| share(row.iter().sum(), cycles * t_len))
            .collect()
    });
    let worst = full.then(|| {
        no_backorder
            .iter()
            .map(|row| row.iter().map(|&c| share(c, cycles)).fold(1.0, f64::min))
            .collect()
    });
    Ok(SimReport {
        mode,
        clamp_orders: full.then_some(clamp),
        seed: cfg.seed,
        replications: cfg.replications,
        periods: cycles * t_len,
        cycles,
        warmup_cycles: cfg.warmup_cycles,
        batch_cycles: batch,
        cycle_costs: CycleCosts {
            transport: est(TRANSPORT),
            holding: est(HOLDING),
            emergency: est(EMERGENCY),
            purchasing: est(PURCHASING),
            total: est(TOTAL),
        },
        negative_order_frequency: full.then(|| share(negative, deliveries)),
        service_level: service,
        worst_period_service_level: worst,
        clamping_effect: full.then(|| est(SHADOW)),
        emergency_frequency: share(emergencies, trips),
        clamp_count: clamps,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustergen::{enumerate, Schedule};
    use crate::mdp::tests::{worked_examplet, worked_example_plan};
    use crate::mdp::{build_outflow, solve};
    use crate::setpart::PenaltyParams;

    fn select(pool: &ClusterPool, picks: &[(&[usize], &[usize])]) -> Selection {
        let ids: Vec<usize> = picks
            .iter()
            .map(|(c, p)| {
                let s = Schedule::from_periods(pool.periods, p).unwrap();
                pool.clusters
                    .iter()
                    .position(|x| x.customers == *c && x.schedule == s)
                    .unwrap()
            })
            .collect();
        Selection::from_ids(pool, &ids, PenaltyParams::default()).unwrap()
    }

    fn policy_for(inst: &Instance, sel: &Selection) -> Policy {
        let out = build_outflow(sel, inst, 5, 1e-6).unwrap();
        let model = MdpModel::for_instance(inst, &out).unwrap();
        solve(&model, &out, 0.1).unwrap()
    }

    #[test]
    fn moments_match_direct_formulas() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let mut all = Moments::default();
        let (mut a, mut b) = (Moments::default(), Moments::default());
        for (k, &x) in xs.iter().enumerate() {
            all.push(x);
            if k < 3 { a.push(x) } else { b.push(x) }
        }
        a.merge(&b);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        for m in [all, a] {
            let e = m.estimate();
            assert!((e.mean - mean).abs() < 1e-12);
            assert!((e.se - (var / n).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_flows_cost_nothing_to_purchase() {
        let mut inst = worked_examplet(1500);
        inst.producer.sigma = 0.0;
        for c in &mut inst.customers {
            c.sigma = 0.0;
        }
        let pool = enumerate(&inst).unwrap();
        let daily: &[usize] = &[0, 1, 2, 3, 4, 5, 6];
        let sel = select(&pool, &[(&[0], daily), (&[1], daily), (&[2], daily)]);
        let policy = policy_for(&inst, &sel);
        let cfg = SimConfig::new(7_000, 1);
        let agg = simulate_aggregate(&inst, &pool, &sel, &policy, &cfg).unwrap();
        assert_eq!(agg.cycle_costs.purchasing.mean, 0.0);
        assert_eq!(agg.cycle_costs.emergency.mean, 0.0);
        let full = simulate_full(&inst, &pool, &sel, &policy, &cfg, false).unwrap();
        assert_eq!(full.cycle_costs.purchasing.mean, 0.0);
        assert_eq!(full.service_level, Some(vec![1.0; 3]));
        assert_eq!(full.negative_order_frequency, Some(0.0));
        // Each customer holds half a day's demand on average.
        let holding = 7.0 * inst.holding_cost * 0.5 * 850.0;
        assert!((full.cycle_costs.holding.mean - holding).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_report() {
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        let sel = worked_example_plan(&inst, false);
        let policy = policy_for(&inst, &sel);
        let mut cfg = SimConfig::new(20_000, 9);
        cfg.trace_periods = 14;
        let a = simulate_full(&inst, &pool, &sel, &policy, &cfg, true).unwrap();
        let b = simulate_full(&inst, &pool, &sel, &policy, &cfg, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 14);
        assert_eq!(trace_csv(&a.trace).lines().count(), 15);
        cfg.seed = 10;
        let c = simulate_full(&inst, &pool, &sel, &policy, &cfg, true).unwrap();
        assert_ne!(a.cycle_costs, c.cycle_costs);
    }

    #[test]
    fn replications_pool_into_one_report() {
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        let sel = worked_example_plan(&inst, false);
        let policy = policy_for(&inst, &sel);
        let mut cfg = SimConfig::new(70_000, 2);
        cfg.replications = 4;
        let r = simulate_aggregate(&inst, &pool, &sel, &policy, &cfg).unwrap();
        // 2500 cycles each, rounded up to whole batches.
        assert_eq!(r.cycles % (4 * r.batch_cycles), 0);
        assert!(r.cycles >= 10_000 && r.cycles < 10_000 + 4 * r.batch_cycles);
        assert!(r.cycle_costs.purchasing.se > 0.0);
    }

    #[test]
    fn aggregate_purchasing_matches_gain() {
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        for alternative in [false, true] {
            let sel = worked_example_plan(&inst, alternative);
            let policy = policy_for(&inst, &sel);
            let r = simulate_aggregate(&inst, &pool, &sel, &policy, &SimConfig::new(1_000_000, 3)).unwrap();
            let p = r.cycle_costs.purchasing;
            assert!(p.covers(policy.cycle_cost, 3.0), "{p:?} vs {}", policy.cycle_cost);
            assert_eq!(r.clamp_count, 0);
            let closed: f64 = sel.cluster_ids.iter().map(|&c| pool.clusters[c].emergency_cost).sum();
            assert!(r.cycle_costs.emergency.covers(closed, 3.0));
        }
    }

    #[test]
    fn full_model_meets_service_target() {
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        let sel = worked_example_plan(&inst, false);
        let policy = policy_for(&inst, &sel);
        let r = simulate_full(&inst, &pool, &sel, &policy, &SimConfig::new(1_000_000, 4), false).unwrap();
        for &s in r.worst_period_service_level.as_ref().unwrap() {
            assert!(s >= inst.alpha - 0.01, "{s}");
        }
        assert!(r.negative_order_frequency.unwrap() < 1e-3);
        let closed: f64 = sel.cluster_ids.iter().map(|&c| pool.clusters[c].holding_cost).sum();
        assert!(r.cycle_costs.holding.covers(closed, 3.0), "{:?} vs {closed}", r.cycle_costs.holding);
    }

    #[test]
    fn uneven_gaps_produce_negative_orders() {
        // Deliveries on consecutive days, then a six-day gap: the order
        // after the gap often finds stock above the one-day level.
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        let sel = select(&pool, &[(&[0], &[0, 1]), (&[1], &[0, 2, 4]), (&[2], &[1, 2, 4, 6])]);
        let policy = policy_for(&inst, &sel);
        let cfg = SimConfig::new(200_000, 5);
        let raw = simulate_full(&inst, &pool, &sel, &policy, &cfg, false).unwrap();
        let cut = simulate_full(&inst, &pool, &sel, &policy, &cfg, true).unwrap();
        assert!(raw.negative_order_frequency.unwrap() > 0.01);
        assert_eq!(raw.negative_order_frequency, cut.negative_order_frequency);
        let (a, b) = (raw.clamping_effect.unwrap(), cut.clamping_effect.unwrap());
        assert!(a.mean < 0.0 && (a.mean + b.mean).abs() < 1e-6 * a.mean.abs().max(1.0));
        let (s_raw, s_cut) = (raw.service_level.unwrap(), cut.service_level.unwrap());
        assert!(s_cut[0] >= s_raw[0]);
        for s in s_raw.iter().chain(&s_cut) {
            assert!((0.0..=1.0).contains(s));
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let inst = worked_examplet(1500);
        let pool = enumerate(&inst).unwrap();
        let sel = worked_example_plan(&inst, false);
        let policy = policy_for(&inst, &sel);
        let r = simulate_full(&inst, &pool, &sel, &policy, &SimConfig::new(7_000, 6), false).unwrap();
        let back: SimReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
