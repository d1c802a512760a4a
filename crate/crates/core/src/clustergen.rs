//! Enumeration and pricing of candidate clusters: customer subsets with a
//! shortest route, a cyclic delivery schedule and per-delivery base stocks.
//!
//! Periods are 0-based in code; exported schedules list 1-based periods.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Customer, Instance};
use crate::routing::{shortest_route_in, Route, MAX_ROUTE_CUSTOMERS};
use crate::stochastics::{expected_positive_part, normal_cdf, normal_quantile, sum_independent, Gaussian};

/// Largest cycle length supported by the bit-mask schedule encoding.
pub const MAX_PERIODS: usize = 24;

/// One delivery of a schedule: its period, the periods until the next
/// delivery (`n`) and since the previous one (`m`), both cyclic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub period: usize,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct Schedule {
    periods: usize,
    mask: u32,
    deliveries: Vec<Delivery>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    #[serde(rename = "T")]
    periods: usize,
    delivery_periods: Vec<usize>,
}

impl From<Schedule> for ScheduleRepr {
    fn from(s: Schedule) -> Self {
        ScheduleRepr {
            periods: s.periods,
            delivery_periods: s.deliveries.iter().map(|d| d.period + 1).collect(),
        }
    }
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        if r.periods == 0 || r.periods > MAX_PERIODS {
            return Err(Error::Parse(format!("schedule length {} out of range", r.periods)));
        }
        let mut mask = 0u32;
        for &p in &r.delivery_periods {
            if p == 0 || p > r.periods {
                return Err(Error::Parse(format!("delivery period {p} outside 1..={}", r.periods)));
            }
            mask |= 1 << (p - 1);
        }
        Schedule::from_mask(r.periods, mask)
    }
}

impl Schedule {
    /// Schedule delivering in every period whose bit is set in `mask`.
    pub fn from_mask(periods: usize, mask: u32) -> Result<Self> {
        if periods == 0 || periods > MAX_PERIODS {
            return Err(Error::InvalidArgument(format!(
                "cycle length must lie in 1..={MAX_PERIODS}, got {periods}"
            )));
        }
        if mask == 0 || (mask >> periods) != 0 {
            return Err(Error::InvalidArgument(format!(
                "schedule mask {mask:#b} is empty or exceeds {periods} periods"
            )));
        }
        let days: Vec<usize> = (0..periods).filter(|t| mask & (1 << t) != 0).collect();
        let k = days.len();
        let deliveries = (0..k)
            .map(|j| {
                let next = days[(j + 1) % k];
                let prev = days[(j + k - 1) % k];
                let n = (next + periods - days[j] - 1) % periods + 1;
                let m = (days[j] + periods - prev - 1) % periods + 1;
                Delivery { period: days[j], n, m }
            })
            .collect();
        Ok(Self {
            periods,
            mask,
            deliveries,
        })
    }

    pub fn from_periods(periods: usize, delivery_periods: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &p in delivery_periods {
            if p >= periods {
                return Err(Error::InvalidArgument(format!("period {p} outside 0..{periods}")));
            }
            mask |= 1 << p;
        }
        Self::from_mask(periods, mask)
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn delivers(&self, t: usize) -> bool {
        self.mask & (1 << t) != 0
    }

    pub fn longest_gap(&self) -> usize {
        self.deliveries.iter().map(|d| d.n).max().unwrap_or(0)
    }
}

/// `n * mu + z * sigma * sqrt(n)`: the order-up-to level covering `n` periods.
pub fn base_stock_level(c: &Customer, n: usize, z_alpha: f64) -> f64 {
    n as f64 * c.mu + z_alpha * c.sigma * (n as f64).sqrt()
}

/// Base stock rounded half up to whole kilograms.
pub fn base_stock(c: &Customer, n: usize, alpha: f64) -> Result<i64> {
    let z = normal_quantile(alpha)?;
    Ok(round_half_up(base_stock_level(c, n, z)))
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Order quantity on a delivery with gaps `(n, m)`, ignoring the probability
/// mass at zero: `N(n mu + z sigma (sqrt n - sqrt m), m sigma^2)`.
pub fn order_distribution(c: &Customer, n: usize, m: usize, z_alpha: f64) -> Gaussian {
    let (nf, mf) = (n as f64, m as f64);
    Gaussian::from_variance(
        nf * c.mu + z_alpha * c.sigma * (nf.sqrt() - mf.sqrt()),
        mf * c.sigma * c.sigma,
    )
}

/// Vehicle load of a delivery with gaps `(n, m)` to `members`.
pub fn delivery_load(inst: &Instance, members: &[usize], n: usize, m: usize, z_alpha: f64) -> Gaussian {
    let orders: Vec<Gaussian> = members
        .iter()
        .map(|&i| order_distribution(&inst.customers[i], n, m, z_alpha))
        .collect();
    sum_independent(&orders)
}

/// Vehicle-capacity chance constraint: `P(load <= Q) >= gamma`.
pub fn check_cc2(load: &Gaussian, capacity: f64, gamma: f64) -> bool {
    if load.std == 0.0 {
        return load.mean <= capacity;
    }
    normal_cdf((capacity - load.mean) / load.std) >= gamma
}

/// Expected cycle holding cost of `members` under `schedule`, averaging the
/// start and end inventory of every period.
pub fn holding_cost(inst: &Instance, members: &[usize], schedule: &Schedule, z_alpha: f64) -> f64 {
    let mut total = 0.0;
    for d in schedule.deliveries() {
        for &i in members {
            let c = &inst.customers[i];
            let s = base_stock_level(c, d.n, z_alpha);
            let on_hand = |l: usize| {
                let lf = l as f64;
                expected_positive_part(&Gaussian::from_variance(s - lf * c.mu, lf * c.sigma * c.sigma))
            };
            let mut prev = on_hand(0);
            for l in 0..d.n {
                let next = on_hand(l + 1);
                total += 0.5 * (prev + next);
                prev = next;
            }
        }
    }
    inst.holding_cost * total
}

/// Expected cycle cost of emergency shipments for load above `Q`.
pub fn emergency_cost(inst: &Instance, members: &[usize], schedule: &Schedule, z_alpha: f64) -> f64 {
    let excess: f64 = schedule
        .deliveries()
        .iter()
        .map(|d| {
            let load = delivery_load(inst, members, d.n, d.m, z_alpha);
            expected_positive_part(&load.shift(-inst.vehicle_capacity))
        })
        .sum();
    inst.emergency_cost * excess
}

/// A priced candidate cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 0-based customer indices, ascending.
    pub customers: Vec<usize>,
    pub route: Route,
    pub schedule: Schedule,
    /// `base_stocks[j][k]`: base stock of `customers[j]` at the `k`-th delivery.
    pub base_stocks: Vec<Vec<i64>>,
    pub transport_cost: f64,
    pub holding_cost: f64,
    pub emergency_cost: f64,
    /// Expected vehicle load per period (zero when not delivering).
    pub delta: Vec<f64>,
    /// Variance of the vehicle load per period (zero when not delivering).
    pub lambda: Vec<f64>,
}

impl Cluster {
    pub fn cost(&self) -> f64 {
        self.transport_cost + self.holding_cost + self.emergency_cost
    }

    /// Load law of the delivery in period `t`, if any.
    pub fn load(&self, t: usize) -> Option<Gaussian> {
        self.schedule
            .delivers(t)
            .then(|| Gaussian::from_variance(self.delta[t], self.lambda[t]))
    }
}

/// Prices `members` on `schedule` with the given route.
pub fn price_cluster(inst: &Instance, members: &[usize], route: Route, schedule: Schedule) -> Result<Cluster> {
    let z = normal_quantile(inst.alpha)?;
    let periods = inst.periods;
    let mut delta = vec![0.0; periods];
    let mut lambda = vec![0.0; periods];
    for d in schedule.deliveries() {
        let load = delivery_load(inst, members, d.n, d.m, z);
        delta[d.period] = load.mean;
        lambda[d.period] = load.variance();
    }
    let base_stocks = members
        .iter()
        .map(|&i| {
            schedule
                .deliveries()
                .iter()
                .map(|d| round_half_up(base_stock_level(&inst.customers[i], d.n, z)))
                .collect()
        })
        .collect();
    let trips = schedule.deliveries().len() as f64;
    Ok(Cluster {
        customers: members.to_vec(),
        transport_cost: trips * (inst.trip_cost + inst.distance_cost * route.length),
        holding_cost: holding_cost(inst, members, &schedule, z),
        emergency_cost: emergency_cost(inst, members, &schedule, z),
        route,
        schedule,
        base_stocks,
        delta,
        lambda,
    })
}

/// All priced clusters of an instance, in canonical order (customer set,
/// then schedule mask).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPool {
    pub periods: usize,
    pub num_customers: usize,
    pub clusters: Vec<Cluster>,
}

impl ClusterPool {
    pub fn new(periods: usize, num_customers: usize, mut clusters: Vec<Cluster>) -> Self {
        clusters.sort_by(|a, b| {
            a.customers
                .cmp(&b.customers)
                .then(a.schedule.mask().cmp(&b.schedule.mask()))
        });
        Self {
            periods,
            num_customers,
            clusters,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.clusters {
            out.push_str(&serde_json::to_string(c).expect("cluster serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`ClusterPool::to_jsonl`]. Blank lines are skipped.
    pub fn from_jsonl(text: &str, num_customers: usize) -> Result<Self> {
        let mut clusters = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let c: Cluster = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            clusters.push(c);
        }
        let periods = clusters.first().map_or(0, |c| c.schedule.periods());
        for c in &clusters {
            if c.schedule.periods() != periods || c.delta.len() != periods || c.lambda.len() != periods {
                return Err(Error::Parse("clusters disagree on the cycle length".into()));
            }
            if c.customers.is_empty() || c.customers.iter().any(|&i| i >= num_customers) {
                return Err(Error::Parse(format!(
                    "cluster customers {:?} outside 0..{num_customers}",
                    c.customers
                )));
            }
            if c.customers.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parse("cluster customers must be strictly ascending".into()));
            }
            if ![c.transport_cost, c.holding_cost, c.emergency_cost].iter().all(|x| x.is_finite())
                || !c.delta.iter().chain(&c.lambda).all(|x| x.is_finite())
            {
                return Err(Error::Parse("cluster costs and profiles must be finite".into()));
            }
        }
        Ok(Self::new(periods, num_customers, clusters))
    }
}

/// Longest cover `n` (in periods, capped at `T`) whose base stock fits the
/// customer's storage; 0 if not even one period fits.
pub fn max_cover(c: &Customer, periods: usize, z_alpha: f64) -> usize {
    (1..=periods)
        .take_while(|&n| (round_half_up(base_stock_level(c, n, z_alpha)) as f64) <= c.capacity)
        .last()
        .unwrap_or(0)
}

/// Largest `n` for which some `m` satisfies the vehicle chance constraint.
/// Feasibility is monotone decreasing in `n` at fixed `m`, so no schedule
/// whose longest gap exceeds this value can be feasible.
pub fn longest_feasible_gap(inst: &Instance, members: &[usize], z_alpha: f64) -> usize {
    let periods = inst.periods;
    (1..=periods)
        .map(|m| {
            (1..=periods)
                .take_while(|&n| {
                    check_cc2(&delivery_load(inst, members, n, m, z_alpha), inst.vehicle_capacity, inst.gamma)
                })
                .last()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Whether every delivery of `schedule` meets the vehicle chance constraint.
pub fn schedule_feasible(inst: &Instance, members: &[usize], schedule: &Schedule, z_alpha: f64) -> bool {
    schedule.deliveries().iter().all(|d| {
        check_cc2(
            &delivery_load(inst, members, d.n, d.m, z_alpha),
            inst.vehicle_capacity,
            inst.gamma,
        )
    })
}

/// Enumerates every feasible cluster. Customer subsets grow recursively
/// while a daily schedule satisfies the vehicle chance constraint; each
/// subset is then paired with every schedule whose longest gap passes the
/// storage and capacity screens and whose deliveries all satisfy the
/// constraint exactly.
pub fn enumerate(inst: &Instance) -> Result<ClusterPool> {
    let violations = inst.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidInstance(violations));
    }
    let periods = inst.periods;
    if periods > MAX_PERIODS {
        return Err(Error::InvalidArgument(format!(
            "cycle length {periods} exceeds the supported {MAX_PERIODS}"
        )));
    }
    let z = normal_quantile(inst.alpha)?;
    let n = inst.num_customers();
    let cover: Vec<usize> = inst.customers.iter().map(|c| max_cover(c, periods, z)).collect();
    let dist = inst.distance_matrix();

    let clusters: Vec<Cluster> = (0..n)
        .into_par_iter()
        .filter(|&root| cover[root] > 0)
        .map(|root| {
            let mut subsets = Vec::new();
            grow(inst, &cover, z, vec![root], &mut subsets);
            let mut out = Vec::new();
            for members in subsets {
                let route = shortest_route_in(&dist, &members)?;
                let gap_cap = longest_feasible_gap(inst, &members, z)
                    .min(members.iter().map(|&i| cover[i]).min().unwrap_or(0));
                for mask in 1u32..(1u32 << periods) {
                    let schedule = Schedule::from_mask(periods, mask)?;
                    if schedule.longest_gap() > gap_cap || !schedule_feasible(inst, &members, &schedule, z) {
                        continue;
                    }
                    out.push(price_cluster(inst, &members, route.clone(), schedule)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<Cluster>>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ClusterPool::new(periods, n, clusters))
}

fn grow(inst: &Instance, cover: &[usize], z: f64, members: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let daily = delivery_load(inst, &members, 1, 1, z);
    if !check_cc2(&daily, inst.vehicle_capacity, inst.gamma) {
        return;
    }
    let last = *members.last().expect("non-empty subset");
    if members.len() < MAX_ROUTE_CUSTOMERS {
        for next in last + 1..inst.num_customers() {
            if cover[next] == 0 {
                continue;
            }
            let mut bigger = members.clone();
            bigger.push(next);
            grow(inst, cover, z, bigger, out);
        }
    }
    out.push(members);
}
