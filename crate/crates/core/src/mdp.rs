//! The producer's cyclic purchasing problem for a fixed delivery plan.
//!
//! Each period `t` the inventory level `w1` first absorbs the net outflow
//! `O_t` (customer replenishment minus supply), giving the position `w2`;
//! the producer then buys `q1` or sells `q2` so that the next level
//! `w2 + q1 - q2` lies in `[0, capacity]`. All quantities live on a grid of
//! `step` kg. The long-run average cost is found by relative value
//! iteration over whole cycles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::setpart::Selection;
use crate::stochastics::{discretize, DiscreteDistribution, Gaussian};

/// Largest number of cycle sweeps before [`solve`] gives up.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Plain sweeps before damping starts. Damped updates also converge when
/// the optimal chain is periodic, at about half the speed.
const UNDAMPED_SWEEPS: usize = 1000;
const DAMPING: f64 = 0.5;

/// Net outflow distribution of every period, on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutflowModel {
    pub step: i64,
    pub periods: Vec<DiscreteDistribution>,
}

impl OutflowModel {
    /// Outflows that are known exactly.
    pub fn deterministic(values: &[i64], step: i64) -> Self {
        Self {
            step,
            periods: values.iter().map(|&v| DiscreteDistribution::point(v, step)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }
}

/// Continuous net outflow of each period: selected replenishment minus
/// supply, all independent normals.
pub fn outflow_gaussians(sel: &Selection, inst: &Instance) -> Vec<Gaussian> {
    let supply = inst.producer.supply();
    sel.delta_profile
        .iter()
        .zip(&sel.lambda_profile)
        .map(|(&d, &l)| Gaussian::from_variance(d - supply.mean, l + supply.variance()))
        .collect()
}

/// Discretized net outflows of a selection.
pub fn build_outflow(sel: &Selection, inst: &Instance, step: i64, tail_mass: f64) -> Result<OutflowModel> {
    let periods = outflow_gaussians(sel, inst)
        .iter()
        .map(|g| discretize(g, step, tail_mass))
        .collect::<Result<Vec<_>>>()?;
    Ok(OutflowModel { step, periods })
}

/// Fixed and per-kg purchasing prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurchaseCosts {
    pub k1: f64,
    pub k2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl PurchaseCosts {
    pub fn of(inst: &Instance) -> Self {
        let p = &inst.producer;
        Self {
            k1: p.k1,
            k2: p.k2,
            b1: p.b1,
            b2: p.b2,
        }
    }
}

/// State space and prices of the purchasing problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpModel {
    pub periods: usize,
    pub capacity: i64,
    pub step: i64,
    /// Bounds of the inventory position grid, covering every level minus
    /// every outflow in the support.
    pub omega2_min: i64,
    pub omega2_max: i64,
    pub costs: PurchaseCosts,
    /// Constant added to every action's cost.
    #[serde(default)]
    pub cost_offset: f64,
}

impl MdpModel {
    pub fn new(capacity: i64, costs: PurchaseCosts, outflow: &OutflowModel) -> Result<Self> {
        let step = outflow.step;
        if outflow.is_empty() {
            return Err(Error::InvalidArgument("the outflow model has no periods".into()));
        }
        if step < 1 || capacity <= 0 || capacity % step != 0 {
            return Err(Error::InvalidArgument(format!(
                "step {step} must be positive and divide the capacity {capacity}"
            )));
        }
        if let Some(d) = outflow.periods.iter().find(|d| d.step != step || d.origin % step != 0) {
            return Err(Error::InvalidArgument(format!(
                "outflow support at origin {} with step {} is off the {step} kg grid",
                d.origin, d.step
            )));
        }
        let PurchaseCosts { k1, k2, b1, b2 } = costs;
        if [k1, k2, b1, b2].iter().any(|c| !(c.is_finite() && *c >= 0.0)) || b2 > b1 {
            return Err(Error::InvalidArgument(
                "prices must be finite and non-negative, with b2 <= b1".into(),
            ));
        }
        let max_out = outflow.periods.iter().map(|d| d.max_support()).max().expect("nonempty");
        let min_out = outflow.periods.iter().map(|d| d.min_support()).min().expect("nonempty");
        Ok(Self {
            periods: outflow.len(),
            capacity,
            step,
            omega2_min: -max_out,
            omega2_max: capacity - min_out,
            costs,
            cost_offset: 0.0,
        })
    }

    pub fn for_instance(inst: &Instance, outflow: &OutflowModel) -> Result<Self> {
        Self::new(inst.producer.capacity, PurchaseCosts::of(inst), outflow)
    }

    /// Cost of buying `q1` and selling `q2` at position `omega2`.
    pub fn action_cost(&self, omega2: i64, q1: i64, q2: i64) -> Result<f64> {
        let next = omega2 + q1 - q2;
        if q1 < 0 || q2 < 0 || (q1 > 0 && q2 > 0) || next < 0 || next > self.capacity {
            return Err(Error::InadmissibleAction { omega2, q1, q2 });
        }
        Ok(self.cost_unchecked(omega2, q1, q2))
    }

    fn cost_unchecked(&self, omega2: i64, q1: i64, q2: i64) -> f64 {
        let c = &self.costs;
        let fixed = if q1 > 0 { c.k1 } else { 0.0 } + if omega2 < 0 { c.k2 } else { 0.0 };
        fixed + c.b1 * q1 as f64 - c.b2 * q2 as f64 + self.cost_offset
    }

    fn levels(&self) -> usize {
        (self.capacity / self.step) as usize + 1
    }

    fn positions(&self) -> usize {
        ((self.omega2_max - self.omega2_min) / self.step) as usize + 1
    }
}

/// Stationary cyclic policy with its long-run cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyRepr", try_from = "PolicyRepr")]
pub struct Policy {
    pub periods: usize,
    pub capacity: i64,
    pub step: i64,
    pub omega2_min: i64,
    /// `actions[t][k]` is `(q1, q2)` at position `omega2_min + k * step`.
    pub actions: Vec<Vec<(i64, i64)>>,
    /// Long-run average cost per period.
    pub gain: f64,
    /// `gain * T`.
    pub cycle_cost: f64,
    pub sweeps: usize,
    /// Relative values of the levels at the start of each period, zero at
    /// the first period's empty level. Not exported.
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ActionRow {
    t: usize,
    omega2: i64,
    q1: i64,
    q2: i64,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    #[serde(rename = "T")]
    periods: usize,
    capacity: i64,
    step: i64,
    gain: f64,
    cycle_cost: f64,
    sweeps: usize,
    actions: Vec<ActionRow>,
}

impl From<Policy> for PolicyRepr {
    fn from(p: Policy) -> Self {
        let mut actions = Vec::new();
        for (t, row) in p.actions.iter().enumerate() {
            for (k, &(q1, q2)) in row.iter().enumerate() {
                actions.push(ActionRow {
                    t: t + 1,
                    omega2: p.omega2_min + k as i64 * p.step,
                    q1,
                    q2,
                });
            }
        }
        Self {
            periods: p.periods,
            capacity: p.capacity,
            step: p.step,
            gain: p.gain,
            cycle_cost: p.cycle_cost,
            sweeps: p.sweeps,
            actions,
        }
    }
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("policy: {msg}"));
        if r.periods == 0 || r.step < 1 || r.actions.is_empty() {
            return Err(bad("empty policy table".into()));
        }
        let omega2_min = r.actions.iter().map(|a| a.omega2).min().expect("nonempty");
        let omega2_max = r.actions.iter().map(|a| a.omega2).max().expect("nonempty");
        let span = omega2_max
            .checked_sub(omega2_min)
            .ok_or_else(|| bad("position range overflows".into()))?;
        if span % r.step != 0 {
            return Err(bad("positions are not on the step grid".into()));
        }
        // A complete table has exactly one row per (period, position); checking
        // the count first bounds the allocation by the input size.
        let width = (span / r.step) as usize + 1;
        if r.periods.checked_mul(width) != Some(r.actions.len()) {
            return Err(bad(format!(
                "{} rows for {} periods of {width} positions",
                r.actions.len(),
                r.periods
            )));
        }
        let mut actions = vec![vec![None; width]; r.periods];
        for a in &r.actions {
            if a.t == 0 || a.t > r.periods || (a.omega2 - omega2_min) % r.step != 0 {
                return Err(bad(format!("row t={} omega2={} is off the table", a.t, a.omega2)));
            }
            let next = i128::from(a.omega2) + i128::from(a.q1) - i128::from(a.q2);
            if a.q1 < 0 || a.q2 < 0 || (a.q1 > 0 && a.q2 > 0) || next < 0 || next > i128::from(r.capacity) {
                return Err(bad(format!("inadmissible action at t={} omega2={}", a.t, a.omega2)));
            }
            let slot = &mut actions[a.t - 1][((a.omega2 - omega2_min) / r.step) as usize];
            if slot.replace((a.q1, a.q2)).is_some() {
                return Err(bad(format!("duplicate row t={} omega2={}", a.t, a.omega2)));
            }
        }
        let actions = actions
            .into_iter()
            .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("missing rows".into()))?;
        Ok(Policy {
            periods: r.periods,
            capacity: r.capacity,
            step: r.step,
            omega2_min,
            actions,
            gain: r.gain,
            cycle_cost: r.cycle_cost,
            sweeps: r.sweeps,
            values: Vec::new(),
        })
    }
}

impl Policy {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Action at period `t` for a grid position; positions off the table
    /// are clamped to its nearest edge, reported by the flag.
    pub fn action(&self, t: usize, omega2: i64) -> ((i64, i64), bool) {
        let row = &self.actions[t];
        let k = (omega2 - self.omega2_min).div_euclid(self.step);
        let clamped = k < 0 || k >= row.len() as i64;
        let k = k.clamp(0, row.len() as i64 - 1) as usize;
        (row[k], clamped)
    }

    pub fn omega2_max(&self) -> i64 {
        self.omega2_min + (self.actions[0].len() as i64 - 1) * self.step
    }
}

/// Dot product with independent partial sums, so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Values closer than this are treated as equal when choosing actions.
fn tie(v: f64) -> f64 {
    1e-9 * v.abs().max(1.0)
}

/// Best action at every position given the values of the next period's
/// levels. Returns `(value, target level index)` per position; the target
/// equals the position itself when nothing is traded.
fn improve_positions(model: &MdpModel, next: &[f64], out: &mut [f64], target: &mut [usize]) {
    let c = &model.costs;
    let step = model.step as f64;
    let n1 = next.len();
    // suffix[j]: min over j' >= j of b1 * level(j') + next(j'), with argmin.
    // prefix[j]: min over j' <= j of b2 * level(j') + next(j'), with argmin.
    let mut suffix = vec![(f64::INFINITY, 0usize); n1 + 1];
    for j in (0..n1).rev() {
        let v = c.b1 * j as f64 * step + next[j];
        suffix[j] = if v <= suffix[j + 1].0 + tie(v) { (v, j) } else { suffix[j + 1] };
    }
    let mut prefix = vec![(f64::INFINITY, 0usize); n1];
    let mut run = (f64::INFINITY, 0usize);
    for j in 0..n1 {
        let v = c.b2 * j as f64 * step + next[j];
        if v <= run.0 + tie(v) {
            run = (v, j);
        }
        prefix[j] = run;
    }
    let lo = model.omega2_min / model.step;
    for (k, (o, tg)) in out.iter_mut().zip(target.iter_mut()).enumerate() {
        let g = lo + k as i64;
        let w2 = g as f64 * step;
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        if g >= 0 && (g as usize) < n1 {
            best = next[g as usize];
            arg = g as usize;
        }
        // Selling moves down to a level below the position.
        if g >= 1 {
            let j = ((g - 1) as usize).min(n1 - 1);
            let (v, a) = prefix[j];
            let v = v - c.b2 * w2;
            if v < best - tie(v) {
                best = v;
                arg = a;
            }
        }
        // Buying moves up to a level above the position.
        let first = (g + 1).max(0) as usize;
        if first < n1 {
            let (v, a) = suffix[first];
            let v = v + c.k1 - c.b1 * w2;
            if v < best - tie(v) {
                best = v;
                arg = a;
            }
        }
        *o = best + if g < 0 { c.k2 } else { 0.0 } + model.cost_offset;
        *tg = arg;
    }
}

/// Expected value over the period's outflow of the position values.
fn expect_levels(model: &MdpModel, dist: &DiscreteDistribution, positions: &[f64], out: &mut [f64]) {
    // Level j minus outflow origin + m*step sits at position index
    // j - m + (-origin - omega2_min) / step.
    let base = (-dist.origin - model.omega2_min) / model.step;
    let m = dist.masses.len() as i64;
    let reversed: Vec<f64> = dist.masses.iter().rev().copied().collect();
    for (j, o) in out.iter_mut().enumerate() {
        let start = j as i64 + base - (m - 1);
        debug_assert!(start >= 0 && (start + m) as usize <= positions.len());
        let s = start as usize;
        *o = dot(&reversed, &positions[s..s + m as usize]);
    }
}

/// One backward pass over the cycle. Returns the range of the change in
/// the first period's values.
fn sweep(model: &MdpModel, outflow: &OutflowModel, values: &mut [Vec<f64>], targets: &mut [Vec<usize>]) -> (f64, f64) {
    let t_len = values.len();
    let mut pos = vec![0.0; model.positions()];
    let old = values[0].clone();
    for t in (0..t_len).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = tail.first().unwrap_or(&old);
        improve_positions(model, next, &mut pos, &mut targets[t]);
        expect_levels(model, &outflow.periods[t], &pos, &mut head[t]);
    }
    values[0]
        .iter()
        .zip(&old)
        .map(|(a, b)| a - b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), d| (l.min(d), h.max(d)))
}

/// Span of the change one more cycle of the Bellman operator makes to the
/// policy's relative values; below the solve tolerance on return from [`solve`].
pub fn bellman_residual(model: &MdpModel, outflow: &OutflowModel, policy: &Policy) -> Result<f64> {
    if policy.values.len() != model.periods {
        return Err(Error::InvalidArgument("policy carries no relative values".into()));
    }
    let mut values = policy.values.clone();
    let mut targets = vec![vec![0usize; model.positions()]; model.periods];
    let (lo, hi) = sweep(model, outflow, &mut values, &mut targets);
    Ok(hi - lo)
}

/// Relative value iteration over whole cycles. Stops when the span of the
/// change in the first period's values over one cycle drops below
/// `epsilon`; the gain is the midpoint of that change's range over `T`.
pub fn solve(model: &MdpModel, outflow: &OutflowModel, epsilon: f64) -> Result<Policy> {
    solve_capped(model, outflow, epsilon, MAX_SWEEPS)
}

/// As [`solve`] with an explicit sweep cap.
pub fn solve_capped(model: &MdpModel, outflow: &OutflowModel, epsilon: f64, max_sweeps: usize) -> Result<Policy> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if outflow.len() != model.periods || outflow.step != model.step {
        return Err(Error::InvalidArgument("outflow model does not match the MDP model".into()));
    }
    if outflow
        .periods
        .iter()
        .any(|d| -d.max_support() < model.omega2_min || model.capacity - d.min_support() > model.omega2_max)
    {
        return Err(Error::InvalidArgument("outflow support exceeds the position grid".into()));
    }
    let t_len = model.periods;
    let mut values = vec![vec![0.0; model.levels()]; t_len];
    let mut targets = vec![vec![0usize; model.positions()]; t_len];
    let mut sweeps = 0;
    let cycle = loop {
        if sweeps == max_sweeps {
            return Err(Error::NoConvergence(sweeps));
        }
        sweeps += 1;
        let start = if sweeps > UNDAMPED_SWEEPS { values[0].clone() } else { Vec::new() };
        let (lo, hi) = sweep(model, outflow, &mut values, &mut targets);
        if sweeps > UNDAMPED_SWEEPS {
            for (v, s) in values[0].iter_mut().zip(&start) {
                *v = DAMPING * *v + (1.0 - DAMPING) * s;
            }
        }
        let reference = values[0][0];
        for row in &mut values {
            for v in row.iter_mut() {
                *v -= reference;
            }
        }
        if hi - lo < epsilon {
            break 0.5 * (lo + hi);
        }
    };
    let lo = model.omega2_min / model.step;
    let actions = targets
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, &j)| {
                    let delta = (j as i64 - (lo + k as i64)) * model.step;
                    if delta > 0 {
                        (delta, 0)
                    } else {
                        (0, -delta)
                    }
                })
                .collect()
        })
        .collect();
    Ok(Policy {
        periods: t_len,
        capacity: model.capacity,
        step: model.step,
        omega2_min: model.omega2_min,
        actions,
        gain: cycle / t_len as f64,
        cycle_cost: cycle,
        sweeps,
        values,
    })
}

/// Summary of one period's buying rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SsRule {
    /// Buys exactly at positions below `s`, always up to `big_s`.
    OrderUpTo { s: i64, big_s: i64 },
    /// Never buys: `s` is minus infinity and `S` undefined.
    NoOrders,
    /// Buying positions are not a lower interval or targets differ.
    NotSs,
}

/// Per-period `(s, S)` rules of a policy.
pub fn extract_ss(policy: &Policy) -> Vec<SsRule> {
    policy
        .actions
        .iter()
        .map(|row| {
            let buys: Vec<usize> = (0..row.len()).filter(|&k| row[k].0 > 0).collect();
            if buys.is_empty() {
                return SsRule::NoOrders;
            }
            let prefix = buys.iter().enumerate().all(|(i, &k)| i == k);
            let level = |k: usize| policy.omega2_min + k as i64 * policy.step + row[k].0;
            let big_s = level(buys[0]);
            if !prefix || buys.iter().any(|&k| level(k) != big_s) {
                return SsRule::NotSs;
            }
            SsRule::OrderUpTo {
                s: policy.omega2_min + buys.len() as i64 * policy.step,
                big_s,
            }
        })
        .collect()
}

/// `(s, S)` rules as CSV with columns `t,kind,s,S` (t from 1).
pub fn ss_csv(rules: &[SsRule]) -> String {
    let mut out = String::from("t,kind,s,S\n");
    for (t, r) in rules.iter().enumerate() {
        let line = match r {
            SsRule::OrderUpTo { s, big_s } => format!("{},order_up_to,{s},{big_s}\n", t + 1),
            SsRule::NoOrders => format!("{},no_orders,-inf,\n", t + 1),
            SsRule::NotSs => format!("{},not_ss,,\n", t + 1),
        };
        out.push_str(&line);
    }
    out
}

/// Parses [`ss_csv`] output.
pub fn parse_ss_csv(text: &str) -> Result<Vec<SsRule>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("t,kind,s,S") {
        return Err(Error::Parse("missing (s,S) header".into()));
    }
    let mut rules = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 || f[0].parse::<usize>().ok() != Some(n + 1) {
            return Err(Error::Parse(format!("bad (s,S) row {line:?}")));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| Error::Parse(format!("bad number {s:?}")));
        rules.push(match f[1] {
            "order_up_to" => SsRule::OrderUpTo {
                s: int(f[2])?,
                big_s: int(f[3])?,
            },
            "no_orders" => SsRule::NoOrders,
            "not_ss" => SsRule::NotSs,
            other => return Err(Error::Parse(format!("unknown (s,S) kind {other:?}"))),
        });
    }
    Ok(rules)
}
