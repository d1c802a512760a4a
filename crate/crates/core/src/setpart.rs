//! Exact set partitioning over a cluster pool, with optional penalties on
//! the per-period deviation of the selected load profile from its cycle
//! average.
//!
//! At a complete selection the penalty for the mean profile is
//! `eta1 / T * sum_t |avg - delta_t|`, and likewise for the variance profile
//! with `eta2`. The deviation variables of the linear model are never built:
//! at an optimum they equal these absolute deviations.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::clustergen::ClusterPool;
use crate::error::{Error, Result};

/// Relative tolerance under which two objective values count as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Penalty weights on the mean and variance load profiles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub eta1: f64,
    pub eta2: f64,
}

impl PenaltyParams {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        if !(eta1 >= 0.0 && eta1.is_finite() && eta2 >= 0.0 && eta2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty weights must be finite and non-negative, got ({eta1}, {eta2})"
            )));
        }
        Ok(Self { eta1, eta2 })
    }

    pub fn is_zero(&self) -> bool {
        self.eta1 == 0.0 && self.eta2 == 0.0
    }
}

/// A partition of the customers into pool clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Pool indices, ascending.
    #[serde(rename = "clusters")]
    pub cluster_ids: Vec<usize>,
    pub tactical_cost: f64,
    /// Penalty at the weights the selection was solved for.
    pub penalty_value: f64,
    pub delta_profile: Vec<f64>,
    pub lambda_profile: Vec<f64>,
}

impl Selection {
    /// Builds a selection from pool indices. Fails unless the clusters are
    /// pairwise disjoint and cover every customer.
    pub fn from_ids(pool: &ClusterPool, ids: &[usize], p: PenaltyParams) -> Result<Self> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        let mut owner = vec![None; pool.num_customers];
        for &r in &ids {
            let c = pool
                .clusters
                .get(r)
                .ok_or_else(|| Error::InvalidArgument(format!("cluster id {r} outside the pool")))?;
            for &i in &c.customers {
                if let Some(prev) = owner[i].replace(r) {
                    return Err(Error::InvalidArgument(format!(
                        "customer {i} is served by clusters {prev} and {r}"
                    )));
                }
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::Uncovered(i));
        }
        let t = pool.periods;
        let mut delta = vec![0.0; t];
        let mut lambda = vec![0.0; t];
        let mut tactical = 0.0;
        for &r in &ids {
            let c = &pool.clusters[r];
            tactical += c.cost();
            for s in 0..t {
                delta[s] += c.delta[s];
                lambda[s] += c.lambda[s];
            }
        }
        Ok(Self {
            penalty_value: penalty(&delta, &lambda, p),
            cluster_ids: ids,
            tactical_cost: tactical,
            delta_profile: delta,
            lambda_profile: lambda,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn mean_abs_deviation_sum(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let avg = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (avg - x).abs()).sum()
}

/// Penalty term of a load profile pair.
pub fn penalty(delta: &[f64], lambda: &[f64], p: PenaltyParams) -> f64 {
    let t = delta.len().max(1) as f64;
    let mut v = 0.0;
    if p.eta1 != 0.0 {
        v += p.eta1 / t * mean_abs_deviation_sum(delta);
    }
    if p.eta2 != 0.0 {
        v += p.eta2 / t * mean_abs_deviation_sum(lambda);
    }
    v
}

/// Tactical cost plus the penalty at `p`.
pub fn objective(sel: &Selection, p: PenaltyParams) -> f64 {
    sel.tactical_cost + penalty(&sel.delta_profile, &sel.lambda_profile, p)
}

fn check_coverage(pool: &ClusterPool) -> Result<()> {
    let mut covered = vec![false; pool.num_customers];
    for c in &pool.clusters {
        for &i in &c.customers {
            covered[i] = true;
        }
    }
    match covered.iter().position(|&b| !b) {
        Some(i) => Err(Error::Uncovered(i)),
        None => Ok(()),
    }
}

fn empty_selection(pool: &ClusterPool) -> Selection {
    Selection {
        cluster_ids: Vec::new(),
        tactical_cost: 0.0,
        penalty_value: 0.0,
        delta_profile: vec![0.0; pool.periods],
        lambda_profile: vec![0.0; pool.periods],
    }
}

/// Largest customer count for which exact subset tables are built. Above
/// it the tactical completion bound falls back to cost splitting.
pub const DP_MAX_CUSTOMERS: usize = 20;

/// Relative slack subtracted from every lower bound to absorb rounding.
const BOUND_SLACK: f64 = 1e-7;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn customer_mask(customers: &[usize]) -> u64 {
    customers.iter().fold(0u64, |m, &i| m | 1 << i)
}

/// Per-customer amounts `w` with every cluster total equal to the sum of
/// its members' `w`, if such amounts exist (they do for enumerated pools,
/// by flow conservation). Otherwise per-customer upper bounds on a fair
/// share of any cluster total. The flag reports which case holds.
fn customer_shares(pool: &ClusterPool, totals: &[f64]) -> (Vec<f64>, bool) {
    let n = pool.num_customers;
    let mut single: Vec<Option<f64>> = vec![None; n];
    for (r, c) in pool.clusters.iter().enumerate() {
        if c.customers.len() == 1 {
            let i = c.customers[0];
            single[i] = match single[i] {
                None => Some(totals[r]),
                Some(w) if close(w, totals[r]) => Some(w),
                Some(_) => Some(f64::NAN),
            };
        }
    }
    if single.iter().all(|w| matches!(w, Some(x) if x.is_finite())) {
        let w: Vec<f64> = single.into_iter().map(|x| x.unwrap_or(0.0)).collect();
        let additive = pool
            .clusters
            .iter()
            .zip(totals)
            .all(|(c, &tot)| close(c.customers.iter().map(|&i| w[i]).sum::<f64>(), tot));
        if additive {
            return (w, true);
        }
    }
    let mut share = vec![0.0f64; n];
    for (c, &tot) in pool.clusters.iter().zip(totals) {
        let s = tot / c.customers.len() as f64;
        for &i in &c.customers {
            share[i] = share[i].max(s);
        }
    }
    (share, false)
}

fn sum_over(mask: u64, per_customer: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut m = mask;
    while m != 0 {
        s += per_customer[m.trailing_zeros() as usize];
        m &= m - 1;
    }
    s
}

/// Smallest possible `sum_t |x_t - avg(x)|` over `x >= partial` whose total
/// exceeds `sum(partial)` by at most `extra`.
fn deviation_lower_bound(partial: &[f64], extra: f64) -> f64 {
    let t = partial.len() as f64;
    let target = (partial.iter().sum::<f64>() + extra) / t;
    2.0 * partial.iter().map(|&x| (x - target).max(0.0)).sum::<f64>()
}

/// `x` delayed by one period, cyclically.
fn shifted(x: &[f64]) -> Vec<f64> {
    let t = x.len();
    (0..t).map(|s| x[(s + t - 1) % t]).collect()
}

fn rotate_mask(mask: u32, periods: usize) -> u32 {
    let full = if periods == 32 { u32::MAX } else { (1u32 << periods) - 1 };
    ((mask << 1) | (mask >> (periods - 1))) & full
}

/// Smallest mask among the cyclic shifts of `mask`.
fn canonical_mask(mask: u32, periods: usize) -> u32 {
    let mut m = mask;
    let mut best = mask;
    for _ in 1..periods {
        m = rotate_mask(m, periods);
        best = best.min(m);
    }
    best
}

fn shift_map(pool: &ClusterPool, cost: &[f64]) -> Option<Vec<usize>> {
    let t = pool.periods;
    if t == 0 {
        return None;
    }
    let index: HashMap<(&[usize], u32), usize> = pool
        .clusters
        .iter()
        .enumerate()
        .map(|(r, c)| ((c.customers.as_slice(), c.schedule.mask()), r))
        .collect();
    let mut map = Vec::with_capacity(pool.len());
    for (r, c) in pool.clusters.iter().enumerate() {
        let &q = index.get(&(c.customers.as_slice(), rotate_mask(c.schedule.mask(), t)))?;
        let o = &pool.clusters[q];
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(&x, &y)| close(x, y));
        if !close(cost[r], cost[q]) || !same(&shifted(&c.delta), &o.delta) || !same(&shifted(&c.lambda), &o.lambda) {
            return None;
        }
        map.push(q);
    }
    Some(map)
}

/// For every customer subset, the least total weight of clusters
/// partitioning it (infinite if none), and the cluster covering the
/// subset's lowest customer in one such partition.
struct SubsetTable {
    value: Vec<f64>,
    choice: Vec<u32>,
}

impl SubsetTable {
    fn build(n: usize, masks: &[u64], weights: &[f64]) -> Self {
        // Only the cheapest cluster per customer set matters.
        let mut cheapest: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
        for (r, &m) in masks.iter().enumerate() {
            cheapest
                .entry(m)
                .and_modify(|b| {
                    if weights[r] < weights[*b] {
                        *b = r;
                    }
                })
                .or_insert(r);
        }
        let mut by_low: Vec<Vec<(u64, f64, u32)>> = vec![Vec::new(); n];
        for (&m, &r) in &cheapest {
            by_low[m.trailing_zeros() as usize].push((m, weights[r], r as u32));
        }
        for list in &mut by_low {
            list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        }
        let size = 1usize << n;
        let mut value = vec![f64::INFINITY; size];
        let mut choice = vec![u32::MAX; size];
        value[0] = 0.0;
        for m in 1..size as u64 {
            let low = m.trailing_zeros() as usize;
            let mut best = f64::INFINITY;
            let mut arg = u32::MAX;
            for &(s, w, r) in &by_low[low] {
                if w >= best {
                    break;
                }
                if s & !m == 0 {
                    let v = w + value[(m ^ s) as usize];
                    if v < best {
                        best = v;
                        arg = r;
                    }
                }
            }
            value[m as usize] = best;
            choice[m as usize] = arg;
        }
        Self { value, choice }
    }

    fn partition(&self, masks: &[u64], mut m: u64) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        while m != 0 {
            let r = self.choice[m as usize];
            if r == u32::MAX {
                return None;
            }
            out.push(r as usize);
            m ^= masks[r as usize];
        }
        Some(out)
    }
}

struct Search<'a> {
    pool: &'a ClusterPool,
    p: PenaltyParams,
    periods: usize,
    full: u64,
    cost: Vec<f64>,
    masks: Vec<u64>,
    /// Clusters whose smallest customer is `i`.
    by_min: Vec<Vec<usize>>,
    /// Clusters containing customer `i`.
    containing: Vec<Vec<usize>>,
    /// Customers by decreasing cycle load; the branching order under penalties.
    heavy_first: Vec<usize>,
    /// Clusters sharing cluster `r`'s customer set, as an index into `groups`.
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
    split: Vec<f64>,
    delta_share: Vec<f64>,
    lambda_share: Vec<f64>,
    /// Exact tactical completion costs, when the customer count allows.
    tactical: Option<SubsetTable>,
    /// Whether both load totals split exactly over customers.
    additive: bool,
    /// Clusters still eligible after dominance pruning.
    active: Vec<bool>,
    /// The cluster shifted one period later, when the pool is closed under
    /// cyclic shifts with equal costs and shifted loads.
    shift: Option<Vec<usize>>,
    /// Whether a cluster's schedule is the smallest of its cyclic shifts.
    canonical: Vec<bool>,
    delta: Vec<f64>,
    lambda: Vec<f64>,
    path: Vec<usize>,
    best: f64,
    best_path: Option<Vec<usize>>,
    nodes: u64,
}

impl<'a> Search<'a> {
    fn new(pool: &'a ClusterPool, p: PenaltyParams) -> Self {
        let n = pool.num_customers;
        let cost: Vec<f64> = pool.clusters.iter().map(|c| c.cost()).collect();
        let masks: Vec<u64> = pool.clusters.iter().map(|c| customer_mask(&c.customers)).collect();
        let mut by_min = vec![Vec::new(); n];
        let mut containing = vec![Vec::new(); n];
        let mut split = vec![f64::INFINITY; n];
        let mut group_index: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of = Vec::with_capacity(pool.len());
        for (r, c) in pool.clusters.iter().enumerate() {
            by_min[c.customers[0]].push(r);
            let s = cost[r] / c.customers.len() as f64;
            for &i in &c.customers {
                split[i] = split[i].min(s);
                containing[i].push(r);
            }
            let g = *group_index.entry(masks[r]).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(r);
            group_of.push(g);
        }
        let dtot: Vec<f64> = pool.clusters.iter().map(|c| c.delta.iter().sum()).collect();
        let ltot: Vec<f64> = pool.clusters.iter().map(|c| c.lambda.iter().sum()).collect();
        let (delta_share, delta_additive) = customer_shares(pool, &dtot);
        let (lambda_share, lambda_additive) = customer_shares(pool, &ltot);
        let mut heavy_first: Vec<usize> = (0..n).collect();
        heavy_first.sort_by(|&a, &b| delta_share[b].total_cmp(&delta_share[a]).then(a.cmp(&b)));
        let tactical = (n <= DP_MAX_CUSTOMERS).then(|| SubsetTable::build(n, &masks, &cost));
        Self {
            periods: pool.periods,
            full: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
            delta_share,
            lambda_share,
            additive: delta_additive && lambda_additive && pool.periods <= 64,
            active: vec![true; pool.len()],
            shift: shift_map(pool, &cost),
            canonical: pool
                .clusters
                .iter()
                .map(|c| c.schedule.mask() == canonical_mask(c.schedule.mask(), pool.periods))
                .collect(),
            pool,
            p,
            cost,
            masks,
            by_min,
            containing,
            heavy_first,
            group_of,
            groups,
            split,
            tactical,
            delta: vec![0.0; pool.periods],
            lambda: vec![0.0; pool.periods],
            path: Vec::new(),
            best: f64::INFINITY,
            best_path: None,
            nodes: 0,
        }
    }

    fn tolerance(&self) -> f64 {
        TIE_TOLERANCE * self.best.abs().max(1.0)
    }

    fn objective_of(&self, ids: &[usize]) -> f64 {
        let t = self.periods;
        let mut d = vec![0.0; t];
        let mut l = vec![0.0; t];
        let mut c = 0.0;
        for &r in ids {
            c += self.cost[r];
            let cl = &self.pool.clusters[r];
            for s in 0..t {
                d[s] += cl.delta[s];
                l[s] += cl.lambda[s];
            }
        }
        c + penalty(&d, &l, self.p)
    }

    /// Offers a complete partition, given as ids in any order.
    fn offer_ids(&mut self, ids: &[usize]) {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let v = self.objective_of(&sorted);
        let tol = self.tolerance();
        let better = v < self.best - tol
            || (v <= self.best + tol && self.best_path.as_ref().is_none_or(|b| sorted < *b));
        if better {
            self.best = v;
            self.best_path = Some(sorted);
        }
    }

    fn apply(&mut self, r: usize, sign: f64) {
        let c = &self.pool.clusters[r];
        for t in 0..self.periods {
            self.delta[t] += sign * c.delta[t];
            self.lambda[t] += sign * c.lambda[t];
        }
    }

    fn tactical_completion(&self, uncovered: u64) -> f64 {
        match &self.tactical {
            Some(tab) => tab.value[uncovered as usize],
            None => sum_over(uncovered, &self.split),
        }
    }

    fn penalty_bound(&self, uncovered: u64) -> f64 {
        let t = self.periods as f64;
        let mut lb = 0.0;
        if self.p.eta1 > 0.0 {
            let extra = sum_over(uncovered, &self.delta_share);
            lb += self.p.eta1 / t * deviation_lower_bound(&self.delta, extra);
        }
        if self.p.eta2 > 0.0 {
            let extra = sum_over(uncovered, &self.lambda_share);
            lb += self.p.eta2 / t * deviation_lower_bound(&self.lambda, extra);
        }
        lb
    }

    fn lower_bound(&mut self, uncovered: u64, partial: f64) -> f64 {
        let lb = partial + self.tactical_completion(uncovered) + self.penalty_bound(uncovered);
        lb - BOUND_SLACK * lb.abs().max(1.0)
    }

    /// Whether the current path is lexicographically after the incumbent's
    /// prefix of the same length. Paths list cluster ids in ascending order,
    /// so this is the order of the final id sets.
    fn path_after_incumbent(&self) -> bool {
        match &self.best_path {
            None => false,
            Some(b) => {
                let k = self.path.len().min(b.len());
                self.path[..k].cmp(&b[..k]) == Ordering::Greater
            }
        }
    }

    /// Bounds of the children of a node that branches on customer `i`,
    /// keeping those that may still beat the incumbent.
    fn children(&mut self, uncovered: u64, partial: f64, i: usize, lex: bool) -> Vec<(f64, usize)> {
        let limit = self.best + self.tolerance();
        let list = if lex { &self.by_min[i] } else { &self.containing[i] };
        // Shifting a whole selection cyclically preserves its objective, so
        // the first cluster may be fixed to the smallest shift of its schedule.
        let first = !lex && self.shift.is_some() && self.path.is_empty();
        let candidates: Vec<usize> = list
            .iter()
            .copied()
            .filter(|&r| self.masks[r] & !uncovered == 0 && (!first || self.canonical[r]))
            .collect();
        let mut out = Vec::with_capacity(candidates.len());
        if lex {
            for r in candidates {
                let key = self.cost[r] + self.tactical_completion(uncovered & !self.masks[r]);
                if key.is_finite() {
                    out.push((key, r));
                }
            }
        } else if self.additive {
            // The final cycle averages are fixed, so each child's water-fill
            // bound is one pass over the periods.
            let t = self.periods as f64;
            let ad = (self.delta.iter().sum::<f64>() + sum_over(uncovered, &self.delta_share)) / t;
            let al = (self.lambda.iter().sum::<f64>() + sum_over(uncovered, &self.lambda_share)) / t;
            let (k1, k2) = (2.0 * self.p.eta1 / t, 2.0 * self.p.eta2 / t);
            for r in candidates {
                let base = partial + self.cost[r] + self.tactical_completion(uncovered & !self.masks[r]);
                if base - BOUND_SLACK * base.abs().max(1.0) > limit {
                    continue;
                }
                let c = &self.pool.clusters[r];
                let (mut wd, mut wl) = (0.0, 0.0);
                for s in 0..self.periods {
                    wd += (self.delta[s] + c.delta[s] - ad).max(0.0);
                    wl += (self.lambda[s] + c.lambda[s] - al).max(0.0);
                }
                let lb = base + k1 * wd + k2 * wl;
                let lb = lb - BOUND_SLACK * lb.abs().max(1.0);
                if lb <= limit {
                    out.push((lb, r));
                }
            }
        } else {
            for r in candidates {
                self.apply(r, 1.0);
                let lb = self.lower_bound(uncovered & !self.masks[r], partial + self.cost[r]);
                self.apply(r, -1.0);
                if lb <= limit {
                    out.push((lb, r));
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Explores the node with `uncovered` customers left; `lb` is its bound.
    fn dfs(&mut self, uncovered: u64, partial: f64, lb: f64) {
        self.nodes += 1;
        if uncovered == 0 {
            self.offer_leaf();
            return;
        }
        // Without penalties, branching on the lowest customer keeps the
        // path sorted, which lets ties be cut by id order. With penalties
        // the heaviest customer goes first so load imbalance shows early.
        let lex = self.p.is_zero();
        let tol = self.tolerance();
        if lb > self.best + tol || (lex && lb >= self.best - tol && self.path_after_incumbent()) {
            return;
        }
        let i = if lex {
            uncovered.trailing_zeros() as usize
        } else {
            *self
                .heavy_first
                .iter()
                .find(|&&i| uncovered & 1 << i != 0)
                .expect("an uncovered customer")
        };
        for (key, r) in self.children(uncovered, partial, i, lex) {
            if !lex && key > self.best + self.tolerance() {
                break;
            }
            let child_lb = if lex { self.lower_bound_after(r, uncovered, partial) } else { key };
            self.path.push(r);
            self.apply(r, 1.0);
            self.dfs(uncovered & !self.masks[r], partial + self.cost[r], child_lb);
            self.apply(r, -1.0);
            self.path.pop();
        }
    }

    fn lower_bound_after(&mut self, r: usize, uncovered: u64, partial: f64) -> f64 {
        self.apply(r, 1.0);
        let lb = self.lower_bound(uncovered & !self.masks[r], partial + self.cost[r]);
        self.apply(r, -1.0);
        lb
    }

    /// Drops every cluster that some cluster over the same customers beats
    /// in every selection: its cost exceeds the other's by more than the
    /// largest penalty change the swap could cause.
    fn prune_dominated(&mut self) {
        if self.p.is_zero() {
            return;
        }
        let t = self.periods as f64;
        let lipschitz = if self.additive { 1.0 } else { 2.0 };
        let margin = 4.0 * self.tolerance();
        for g in 0..self.groups.len() {
            let members = &self.groups[g];
            for &b in members {
                let cb = &self.pool.clusters[b];
                let dominated = members.iter().any(|&a| {
                    if a == b {
                        return false;
                    }
                    let ca = &self.pool.clusters[a];
                    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v).abs()).sum::<f64>();
                    let change = lipschitz
                        * (self.p.eta1 / t * dist(&ca.delta, &cb.delta) + self.p.eta2 / t * dist(&ca.lambda, &cb.lambda));
                    self.cost[b] > self.cost[a] + change + margin
                });
                if dominated {
                    self.active[b] = false;
                }
            }
        }
        let active = &self.active;
        for list in &mut self.containing {
            list.retain(|&r| active[r]);
        }
    }

    /// Offers a leaf together with all its cyclic shifts when the search
    /// only visits one shift of each selection.
    fn offer_leaf(&mut self) {
        let mut ids = self.path.clone();
        self.offer_ids(&ids);
        if self.p.is_zero() {
            return;
        }
        if let Some(shift) = self.shift.take() {
            for _ in 1..self.periods {
                for r in ids.iter_mut() {
                    *r = shift[*r];
                }
                self.offer_ids(&ids);
            }
            self.shift = Some(shift);
        }
    }

    /// Swaps single clusters for others over the same customers while the
    /// objective improves, then offers the result.
    fn improve(&mut self, ids: &[usize]) {
        let mut cur = ids.to_vec();
        let mut value = self.objective_of(&cur);
        loop {
            let mut moved = false;
            for k in 0..cur.len() {
                let g = self.group_of[cur[k]];
                for j in 0..self.groups[g].len() {
                    let alt = self.groups[g][j];
                    if alt == cur[k] {
                        continue;
                    }
                    let old = std::mem::replace(&mut cur[k], alt);
                    let v = self.objective_of(&cur);
                    if v < value - TIE_TOLERANCE * value.abs().max(1.0) {
                        value = v;
                        moved = true;
                    } else {
                        cur[k] = old;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        self.offer_ids(&cur);
    }

    /// Greedy cover: for the lowest uncovered customer take the cheapest
    /// cluster per member that still fits.
    fn greedy(&mut self) {
        let mut uncovered = self.full;
        let mut ids = Vec::new();
        while uncovered != 0 {
            let i = uncovered.trailing_zeros() as usize;
            let pick = self.by_min[i]
                .iter()
                .copied()
                .filter(|&r| self.masks[r] & !uncovered == 0)
                .min_by(|&a, &b| {
                    let ka = self.cost[a] / self.pool.clusters[a].customers.len() as f64;
                    let kb = self.cost[b] / self.pool.clusters[b].customers.len() as f64;
                    ka.total_cmp(&kb).then(a.cmp(&b))
                });
            let Some(r) = pick else {
                return;
            };
            ids.push(r);
            uncovered &= !self.masks[r];
        }
        self.improve(&ids);
    }
}

/// Statistics of one branch-and-bound run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    pub nodes: u64,
}

/// Globally optimal selection for the penalized objective. Among optima
/// equal within [`TIE_TOLERANCE`] the lexicographically smallest id set wins.
pub fn solve(pool: &ClusterPool, p: PenaltyParams) -> Result<Selection> {
    solve_with_stats(pool, p).map(|(s, _)| s)
}

/// As [`solve`], also returning search statistics.
pub fn solve_with_stats(pool: &ClusterPool, p: PenaltyParams) -> Result<(Selection, SolveStats)> {
    let p = PenaltyParams::new(p.eta1, p.eta2)?;
    if pool.num_customers > 64 {
        return Err(Error::InvalidArgument(format!(
            "at most 64 customers are supported, got {}",
            pool.num_customers
        )));
    }
    check_coverage(pool)?;
    if pool.num_customers == 0 {
        return Ok((empty_selection(pool), SolveStats::default()));
    }
    let mut s = Search::new(pool, p);
    if let Some(tab) = &s.tactical {
        if let Some(ids) = tab.partition(&s.masks, s.full) {
            s.improve(&ids);
        }
    }
    s.greedy();
    s.prune_dominated();
    let root = s.lower_bound(s.full, 0.0);
    s.dfs(s.full, 0.0, root);
    let stats = SolveStats { nodes: s.nodes };
    let ids = s
        .best_path
        .ok_or_else(|| Error::InvalidArgument("the pool admits no partition of the customers".into()))?;
    Ok((Selection::from_ids(pool, &ids, p)?, stats))
}

/// Largest customer count accepted by [`brute_force`].
pub const BRUTE_FORCE_MAX_CUSTOMERS: usize = 16;

struct Exhaustive<'a> {
    pool: &'a ClusterPool,
    p: PenaltyParams,
    masks: Vec<u64>,
    /// Clusters containing each customer, cheapest first.
    holding: Vec<Vec<usize>>,
    /// Per customer, the largest share of any cluster's load totals.
    max_share: Vec<(f64, f64)>,
    cheapest: HashMap<u64, f64>,
    chosen: Vec<usize>,
    cost: f64,
    d: Vec<f64>,
    l: Vec<f64>,
    best: Option<(f64, Vec<usize>)>,
}

impl Exhaustive<'_> {
    /// Least tactical cost of partitioning `m`, by plain memoized recursion.
    fn cheapest_cover(&mut self, m: u64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        if let Some(&v) = self.cheapest.get(&m) {
            return v;
        }
        let low = m.trailing_zeros() as usize;
        let mut v = f64::INFINITY;
        for j in 0..self.holding[low].len() {
            let r = self.holding[low][j];
            if self.masks[r] & !m == 0 {
                v = v.min(self.pool.clusters[r].cost() + self.cheapest_cover(m & !self.masks[r]));
            }
        }
        self.cheapest.insert(m, v);
        v
    }

    fn push(&mut self, r: usize, sign: f64) {
        let c = &self.pool.clusters[r];
        self.cost += sign * c.cost();
        for s in 0..self.d.len() {
            self.d[s] += sign * c.delta[s];
            self.l[s] += sign * c.lambda[s];
        }
    }

    /// Penalty lower bound for any completion of the chosen clusters: loads
    /// only grow, and the final average is at most the current total plus
    /// the largest load the uncovered customers could bring, over `T`.
    fn penalty_floor(&self, uncovered: u64) -> f64 {
        let t = self.d.len() as f64;
        let (mut ed, mut el) = (0.0, 0.0);
        for (i, &(a, b)) in self.max_share.iter().enumerate() {
            if uncovered & 1 << i != 0 {
                ed += a;
                el += b;
            }
        }
        let over = |x: &[f64], extra: f64| {
            let cap = (x.iter().sum::<f64>() + extra) / t;
            2.0 * x.iter().map(|&v| (v - cap).max(0.0)).sum::<f64>()
        };
        self.p.eta1 / t * over(&self.d, ed) + self.p.eta2 / t * over(&self.l, el)
    }

    fn floor(&mut self, uncovered: u64) -> f64 {
        let f = self.cost + self.cheapest_cover(uncovered) + self.penalty_floor(uncovered);
        f - BOUND_SLACK * f.abs().max(1.0)
    }

    fn beaten(&self, floor: f64) -> bool {
        matches!(&self.best, Some((b, _)) if floor > b + TIE_TOLERANCE * b.abs().max(1.0))
    }

    fn offer(&mut self) {
        let v = self.cost + penalty(&self.d, &self.l, self.p);
        let mut ids = self.chosen.clone();
        ids.sort_unstable();
        let replace = match &self.best {
            None => true,
            Some((b, bids)) => {
                let tol = TIE_TOLERANCE * b.abs().max(1.0);
                v < b - tol || (v <= b + tol && ids < *bids)
            }
        };
        if replace {
            self.best = Some((v, ids));
        }
    }

    /// Follows the cheapest tactical cover to a first complete selection.
    fn seed(&mut self, uncovered: u64) {
        if uncovered == 0 {
            self.offer();
            return;
        }
        let target = self.cheapest_cover(uncovered);
        let low = uncovered.trailing_zeros() as usize;
        for j in 0..self.holding[low].len() {
            let r = self.holding[low][j];
            if self.masks[r] & !uncovered != 0 {
                continue;
            }
            let rest = uncovered & !self.masks[r];
            let v = self.pool.clusters[r].cost() + self.cheapest_cover(rest);
            if v <= target + TIE_TOLERANCE * target.abs().max(1.0) {
                self.chosen.push(r);
                self.push(r, 1.0);
                self.seed(rest);
                self.push(r, -1.0);
                self.chosen.pop();
                return;
            }
        }
    }

    fn recurse(&mut self, uncovered: u64) {
        if uncovered == 0 {
            self.offer();
            return;
        }
        // The uncovered customer with the largest load goes first, so the
        // penalty floor bites early.
        let i = (0..self.max_share.len())
            .filter(|&i| uncovered & 1 << i != 0)
            .max_by(|&a, &b| self.max_share[a].0.total_cmp(&self.max_share[b].0).then(b.cmp(&a)))
            .expect("an uncovered customer");
        let mut options = Vec::new();
        for j in 0..self.holding[i].len() {
            let r = self.holding[i][j];
            if self.masks[r] & !uncovered != 0 {
                continue;
            }
            self.push(r, 1.0);
            let f = self.floor(uncovered & !self.masks[r]);
            self.push(r, -1.0);
            options.push((f, r));
        }
        options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (f, r) in options {
            if self.beaten(f) {
                break;
            }
            self.chosen.push(r);
            self.push(r, 1.0);
            self.recurse(uncovered & !self.masks[r]);
            self.push(r, -1.0);
            self.chosen.pop();
        }
    }
}

/// Exact optimum by exhaustive recursion over partitions, branching on the
/// lowest uncovered customer and pruning only with the cheapest tactical
/// cover and a water-fill penalty floor. Intended as an oracle for
/// [`solve`]; ties break the same way.
pub fn brute_force(pool: &ClusterPool, p: PenaltyParams) -> Result<Selection> {
    let p = PenaltyParams::new(p.eta1, p.eta2)?;
    let n = pool.num_customers;
    if n > BRUTE_FORCE_MAX_CUSTOMERS {
        return Err(Error::InvalidArgument(format!(
            "brute force handles at most {BRUTE_FORCE_MAX_CUSTOMERS} customers, got {n}"
        )));
    }
    check_coverage(pool)?;
    if n == 0 {
        return Ok(empty_selection(pool));
    }
    let masks: Vec<u64> = pool.clusters.iter().map(|c| customer_mask(&c.customers)).collect();
    let mut holding = vec![Vec::new(); n];
    let mut max_share = vec![(0.0f64, 0.0f64); n];
    for (r, c) in pool.clusters.iter().enumerate() {
        let k = c.customers.len() as f64;
        let sd = c.delta.iter().sum::<f64>() / k;
        let sl = c.lambda.iter().sum::<f64>() / k;
        for &i in &c.customers {
            max_share[i].0 = max_share[i].0.max(sd);
            max_share[i].1 = max_share[i].1.max(sl);
        }
        for &i in &c.customers {
            holding[i].push(r);
        }
    }
    for list in &mut holding {
        list.sort_by(|&a, &b| pool.clusters[a].cost().total_cmp(&pool.clusters[b].cost()).then(a.cmp(&b)));
    }
    let mut ex = Exhaustive {
        pool,
        p,
        masks,
        holding,
        max_share,
        cheapest: HashMap::new(),
        chosen: Vec::new(),
        cost: 0.0,
        d: vec![0.0; pool.periods],
        l: vec![0.0; pool.periods],
        best: None,
    };
    let full = (1u64 << n) - 1;
    ex.seed(full);
    ex.recurse(full);
    let (_, ids) = ex
        .best
        .ok_or_else(|| Error::InvalidArgument("the pool admits no partition of the customers".into()))?;
    Selection::from_ids(pool, &ids, p)
}
