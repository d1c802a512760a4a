//! Exact shortest closed tours from the producer through a customer subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

/// Largest subset accepted by [`shortest_route`].
pub const MAX_ROUTE_CUSTOMERS: usize = 12;

const TIE_TOLERANCE: f64 = 1e-9;

/// A closed tour `producer -> order[0] -> ... -> order[last] -> producer`.
/// `order` holds 0-based customer indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub order: Vec<usize>,
    pub length: f64,
}

/// Length of the closed tour visiting `order`, summed from the producer outward.
pub fn tour_length(dist: &[Vec<f64>], order: &[usize]) -> f64 {
    let mut prev = 0;
    let mut len = 0.0;
    for &c in order {
        len += dist[prev][c + 1];
        prev = c + 1;
    }
    len + dist[prev][0]
}

/// Shortest tour through `subset` by dynamic programming over subsets.
/// Among tours of equal length (up to a relative 1e-9) the lexicographically
/// smallest visiting order is returned; the result does not depend on the
/// order in which `subset` is given.
pub fn shortest_route(inst: &Instance, subset: &[usize]) -> Result<Route> {
    shortest_route_in(&inst.distance_matrix(), subset)
}

/// As [`shortest_route`], over an explicit node distance matrix (node 0 is the producer).
pub fn shortest_route_in(dist: &[Vec<f64>], subset: &[usize]) -> Result<Route> {
    let mut members = subset.to_vec();
    members.sort_unstable();
    members.dedup();
    let k = members.len();
    if k == 0 {
        return Err(Error::InvalidArgument("route requires at least one customer".into()));
    }
    if k > MAX_ROUTE_CUSTOMERS {
        return Err(Error::RouteTooLarge(k, MAX_ROUTE_CUSTOMERS));
    }
    let node = |j: usize| members[j] + 1;
    let full = (1usize << k) - 1;
    // best[mask][j]: shortest path that starts at member j, visits exactly
    // the members in `mask` (j included) and ends at the producer.
    let mut best = vec![vec![f64::INFINITY; k]; 1 << k];
    for j in 0..k {
        best[1 << j][j] = dist[node(j)][0];
    }
    for mask in 1..=full {
        for j in 0..k {
            if mask & (1 << j) == 0 || mask == 1 << j {
                continue;
            }
            let rest = mask & !(1 << j);
            let mut b = f64::INFINITY;
            let mut r = rest;
            while r != 0 {
                let l = r.trailing_zeros() as usize;
                r &= r - 1;
                let cand = dist[node(j)][node(l)] + best[rest][l];
                if cand < b {
                    b = cand;
                }
            }
            best[mask][j] = b;
        }
    }
    let optimum = (0..k)
        .map(|j| dist[0][node(j)] + best[full][j])
        .fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * optimum.abs().max(1.0);

    // Rebuild greedily, always taking the smallest index that can still
    // complete an optimal tour.
    let mut order = Vec::with_capacity(k);
    let mut remaining = full;
    let mut at = 0usize;
    let mut budget = optimum;
    while remaining != 0 {
        let mut chosen = None;
        for j in 0..k {
            if remaining & (1 << j) == 0 {
                continue;
            }
            let leg = dist[at][node(j)];
            if leg + best[remaining][j] <= budget + tol {
                chosen = Some((j, leg));
                break;
            }
        }
        let (j, leg) = chosen.expect("an optimal continuation exists");
        order.push(members[j]);
        budget -= leg;
        remaining &= !(1 << j);
        at = node(j);
    }
    let length = tour_length(dist, &order);
    Ok(Route { order, length })
}
