//! Problem instances: data model, validation, random generation and
//! scenario scaling.
//!
//! Nodes are indexed by position: node 0 is the producer and node `k`
//! (`k >= 1`) is `customers[k - 1]`. Customer ids are labels only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{normal_quantile, Gaussian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Producer {
    /// Mean supply per period (kg).
    pub mu: f64,
    pub sigma: f64,
    /// Storage capacity in kg.
    pub capacity: i64,
    /// Fixed ordering cost.
    #[serde(rename = "K1")]
    pub k1: f64,
    /// Fixed emergent purchase cost, charged when the inventory position is negative.
    #[serde(rename = "K2")]
    pub k2: f64,
    pub b1: f64,
    pub b2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl Producer {
    pub fn supply(&self) -> Gaussian {
        Gaussian {
            mean: self.mu,
            std: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: u32,
    /// Location label; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mu: f64,
    pub sigma: f64,
    /// Storage capacity in kg.
    #[serde(rename = "U")]
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl Customer {
    pub fn demand(&self) -> Gaussian {
        Gaussian {
            mean: self.mu,
            std: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Number of periods in one cycle.
    #[serde(rename = "T")]
    pub periods: usize,
    /// Customer service level.
    pub alpha: f64,
    /// Probability that a delivery fits in the vehicle.
    pub gamma: f64,
    /// Fixed cost per replenishment trip.
    #[serde(rename = "W")]
    pub trip_cost: f64,
    /// Cost per unit distance.
    #[serde(rename = "w")]
    pub distance_cost: f64,
    /// Holding cost per kg per period.
    #[serde(rename = "h")]
    pub holding_cost: f64,
    /// Emergency shipment cost per kg.
    #[serde(rename = "e")]
    pub emergency_cost: f64,
    #[serde(rename = "Q")]
    pub vehicle_capacity: f64,
    pub producer: Producer,
    pub customers: Vec<Customer>,
    /// Explicit symmetric distance matrix over nodes; takes precedence over coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<Vec<f64>>>,
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    fn coordinates(&self, node: usize) -> Option<(f64, f64)> {
        if node == 0 {
            Some((self.producer.x?, self.producer.y?))
        } else {
            let c = self.customers.get(node - 1)?;
            Some((c.x?, c.y?))
        }
    }

    /// Whether every node pair has a resolvable distance.
    pub fn has_distances(&self) -> bool {
        match &self.distances {
            Some(m) => {
                let n = self.customers.len() + 1;
                m.len() == n && m.iter().all(|row| row.len() == n)
            }
            None => (0..=self.customers.len()).all(|k| self.coordinates(k).is_some()),
        }
    }

    /// Distance between nodes `a` and `b`. Panics if neither a matrix nor
    /// coordinates are available; call [`Instance::validate`] first.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        if let Some(m) = &self.distances {
            return m[a][b];
        }
        let (xa, ya) = self.coordinates(a).expect("node coordinates");
        let (xb, yb) = self.coordinates(b).expect("node coordinates");
        (xa - xb).hypot(ya - yb)
    }

    /// Full distance matrix over all nodes.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.customers.len() + 1;
        (0..n)
            .map(|a| (0..n).map(|b| self.distance(a, b)).collect())
            .collect()
    }

    /// Checks every invariant and the single-customer feasibility screen.
    /// Returns the list of violations; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.periods < 1 {
            v.push("T must be at least 1".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            v.push(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            v.push(format!("gamma = {} outside (0, 1)", self.gamma));
        }
        for (name, x) in [
            ("W", self.trip_cost),
            ("w", self.distance_cost),
            ("h", self.holding_cost),
            ("e", self.emergency_cost),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} = {x} must be a finite non-negative number"));
            }
        }
        if !(self.vehicle_capacity > 0.0 && self.vehicle_capacity.is_finite()) {
            v.push(format!("Q = {} must be positive", self.vehicle_capacity));
        }
        let p = &self.producer;
        if !(p.mu.is_finite() && p.sigma.is_finite() && p.sigma >= 0.0) {
            v.push("producer supply must have finite mean and std >= 0".to_string());
        }
        if p.capacity <= 0 {
            v.push(format!("producer capacity {} must be positive", p.capacity));
        }
        for (name, x) in [("K1", p.k1), ("K2", p.k2), ("b1", p.b1), ("b2", p.b2)] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} = {x} must be a finite non-negative number"));
            }
        }
        if p.b2 > p.b1 {
            v.push(format!("sell price b2 = {} exceeds buy price b1 = {}", p.b2, p.b1));
        }
        if self.customers.is_empty() {
            v.push("instance has no customers".to_string());
        }
        let mut ids: Vec<u32> = self.customers.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            v.push("customer ids are not unique".to_string());
        }
        let z_alpha = normal_quantile(self.alpha).ok();
        let z_gamma = normal_quantile(self.gamma).ok();
        for c in &self.customers {
            if c.id < 1 {
                v.push("customer ids must be >= 1".to_string());
            }
            if !(c.mu > 0.0 && c.mu.is_finite()) {
                v.push(format!("customer {}: mean demand {} must be positive", c.id, c.mu));
            }
            if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
                v.push(format!("customer {}: demand std {} must be >= 0", c.id, c.sigma));
            }
            if !(c.capacity > 0.0) {
                v.push(format!("customer {}: capacity U = {} must be positive", c.id, c.capacity));
            }
            if let Some(z) = z_gamma {
                if c.mu + z * c.sigma > self.vehicle_capacity {
                    v.push(format!(
                        "customer {}: singleton cc2 infeasible (mu + z_gamma sigma = {:.2} > Q = {})",
                        c.id,
                        c.mu + z * c.sigma,
                        self.vehicle_capacity
                    ));
                }
            }
            if let Some(z) = z_alpha {
                if c.mu + z * c.sigma > c.capacity {
                    v.push(format!(
                        "customer {}: one-period base stock {:.2} exceeds U = {}",
                        c.id,
                        c.mu + z * c.sigma,
                        c.capacity
                    ));
                }
            }
        }
        match &self.distances {
            Some(m) => {
                let n = self.customers.len() + 1;
                if m.len() != n || m.iter().any(|row| row.len() != n) {
                    v.push(format!("distance matrix must be {n} x {n}"));
                } else {
                    for a in 0..n {
                        if m[a][a] != 0.0 {
                            v.push(format!("distance matrix diagonal entry {a} is not zero"));
                        }
                        for b in 0..n {
                            if !(m[a][b] >= 0.0 && m[a][b].is_finite()) {
                                v.push(format!("distance ({a}, {b}) must be finite and non-negative"));
                            }
                            if m[a][b] != m[b][a] {
                                v.push(format!("distance matrix is not symmetric at ({a}, {b})"));
                            }
                        }
                    }
                }
            }
            None => {
                if !self.has_distances() {
                    v.push("no distance matrix and incomplete coordinates".to_string());
                }
            }
        }
        v
    }

    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidInstance(v))
        }
    }

    /// Scenario scaling. Applied in order: supply quantity `m_s` (mean and
    /// std), supply uncertainty `m_p` (std), demand uncertainty `m_d` (every
    /// customer std).
    pub fn scale(&self, m_s: f64, m_p: f64, m_d: f64) -> Result<Self> {
        if [m_s, m_p, m_d].iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "multipliers must be finite and non-negative, got ({m_s}, {m_p}, {m_d})"
            )));
        }
        let mut out = self.clone();
        out.producer.mu *= m_s;
        out.producer.sigma *= m_s;
        out.producer.sigma *= m_p;
        for c in &mut out.customers {
            c.sigma *= m_d;
        }
        Ok(out)
    }
}

/// Demand-uncertainty level of generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Uncertainty {
    /// Customer std drawn from `[0.025, 0.05]` times the mean.
    #[default]
    L,
    /// Customer std drawn from `[0.02, 0.1]` times the mean.
    H,
}

impl Uncertainty {
    fn ratio_range(self) -> (f64, f64) {
        match self {
            Uncertainty::L => (0.025, 0.05),
            Uncertainty::H => (0.02, 0.1),
        }
    }
}

/// Parameters of the base system. `Default` gives the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub uncertainty: Uncertainty,
    pub trip_cost: f64,
    pub distance_cost: f64,
    pub emergency_cost: f64,
    pub vehicle_capacity: f64,
    pub holding_cost: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub customer_capacity: f64,
    pub producer_capacity: i64,
    pub k1: f64,
    pub k2: f64,
    pub b1: f64,
    pub b2: f64,
    pub mu_range: (f64, f64),
    /// Producer std as a fraction of its mean.
    pub supply_cv: f64,
    pub region: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            uncertainty: Uncertainty::L,
            trip_cost: 100.0,
            distance_cost: 20.0,
            emergency_cost: 10.0,
            vehicle_capacity: 1000.0,
            holding_cost: 0.05,
            alpha: 0.95,
            gamma: 0.9,
            customer_capacity: 1000.0,
            producer_capacity: 4500,
            k1: 3000.0,
            k2: 15000.0,
            b1: 25.0,
            b2: 2.0,
            mu_range: (100.0, 400.0),
            supply_cv: 0.15,
            region: 10.0,
        }
    }
}

/// Random base-system instance. The producer sits at the centre of the
/// square region; customers are uniform over it. Pure in its arguments.
pub fn generate(seed: u64, n_customers: usize, periods: usize, params: &GenParams) -> Result<Instance> {
    if n_customers < 1 {
        return Err(Error::InvalidArgument("at least one customer is required".into()));
    }
    if periods < 1 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = params.uncertainty.ratio_range();
    let customers: Vec<Customer> = (0..n_customers)
        .map(|k| {
            let x = rng.random_range(0.0..=params.region);
            let y = rng.random_range(0.0..=params.region);
            let mu = rng.random_range(params.mu_range.0..=params.mu_range.1);
            let ratio = rng.random_range(lo..=hi);
            Customer {
                id: k as u32 + 1,
                name: None,
                mu,
                sigma: ratio * mu,
                capacity: params.customer_capacity,
                x: Some(x),
                y: Some(y),
            }
        })
        .collect();
    let total_mu: f64 = customers.iter().map(|c| c.mu).sum();
    Ok(Instance {
        periods,
        alpha: params.alpha,
        gamma: params.gamma,
        trip_cost: params.trip_cost,
        distance_cost: params.distance_cost,
        holding_cost: params.holding_cost,
        emergency_cost: params.emergency_cost,
        vehicle_capacity: params.vehicle_capacity,
        producer: Producer {
            mu: total_mu,
            sigma: params.supply_cv * total_mu,
            capacity: params.producer_capacity,
            k1: params.k1,
            k2: params.k2,
            b1: params.b1,
            b2: params.b2,
            x: Some(0.5 * params.region),
            y: Some(0.5 * params.region),
        },
        customers,
        distances: None,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn worked_example() -> Instance {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/worked_example.json"
        ))
        .unwrap();
        Instance::from_json(&text).unwrap()
    }

    #[test]
    fn worked_example_is_valid() {
        let inst = worked_example();
        assert_eq!(inst.validate(), Vec::<String>::new());
        assert_eq!(inst.distance(0, 1) + inst.distance(1, 2) + inst.distance(2, 0), 12.0);
    }

    #[test]
    fn singleton_cc2_screen() {
        let mut inst = worked_example();
        inst.vehicle_capacity = 1000.0;
        inst.customers[0].mu = 2000.0;
        inst.customers[0].capacity = 5000.0;
        let v = inst.validate();
        assert!(v.iter().any(|s| s.contains("singleton cc2 infeasible")), "{v:?}");
    }

    #[test]
    fn sell_price_above_buy_price() {
        let mut inst = worked_example();
        inst.producer.b2 = inst.producer.b1 + 1.0;
        assert!(inst.validate().iter().any(|s| s.contains("b2")));
        assert!(inst.validated().is_err());
    }

    #[test]
    fn asymmetric_matrix_flagged() {
        let mut inst = worked_example();
        inst.distances.as_mut().unwrap()[0][1] = 9.0;
        assert!(inst.validate().iter().any(|s| s.contains("symmetric")));
    }

    #[test]
    fn generation_is_deterministic() {
        let p = GenParams::default();
        let a = generate(42, 15, 7, &p).unwrap();
        let b = generate(42, 15, 7, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a, generate(43, 15, 7, &p).unwrap());
    }

    #[test]
    fn generation_uses_base_system() {
        let inst = generate(1, 15, 7, &GenParams::default()).unwrap();
        assert_eq!(inst.trip_cost, 100.0);
        assert_eq!(inst.distance_cost, 20.0);
        assert_eq!(inst.emergency_cost, 10.0);
        assert_eq!(inst.vehicle_capacity, 1000.0);
        assert_eq!(inst.holding_cost, 0.05);
        assert_eq!(inst.alpha, 0.95);
        assert_eq!(inst.gamma, 0.9);
        assert!(inst.customers.iter().all(|c| c.capacity == 1000.0));
        assert_eq!(inst.producer.capacity, 4500);
        assert_eq!(inst.producer.k1, 3000.0);
        assert_eq!(inst.producer.k2, 15000.0);
        assert_eq!(inst.producer.b1, 25.0);
        assert_eq!(inst.producer.b2, 2.0);
        for c in &inst.customers {
            assert!((100.0..=400.0).contains(&c.mu));
            let r = c.sigma / c.mu;
            assert!((0.025 - 1e-12..=0.05 + 1e-12).contains(&r));
            let (x, y) = (c.x.unwrap(), c.y.unwrap());
            assert!((0.0..=10.0).contains(&x) && (0.0..=10.0).contains(&y));
        }
        assert!((inst.producer.sigma - 0.15 * inst.producer.mu).abs() < 1e-9);
        assert!(inst.validate().is_empty());
    }

    #[test]
    fn high_uncertainty_range() {
        let p = GenParams {
            uncertainty: Uncertainty::H,
            ..GenParams::default()
        };
        let inst = generate(5, 50, 7, &p).unwrap();
        for c in &inst.customers {
            let r = c.sigma / c.mu;
            assert!((0.02 - 1e-12..=0.1 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn supply_mean_is_total_demand() {
        let inst = generate(9, 3, 7, &GenParams::default()).unwrap();
        let total: f64 = inst.customers.iter().map(|c| c.mu).sum();
        assert_eq!(inst.producer.mu, total);
    }

    #[test]
    fn scaling_examples() {
        let inst = worked_example();
        assert_eq!(inst.scale(1.0, 1.0, 1.0).unwrap(), inst);
        let s = inst.scale(0.9, 1.0, 1.0).unwrap();
        assert_eq!(s.producer.mu, 0.9 * 850.0);
        assert_eq!(s.producer.sigma, 0.9 * 120.0);
        let d = inst.scale(1.0, 0.0, 1.0).unwrap();
        assert_eq!(d.producer.sigma, 0.0);
        assert_eq!(d.producer.mu, 850.0);
        let c = inst.scale(1.0, 1.0, 2.0).unwrap();
        assert_eq!(c.customers[2].sigma, 150.0);
        assert!(inst.scale(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_keeps_schema_keys() {
        let inst = worked_example();
        let text = inst.to_json();
        for key in ["\"T\"", "\"alpha\"", "\"W\"", "\"w\"", "\"Q\"", "\"K1\"", "\"U\"", "\"distances\""] {
            assert!(text.contains(key), "missing {key}");
        }
        assert_eq!(Instance::from_json(&text).unwrap(), inst);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn supply_scaling_composes(i in -4i32..4, j in -4i32..4, zero in proptest::bool::ANY) {
                // powers of two keep every product exact in binary floating point
                let a = if zero { 0.0 } else { 2f64.powi(i) };
                let b = 2f64.powi(j);
                let inst = generate(3, 4, 7, &GenParams::default()).unwrap();
                let twice = inst.scale(a, 1.0, 1.0).unwrap().scale(b, 1.0, 1.0).unwrap();
                let once = inst.scale(a * b, 1.0, 1.0).unwrap();
                prop_assert_eq!(twice, once);
            }
        }
    }
}
