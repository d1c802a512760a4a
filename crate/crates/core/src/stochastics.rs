//! Normal-distribution primitives and the discretization used by the
//! purchasing model.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::Add;

use crate::error::{Error, Result};

/// A normal law `N(mean, std^2)`. A zero standard deviation is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian requires finite mean and std >= 0, got N({mean}, {std}^2)"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn from_variance(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            std: variance.max(0.0).sqrt(),
        }
    }

    pub fn point(value: f64) -> Self {
        Self {
            mean: value,
            std: 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    /// Law of `X - c`.
    pub fn shift(&self, delta: f64) -> Self {
        Self {
            mean: self.mean + delta,
            std: self.std,
        }
    }

    /// Law of `c * X` for `c >= 0`.
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std: self.std * factor.abs(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.std == 0.0 {
            return if x >= self.mean { 1.0 } else { 0.0 };
        }
        normal_cdf((x - self.mean) / self.std)
    }
}

impl Add for Gaussian {
    type Output = Gaussian;

    /// Sum of two independent normals.
    fn add(self, rhs: Gaussian) -> Gaussian {
        Gaussian::from_variance(self.mean + rhs.mean, self.variance() + rhs.variance())
    }
}

/// Law of the sum of independent normals. An empty input yields the point mass at 0.
pub fn sum_independent<'a, I>(gs: I) -> Gaussian
where
    I: IntoIterator<Item = &'a Gaussian>,
{
    let (mean, var) = gs
        .into_iter()
        .fold((0.0, 0.0), |(m, v), g| (m + g.mean, v + g.variance()));
    Gaussian::from_variance(mean, var)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of [`normal_cdf`], by safeguarded Newton iteration on the CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Probability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail where the CDF carries full relative precision.
    if p > 0.5 {
        return Ok(-lower_tail_quantile(1.0 - p));
    }
    Ok(lower_tail_quantile(p))
}

fn lower_tail_quantile(p: f64) -> f64 {
    // Starting point from the classical rational approximation (|err| < 4.5e-4).
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = -(t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t));
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..100 {
        let f = normal_cdf(x) - p;
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let d = normal_pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

/// `E[max(X, 0)]` for `X ~ g`.
pub fn expected_positive_part(g: &Gaussian) -> f64 {
    if g.std == 0.0 {
        return g.mean.max(0.0);
    }
    let z = g.mean / g.std;
    if z < -8.0 {
        // asymptotic expansion; the direct form cancels catastrophically here
        let r = 1.0 / (z * z);
        return g.std * normal_pdf(z) * r * (1.0 - 3.0 * r + 15.0 * r * r - 105.0 * r * r * r);
    }
    (g.mean * normal_cdf(z) + g.std * normal_pdf(z)).max(0.0)
}

/// A probability mass function on the lattice `origin + k * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub origin: i64,
    pub step: i64,
    pub masses: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn point(value: i64, step: i64) -> Self {
        Self {
            origin: value,
            step,
            masses: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn min_support(&self) -> i64 {
        self.origin
    }

    pub fn max_support(&self) -> i64 {
        self.origin + (self.masses.len() as i64 - 1) * self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .map(move |(k, &p)| (self.origin + k as i64 * self.step, p))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, p)| x as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.iter().map(|(x, p)| p * (x as f64 - m).powi(2)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Grid point whose cell `[k - step/2, k + step/2)` contains `x`.
pub fn nearest_grid_point(x: f64, step: i64) -> i64 {
    let s = step as f64;
    ((x + 0.5 * s) / s).floor() as i64 * step
}

/// Discretizes `g` onto the multiples of `step`. Grid point `k` receives the
/// probability of `[k - step/2, k + step/2)`; the support covers the central
/// `1 - tail_mass` of `g` and the masses are renormalized.
pub fn discretize(g: &Gaussian, step: i64, tail_mass: f64) -> Result<DiscreteDistribution> {
    if step < 1 {
        return Err(Error::InvalidArgument(format!("step must be >= 1, got {step}")));
    }
    if !(tail_mass > 0.0 && tail_mass < 0.1) {
        return Err(Error::InvalidArgument(format!(
            "tail mass must lie in (0, 0.1), got {tail_mass}"
        )));
    }
    if g.std == 0.0 {
        return Ok(DiscreteDistribution::point(nearest_grid_point(g.mean, step), step));
    }
    let half = normal_quantile(1.0 - 0.5 * tail_mass)? * g.std;
    let lo = nearest_grid_point(g.mean - half, step);
    let hi = nearest_grid_point(g.mean + half, step);
    let s = step as f64;
    let count = ((hi - lo) / step + 1) as usize;
    let mut masses = Vec::with_capacity(count);
    for k in 0..count {
        let x = (lo + k as i64 * step) as f64;
        masses.push(g.cdf(x + 0.5 * s) - g.cdf(x - 0.5 * s));
    }
    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    Ok(DiscreteDistribution {
        origin: lo,
        step,
        masses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, summed in plain f64 with enough terms for |x| <= 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / PI.sqrt() * sum
    }

    fn cdf_oracle(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x * FRAC_1_SQRT_2))
    }

    fn quantile_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf_oracle(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cdf_matches_series() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // oracle values frozen from the series: 0.919432..., 0.080567...
        let up = cdf_oracle(1.4013);
        assert!((up - 0.91943).abs() < 1e-5, "{up}");
        assert!((normal_cdf(1.4013) - up).abs() < 1e-12, "{} vs {up}", normal_cdf(1.4013));
        assert!((normal_cdf(-1.4013) - cdf_oracle(-1.4013)).abs() < 1e-12);
        assert!((normal_cdf(-1.4013) - 0.08057).abs() < 1e-5);
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            assert!((normal_cdf(x) - cdf_oracle(x)).abs() < 1e-12, "x = {x}");
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_matches_bisection_oracle() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        let q95 = quantile_by_bisection(0.95);
        let q90 = quantile_by_bisection(0.9);
        assert!((q95 - 1.6449).abs() < 5e-5);
        assert!((q90 - 1.2816).abs() < 5e-5);
        assert!((normal_quantile(0.95).unwrap() - q95).abs() < 1e-9);
        assert!((normal_quantile(0.9).unwrap() - q90).abs() < 1e-9);
        for p in [1e-12, 1e-6, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-9] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-8, "p = {p}");
        }
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(p), Err(Error::Probability(_))));
        }
    }

    #[test]
    fn positive_part_examples() {
        let std_normal = Gaussian::new(0.0, 1.0).unwrap();
        assert!((expected_positive_part(&std_normal) - normal_pdf(0.0)).abs() < 1e-15);
        assert!((expected_positive_part(&std_normal) - 0.39894).abs() < 1e-5);
        let monday = Gaussian::new(-110.79, 79.06).unwrap();
        assert!((expected_positive_part(&monday) - 2.89).abs() < 0.01);
        assert_eq!(expected_positive_part(&Gaussian::point(5.0)), 5.0);
        assert_eq!(expected_positive_part(&Gaussian::point(-5.0)), 0.0);
    }

    #[test]
    fn sums_add_means_and_variances() {
        let a = Gaussian::new(313.1, 35.36).unwrap();
        let b = Gaussian::new(776.2, 70.71).unwrap();
        let s = sum_independent(&[a, b]);
        assert!((s.mean - 1089.3).abs() < 1e-9);
        assert!((s.std - 79.06).abs() < 0.01);
        let one = Gaussian::point(7.5);
        assert_eq!(sum_independent(&[one]), one);
        let s = sum_independent(&[Gaussian::new(1.0, 1.0).unwrap(), Gaussian::new(2.0, 2.0).unwrap()]);
        assert_eq!(s.mean, 3.0);
        assert!((s.variance() - 5.0).abs() < 1e-12);
        assert_eq!(a + b, sum_independent(&[a, b]));
    }

    #[test]
    fn discretize_examples() {
        let d = discretize(&Gaussian::point(0.0), 5, 1e-6).unwrap();
        assert_eq!(d.masses, vec![1.0]);
        assert_eq!(d.origin, 0);

        let g = Gaussian::new(10.0, 5.0).unwrap();
        let d = discretize(&g, 5, 1e-6).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        let centre = d.iter().position(|(x, _)| x == 10).unwrap();
        let raw = cdf_oracle(0.5) - cdf_oracle(-0.5);
        assert!((raw - 0.3829).abs() < 1e-4);
        // renormalization only removes the 1e-6 tail
        assert!((d.masses[centre] - raw).abs() < 1e-5);
        for k in 0..d.len() {
            assert!((d.masses[k] - d.masses[d.len() - 1 - k]).abs() < 1e-12);
        }
        assert!((d.mean() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn discretize_rejects_bad_arguments() {
        let g = Gaussian::new(0.0, 1.0).unwrap();
        assert!(discretize(&g, 0, 1e-6).is_err());
        assert!(discretize(&g, 5, 0.2).is_err());
        assert!(discretize(&g, 5, 0.0).is_err());
    }

    #[test]
    fn grid_cells_are_half_open() {
        assert_eq!(nearest_grid_point(2.4, 5), 0);
        assert_eq!(nearest_grid_point(2.5, 5), 5);
        assert_eq!(nearest_grid_point(-2.5, 5), 0);
        assert_eq!(nearest_grid_point(-2.6, 5), -5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn put_call_parity(mu in -500.0f64..500.0, sigma in 0.0f64..200.0) {
                let up = expected_positive_part(&Gaussian::new(mu, sigma).unwrap());
                let down = expected_positive_part(&Gaussian::new(-mu, sigma).unwrap());
                prop_assert!((up - down - mu).abs() < 1e-8);
            }

            #[test]
            fn discretized_mean_within_one_step(
                mu in -2000.0f64..2000.0,
                sigma in 0.0f64..400.0,
                step in 1i64..20,
            ) {
                let d = discretize(&Gaussian::new(mu, sigma).unwrap(), step, 1e-6).unwrap();
                prop_assert!((d.total_mass() - 1.0).abs() < 1e-9);
                prop_assert!(d.masses.iter().all(|&p| p >= 0.0));
                prop_assert!((d.mean() - mu).abs() <= step as f64);
            }

            #[test]
            fn quantile_inverts_cdf(x in -6.0f64..6.0) {
                let p = normal_cdf(x);
                prop_assert!((normal_quantile(p).unwrap() - x).abs() < 1e-7);
            }
        }
    }
}
