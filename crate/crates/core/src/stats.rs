//! Order-stable reductions and the small amount of statistics the checks need.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::sde::mix64;

/// Pairwise summation in index order. The result depends only on the slice
/// contents, never on how the slice was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |a, b| a + b);
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two samples).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (xs.len() - 1) as f64
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub n_effective: usize,
}

impl Estimate {
    pub fn new(name: impl Into<String>, estimate: f64, se: f64, n_effective: usize) -> Self {
        Self { name: name.into(), estimate, se, n_effective }
    }

    /// Sample mean of `xs` with SE `s/√n`.
    pub fn of_mean(name: impl Into<String>, xs: &[f64]) -> Self {
        let n = xs.len();
        let se = if n > 1 { (variance(xs) / n as f64).sqrt() } else { 0.0 };
        Self::new(name, mean(xs), se, n)
    }

    /// Unbiased sample variance with the large-sample SE `√((m4 - s⁴)/n)`.
    pub fn of_variance(name: impl Into<String>, xs: &[f64]) -> Self {
        let n = xs.len();
        let m = mean(xs);
        let s2 = variance(xs);
        let m4 = mean(&xs.iter().map(|x| (x - m).powi(4)).collect::<Vec<_>>());
        let se = if n > 1 { ((m4 - s2 * s2).max(0.0) / n as f64).sqrt() } else { 0.0 };
        Self::new(name, s2, se, n)
    }
}

/// Standard error of `stat` by resampling with replacement. The generator is
/// seeded from `seed` alone.
pub fn bootstrap_se<F>(xs: &[f64], stat: F, reps: usize, seed: u64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    if xs.len() < 2 || reps < 2 {
        return 0.0;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix64(seed));
    let mut buf = vec![0.0; xs.len()];
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..xs.len())];
            }
            stat(&buf)
        })
        .collect();
    variance(&vals).sqrt()
}

/// Exact two-sided Kolmogorov–Smirnov distance `sup_x |F_n(x) - F(x)|`
/// against a continuous CDF, evaluated at both sides of every jump.
pub fn ks_statistic<F>(samples: &[f64], cdf: F) -> f64
where
    F: Fn(f64) -> f64,
{
    assert!(!samples.is_empty(), "ks_statistic needs at least one sample");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d.clamp(0.0, 1.0)
}

/// Ordinary least squares `y = a + b x`. Returns `(b, se_b)`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    if xs.len() < 3 {
        return (b, 0.0);
    }
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (b, (rss / (n - 2.0) / sxx).sqrt())
}

/// Weighted least squares slope with weights `1/σ_i²`, and its SE from the
/// supplied per-point errors.
pub fn wls_slope(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> (f64, f64) {
    assert!(xs.len() == ys.len() && ys.len() == sigmas.len());
    let w: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let mx = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).zip(&w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::oracle::norm_cdf;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=10_000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 50_005_000.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_variance() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        let e = Estimate::of_mean("m", &xs);
        assert!((e.se - (5.0 / 12.0f64).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::of_mean("one", &[3.0]).se, 0.0);
    }

    #[test]
    fn ks_hand_cases() {
        let d = ks_statistic(&[0.0], norm_cdf);
        assert!((d - 0.5).abs() < 1e-15);
        let d = ks_statistic(&[-1.0, -1.0, -1.0], |x| if x <= 0.0 { 0.0 } else { x.min(1.0) });
        assert_eq!(d, 1.0);
    }

    #[test]
    fn ks_exact_samples_below_critical_value() {
        let n = 10_000;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let d = ks_statistic(&xs, norm_cdf);
        assert!(d <= 1.2 * 1.63 / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn bootstrap_se_of_mean_matches_formula() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let xs: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let b = bootstrap_se(&xs, mean, 400, 9);
        let f = Estimate::of_mean("m", &xs).se;
        assert!((b / f - 1.0).abs() < 0.15, "{b} vs {f}");
        assert_eq!(b, bootstrap_se(&xs, mean, 400, 9));
    }

    #[test]
    fn slopes_recover_lines() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (b, se) = ols_slope(&xs, &ys);
        assert!((b - 2.0).abs() < 1e-14 && se < 1e-7);
        let (b, _) = wls_slope(&xs, &ys, &[1.0, 2.0, 0.5, 1.0]);
        assert!((b - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_map(xs in prop::collection::vec(0.01f64..5.0, 1..200)) {
            let cdf = |x: f64| 1.0 - (-x).exp();
            let d1 = ks_statistic(&xs, cdf);
            let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
            let d2 = ks_statistic(&cubed, |y: f64| cdf(y.cbrt()));
            prop_assert!((d1 - d2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d1));
        }
    }
}
