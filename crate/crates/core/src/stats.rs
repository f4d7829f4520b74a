//! Estimators shared by the simulators and the test suites.

/// Time-weighted running average of a vector-valued quantity.
#[derive(Debug, Clone)]
pub struct TimeAverage {
    sums: Vec<f64>,
    weight: f64,
}

impl TimeAverage {
    pub fn new(dim: usize) -> Self {
        Self { sums: vec![0.0; dim], weight: 0.0 }
    }

    pub fn add(&mut self, x: &[f64], dt: f64) {
        for (s, v) in self.sums.iter_mut().zip(x) {
            *s += v * dt;
        }
        self.weight += dt;
    }

    /// Adds an already integrated contribution `∫x dt` over a span of length `dt`.
    pub fn add_integral(&mut self, integral: &[f64], dt: f64) {
        for (s, v) in self.sums.iter_mut().zip(integral) {
            *s += v;
        }
        self.weight += dt;
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> Vec<f64> {
        if self.weight <= 0.0 {
            return vec![f64::NAN; self.sums.len()];
        }
        self.sums.iter().map(|s| s / self.weight).collect()
    }
}

/// Time-weighted batch means: the caller decides which batch a contribution
/// belongs to (typically by event index or elapsed time).
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batches: Vec<TimeAverage>,
}

impl BatchMeans {
    pub fn new(dim: usize, n_batches: usize) -> Self {
        Self { batches: vec![TimeAverage::new(dim); n_batches.max(2)] }
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn add(&mut self, batch: usize, x: &[f64], dt: f64) {
        let b = batch.min(self.batches.len() - 1);
        self.batches[b].add(x, dt);
    }

    pub fn add_integral(&mut self, batch: usize, integral: &[f64], dt: f64) {
        let b = batch.min(self.batches.len() - 1);
        self.batches[b].add_integral(integral, dt);
    }

    /// Standard error of the overall mean, per component, from the spread of
    /// the batch means. Empty batches are ignored.
    pub fn standard_errors(&self) -> Vec<f64> {
        let means: Vec<Vec<f64>> = self
            .batches
            .iter()
            .filter(|b| b.weight() > 0.0)
            .map(TimeAverage::mean)
            .collect();
        let k = means.len();
        if k < 2 {
            return vec![f64::NAN; self.batches[0].sums.len()];
        }
        let dim = means[0].len();
        (0..dim)
            .map(|d| {
                let col: Vec<f64> = means.iter().map(|m| m[d]).collect();
                (variance(&col) / k as f64).sqrt()
            })
            .collect()
    }

    pub fn batch_means(&self, component: usize) -> Vec<f64> {
        self.batches
            .iter()
            .filter(|b| b.weight() > 0.0)
            .map(|b| b.mean()[component])
            .collect()
    }
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean and standard error from `n_batches` contiguous equal batches.
pub fn batch_mean_se(x: &[f64], n_batches: usize) -> (f64, f64) {
    let len = x.len() / n_batches.max(1);
    if len == 0 || n_batches < 2 {
        return (mean(x), f64::NAN);
    }
    let means: Vec<f64> = x.chunks(len).take(n_batches).map(mean).collect();
    (mean(x), (variance(&means) / means.len() as f64).sqrt())
}

/// Integrated autocorrelation time of an evenly sampled series (spacing `dt`),
/// estimated from batch means.
pub fn integrated_autocorrelation_time(x: &[f64], dt: f64, n_batches: usize) -> f64 {
    let var = variance(x);
    let len = x.len() / n_batches;
    if len == 0 || var <= 0.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = x.chunks(len).take(n_batches).map(mean).collect();
    // Var(batch mean) ≈ 2 τ var / (len dt)
    variance(&means) * len as f64 * dt / (2.0 * var)
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            let lo = k as f64 / n;
            let hi = (k + 1) as f64 / n;
            (f - lo).abs().max((hi - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Total-variation distance between two probability vectors on a common support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
}

impl LinearFit {
    pub fn t_stat(&self) -> f64 {
        self.slope / self.slope_se
    }
}

/// Ordinary least squares fit of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_se = (rss / (n - 2.0) / sxx).sqrt();
    LinearFit { intercept, slope, slope_se }
}

/// Trend of an evenly sampled series: OLS on `n_batches` batch means, which
/// keeps the t-statistic meaningful for autocorrelated paths.
pub fn batched_trend(times: &[f64], values: &[f64], n_batches: usize) -> LinearFit {
    let len = (values.len() / n_batches).max(1);
    let bx: Vec<f64> = times.chunks(len).map(mean).collect();
    let by: Vec<f64> = values.chunks(len).map(mean).collect();
    ols(&bx, &by)
}

/// Pearson chi-square statistic and degrees of freedom. Cells with expected
/// count below 5 are pooled into the last cell.
pub fn chi_square(observed: &[f64], probs: &[f64]) -> (f64, usize) {
    let total: f64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells: usize = 0;
    let mut pooled_o = 0.0;
    let mut pooled_p = 0.0;
    for (o, p) in observed.iter().zip(probs) {
        if total * p >= 5.0 {
            stat += (o - total * p).powi(2) / (total * p);
            cells += 1;
        } else {
            pooled_o += o;
            pooled_p += p;
        }
    }
    // remaining tail mass
    let rest_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    pooled_p += rest_p;
    pooled_o += total - observed.iter().sum::<f64>();
    if total * pooled_p > 0.0 {
        stat += (pooled_o - total * pooled_p).powi(2) / (total * pooled_p);
        cells += 1;
    }
    (stat, cells.saturating_sub(1))
}

/// Upper quantile of the chi-square distribution (Wilson–Hilferty).
pub fn chi_square_quantile(df: usize, z: f64) -> f64 {
    let k = df as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Linear-interpolated empirical quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let fit = ols(&x, &y);
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let s: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&s, |x| x.clamp(0.0, 1.0)) <= 0.0005 + 1e-12);
    }

    #[test]
    fn tv_distance_of_disjoint_laws_is_one() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn chi_square_quantile_close_to_tables() {
        // 99% points: df=10 → 23.21, df=30 → 50.89
        assert!((chi_square_quantile(10, 2.326_348) - 23.21).abs() < 0.1);
        assert!((chi_square_quantile(30, 2.326_348) - 50.89).abs() < 0.1);
    }

    #[test]
    fn time_average_weights_by_duration() {
        let mut avg = TimeAverage::new(1);
        avg.add(&[1.0], 3.0);
        avg.add(&[5.0], 1.0);
        assert_eq!(avg.mean(), vec![2.0]);
    }
}
