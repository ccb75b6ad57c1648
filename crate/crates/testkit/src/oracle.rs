//! Slow, textbook reimplementations used to check the library.

/// Average rank of each value, by counting: rank = below + (equal + 1) / 2.
pub fn ranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation from the covariance definition, two passes.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman over the rows where both sides are present (and not NaN).
/// Returns `(rho, pairs)`; `None` when undefined.
pub fn spearman(x: &[Option<f64>], y: &[Option<f64>]) -> Option<(f64, usize)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if !a.is_nan() && !b.is_nan() => Some((*a, *b)),
            _ => None,
        })
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    pearson(&ranks_by_counting(&xs), &ranks_by_counting(&ys)).map(|r| (r, xs.len()))
}

/// erf by the everywhere-positive series
/// `2/sqrt(pi) * exp(-x^2) * sum 2^n x^(2n+1) / (1*3*...*(2n+1))`.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > sum * 1e-18 {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Inverts [`normal_cdf`] by bisection.
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Interval from the textbook formula: z = (ln(1+r) - ln(1-r)) / 2,
/// back-transformed with (e^2z - 1) / (e^2z + 1).
pub fn fisher_interval(rho: f64, n: usize, alpha: f64) -> (f64, f64) {
    let z = 0.5 * ((1.0 + rho).ln() - (1.0 - rho).ln());
    let half = normal_quantile(1.0 - alpha / 2.0) / ((n as f64) - 3.0).sqrt();
    let back = |t: f64| ((2.0 * t).exp() - 1.0) / ((2.0 * t).exp() + 1.0);
    (back(z - half), back(z + half))
}

/// Nearest-rank percentiles 1..=100 by sorting and indexing.
pub fn percentiles(values: &[u64]) -> Vec<u64> {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    (1..=100).map(|p| v[((p * n).div_ceil(100)).max(1) - 1]).collect()
}

/// Mean and unbiased variance, two passes.
pub fn mean_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}
