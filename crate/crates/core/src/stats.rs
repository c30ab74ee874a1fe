//! Small statistical helpers: running moments, chi-square tests, slopes.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper tail P[χ²_k ≥ x].
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(k).map(|c| c.sf(x)).unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Summary { n, mean, var }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.var / self.n as f64).sqrt()
    }
}

/// Ordinary least squares slope and its standard error.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let resid: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - b * (x - mx)).powi(2)).sum();
    let se = if xs.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (b, se)
}

/// Goodness of fit of observed counts against expected probabilities.
///
/// Cells with expected count below `min_expected` are pooled into one cell.
pub fn chi2_gof(observed: &[f64], probs: &[f64], min_expected: f64) -> (f64, f64) {
    let n: f64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (o, p) in observed.iter().zip(probs) {
        let e = p * n;
        if e < min_expected {
            pool.0 += o;
            pool.1 += e;
        } else {
            cells.push((*o, e));
        }
    }
    if pool.1 > 0.0 {
        cells.push(pool);
    }
    let stat: f64 = cells.iter().filter(|c| c.1 > 0.0).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = cells.len().saturating_sub(1) as f64;
    (stat, chi2_sf(stat, dof))
}

/// Two-sample chi-square homogeneity test on categorical samples.
///
/// Categories whose pooled count is below `min_count` are merged into one.
pub fn chi2_two_sample<K: Ord + Clone>(a: &[K], b: &[K], min_count: f64) -> (f64, f64) {
    let mut table: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        table.entry(k.clone()).or_default().0 += 1.0;
    }
    for k in b {
        table.entry(k.clone()).or_default().1 += 1.0;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (_, (x, y)) in table {
        if x + y < min_count {
            pool.0 += x;
            pool.1 += y;
        } else {
            cells.push((x, y));
        }
    }
    if pool.0 + pool.1 > 0.0 {
        cells.push(pool);
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let n = na + nb;
    let mut stat = 0.0;
    for (x, y) in &cells {
        let t = x + y;
        let ea = t * na / n;
        let eb = t * nb / n;
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    let dof = cells.len().saturating_sub(1) as f64;
    (stat, chi2_sf(stat, dof))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_tail_values() {
        // χ²_1 at 3.841 has tail 0.05; χ²_10 at its mean is about 0.44.
        assert!((chi2_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-9);
        assert!((chi2_sf(10.0, 10.0) - 0.44049328506).abs() < 1e-8);
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let (b, se) = ols_slope(&xs, &ys);
        assert!((b - 2.0).abs() < 1e-12 && se < 1e-9);
    }

    #[test]
    fn homogeneity_of_identical_samples() {
        let a: Vec<u32> = (0..1000).map(|i| i % 7).collect();
        let (s, p) = chi2_two_sample(&a, &a, 5.0);
        assert!(s.abs() < 1e-12 && p > 0.99);
    }

    #[test]
    fn gof_pools_sparse_cells() {
        let (_, p) = chi2_gof(&[50.0, 50.0, 0.0], &[0.5, 0.5, 1e-9], 5.0);
        assert!(p > 0.99);
    }
}
