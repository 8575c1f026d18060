#![allow(dead_code)]
//! Test-only quadrature and Monte Carlo helpers, written independently of
//! the library so they can act as oracles.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [−1, 1] (Golub–Welsch free Newton).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0f64, 0.0f64);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// ∫_a^b f with panels refined geometrically (ratio 1/2) towards both ends,
/// where `f(x, dist_left, dist_right)` and the integrand may behave like a
/// power of the distance to either end. The innermost slivers use the power
/// law with exponents `pl`, `pr`.
pub fn graded2<F: FnMut(f64, f64, f64) -> f64>(mut f: F, a: f64, b: f64, pl: f64, pr: f64, levels: usize) -> f64 {
    let (x, w) = gauss_legendre(20);
    let len = b - a;
    let half = 0.5 * len;
    let mut total = 0.0;
    let panel = |lo: f64, hi: f64, left: bool, f: &mut F| {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let d = c + h * xi;
            let (pos, dl, dr) = if left { (a + d, d, len - d) } else { (b - d, len - d, d) };
            s += wi * f(pos, dl, dr);
        }
        s * h
    };
    for &left in &[true, false] {
        let mut hi = half;
        for _ in 0..levels {
            let lo = hi * 0.5;
            total += panel(lo, hi, left, &mut f);
            hi = lo;
        }
        let (pos, dl, dr) = if left { (a + hi, hi, len - hi) } else { (b - hi, len - hi, hi) };
        let p = if left { pl } else { pr };
        total += f(pos, dl, dr) * hi / (p + 1.0);
    }
    total
}

pub fn gamma(x: f64) -> f64 {
    fsde_core::special::gamma(x)
}

/// Unbiased covariance and its standard error from paired samples.
pub fn cov_with_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let c = prods.iter().sum::<f64>() / (n - 1.0);
    let v = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (n - 1.0);
    (c, (v / n).sqrt())
}
