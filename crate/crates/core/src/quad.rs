//! Gauss–Legendre panels, graded meshes for endpoint singularities and an
//! adaptive Gauss–Kronrod integrator.

use std::sync::OnceLock;

use crate::error::{FsdeError, Result};

pub(crate) struct GaussRule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

fn legendre_rule(n: usize) -> GaussRule {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    GaussRule { x, w }
}

/// 16-point Gauss–Legendre rule on [−1, 1].
pub(crate) fn gl16() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(16))
}

/// Gauss–Legendre on a single panel.
#[inline]
pub(crate) fn gl<F: FnMut(f64) -> f64>(rule: &GaussRule, a: f64, b: f64, mut f: F) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in rule.x.iter().zip(&rule.w) {
        s += w * f(c + h * x);
    }
    s * h
}

/// Geometric panel ratio of the graded meshes.
const GRADE: f64 = 0.25;

/// ∫ of `f` over [a, b] where f ~ |x − a|^p near `a` (p > −1).
///
/// `f(x, s)` receives the node and its exact distance `s` from the singular
/// endpoint. Panels shrink geometrically towards `a` until their width drops
/// below `floor`; the last sliver is integrated analytically from the power
/// law.
pub(crate) fn graded_left<F: FnMut(f64, f64) -> f64>(f: F, a: f64, b: f64, p: f64, floor: f64) -> f64 {
    graded(f, a, b, p, floor, false)
}

/// As [`graded_left`] with the singularity at the right endpoint `b`.
pub(crate) fn graded_right<F: FnMut(f64, f64) -> f64>(f: F, a: f64, b: f64, p: f64, floor: f64) -> f64 {
    graded(f, a, b, p, floor, true)
}

fn graded<F: FnMut(f64, f64) -> f64>(mut f: F, a: f64, b: f64, p: f64, floor: f64, right: bool) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let rule = gl16();
    let at = |s: f64| if right { b - s } else { a + s };
    let mut hi = len;
    let mut total = 0.0;
    let floor = floor.max(len * 1e-300);
    loop {
        let lo = hi * GRADE;
        total += gl(rule, lo, hi, |s| f(at(s), s));
        hi = lo;
        if hi <= floor {
            break;
        }
    }
    // f(at(hi)) ≈ C hi^p, so ∫_0^hi ≈ f(at(hi))·hi/(p+1)
    let edge = f(at(hi), hi);
    if edge.is_finite() {
        total += edge * hi / (p + 1.0);
    }
    total
}

/// ∫ of a smooth, slowly varying `f` over [a, b] with 0 < a < b using
/// geometric panels (ratio 4) so that power-law integrands are resolved.
pub(crate) fn log_panels<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gl16();
    let mut lo = a;
    let mut total = 0.0;
    while lo < b {
        let hi = (lo * 4.0).min(b);
        total += gl(rule, lo, hi, &mut f);
        lo = hi;
    }
    total
}

const K15_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const K15_W: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G7_W: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * K15_W[7];
    let mut g = fc * G7_W[3];
    for i in 0..7 {
        let d = h * K15_X[i];
        let s = f(c - d) + f(c + d);
        k += K15_W[i] * s;
        if i % 2 == 1 {
            g += G7_W[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) with global bisection of the worst panel.
///
/// Returns the integral and the summed error estimate.
pub(crate) fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<(f64, f64)> {
    let mut panels = vec![{
        let (v, e) = gk15(&mut f, a, b);
        (a, b, v, e)
    }];
    loop {
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol {
            let val = panels.iter().map(|p| p.2).sum();
            return Ok((val, err));
        }
        if panels.len() >= max_subdivisions {
            return Err(FsdeError::Accuracy {
                what: "adaptive quadrature".into(),
                achieved: err,
                target: abs_tol,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_polynomials() {
        let v = gl(gl16(), 0.0, 2.0, |x| x.powi(31));
        assert!((v / (2f64.powi(32) / 32.0) - 1.0).abs() < 1e-13);
        let w: f64 = legendre_rule(32).w.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_handles_endpoint_power() {
        let p = -0.9;
        let left = graded_left(|x: f64, _| x.powf(p), 0.0, 1.0, p, 1e-14);
        assert!((left - 10.0).abs() < 1e-10, "{left}");
        let right = graded_right(|x: f64, s: f64| s.powf(p) * x, 1.0, 2.0, p, 1e-14);
        // ∫_0^1 s^p (2 − s) ds
        let exact = 2.0 / (p + 1.0) - 1.0 / (p + 2.0);
        assert!((right - exact).abs() < 1e-9, "{right} {exact}");
    }

    #[test]
    fn adaptive_meets_tolerance() {
        let (v, e) = adaptive(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12, 100).unwrap();
        assert!((v - 2.0).abs() < 1e-12 && e <= 1e-12);
        assert!(adaptive(|x: f64| x.powf(-0.999), 0.0, 1.0, 1e-14, 5).is_err());
    }
}
