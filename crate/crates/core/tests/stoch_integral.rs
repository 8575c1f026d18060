mod common;

use common::{cov_with_se, graded2};
use fsde_core::fbm::{CirculantFbm, HurstParam};
use fsde_core::mlf::FracOrder;
use fsde_core::stats::ks_test;
use fsde_core::stoch_integral::*;
use fsde_core::{FsdeError, RngSpec, TimeGrid};

fn h(v: f64) -> HurstParam {
    HurstParam::model(v).unwrap()
}

fn ensemble(grid: TimeGrid, alpha: f64, hv: f64, n: usize, seed: u64) -> Vec<GPath> {
    let fb = CirculantFbm::new(grid, h(hv)).unwrap();
    let gs = GSampler::new(grid, FracOrder::new(alpha).unwrap(), h(hv)).unwrap();
    (0..n).map(|i| gs.sample(&fb.sample(RngSpec::path(seed, i))).unwrap()).collect()
}

#[test]
fn g_starts_at_zero_and_checks_domain() {
    let g = ensemble(TimeGrid::over(1.0, 32).unwrap(), 0.5, 0.75, 1, 1);
    assert_eq!(g[0].values[0], 0.0);
    let fb = CirculantFbm::new(TimeGrid::over(1.0, 32).unwrap(), h(0.75)).unwrap().sample(RngSpec::new(1, 1));
    assert!(matches!(sample_G(&fb, FracOrder::new(0.2).unwrap()), Err(FsdeError::Domain(_))));
    assert!(sample_G(&fb, FracOrder::new(1.0).unwrap()).is_err());
}

#[test]
fn phi_matches_fbm_identification_at_fdt() {
    for hv in [0.6, 0.75] {
        let a = FracOrder::fdt(h(hv)).unwrap();
        for i in 1..=10 {
            for j in 1..=10 {
                let (t1, t2) = (0.3 * i as f64, 0.3 * j as f64);
                let q = phi_covariance(t1, t2, a, h(hv), PhiSettings::default()).unwrap();
                let want = fdt_g_covariance(t1, t2, h(hv)).unwrap();
                assert!((q - want).abs() < 1e-6, "H={hv} ({t1},{t2}): {q} vs {want}");
            }
        }
        let b2 = beta_h(h(hv)).unwrap().powi(2);
        for t in [0.5, 1.0, 4.0] {
            let d = phi_covariance(t, t, a, h(hv), PhiSettings::default()).unwrap();
            assert!((d - b2 * t.powf(2.0 - 2.0 * hv)).abs() < 1e-12);
        }
    }
}

#[test]
fn phi_is_symmetric_and_vanishes_at_origin() {
    let (a, hp) = (FracOrder::new(0.7).unwrap(), h(0.7));
    let s = PhiSettings::default();
    assert_eq!(phi_covariance(0.0, 2.0, a, hp, s).unwrap(), 0.0);
    let x = phi_covariance(0.4, 1.7, a, hp, s).unwrap();
    let y = phi_covariance(1.7, 0.4, a, hp, s).unwrap();
    assert_eq!(x, y);
}

#[test]
fn phi_matches_brute_force_double_integral() {
    // (1/(Γ(α)B(α,1−α))) ∬ |r−u|^{2H−2} (t1−r)^{α−1} (t2−u)^{α−1} dr du
    let (a, hv, t1, t2) = (0.6, 0.7, 1.0, 2.0);
    let p = 2.0 * hv - 2.0;
    let outer = graded2(
        |r, _, dr| {
            // u ∈ [0, r] then [r, t2]; graded at the diagonal and at t2
            let left = graded2(|u, _, du| du.powf(p) * (t2 - u).powf(a - 1.0), 0.0, r, 0.0, p, 40);
            let right = graded2(|_, du, dt| du.powf(p) * dt.powf(a - 1.0), r, t2, p, a - 1.0, 40);
            dr.powf(a - 1.0) * (left + right)
        },
        0.0,
        t1,
        0.0,
        a - 1.0,
        40,
    );
    let g = common::gamma;
    let pref = 1.0 / (g(a) * g(a) * g(1.0 - a) / g(1.0));
    let brute = pref * outer;
    let q = phi_covariance(t1, t2, FracOrder::new(a).unwrap(), h(hv), PhiSettings::default()).unwrap();
    assert!((q - brute).abs() < 1e-4, "{q} vs {brute}");
}

#[test]
fn phi_matrix_is_positive_semidefinite() {
    let (a, hp) = (FracOrder::new(0.7).unwrap(), h(0.7));
    let ts: Vec<f64> = (1..=12).map(|i| 0.25 * i as f64).collect();
    let m = nalgebra::DMatrix::from_fn(12, 12, |i, j| {
        phi_covariance(ts[i], ts[j], a, hp, PhiSettings::default()).unwrap()
    });
    assert_eq!(m, m.transpose());
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let tr = m.trace();
    assert!(ev.iter().all(|&e| e >= -1e-8 * tr), "{ev}");
}

#[test]
fn ensemble_covariance_matches_phi() {
    let grid = TimeGrid::over(1.0, 1024).unwrap();
    let paths = ensemble(grid, 0.5, 0.75, 3000, 21);
    let a = FracOrder::new(0.5).unwrap();
    for &i in &[256usize, 512, 1024] {
        for &j in &[256usize, 512, 1024] {
            let xi: Vec<f64> = paths.iter().map(|p| p.values[i]).collect();
            let xj: Vec<f64> = paths.iter().map(|p| p.values[j]).collect();
            let (c, se) = cov_with_se(&xi, &xj);
            let want = phi_covariance(grid.t(i), grid.t(j), a, h(0.75), PhiSettings::default()).unwrap();
            assert!((c - want).abs() < 4.0 * se, "({i},{j}) {c} vs {want} ± {se}");
        }
    }
}

#[test]
fn general_order_variance_matches_phi() {
    let grid = TimeGrid::over(1.0, 1024).unwrap();
    let paths = ensemble(grid, 0.7, 0.7, 4000, 5);
    let x: Vec<f64> = paths.iter().map(|p| p.values[1024]).collect();
    let (v, se) = cov_with_se(&x, &x);
    let want = phi_covariance(1.0, 1.0, FracOrder::new(0.7).unwrap(), h(0.7), PhiSettings::default()).unwrap();
    assert!((v - want).abs() < 4.0 * se, "{v} vs {want} ± {se}");
}

#[test]
fn marginals_are_gaussian() {
    let grid = TimeGrid::over(2.0, 512).unwrap();
    let paths = ensemble(grid, 0.7, 0.7, 10_000, 8);
    let a = FracOrder::new(0.7).unwrap();
    for &i in &[64usize, 128, 256, 384, 512] {
        let var = phi_covariance(grid.t(i), grid.t(i), a, h(0.7), PhiSettings::default()).unwrap();
        let x: Vec<f64> = paths.iter().map(|p| p.values[i] / var.sqrt()).collect();
        let t = ks_test(&x, fsde_core::special::normal_cdf, "N(0,1)").unwrap();
        assert!(t.p_value > 0.01, "t={} p={}", grid.t(i), t.p_value);
    }
}

#[test]
fn holder_needs_enough_paths() {
    let paths = ensemble(TimeGrid::over(1.0, 64).unwrap(), 0.5, 0.75, 10, 1);
    assert!(matches!(holder_exponent_estimate(&paths), Err(FsdeError::Contract(_))));
}

#[test]
fn exponents_match_theory() {
    let grid = TimeGrid::over(1.0, 2048).unwrap();
    for (a, hv) in [(0.5, 0.75), (0.9, 0.75)] {
        let paths = ensemble(grid, a, hv, 1000, 3);
        let fit = holder_exponent_estimate(&paths).unwrap();
        let want = 2.0 * hv + 2.0 * a - 2.0;
        assert!((fit.slope - want).abs() < 0.05, "α={a}: {} vs {want}", fit.slope);
    }
    let fdt = ensemble(grid, 0.5, 0.75, 1000, 4);
    let fit = subdiffusion_variance(&fdt).unwrap();
    assert!((fit.slope - 0.5).abs() < 0.05, "{}", fit.slope);
}

#[test]
fn group_identity_on_g_paths() {
    // I^{γ2} G_{α1} = (C_H(α1)/Γ(α1+γ2)) ∫ (t−s)^{α1+γ2−1} dB_H
    let (a1, g2, hv) = (0.4, 0.3, 0.75);
    let err = |n: usize| {
        let grid = TimeGrid::over(1.0, n).unwrap();
        let fb = CirculantFbm::new(grid, h(hv)).unwrap().sample(RngSpec::new(77, 0));
        let g = sample_G(&fb, FracOrder::new(a1).unwrap()).unwrap();
        let lhs = fsde_core::frackernel::fractional_integral(&g.values, &grid, g2).unwrap();
        let ch = c_h(FracOrder::new(a1).unwrap(), h(hv)).unwrap();
        let rhs = stochastic_convolution(&fb, a1 + g2, ch).unwrap();
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        lhs.iter().zip(&rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    };
    let (coarse, fine) = (err(512), err(8192));
    assert!(fine < 1e-2, "relative deviation {fine}");
    // rough integrand, so the gap closes slowly
    let rate = (coarse / fine).log2() / 4.0;
    assert!(rate > 0.25, "{coarse} -> {fine}");
}
