use fsde_core::fbm::{CirculantFbm, FbmPath};
use fsde_core::linear_oracle::{exact_path, LinearModel};
use fsde_core::mlf::Relaxation;
use fsde_core::solver::*;
use fsde_core::stoch_integral::sample_G;
use fsde_core::{FracOrder, FsdeError, HurstParam, RngSpec, TimeGrid};

fn h75() -> HurstParam {
    HurstParam::model(0.75).unwrap()
}

fn half() -> FracOrder {
    FracOrder::new(0.5).unwrap()
}

fn fine_path(seed: u64) -> FbmPath {
    CirculantFbm::new(TimeGrid::over(1.0, 4096).unwrap(), h75()).unwrap().sample(RngSpec::new(seed, 0))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn model(p: Potential, x0: f64) -> ModelSpec {
    ModelSpec::new(half(), h75(), p, InitialLaw::point(x0)).unwrap()
}

#[test]
fn zero_force_gives_x0_plus_g() {
    let b = fine_path(1).coarsen(4).unwrap();
    let x = solve_volterra(&model(Potential::Zero, 0.7), &b).unwrap();
    let g = sample_G(&b, half()).unwrap();
    assert_eq!(x.values[0], 0.7);
    for (xv, gv) in x.values.iter().zip(&g.values) {
        assert_eq!(*xv, 0.7 + gv);
    }
    assert_eq!(x.method, SolveMethod::Volterra);
    assert_eq!(x.noise, Some(RngSpec::new(1, 0)));
}

#[test]
fn linear_matches_exact_path_at_first_order() {
    let lm = LinearModel::new(1.0, half(), h75(), 1.0).unwrap();
    let fine = fine_path(2);
    let mut errs = Vec::new();
    for f in [16, 8, 4] {
        let b = fine.coarsen(f).unwrap();
        let x = solve_volterra(&lm.spec().unwrap(), &b).unwrap();
        errs.push(max_diff(&x.values, &exact_path(&lm, &b).unwrap().values));
    }
    assert!(errs[2] <= 1e-2, "{errs:?}");
    let order = (errs[0] / errs[2]).log2() / 2.0;
    assert!(order >= 1.0 - 0.05, "order {order}, {errs:?}");
}

#[test]
fn zero_noise_linear_relaxes_like_mittag_leffler() {
    let grid = TimeGrid::over(2.0, 1024).unwrap();
    let b = FbmPath::from_values(grid, h75(), vec![0.0; grid.len()]).unwrap();
    let x = solve_volterra(&model(Potential::Linear { k: 1.5 }, 2.0), &b).unwrap();
    let e = Relaxation::new(half(), 1.5).unwrap();
    let err = grid.times().iter().zip(&x.values).map(|(&t, v)| (v - 2.0 * e.value(t).unwrap()).abs()).fold(0.0, f64::max);
    assert!(err < 2e-3, "{err}");
}

#[test]
fn residual_of_discrete_equation_is_small() {
    let b = fine_path(3).coarsen(4).unwrap();
    let m = model(Potential::ClippedDoubleWell { a: 1.0, b: 1.0, clip_radius: 2.0 }, 0.3);
    let worst = |passes: usize| {
        let solver = VolterraSolver::new(m, b.grid).unwrap().with_correctors(passes).unwrap();
        let x = solver.solve(&b).unwrap();
        let res = solver.residuals(&x, &b).unwrap();
        (res.iter().fold(0.0f64, |m, r| m.max(r.abs())), x)
    };
    let (one, x1) = worst(1);
    let (two, _) = worst(2);
    let (many, x4) = worst(12);
    assert!(one < 5e-2, "{one}");
    assert!(two < 0.5 * one, "{two} vs {one}");
    assert!(many < 1e-7, "{many}");
    // the extra passes move the path by no more than the residual they remove
    assert!(max_diff(&x1.values, &x4.values) < 10.0 * one);
}

#[test]
fn solves_are_deterministic() {
    let b = fine_path(4).coarsen(4).unwrap();
    let m = ModelSpec::new(
        half(),
        h75(),
        Potential::ClippedDoubleWell { a: 1.0, b: 2.0, clip_radius: 3.0 },
        InitialLaw::Gaussian { mean: 0.0, std: 1.0 },
    )
    .unwrap();
    let a = solve_volterra(&m, &b).unwrap();
    let c = solve_volterra(&m, &b).unwrap();
    assert!(a.values.iter().zip(&c.values).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn picard_zero_force_converges_immediately() {
    let b = fine_path(5).coarsen(16).unwrap();
    let g = sample_G(&b, half()).unwrap();
    let (x, d) = solve_picard(&model(Potential::Zero, 1.0), &g, 1e-12, 10).unwrap();
    assert_eq!(d, vec![0.0]);
    assert_eq!(x.method, SolveMethod::Picard);
}

#[test]
fn picard_agrees_with_volterra() {
    let lm = LinearModel::new(1.0, half(), h75(), 1.0).unwrap();
    let fine = fine_path(6);
    let mut gaps = Vec::new();
    for f in [16, 4] {
        let b = fine.coarsen(f).unwrap();
        let g = sample_G(&b, half()).unwrap();
        let (p, _) = solve_picard(&lm.spec().unwrap(), &g, 1e-12, 100).unwrap();
        let v = solve_volterra(&lm.spec().unwrap(), &b).unwrap();
        let exact = exact_path(&lm, &b).unwrap();
        let (pe, ve) = (max_diff(&p.values, &exact.values), max_diff(&v.values, &exact.values));
        let gap = max_diff(&p.values, &v.values);
        // Picard integrates the rough G directly, so its scheme error dominates
        assert!(gap <= pe + ve + 1e-12);
        gaps.push(gap);
    }
    assert!(gaps[1] < 1e-2 && gaps[1] < 0.6 * gaps[0], "{gaps:?}");
}

#[test]
fn picard_deltas_decay() {
    let b = fine_path(7).coarsen(4).unwrap();
    let g = sample_G(&b, half()).unwrap();
    let (_, d) = solve_picard(&model(Potential::Linear { k: 1.0 }, 1.0), &g, 1e-13, 200).unwrap();
    // successive ratios keep shrinking
    let r = |i: usize| d[i + 1] / d[i];
    assert!(r(20) < r(10) && r(10) < r(5), "{d:?}");
}

#[test]
fn picard_reports_history_on_failure() {
    let b = fine_path(8).coarsen(64).unwrap();
    let g = sample_G(&b, half()).unwrap();
    match solve_picard(&model(Potential::Linear { k: 1.0 }, 1.0), &g, 1e-14, 3) {
        Err(FsdeError::NonConvergence { iterations, deltas, .. }) => {
            assert_eq!(iterations, 3);
            assert_eq!(deltas.len(), 3);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn model_mismatch_is_rejected() {
    let b = fine_path(9).coarsen(64).unwrap();
    let g = sample_G(&b, half()).unwrap();
    let other = ModelSpec::new(FracOrder::new(0.6).unwrap(), h75(), Potential::Zero, InitialLaw::point(0.0)).unwrap();
    assert!(matches!(solve_picard(&other, &g, 1e-8, 5), Err(FsdeError::Contract(_))));
    let wrong_h = ModelSpec::new(half(), HurstParam::model(0.7).unwrap(), Potential::Zero, InitialLaw::point(0.0)).unwrap();
    assert!(solve_volterra(&wrong_h, &b).is_err());
}

#[test]
fn uniqueness_probe_linear_difference_is_relaxation() {
    let b = fine_path(10).coarsen(4).unwrap();
    let zero = uniqueness_probe(&model(Potential::Linear { k: 1.0 }, 0.5), &b, 0.0).unwrap();
    assert!(zero.repeatable);
    assert_eq!(zero.max_divergence, 0.0);
    let eps = 1e-6;
    let p = uniqueness_probe(&model(Potential::Linear { k: 1.0 }, 0.5), &b, eps).unwrap();
    let e = Relaxation::new(half(), 1.0).unwrap();
    for (n, g) in p.growth.iter().enumerate() {
        let want = e.value(b.grid.t(n)).unwrap();
        assert!((g - want).abs() < 2e-3, "node {n}: {g} vs {want}");
    }
}

#[test]
fn uniqueness_probe_double_well_within_gronwall() {
    let b = fine_path(11).coarsen(4).unwrap();
    let p = uniqueness_probe(&model(Potential::ClippedDoubleWell { a: 1.0, b: 1.0, clip_radius: 2.0 }, 0.2), &b, 1e-6).unwrap();
    assert!(p.repeatable);
    assert!(p.bound_ratio <= 1.0 + 1e-2, "{}", p.bound_ratio);
}

#[test]
fn blow_up_is_reported_as_divergence() {
    // a large negative k makes the force push outwards fast
    let grid = TimeGrid::over(50.0, 2000).unwrap();
    let b = FbmPath::from_values(grid, h75(), vec![0.0; grid.len()]).unwrap();
    match solve_volterra(&model(Potential::Linear { k: -40.0 }, 1.0), &b) {
        Err(FsdeError::Divergence { node, value, .. }) => assert!(node > 0 && !value.is_finite()),
        other => panic!("{other:?}"),
    }
}
