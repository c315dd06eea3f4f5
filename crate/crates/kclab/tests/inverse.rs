use kclab::inverse::*;
use kclab::kdv_solver::*;
use kclab::{build_domain, build_grid, Error, Grid, ObservationSet, PiecewiseDomain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const L: f64 = 6.0;
const CORE: (f64, f64) = (2.65, 3.35);

fn dom() -> PiecewiseDomain {
    build_domain(L, &[1.0, 5.0], &[2.0, 1.0, 2.0]).unwrap()
}

fn obs(d: &PiecewiseDomain) -> ObservationSet {
    ObservationSet::new(d, (2.7, 3.3), (2.75, 3.25)).unwrap()
}

fn cosine(grid: &Grid, a: f64, k: f64) -> Vec<f64> {
    grid.nodes.iter().map(|&x| a * (2.0 * PI * k * x / L).cos()).collect()
}

fn setup(cells: f64, nt: usize, t: f64) -> (PiecewiseDomain, Grid, DiscreteOperator, Vec<f64>) {
    let d = dom();
    let grid = build_grid(&d, L / cells, nt, t).unwrap();
    let base = assemble_operator(&grid, &d, BoundarySide::Forward, Drift::none()).unwrap();
    let y0 = admissible_y0(&d, &grid, 0.5, (1.0, 5.0));
    (d, grid, base, y0)
}

fn random_field(grid: &Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..=grid.nt).map(|_| (0..grid.nx()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    Field::from_samples(grid, v, 0.0, grid.dt())
}

#[test]
fn extension_restricts_to_input() {
    let d = dom();
    let grid = build_grid(&d, 0.1, 10, 1.0).unwrap();
    let g = random_field(&grid, 1);
    for kind in [ExtensionKind::Symmetric, ExtensionKind::Antisymmetric] {
        let e = extend_field(&g, kind).unwrap();
        assert_eq!(e.nt(), 2 * grid.nt);
        assert_eq!(&e.values[grid.nt..], &g.values[..]);
        assert!((e.t0 + 1.0).abs() < 1e-15);
    }
}

#[test]
fn extension_parity() {
    let d = dom();
    let grid = build_grid(&d, 0.1, 10, 1.0).unwrap();
    let g = random_field(&grid, 2);
    let nx = grid.nx();
    let nt2 = 2 * grid.nt;
    for (kind, sign) in [(ExtensionKind::Symmetric, 1.0), (ExtensionKind::Antisymmetric, -1.0)] {
        let e = extend_field(&g, kind).unwrap();
        for n in 0..=nt2 {
            if n == grid.nt {
                continue;
            }
            for i in 0..nx {
                assert_eq!(e.values[n][i], sign * e.values[nt2 - n][nx - 1 - i]);
            }
        }
    }
}

#[test]
fn extension_sample_lands_at_mirror() {
    let d = dom();
    let grid = build_grid(&d, 0.1, 10, 1.0).unwrap();
    let g = random_field(&grid, 3);
    let e = extend_field(&g, ExtensionKind::Symmetric).unwrap();
    // t = 0.3 is level 3; −0.3 is level 7 of the extension
    assert!((e.time(7) + 0.3).abs() < 1e-12);
    let i0 = 5;
    assert_eq!(e.values[7][grid.nx() - 1 - i0], g.values[3][i0]);
}

#[test]
fn symmetric_constant_field_extends_to_constant() {
    let d = dom();
    let grid = build_grid(&d, 0.1, 8, 1.0).unwrap();
    let prof: Vec<f64> = grid.nodes.iter().map(|&x| ((x - 3.0) * 0.7).cos()).collect();
    let g = Field::from_samples(&grid, vec![prof.clone(); 9], 0.0, grid.dt());
    let e = extend_field(&g, ExtensionKind::Symmetric).unwrap();
    for row in &e.values {
        for (a, b) in row.iter().zip(&prof) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn antisymmetric_extension_trace_jump() {
    let d = dom();
    let grid = build_grid(&d, 0.1, 8, 1.0).unwrap();
    let odd: Vec<f64> = grid.nodes.iter().map(|&x| (x - 3.0).powi(3)).collect();
    let g = Field::from_samples(&grid, vec![odd; 9], 0.0, grid.dt());
    assert!(antisymmetric_jump(&g) <= 1e-12);
    let e = extend_field(&g, ExtensionKind::Antisymmetric).unwrap();
    let nt = grid.nt;
    let step: f64 = e.values[nt - 1].iter().zip(&e.values[nt]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(step <= 1e-12);

    let even: Vec<f64> = grid.nodes.iter().map(|&x| 1.0 + (x - 3.0).powi(2)).collect();
    let g = Field::from_samples(&grid, vec![even; 9], 0.0, grid.dt());
    assert!((antisymmetric_jump(&g) - 2.0 * 10.0).abs() < 1e-9);
}

#[test]
fn extension_needs_symmetric_grid() {
    let d = build_domain(3.0, &[1.0, 2.2], &[3.0, 1.0, 2.0]).unwrap();
    let grid = build_grid(&d, 0.15, 4, 1.0).unwrap();
    let g = Field::zeros(&grid);
    assert!(matches!(extend_field(&g, ExtensionKind::Symmetric), Err(Error::AsymmetricGrid)));
}

#[test]
fn zero_potential_matches_disabled_drift() {
    let (_, grid, base, y0) = setup(60.0, 50, 0.5);
    let a = solve_with_potential(&base, &vec![0.0; grid.nx()], &y0).unwrap();
    let b = solve_nonlinear(&base, &y0, None, None, 0.5).unwrap();
    assert_eq!(a.field.values, b.field.values);
    assert!(a.k_bound > 0.0 && a.k_bound.is_finite());
}

#[test]
fn unit_potential_matches_unit_drift() {
    let (d, grid, base, y0) = setup(60.0, 50, 0.5);
    let a = solve_with_potential(&base, &vec![1.0; grid.nx()], &y0).unwrap();
    let unit = assemble_operator(&grid, &d, BoundarySide::Forward, Drift::unit()).unwrap();
    let b = solve_nonlinear(&unit, &y0, None, None, 0.5).unwrap();
    assert_eq!(a.field.values, b.field.values);
}

#[test]
fn initial_time_derivative_is_symmetric() {
    // v0 = (y − z)_t(0) = σ y0' with σ = ν − μ
    let (_, grid, base, y0) = setup(120.0, 20, 0.002);
    let mu = cosine(&grid, 0.2, 1.0);
    let nu: Vec<f64> = mu.iter().zip(cosine(&grid, 0.05, 2.0)).map(|(a, b)| a + b).collect();
    let y = solve_with_potential(&base, &mu, &y0).unwrap().field;
    let z = solve_with_potential(&base, &nu, &y0).unwrap().field;
    let dt = grid.dt();
    let nx = grid.nx();
    let v0: Vec<f64> = (0..nx).map(|i| (y.values[1][i] - z.values[1][i]) / dt).collect();
    // centred differences on the uniform middle piece, where y0 lives
    let h = grid.nodes[nx / 2 + 1] - grid.nodes[nx / 2];
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 1..nx - 1 {
        let x = grid.nodes[i];
        if x < 1.2 || x > 4.8 {
            continue;
        }
        let dy0 = (y0[i + 1] - y0[i - 1]) / (2.0 * h);
        let want = (nu[i] - mu[i]) * dy0;
        worst = worst.max((v0[i] - want).abs());
        scale = scale.max(want.abs());
        let j = nx - 1 - i;
        let dy0j = (y0[j + 1] - y0[j - 1]) / (2.0 * h);
        assert!((want - (nu[j] - mu[j]) * dy0j).abs() <= 1e-12 * (1.0 + want.abs()));
    }
    assert!(worst <= 0.05 * scale, "{worst:e} vs {scale:e}");
    for i in 0..nx {
        assert!((v0[i] - v0[nx - 1 - i]).abs() <= 0.05 * scale);
    }
}

#[test]
fn identical_potentials_give_zero_observation() {
    let (d, grid, base, y0) = setup(80.0, 60, 0.5);
    let mu = cosine(&grid, 0.2, 1.0);
    let pair = PotentialPair::new(mu.clone(), mu, 1.0).unwrap();
    assert!(pair.symmetric);
    let rep = stability_experiment(&base, &d, &obs(&d), &y0, &pair, CORE).unwrap();
    assert_eq!(rep.diff_norm, 0.0);
    assert_eq!(rep.obs_norm, 0.0);
    assert!(rep.ratio.is_none());
    assert!(rep.r0 > 0.0 && rep.k > 0.0);
}

#[test]
fn perturbation_ratio_is_finite() {
    let (d, grid, base, y0) = setup(80.0, 100, 1.0);
    let mu = cosine(&grid, 0.2, 1.0);
    let nu: Vec<f64> = mu.iter().zip(cosine(&grid, 0.01, 1.0)).map(|(a, b)| a + b).collect();
    let pair = PotentialPair::new(mu, nu, 1.0).unwrap();
    let rep = stability_experiment(&base, &d, &obs(&d), &y0, &pair, CORE).unwrap();
    let r = rep.ratio.unwrap();
    assert!(r.is_finite() && r > 0.0, "{rep:?}");
}

#[test]
fn vanishing_derivative_is_rejected() {
    let (d, grid, _, y0) = setup(80.0, 10, 1.0);
    // y0' has zeros at 3 ± 2/√15 ≈ 3 ± 0.516
    let err = check_admissibility(&d, &grid, &obs(&d), &y0, (1.5, 4.5)).unwrap_err();
    assert_eq!(err.name(), "AdmissibilityViolated");
    let r0 = check_admissibility(&d, &grid, &obs(&d), &y0, CORE).unwrap();
    assert!(r0 > 0.1);
}

#[test]
fn admissibility_gates() {
    let (d, grid, _, y0) = setup(80.0, 10, 1.0);
    let o = obs(&d);
    // even y0 has an odd derivative
    let even: Vec<f64> = y0.iter().enumerate().map(|(i, v)| v + y0[grid.nx() - 1 - i]).collect();
    assert!(check_admissibility(&d, &grid, &o, &even, CORE).is_err());
    let off = ObservationSet::new(&d, (3.5, 4.0), (3.6, 3.9)).unwrap();
    assert!(check_admissibility(&d, &grid, &off, &y0, CORE).is_err());
    let bad = build_domain(L, &[1.0, 5.0], &[2.0, 3.0, 2.0]).unwrap();
    let og = ObservationSet::new(&bad, (2.7, 3.3), (2.75, 3.25)).unwrap();
    assert!(check_admissibility(&bad, &grid, &og, &y0, CORE).is_err());
}

#[test]
fn potential_bounds_and_symmetry_flag() {
    assert!(PotentialPair::new(vec![0.0, 2.0, 0.0], vec![0.0; 3], 1.0).is_err());
    assert!(!PotentialPair::new(vec![0.0, 0.5, 0.1], vec![0.0; 3], 1.0).unwrap().symmetric);
}

#[test]
fn projection_is_symmetric_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu: Vec<f64> = (0..41).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let p = project_potential(&mu, 1.0);
    for i in 0..41 {
        assert_eq!(p[i], p[40 - i]);
        assert!(p[i].abs() <= 1.0);
    }
    assert_eq!(project_potential(&p, 1.0), p);
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    let (_, grid, base, y0) = setup(80.0, 100, 1.0);
    let truth = cosine(&grid, 0.2, 1.0);
    let observed = solve_with_potential(&base, &truth, &y0).unwrap().field.values;
    let prob = RecoveryProblem::new(&base, &obs(&dom()), &y0, &observed, 1e-4).unwrap();
    let mu = cosine(&grid, 0.05, 2.0);
    let (_, g) = prob.value_and_gradient(&mu).unwrap();
    let dir: Vec<f64> = grid.nodes.iter().map(|&x| (1.3 * x).cos() + 0.2).collect();
    let h = 1e-5;
    let shift = |s: f64| -> Vec<f64> { mu.iter().zip(&dir).map(|(m, d)| m + s * d).collect() };
    let fd = (prob.value(&shift(h)).unwrap() - prob.value(&shift(-h)).unwrap()) / (2.0 * h);
    let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
    assert!((fd - an).abs() <= 1e-5 * an.abs(), "fd {fd:e} adjoint {an:e}");
}

#[test]
fn tangent_sensitivities_match_finite_differences() {
    let (_, grid, base, y0) = setup(80.0, 100, 1.0);
    let zero = vec![0.0; grid.nx()];
    let prob = RecoveryProblem::new(&base, &obs(&dom()), &y0, &vec![zero.clone(); grid.nt + 1], 0.0).unwrap();
    let dir: Vec<f64> = grid.nodes.iter().map(|&x| (1.3 * x).cos()).collect();
    let (_, dy) = prob.sensitivities(&zero, &[dir.clone()]).unwrap();
    let h = 1e-6;
    let yp = solve_with_potential(&base, &dir.iter().map(|d| h * d).collect::<Vec<_>>(), &y0).unwrap().field.values;
    let ym = solve_with_potential(&base, &dir.iter().map(|d| -h * d).collect::<Vec<_>>(), &y0).unwrap().field.values;
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for n in 0..=grid.nt {
        for i in 0..grid.nx() {
            let fd = (yp[n][i] - ym[n][i]) / (2.0 * h);
            err = err.max((fd - dy[0][n][i]).abs());
            scale = scale.max(fd.abs());
        }
    }
    assert!(err <= 1e-6 * scale, "{err:e} of {scale:e}");
}

#[test]
fn zero_truth_recovers_zero() {
    let (_, grid, base, y0) = setup(120.0, 400, 1.0);
    let zero = vec![0.0; grid.nx()];
    let observed = solve_with_potential(&base, &zero, &y0).unwrap().field.values;
    let prob = RecoveryProblem::new(&base, &obs(&dom()), &y0, &observed, 1e-8).unwrap();
    let rec = recover_potential(&prob, 1.0, &zero, Some(&zero), RecoveryOptions::default()).unwrap();
    assert!(base.mass_norm(&rec.mu) <= 1e-4, "{:e}", base.mass_norm(&rec.mu));
}

#[test]
fn core_is_recovered_from_nonzero_start() {
    let (_, grid, base, y0) = setup(80.0, 200, 1.0);
    let truth = cosine(&grid, 0.2, 1.0);
    let observed = solve_with_potential(&base, &truth, &y0).unwrap().field.values;
    let prob = RecoveryProblem::new(&base, &obs(&dom()), &y0, &observed, 1e-8).unwrap();
    let init = vec![0.1; grid.nx()];
    let rec = recover_potential(&prob, 1.0, &init, Some(&truth), RecoveryOptions::default()).unwrap();
    let core: f64 = (0..grid.nx())
        .filter(|&i| grid.nodes[i] >= CORE.0 && grid.nodes[i] <= CORE.1)
        .map(|i| base.mass[i] * (rec.mu[i] - truth[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(core <= 1e-3, "core error {core:e}");
    assert!(rec.objective.last().unwrap() < &rec.objective[0]);
    for i in 0..grid.nx() {
        assert_eq!(rec.mu[i], rec.mu[grid.nx() - 1 - i]);
    }
}

#[test]
fn error_decreases_along_regularization_sweep() {
    let (_, grid, base, y0) = setup(80.0, 200, 1.0);
    let truth = cosine(&grid, 0.2, 1.0);
    let observed = solve_with_potential(&base, &truth, &y0).unwrap().field.values;
    let zero = vec![0.0; grid.nx()];
    let errs: Vec<f64> = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&reg| {
            let prob = RecoveryProblem::new(&base, &obs(&dom()), &y0, &observed, reg).unwrap();
            recover_potential(&prob, 1.0, &zero, Some(&truth), RecoveryOptions::default()).unwrap().error.unwrap()
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn noise_is_seeded_and_scaled() {
    let (_, grid, base, y0) = setup(60.0, 50, 0.5);
    let clean = solve_with_potential(&base, &vec![0.0; grid.nx()], &y0).unwrap().field.values;
    let a = add_noise(&clean, &grid, 1e-3, 4);
    assert_eq!(a, add_noise(&clean, &grid, 1e-3, 4));
    assert_ne!(a, add_noise(&clean, &grid, 1e-3, 5));
    let peak = clean.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let dev = a.iter().flatten().zip(clean.iter().flatten()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!((dev - 1e-3 * peak).abs() <= 1e-12 * peak);
    assert_eq!(add_noise(&clean, &grid, 0.0, 4), clean);
}
