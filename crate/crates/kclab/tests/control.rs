use kclab::control::*;
use kclab::kdv_solver::*;
use kclab::weights::*;
use kclab::{build_domain, build_grid, Grid, ObservationSet, PiecewiseDomain};
use std::f64::consts::PI;

struct Setup {
    grid: Grid,
    obs: ObservationSet,
    op: DiscreteOperator,
    st: Stepper,
    w: CarlemanWeights,
    z0: Vec<f64>,
}

fn demo() -> PiecewiseDomain {
    build_domain(3.0, &[1.0, 2.0], &[3.0, 1.0, 2.0]).unwrap()
}

fn setup(cells: f64, nt: usize) -> Setup {
    let dom = demo();
    let obs = ObservationSet::new(&dom, (1.2, 1.8), (1.3, 1.7)).unwrap();
    let beta = construct_beta(&dom, &obs, 1.5).unwrap();
    let grid = build_grid(&dom, 3.0 / cells, nt, 1.0).unwrap();
    let op = assemble_operator(&grid, &dom, BoundarySide::Forward, Drift::unit()).unwrap();
    let st = Stepper::new(&op, 0.5).unwrap();
    let lam = 1.5f64.powi(2) / beta.norm_inf;
    let w = CarlemanWeights::new(beta, 1e-3, lam, 1.0, WeightMode::OneParameter).unwrap();
    let z0 = grid.nodes.iter().map(|&x| (PI * x / 3.0).sin().powi(2) * (1.0 - x / 3.0)).collect();
    Setup { grid, obs, op, st, w, z0 }
}

fn run(s: &Setup, eps: f64) -> ControlResult {
    hum_control(&s.op, &s.st, &s.obs, &s.z0, None, &s.w, eps, SolverOptions::default()).unwrap()
}

#[test]
fn zero_state_needs_no_control() {
    let s = setup(60.0, 100);
    let zero = vec![0.0; s.grid.nx()];
    let r = hum_control(&s.op, &s.st, &s.obs, &zero, None, &s.w, 1e-6, SolverOptions::default()).unwrap();
    assert_eq!(r.v.max_abs(), 0.0);
    assert_eq!(r.z.max_abs(), 0.0);
    assert_eq!(r.terminal_norm, 0.0);
    let d = decay_check(&r, &s.w, &s.op);
    assert_eq!(d.max_weighted, 0.0);
    assert!(d.components_finite);
}

#[test]
fn control_vanishes_off_omega() {
    let s = setup(60.0, 100);
    let r = run(&s, 1e-4);
    let mut inside: f64 = 0.0;
    for row in &r.v.values {
        for (&x, &v) in s.grid.nodes.iter().zip(row) {
            if s.obs.contains(x) {
                inside = inside.max(v.abs());
            } else {
                assert_eq!(v, 0.0, "v({x}) = {v}");
            }
        }
    }
    assert!(inside > 0.0);
}

#[test]
fn residual_history_is_monotone() {
    let s = setup(60.0, 100);
    let r = run(&s, 1e-4);
    assert!(r.residual_history.windows(2).all(|p| p[1] <= p[0]), "{:?}", r.residual_history);
    let h = &r.residual_history;
    assert!(h.last().unwrap() / h[0] <= 1e-8, "{h:?}");
}

#[test]
fn terminal_norm_shrinks_with_eps() {
    let s = setup(60.0, 100);
    let norms: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|&e| run(&s, e).terminal_norm).collect();
    assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
    assert!(norms[2] <= 1e-2 * s.op.mass_norm(&s.z0), "{norms:?}");
}

#[test]
fn functional_gradient_matches_finite_differences() {
    let s = setup(60.0, 100);
    let p = HumProblem::new(&s.op, &s.st, &s.obs, &s.w, 1e-4).unwrap();
    let dirs = random_directions(s.grid.nx(), s.grid.nt, 3, 6);
    let err = gradient_check(&p, &s.z0, None, &dirs[0], &dirs[1..]).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn variational_identity_holds() {
    let s = setup(60.0, 100);
    let r = run(&s, 1e-4);
    let nt = s.grid.nt;
    for d in random_directions(s.grid.nx(), nt + 1, 9, 10) {
        let mut g = d.g;
        g[nt] = vec![0.0; s.grid.nx()];
        let res = variational_residual(&r, &s.op, &s.st, &s.z0, None, &g).unwrap();
        assert!(res <= 1e-8, "{res:e}");
    }
}

#[test]
fn weighted_state_stays_bounded() {
    let s = setup(60.0, 100);
    let r = run(&s, 1e-6);
    let d = decay_check(&r, &s.w, &s.op);
    assert!(d.components_finite);
    assert!(d.max_weighted.is_finite() && d.max_weighted > 0.0);
    assert!(d.terminal_ratio <= 1e-2, "{}", d.terminal_ratio);
    let wn = &r.weighted_norms;
    assert!(wn.v > 0.0 && wn.v_alt > 0.0 && wn.z > 0.0 && wn.z_x0 > 0.0);
}

#[test]
fn source_without_decay_is_rejected() {
    let s = setup(60.0, 100);
    let h = vec![vec![1.0; s.grid.nx()]; s.grid.nt + 1];
    let e = hum_control(&s.op, &s.st, &s.obs, &s.z0, Some(&h), &s.w, 1e-4, SolverOptions::default()).unwrap_err();
    assert_eq!(e.name(), "InvalidInput");
}

#[test]
fn weights_below_roundoff_are_reported() {
    let s = setup(60.0, 100);
    let w = s.w.with_s(10.0);
    let e = hum_control(&s.op, &s.st, &s.obs, &s.z0, None, &w, 1e-4, SolverOptions::default()).unwrap_err();
    assert_eq!(e.name(), "WeightUnderflow");
}

#[test]
fn trajectory_from_its_own_start_is_immediate() {
    let s = setup(60.0, 100);
    let ybar0: Vec<f64> = s.grid.nodes.iter().map(|&x| 0.5 * (PI * x / 3.0).sin().powi(2)).collect();
    let tr = control_to_trajectory(&s.op, &s.obs, &ybar0, &ybar0, &s.w, 1e-6, 1e-3, 10, SolverOptions::default()).unwrap();
    assert_eq!(tr.outer_iters, 1);
    assert_eq!(tr.control.v.max_abs(), 0.0);
    assert_eq!(tr.trace, vec![0.0]);
}

#[test]
fn small_perturbation_is_steered_back() {
    let s = setup(60.0, 100);
    let ybar0: Vec<f64> = s.grid.nodes.iter().map(|&x| 0.5 * (PI * x / 3.0).sin().powi(2)).collect();
    let pert: Vec<f64> = s.grid.nodes.iter().map(|&x| (2.0 * PI * x / 3.0).sin()).collect();
    let k = 0.01 * s.op.mass_norm(&ybar0) / s.op.mass_norm(&pert);
    let y0: Vec<f64> = ybar0.iter().zip(&pert).map(|(a, b)| a + k * b).collect();
    let tr = control_to_trajectory(&s.op, &s.obs, &ybar0, &y0, &s.w, 1e-6, 1e-3, 10, SolverOptions::default()).unwrap();
    assert!(tr.outer_iters <= 10);
    assert!(*tr.trace.last().unwrap() <= 1e-3);
}
