//! Potential identification from interior data: extensions, the stability ratio and recovery.

use serde::{Deserialize, Serialize};

use crate::artifacts::{fmt_f64, Csv};
use crate::domain::{check_hypothesis_i, check_symmetric_pattern, Grid, ObservationSet, PiecewiseDomain};
use crate::error::{Error, Result};
use crate::kdv_solver::field::Field;
use crate::kdv_solver::operator::{Coefficient, DiscreteOperator, Drift};
use crate::kdv_solver::sbp::piece_derivative;
use crate::kdv_solver::solve::{solve_nonlinear_with, Stepper};
use crate::linalg::{BandLu, BandMatrix, SparseRows};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialPair {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub m: f64,
    pub symmetric: bool,
}

impl PotentialPair {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>, m: f64) -> Result<Self> {
        if mu.len() != nu.len() {
            return Err(Error::InvalidInput("potentials sampled on different grids".into()));
        }
        for (name, v) in [("μ", &mu), ("ν", &nu)] {
            if let Some(x) = v.iter().find(|x| !(x.abs() <= m)) {
                return Err(Error::AdmissibilityViolated(format!("|{name}| = {} exceeds m = {m}", x.abs())));
            }
        }
        let symmetric = is_symmetric(&mu) && is_symmetric(&nu);
        Ok(PotentialPair { mu, nu, m, symmetric })
    }
}

fn is_symmetric(v: &[f64]) -> bool {
    let n = v.len();
    (0..n).all(|i| (v[i] - v[n - 1 - i]).abs() <= SYMMETRY_TOL * (1.0 + v[i].abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub diff_norm: f64,
    pub obs_norm: f64,
    pub ratio: Option<f64>,
    #[serde(rename = "K")]
    pub k: f64,
    pub r0: f64,
}

impl StabilityReport {
    /// Rows labelled by a caller-chosen id (a perturbation index, say).
    pub fn to_csv(rows: &[(String, StabilityReport)]) -> Csv {
        let mut csv = Csv::new(&["id", "diff_norm", "obs_norm", "ratio", "K", "r0"]);
        for (id, r) in rows {
            csv.push(vec![
                id.clone(),
                fmt_f64(r.diff_norm),
                fmt_f64(r.obs_norm),
                r.ratio.map(fmt_f64).unwrap_or_else(|| "NaN".into()),
                fmt_f64(r.k),
                fmt_f64(r.r0),
            ]);
        }
        csv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionKind {
    Symmetric,
    Antisymmetric,
}

/// Extension to (−T, T): ĝ(−t, x) = g(t, L−x), ǧ(−t, x) = −g(t, L−x).
pub fn extend_field(g: &Field, kind: ExtensionKind) -> Result<Field> {
    if !g.grid.is_symmetric() {
        return Err(Error::AsymmetricGrid);
    }
    let nt = g.nt();
    let nx = g.nx();
    let sign = match kind {
        ExtensionKind::Symmetric => 1.0,
        ExtensionKind::Antisymmetric => -1.0,
    };
    let mut values = Vec::with_capacity(2 * nt + 1);
    for n in 0..nt {
        let src = &g.values[nt - n];
        values.push((0..nx).map(|i| sign * src[nx - 1 - i]).collect());
    }
    values.extend(g.values.iter().cloned());
    let grid = g.grid.with_time(2 * nt, 2.0 * nt as f64 * g.dt);
    Ok(Field::from_samples(&grid, values, g.t0 - nt as f64 * g.dt, g.dt))
}

/// max |g(0, x) + g(0, L−x)|: the jump of the antisymmetric extension at t = 0.
pub fn antisymmetric_jump(g: &Field) -> f64 {
    let v = &g.values[0];
    let n = v.len();
    (0..n).map(|i| (v[i] + v[n - 1 - i]).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct PotentialSolution {
    pub field: Field,
    /// max of |y|, |y_x|, |y_t|, |y_tx| over the grid.
    pub k_bound: f64,
}

pub fn potential_operator(base: &DiscreteOperator, mu: &[f64]) -> DiscreteOperator {
    base.with_drift(Drift { b: Some(Coefficient::Nodal(mu.to_vec())), ..Drift::none() })
}

/// y_t + p y_xxx + μ y_x + y y_x = 0 with the base operator's grid and closures.
pub fn solve_with_potential(base: &DiscreteOperator, mu: &[f64], y0: &[f64]) -> Result<PotentialSolution> {
    if mu.len() != base.nx() {
        return Err(Error::InvalidInput("potential length differs from the grid".into()));
    }
    let op = potential_operator(base, mu);
    let st = Stepper::new(&op, 0.5)?;
    let field = solve_nonlinear_with(&op, &st, y0, None, None)?.field;
    let k_bound = w1inf_bound(&field);
    Ok(PotentialSolution { field, k_bound })
}

fn time_derivative(rows: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let nt = rows.len() - 1;
    let nx = rows[0].len();
    (0..=nt)
        .map(|n| {
            (0..nx)
                .map(|i| {
                    if nt < 2 {
                        return (rows[nt][i] - rows[0][i]) / (nt as f64 * dt);
                    }
                    if n == 0 {
                        (-3.0 * rows[0][i] + 4.0 * rows[1][i] - rows[2][i]) / (2.0 * dt)
                    } else if n == nt {
                        (3.0 * rows[nt][i] - 4.0 * rows[nt - 1][i] + rows[nt - 2][i]) / (2.0 * dt)
                    } else {
                        (rows[n + 1][i] - rows[n - 1][i]) / (2.0 * dt)
                    }
                })
                .collect()
        })
        .collect()
}

/// Coefficients a[n] = [(j, a_nj)] of the time-difference rule used in `time_derivative`.
fn time_stencil(nt: usize, dt: f64) -> Vec<Vec<(usize, f64)>> {
    (0..=nt)
        .map(|n| {
            let c = 1.0 / (2.0 * dt);
            if n == 0 {
                vec![(0, -3.0 * c), (1, 4.0 * c), (2, -c)]
            } else if n == nt {
                vec![(nt, 3.0 * c), (nt - 1, -4.0 * c), (nt - 2, c)]
            } else {
                vec![(n + 1, c), (n - 1, -c)]
            }
        })
        .collect()
}

fn space_derivative(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0f64; u.len()];
    for pc in &grid.pieces {
        let d = piece_derivative(pc.n_intervals(), pc.h, 1);
        let du = d.matvec(&u[pc.start..=pc.end]);
        for (k, &v) in du.iter().enumerate() {
            let i = pc.start + k;
            // interface nodes keep the larger one-sided value
            if v.abs() > out[i].abs() {
                out[i] = v;
            }
        }
    }
    out
}

fn w1inf_bound(f: &Field) -> f64 {
    let grid = &f.grid;
    let yt = time_derivative(&f.values, f.dt);
    let mut k: f64 = 0.0;
    for n in 0..f.values.len() {
        for v in [&f.values[n], &yt[n]] {
            let dx = space_derivative(grid, v);
            k = k.max(v.iter().chain(&dx).map(|x| x.abs()).fold(0.0, f64::max));
        }
    }
    k
}

/// The H¹(0,T; H²_Γ(ω)) norm with ω split along the pieces it meets.
#[derive(Debug, Clone)]
pub struct ObservationNorm {
    /// Per segment: global node indices and the local form W + D1ᵀWD1 + D2ᵀWD2.
    segments: Vec<(Vec<usize>, Vec<Vec<f64>>)>,
    nt: usize,
    dt: f64,
}

impl ObservationNorm {
    pub fn new(grid: &Grid, obs: &ObservationSet) -> Result<Self> {
        let mut segments = Vec::new();
        for pc in &grid.pieces {
            let idx: Vec<usize> = (pc.start..=pc.end).filter(|&i| obs.contains(grid.nodes[i])).collect();
            if idx.is_empty() {
                continue;
            }
            if idx.len() < 6 {
                return Err(Error::DegenerateGrid(format!("ω holds {} nodes of a piece; H² needs at least 6", idx.len())));
            }
            let n = idx.len() - 1;
            let d1 = piece_derivative(n, pc.h, 1).to_dense();
            let d2 = piece_derivative(n, pc.h, 2).to_dense();
            let mut w = vec![pc.h; n + 1];
            w[0] *= 0.5;
            w[n] *= 0.5;
            let mut q = vec![vec![0.0; n + 1]; n + 1];
            for a in 0..=n {
                q[a][a] += w[a];
                for b in 0..=n {
                    let mut s = 0.0;
                    for k in 0..=n {
                        s += w[k] * (d1[k][a] * d1[k][b] + d2[k][a] * d2[k][b]);
                    }
                    q[a][b] += s;
                }
            }
            segments.push((idx, q));
        }
        if segments.is_empty() {
            return Err(Error::DegenerateGrid("ω contains no grid nodes".into()));
        }
        Ok(ObservationNorm { segments, nt: grid.nt, dt: grid.dt() })
    }

    fn apply_q(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for (idx, q) in &self.segments {
            for (a, &ia) in idx.iter().enumerate() {
                out[ia] = idx.iter().enumerate().map(|(b, &ib)| q[a][b] * u[ib]).sum();
            }
        }
        out
    }

    fn q_form(&self, u: &[f64]) -> f64 {
        crate::linalg::dot(u, &self.apply_q(u))
    }

    fn time_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.nt {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    pub fn norm2(&self, e: &[Vec<f64>]) -> f64 {
        let et = time_derivative(e, self.dt);
        (0..=self.nt).map(|n| self.time_weight(n) * (self.q_form(&e[n]) + self.q_form(&et[n]))).sum()
    }

    pub fn norm(&self, e: &[Vec<f64>]) -> f64 {
        self.norm2(e).max(0.0).sqrt()
    }

    /// Gradient of `norm2` with respect to the nodal samples.
    pub fn gradient(&self, e: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let et = time_derivative(e, self.dt);
        let nx = e[0].len();
        let mut g: Vec<Vec<f64>> = (0..=self.nt).map(|n| self.apply_q(&e[n]).iter().map(|v| 2.0 * self.time_weight(n) * v).collect()).collect();
        let stencil = time_stencil(self.nt, self.dt);
        for (n, row) in stencil.iter().enumerate() {
            let h = self.apply_q(&et[n]);
            let w = 2.0 * self.time_weight(n);
            for &(j, a) in row {
                for i in 0..nx {
                    g[j][i] += w * a * h[i];
                }
            }
        }
        g
    }
}

const BUMP_ORDER: i32 = 7;

/// y0 = A·R·u(1 − u²)^7 with u = (ζ(x) − ζ_c)/R on the stretched image of `support`
/// (centre ζ_c, half-width R), zero outside.
///
/// y0 is C⁶ where it meets zero, so with `support` inside one piece every compatibility
/// condition at the interfaces holds. y0' does not vanish for |u| < 1/√15.
pub fn admissible_y0(dom: &PiecewiseDomain, grid: &Grid, amplitude: f64, support: (f64, f64)) -> Vec<f64> {
    let (za, zb) = (dom.stretch(support.0), dom.stretch(support.1));
    let zc = 0.5 * (za + zb);
    let r = 0.5 * (zb - za);
    grid.nodes
        .iter()
        .map(|&x| {
            let u = (dom.stretch(x) - zc) / r;
            if u.abs() >= 1.0 {
                0.0
            } else {
                amplitude * r * u * (1.0 - u * u).powi(BUMP_ORDER)
            }
        })
        .collect()
}

/// min |y0'| over the nodes of `core`.
pub fn derivative_floor(grid: &Grid, y0: &[f64], core: (f64, f64)) -> f64 {
    let d = space_derivative(grid, y0);
    grid.nodes
        .iter()
        .zip(&d)
        .filter(|(&x, _)| x >= core.0 && x <= core.1)
        .map(|(_, v)| v.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Preconditions of the stability experiment; the message names the first failure.
pub fn check_admissibility(dom: &PiecewiseDomain, grid: &Grid, obs: &ObservationSet, y0: &[f64], core: (f64, f64)) -> Result<f64> {
    let hi = check_hypothesis_i(dom, true);
    if !hi.pass {
        return Err(Error::AdmissibilityViolated(format!("Hypothesis I: {}", hi.failures.join("; "))));
    }
    let pat = check_symmetric_pattern(dom);
    if !pat.pass {
        return Err(Error::AdmissibilityViolated(format!("monotonicity pattern: {}", pat.failures.join("; "))));
    }
    if !obs.contains(0.5 * dom.l) {
        return Err(Error::AdmissibilityViolated(format!("ω = {:?} does not contain L/2", obs.omega)));
    }
    if !grid.is_symmetric() {
        return Err(Error::AdmissibilityViolated("grid is not symmetric about L/2".into()));
    }
    let d = space_derivative(grid, y0);
    let n = d.len();
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if let Some(i) = (0..n).find(|&i| (d[i] - d[n - 1 - i]).abs() > 1e-8 * scale) {
        return Err(Error::AdmissibilityViolated(format!("y0' not symmetric at x = {}", grid.nodes[i])));
    }
    let r0 = derivative_floor(grid, y0, core);
    let core_d: Vec<f64> = grid.nodes.iter().zip(&d).filter(|(&x, _)| x >= core.0 && x <= core.1).map(|(_, v)| *v).collect();
    // a sign change between core nodes means y0' vanishes in between
    if core_d.windows(2).any(|w| w[0] * w[1] <= 0.0) {
        return Err(Error::AdmissibilityViolated("y0' changes sign on the core (r0 = 0)".into()));
    }
    if !(r0 > 1e-8 * scale) {
        return Err(Error::AdmissibilityViolated(format!("min |y0'| on the core is {r0} (r0 must be positive)")));
    }
    Ok(r0)
}

pub fn stability_experiment(
    base: &DiscreteOperator,
    dom: &PiecewiseDomain,
    obs: &ObservationSet,
    y0: &[f64],
    pair: &PotentialPair,
    core: (f64, f64),
) -> Result<StabilityReport> {
    let grid = &base.grid;
    let r0 = check_admissibility(dom, grid, obs, y0, core)?;
    if !pair.symmetric {
        return Err(Error::AdmissibilityViolated("potentials are not symmetric about L/2".into()));
    }
    let norm = ObservationNorm::new(grid, obs)?;
    let y = solve_with_potential(base, &pair.mu, y0)?;
    let z = solve_with_potential(base, &pair.nu, y0)?;
    let e: Vec<Vec<f64>> = y.field.values.iter().zip(&z.field.values).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect();
    let obs_norm = norm.norm(&e);
    let d: Vec<f64> = pair.mu.iter().zip(&pair.nu).map(|(a, b)| a - b).collect();
    let diff_norm = base.mass_norm(&d);
    Ok(StabilityReport {
        diff_norm,
        obs_norm,
        ratio: (obs_norm > 0.0).then(|| diff_norm / obs_norm),
        k: y.k_bound.max(z.k_bound),
        r0,
    })
}

/// Symmetrize about L/2, then clamp to [−m, m].
pub fn project_potential(mu: &[f64], m: f64) -> Vec<f64> {
    let n = mu.len();
    (0..n).map(|i| (0.5 * (mu[i] + mu[n - 1 - i])).clamp(-m, m)).collect()
}

/// J(μ) = ‖y[μ] − observed‖²_O + reg‖μ‖²_{L²} and its adjoint gradient.
pub struct RecoveryProblem<'a> {
    pub base: &'a DiscreteOperator,
    pub norm: ObservationNorm,
    pub y0: Vec<f64>,
    pub observed: Vec<Vec<f64>>,
    pub reg: f64,
}

impl<'a> RecoveryProblem<'a> {
    pub fn new(base: &'a DiscreteOperator, obs: &ObservationSet, y0: &[f64], observed: &[Vec<f64>], reg: f64) -> Result<Self> {
        let norm = ObservationNorm::new(&base.grid, obs)?;
        if observed.len() != base.grid.nt + 1 {
            return Err(Error::InvalidInput("observed data not sampled on the time grid".into()));
        }
        Ok(RecoveryProblem { base, norm, y0: y0.to_vec(), observed: observed.to_vec(), reg })
    }

    fn residual(&self, y: &Field) -> Vec<Vec<f64>> {
        y.values.iter().zip(&self.observed).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect()
    }

    pub fn value(&self, mu: &[f64]) -> Result<f64> {
        let y = solve_with_potential(self.base, mu, &self.y0)?;
        Ok(self.norm.norm2(&self.residual(&y.field)) + self.reg * self.base.mass_inner(mu, mu))
    }

    fn forward(&self, mu: &[f64]) -> Result<Forward> {
        let op = potential_operator(self.base, mu);
        let st = Stepper::new(&op, 0.5)?;
        let y = solve_nonlinear_with(&op, &st, &self.y0, None, None)?.field;
        let coeff: Vec<Vec<f64>> = y.values.iter().map(|v| op.project(v)).collect::<Result<_>>()?;
        Ok(Forward { op, theta: st.theta, dt: st.dt, y, coeff })
    }

    pub fn value_and_gradient(&self, mu: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fw = self.forward(mu)?;
        let op = &fw.op;
        let e = self.residual(&fw.y);
        let j = self.norm.norm2(&e) + self.reg * op.mass_inner(mu, mu);
        let dj = self.norm.gradient(&e);
        let mut grad: Vec<f64> = mu.iter().zip(&op.mass).map(|(m, w)| 2.0 * self.reg * w * m).collect();
        let mut lam_next = vec![0.0; op.nm()];
        let mut b_next: Option<SparseRows> = None;
        for m in (1..fw.coeff.len()).rev() {
            let lin = fw.step(m - 1)?;
            let mut rhs = op.et.matvec(&dj[m]);
            for v in rhs.iter_mut() {
                *v = -*v;
            }
            if let Some(b) = &b_next {
                crate::linalg::axpy(&mut rhs, 1.0, &b.matvec_t(&lam_next));
            }
            let lam = lin.a.solve_transpose(&rhs);
            let el = op.expand(&lam);
            for i in 0..grad.len() {
                grad[i] += fw.dt * el[i] * lin.slope[i];
            }
            b_next = Some(lin.b);
            lam_next = lam;
        }
        Ok((j, grad))
    }

    /// Tangent fields ∂y/∂μ along each direction, sharing one factorization per step.
    pub fn sensitivities(&self, mu: &[f64], dirs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
        let fw = self.forward(mu)?;
        let op = &fw.op;
        let e = self.residual(&fw.y);
        let j = self.norm.norm2(&e) + self.reg * op.mass_inner(mu, mu);
        let nm = op.nm();
        let mut dc: Vec<Vec<f64>> = vec![vec![0.0; nm]; dirs.len()];
        let mut out: Vec<Vec<Vec<f64>>> = dirs.iter().map(|_| vec![vec![0.0; op.nx()]]).collect();
        for n in 0..fw.coeff.len() - 1 {
            let lin = fw.step(n)?;
            for (b, d) in dirs.iter().enumerate() {
                let v: Vec<f64> = d.iter().zip(&lin.slope).map(|(p, s)| -fw.dt * p * s).collect();
                let mut rhs = lin.b.matvec(&dc[b]);
                crate::linalg::axpy(&mut rhs, 1.0, &op.et.matvec(&v));
                dc[b] = lin.a.solve(&rhs);
                out[b].push(op.expand(&dc[b]));
            }
        }
        Ok((j, out))
    }
}

struct Forward {
    op: DiscreteOperator,
    theta: f64,
    dt: f64,
    y: Field,
    coeff: Vec<Vec<f64>>,
}

/// Step n → n+1 linearized at y_θ: A δc^{n+1} = B δc^n + Δt ∂_μK c_θ.
struct StepLinearization {
    a: BandLu,
    b: SparseRows,
    /// Σ_k w_k D1_k y_θ at every node; ∂_μ_i of the drift load is −slope_i e_i.
    slope: Vec<f64>,
}

impl Forward {
    fn step(&self, n: usize) -> Result<StepLinearization> {
        let op = &self.op;
        let th = self.theta;
        let cth: Vec<f64> = self.coeff[n + 1].iter().zip(&self.coeff[n]).map(|(a, b)| th * a + (1.0 - th) * b).collect();
        let yth = op.expand(&cth);
        let jn = op.condense_full(&op.nonlinear_jacobian(&yth));
        let ks = op.forward_condensed(n);
        let mut a = op.mass_r.clone();
        a.add_scaled(&ks, -th * self.dt);
        a.add_scaled(&jn, -th * self.dt);
        let mut b = op.mass_r.clone();
        b.add_scaled(&ks, (1.0 - th) * self.dt);
        b.add_scaled(&jn, (1.0 - th) * self.dt);
        let mut slope = vec![0.0; op.nx()];
        for (k, pc) in op.grid.pieces.iter().enumerate() {
            let dy = op.d1[k].matvec(&yth[pc.start..=pc.end]);
            for (loc, dv) in dy.iter().enumerate() {
                slope[pc.start + loc] += op.w[k][loc] * dv;
            }
        }
        Ok(StepLinearization { a: BandLu::factor(&BandMatrix::from_sparse(&a))?, b, slope })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub max_iter: usize,
    /// Stop when the projected step moves μ by less than this (sup norm).
    pub step_tol: f64,
    pub armijo: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions { max_iter: 40, step_tol: 1e-10, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub mu: Vec<f64>,
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// ‖μ̂ − μ*‖_{L²} when μ* is supplied.
    pub error: Option<f64>,
}

/// Indicator pairs e_i + e_{L−x_i}: a basis of the symmetric potentials.
pub fn symmetric_basis(nx: usize) -> Vec<Vec<f64>> {
    (0..nx.div_ceil(2))
        .map(|a| {
            let mut v = vec![0.0; nx];
            v[a] = 1.0;
            v[nx - 1 - a] = 1.0;
            v
        })
        .collect()
}

/// Projected Gauss–Newton with a Levenberg–Marquardt shift and Armijo acceptance.
///
/// Directions live in the symmetric subspace; every trial point is symmetrized and
/// clamped to [−m, m].
pub fn recover_potential(
    prob: &RecoveryProblem,
    m: f64,
    mu_init: &[f64],
    truth: Option<&[f64]>,
    opts: RecoveryOptions,
) -> Result<Recovery> {
    use nalgebra::{DMatrix, DVector};
    let op = prob.base;
    if !op.grid.is_symmetric() {
        return Err(Error::AsymmetricGrid);
    }
    let nx = op.nx();
    let basis = symmetric_basis(nx);
    let nb = basis.len();
    let mut mu = project_potential(mu_init, m);
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut shift = 1e-6;
    for it in 0..opts.max_iter {
        let (j, g) = prob.value_and_gradient(&mu)?;
        if it == 0 {
            objective.push(j);
        }
        let gs: Vec<f64> = basis.iter().map(|p| crate::linalg::dot(p, &g)).collect();
        if j == 0.0 || gs.iter().all(|v| *v == 0.0) {
            break;
        }
        let (_, dy) = prob.sensitivities(&mu, &basis)?;
        let qdy: Vec<Vec<Vec<f64>>> = dy.iter().map(|d| prob.norm.gradient(d)).collect();
        let mut h = DMatrix::zeros(nb, nb);
        for a in 0..nb {
            for b in a..nb {
                let v: f64 = dy[a].iter().zip(&qdy[b]).map(|(p, q)| crate::linalg::dot(p, q)).sum();
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
            h[(a, a)] += 2.0 * prob.reg * crate::linalg::dot(&basis[a], &basis[a].iter().zip(&op.mass).map(|(p, w)| p * w).collect::<Vec<_>>());
        }
        let diag: Vec<f64> = (0..nb).map(|a| h[(a, a)].max(f64::MIN_POSITIVE)).collect();
        let rhs = -DVector::from_column_slice(&gs);
        let mut accepted = None;
        for _ in 0..20 {
            let mut hs = h.clone();
            for a in 0..nb {
                hs[(a, a)] += shift * diag[a];
            }
            let Some(ch) = nalgebra::Cholesky::new(hs) else {
                shift *= 10.0;
                continue;
            };
            let d = ch.solve(&rhs);
            let mut raw = mu.clone();
            for a in 0..nb {
                crate::linalg::axpy(&mut raw, d[a], &basis[a]);
            }
            let trial = project_potential(&raw, m);
            let step: Vec<f64> = trial.iter().zip(&mu).map(|(p, q)| p - q).collect();
            let decrease = crate::linalg::dot(&g, &step);
            if step.iter().all(|v| *v == 0.0) {
                break;
            }
            let jt = prob.value(&trial)?;
            if decrease < 0.0 && jt <= j + opts.armijo * decrease {
                accepted = Some((trial, step, jt));
                break;
            }
            shift *= 10.0;
        }
        let Some((trial, step, jt)) = accepted else {
            if it == 0 && j > 0.0 {
                return Err(Error::OptimizerStalled(format!("no decrease from J = {j:e} at the initial guess")));
            }
            break;
        };
        shift = (shift / 10.0).max(1e-12);
        mu = trial;
        objective.push(jt);
        iterations = it + 1;
        if step.iter().map(|v| v.abs()).fold(0.0, f64::max) <= opts.step_tol {
            break;
        }
    }
    let error = truth.map(|t| {
        let d: Vec<f64> = mu.iter().zip(t).map(|(a, b)| a - b).collect();
        op.mass_norm(&d)
    });
    Ok(Recovery { mu, objective, iterations, error })
}

/// Seeded band-limited noise Σ ξ_ab cos(aπt/T) sin(bπx/L), a < 4, 1 ≤ b ≤ 4, scaled to a
/// sup of η·max|observed|.
pub fn add_noise(observed: &[Vec<f64>], grid: &Grid, eta: f64, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let l = *grid.nodes.last().unwrap();
    let tf = grid.dt() * grid.nt as f64;
    let pi = std::f64::consts::PI;
    let raw: Vec<Vec<f64>> = grid
        .times()
        .iter()
        .map(|&t| {
            grid.nodes
                .iter()
                .map(|&x| (0..16).map(|k| xi[k] * (pi * (k / 4) as f64 * t / tf).cos() * (pi * (k % 4 + 1) as f64 * x / l).sin()).sum())
                .collect()
        })
        .collect();
    let peak = raw.iter().flatten().map(|v: &f64| v.abs()).fold(0.0, f64::max);
    let amp = observed.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { eta * amp / peak } else { 0.0 };
    observed.iter().zip(&raw).map(|(o, r)| o.iter().zip(r).map(|(a, b)| a + scale * b).collect()).collect()
}
