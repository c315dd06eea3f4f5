//! θ-scheme time stepping: linear, discrete adjoint and nonlinear solves.

use crate::domain::ObservationSet;
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix, SparseRows};

use super::field::Field;
use super::operator::DiscreteOperator;

/// Nodal source samples, one row per time level 0..=nt.
pub type Source<'a> = Option<&'a [Vec<f64>]>;

pub const PICARD_MAX_ITERS: usize = 50;
pub const PICARD_TOL: f64 = 1e-11;

struct StepMats {
    lu: BandLu,
    s: BandMatrix,
    r: BandMatrix,
}

/// Step matrices S_n = M_r − θΔt K_n and R_n = M_r + (1−θ)Δt K_n, factored once.
pub struct Stepper {
    pub theta: f64,
    pub dt: f64,
    pub nt: usize,
    steps: Vec<StepMats>,
    mass_lu: BandLu,
}

fn combine(a: &SparseRows, b: &SparseRows, cb: f64) -> SparseRows {
    let mut out = a.clone();
    out.add_scaled(b, cb);
    out
}

impl Stepper {
    pub fn new(op: &DiscreteOperator, theta: f64) -> Result<Stepper> {
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("θ = {theta} outside [1/2, 1]")));
        }
        let nt = op.grid.nt;
        let dt = op.grid.dt();
        let count = if op.is_time_dependent() { nt } else { 1 };
        let mut steps = Vec::with_capacity(count);
        for n in 0..count {
            let k = op.forward_condensed(n);
            let s = combine(&op.mass_r, &k, -theta * dt);
            let r = combine(&op.mass_r, &k, (1.0 - theta) * dt);
            let s = BandMatrix::from_sparse(&s);
            steps.push(StepMats { lu: BandLu::factor(&s)?, s, r: BandMatrix::from_sparse(&r) });
        }
        let mass_lu = BandLu::factor(&BandMatrix::from_sparse(&op.mass_r))?;
        Ok(Stepper { theta, dt, nt, steps, mass_lu })
    }

    fn at(&self, n: usize) -> &StepMats {
        &self.steps[n.min(self.steps.len() - 1)]
    }

    pub fn solve_s(&self, n: usize, b: &[f64]) -> Vec<f64> {
        self.at(n).lu.solve(b)
    }

    pub fn solve_st(&self, n: usize, b: &[f64]) -> Vec<f64> {
        self.at(n).lu.solve_transpose(b)
    }

    pub fn s_matrix(&self, n: usize) -> &BandMatrix {
        &self.at(n).s
    }

    pub fn r_matrix(&self, n: usize) -> &BandMatrix {
        &self.at(n).r
    }

    pub fn apply_r(&self, n: usize, c: &[f64]) -> Vec<f64> {
        self.at(n).r.matvec(c)
    }

    pub fn apply_rt(&self, n: usize, c: &[f64]) -> Vec<f64> {
        self.at(n).r.matvec_t(c)
    }

    pub fn solve_mass(&self, b: &[f64]) -> Vec<f64> {
        self.mass_lu.solve(b)
    }

    /// Trapezoid weights ω_m in time.
    pub fn omega(&self, m: usize) -> f64 {
        if m == 0 || m == self.nt {
            0.5
        } else {
            1.0
        }
    }
}

fn check_rows(op: &DiscreteOperator, src: Source, what: &str) -> Result<()> {
    if let Some(rows) = src {
        if rows.len() != op.grid.nt + 1 || rows.iter().any(|r| r.len() != op.nx()) {
            return Err(Error::InvalidInput(format!("{what} is not sampled on the space-time grid")));
        }
    }
    Ok(())
}

/// Load Δt(θF^{n+1} + (1−θ)F^n).
fn step_load(op: &DiscreteOperator, st: &Stepper, f: Source, n: usize) -> Option<Vec<f64>> {
    f.map(|rows| {
        let mix: Vec<f64> = rows[n]
            .iter()
            .zip(&rows[n + 1])
            .map(|(a, b)| st.dt * (st.theta * b + (1.0 - st.theta) * a))
            .collect();
        op.load(&mix)
    })
}

/// Master coefficients c^0..c^nt of the linear scheme.
pub fn linear_coefficients(op: &DiscreteOperator, st: &Stepper, c0: Vec<f64>, f: Source) -> Vec<Vec<f64>> {
    let mut cs = Vec::with_capacity(st.nt + 1);
    cs.push(c0);
    for n in 0..st.nt {
        let mut rhs = st.apply_r(n, &cs[n]);
        if let Some(l) = step_load(op, st, f, n) {
            crate::linalg::axpy(&mut rhs, 1.0, &l);
        }
        cs.push(st.solve_s(n, &rhs));
    }
    cs
}

pub fn solve_linear(op: &DiscreteOperator, y0: &[f64], f: Source, theta: f64) -> Result<Field> {
    let st = Stepper::new(op, theta)?;
    solve_linear_with(op, &st, y0, f)
}

pub fn solve_linear_with(op: &DiscreteOperator, st: &Stepper, y0: &[f64], f: Source) -> Result<Field> {
    if y0.len() != op.nx() {
        return Err(Error::InvalidInput("initial data length differs from the grid".into()));
    }
    check_rows(op, f, "source")?;
    let c0 = st.solve_mass(&op.load(y0));
    let cs = linear_coefficients(op, st, c0, f);
    let values = cs.iter().map(|c| op.expand(c)).collect();
    Ok(Field::from_operator(op, values, 0.0, st.dt))
}

/// Output of the discrete adjoint recurrence.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// Rows: φ(0), ψ^1..ψ^{nt−1}, φ_T.
    pub field: Field,
    /// ψ^0..ψ^nt, the multipliers paired with the source samples.
    pub psi: Vec<Vec<f64>>,
    pub phi0: Vec<f64>,
    pub dt: f64,
}

impl AdjointSolution {
    /// Σ_m Δt ω_m ⟨f^m, ψ^m⟩_M.
    pub fn source_pairing(&self, op: &DiscreteOperator, f: &[Vec<f64>]) -> f64 {
        let nt = self.psi.len() - 1;
        (0..=nt)
            .map(|m| {
                let w = if m == 0 || m == nt { 0.5 } else { 1.0 };
                self.dt * w * op.mass_inner(&f[m], &self.psi[m])
            })
            .sum()
    }
}

/// Backward recurrence with the transposed forward step matrices; g is the adjoint source.
pub fn solve_adjoint(op: &DiscreteOperator, phi_t: &[f64], g: Source, theta: f64) -> Result<AdjointSolution> {
    let st = Stepper::new(op, theta)?;
    solve_adjoint_with(op, &st, phi_t, g)
}

/// Raw multipliers λ^1..λ^nt (index 0 and nt+1 are zero) and the φ(0) coefficients.
pub fn adjoint_multipliers(
    op: &DiscreteOperator,
    st: &Stepper,
    terminal_load: Vec<f64>,
    g_load: impl Fn(usize) -> Option<Vec<f64>>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nt = st.nt;
    let nm = op.nm();
    let mut lam = vec![vec![0.0; nm]; nt + 2];
    let add_g = |b: &mut Vec<f64>, m: usize| {
        if let Some(gl) = g_load(m) {
            crate::linalg::axpy(b, st.dt * st.omega(m), &gl);
        }
    };
    let mut b = terminal_load;
    add_g(&mut b, nt);
    lam[nt] = st.solve_st(nt - 1, &b);
    for m in (1..nt).rev() {
        let mut b = st.apply_rt(m, &lam[m + 1]);
        add_g(&mut b, m);
        lam[m] = st.solve_st(m - 1, &b);
    }
    let mut b0 = st.apply_rt(0, &lam[1]);
    add_g(&mut b0, 0);
    let phi0c = st.solve_mass(&b0);
    (lam, phi0c)
}

pub fn solve_adjoint_with(op: &DiscreteOperator, st: &Stepper, phi_t: &[f64], g: Source) -> Result<AdjointSolution> {
    if phi_t.len() != op.nx() {
        return Err(Error::InvalidInput("terminal data length differs from the grid".into()));
    }
    check_rows(op, g, "adjoint source")?;
    let nt = st.nt;
    let (lam, phi0c) = adjoint_multipliers(op, st, op.load(phi_t), |m| g.map(|rows| op.load(&rows[m])));
    let theta = st.theta;
    let psi: Vec<Vec<f64>> = (0..=nt)
        .map(|m| {
            let mix: Vec<f64> = lam[m]
                .iter()
                .zip(&lam[m + 1])
                .map(|(a, b)| (theta * a + (1.0 - theta) * b) / st.omega(m))
                .collect();
            op.expand(&mix)
        })
        .collect();
    let phi0 = op.expand(&phi0c);
    let mut rows = psi.clone();
    rows[0] = phi0.clone();
    rows[nt] = phi_t.to_vec();
    let field = Field::from_operator(op, rows, 0.0, st.dt);
    Ok(AdjointSolution { field, psi, phi0, dt: st.dt })
}

#[derive(Debug, Clone)]
pub struct NonlinearSolution {
    pub field: Field,
    pub iterations: Vec<usize>,
    /// Largest ratio of successive Picard increments over all steps.
    pub max_contraction: f64,
}

/// Adds the localized control 1_ω v to a source.
pub fn with_control(op: &DiscreteOperator, f: Source, control: Option<(&ObservationSet, &[Vec<f64>])>) -> Option<Vec<Vec<f64>>> {
    if f.is_none() && control.is_none() {
        return None;
    }
    let nx = op.nx();
    let mut out = f.map(|r| r.to_vec()).unwrap_or_else(|| vec![vec![0.0; nx]; op.grid.nt + 1]);
    if let Some((obs, v)) = control {
        for (row, vr) in out.iter_mut().zip(v) {
            for i in 0..nx {
                if obs.contains(op.grid.nodes[i]) {
                    row[i] += vr[i];
                }
            }
        }
    }
    Some(out)
}

/// y_t + p y_xxx + (drift) + y y_x = f + 1_ω v, Picard iteration per step.
pub fn solve_nonlinear(
    op: &DiscreteOperator,
    y0: &[f64],
    f: Source,
    control: Option<(&ObservationSet, &[Vec<f64>])>,
    theta: f64,
) -> Result<NonlinearSolution> {
    let st = Stepper::new(op, theta)?;
    solve_nonlinear_with(op, &st, y0, f, control)
}

pub fn solve_nonlinear_with(
    op: &DiscreteOperator,
    st: &Stepper,
    y0: &[f64],
    f: Source,
    control: Option<(&ObservationSet, &[Vec<f64>])>,
) -> Result<NonlinearSolution> {
    if y0.len() != op.nx() {
        return Err(Error::InvalidInput("initial data length differs from the grid".into()));
    }
    check_rows(op, f, "source")?;
    if let Some((_, v)) = control {
        check_rows(op, Some(v), "control")?;
    }
    let total = with_control(op, f, control);
    let src = total.as_deref();
    let theta = st.theta;
    let mut c = st.solve_mass(&op.load(y0));
    let mut values = vec![op.expand(&c)];
    let mut iterations = Vec::with_capacity(st.nt);
    let mut max_contraction: f64 = 0.0;
    for n in 0..st.nt {
        let mut base = st.apply_r(n, &c);
        if let Some(l) = step_load(op, st, src, n) {
            crate::linalg::axpy(&mut base, 1.0, &l);
        }
        let mut guess = c.clone();
        let mut prev_diff = f64::NAN;
        let mut converged = false;
        for it in 1..=PICARD_MAX_ITERS {
            let mix: Vec<f64> = guess.iter().zip(&c).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let ym = op.expand(&mix);
            let mut rhs = base.clone();
            crate::linalg::axpy(&mut rhs, st.dt, &op.et.matvec(&op.nonlinear_load(&ym)));
            let next = st.solve_s(n, &rhs);
            let diff: Vec<f64> = next.iter().zip(&guess).map(|(a, b)| a - b).collect();
            let dn = op.mass_norm(&op.expand(&diff));
            let yn = op.mass_norm(&op.expand(&next));
            if prev_diff.is_finite() && prev_diff > 0.0 && dn > 0.0 {
                max_contraction = max_contraction.max(dn / prev_diff);
            }
            prev_diff = dn;
            guess = next;
            if !dn.is_finite() {
                break;
            }
            if dn <= PICARD_TOL * (1.0 + yn) {
                iterations.push(it);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardDivergence { step: n, iterations: PICARD_MAX_ITERS });
        }
        c = guess;
        values.push(op.expand(&c));
    }
    Ok(NonlinearSolution { field: Field::from_operator(op, values, 0.0, st.dt), iterations, max_contraction })
}
