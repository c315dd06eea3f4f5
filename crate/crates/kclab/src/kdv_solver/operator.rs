//! Assembly of the condensed dispersive operator with optional drift terms.

use crate::domain::{Grid, PiecewiseDomain};
use crate::error::{Error, Result};
use crate::linalg::{dense_solve, BandLu, BandMatrix, SparseRows};

use super::sbp::{grid_order, sbp_first_derivative, SbpOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    /// u(0) = u(L) = u_x(L) = 0.
    Forward,
    /// u(0) = u(L) = u_x(0) = 0.
    Adjoint,
}

/// Space (and optionally time) dependent coefficient sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Nodal(Vec<f64>),
    /// One row per time level 0..=nt.
    Samples(Vec<Vec<f64>>),
}

impl Coefficient {
    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Coefficient::Samples(_))
    }

    /// Sample at time level n and node i.
    pub fn at(&self, n: usize, i: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Nodal(v) => v[i],
            Coefficient::Samples(rows) => rows[n][i],
        }
    }

    /// Value frozen at t_{n+1/2}.
    pub fn midpoint(&self, n: usize, nx: usize) -> Vec<f64> {
        match self {
            Coefficient::Constant(c) => vec![*c; nx],
            Coefficient::Nodal(v) => v.clone(),
            Coefficient::Samples(rows) => rows[n].iter().zip(&rows[n + 1]).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }
}

/// Lower-order terms of b u_x + d u + (c u)_x.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Drift {
    pub b: Option<Coefficient>,
    pub d: Option<Coefficient>,
    pub conservative: Option<Coefficient>,
}

impl Drift {
    pub fn none() -> Self {
        Drift::default()
    }

    /// The unit transport term of the KdV equation.
    pub fn unit() -> Self {
        Drift { b: Some(Coefficient::Constant(1.0)), ..Drift::default() }
    }

    /// Linearization z_x + (ȳ z)_x around a trajectory.
    pub fn linearized(ybar: Vec<Vec<f64>>) -> Self {
        Drift { b: Some(Coefficient::Constant(1.0)), d: None, conservative: Some(Coefficient::Samples(ybar)) }
    }

    fn is_time_dependent(&self) -> bool {
        [&self.b, &self.d, &self.conservative].iter().any(|c| c.as_ref().is_some_and(|c| c.is_time_dependent()))
    }
}

/// Condensed discrete realization of −p∂³ (plus drift) on a piecewise grid.
///
/// Unknowns are nodal values on unique nodes. Boundary values and the two
/// derivative transmission conditions per interface are eliminated exactly;
/// u_x(L) = 0 enters weakly through a boundary penalty, which makes the
/// transposed scheme a consistent discretization of the adjoint problem.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub bc: BoundarySide,
    pub order: SbpOrder,
    pub d1: Vec<SparseRows>,
    pub w: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub dispersive: SparseRows,
    pub constraints: SparseRows,
    /// Rows of `constraints` holding (√p u_x, p u_xx) matching per interface.
    pub tc_rows: Vec<[usize; 2]>,
    pub masters: Vec<usize>,
    pub e: SparseRows,
    pub et: SparseRows,
    pub mass_r: SparseRows,
    pub drift: Drift,
    static_kr: Option<SparseRows>,
}

/// Global sparse restriction of a local piece matrix.
fn embed(local: &SparseRows, start: usize, nx: usize) -> SparseRows {
    let mut g = SparseRows::zeros(nx, nx);
    for (i, r) in local.rows.iter().enumerate() {
        for &(j, v) in r {
            g.add(start + i, start + j, v);
        }
    }
    g
}

pub fn assemble_operator(grid: &Grid, dom: &PiecewiseDomain, bc: BoundarySide, drift: Drift) -> Result<DiscreteOperator> {
    let nx = grid.nx();
    if grid.p != dom.p {
        return Err(Error::InvalidInput("grid and domain coefficients differ".into()));
    }
    for (k, pc) in grid.pieces.iter().enumerate() {
        if pc.n_intervals() < crate::domain::MIN_INTERIOR_NODES + 1 {
            return Err(Error::DegenerateGrid(format!("piece {k} has {} intervals", pc.n_intervals())));
        }
    }
    for c in [&drift.b, &drift.d, &drift.conservative].into_iter().flatten() {
        let ok = match c {
            Coefficient::Constant(_) => true,
            Coefficient::Nodal(v) => v.len() == nx,
            Coefficient::Samples(rows) => rows.len() == grid.nt + 1 && rows.iter().all(|r| r.len() == nx),
        };
        if !ok {
            return Err(Error::InvalidInput("drift coefficient is not sampled on the grid".into()));
        }
    }
    let order = grid_order(grid);
    let npc = grid.pieces.len();
    let mut d1 = Vec::with_capacity(npc);
    let mut w = Vec::with_capacity(npc);
    let mut mass = vec![0.0; nx];
    let mut dispersive = SparseRows::zeros(nx, nx);
    for (k, pc) in grid.pieces.iter().enumerate() {
        let (d, wk) = sbp_first_derivative(pc.n_intervals(), pc.h, order);
        for (i, wi) in wk.iter().enumerate() {
            mass[pc.start + i] += wi;
        }
        let d3 = d.mul(&d).mul(&d).scale_rows(&wk);
        dispersive.add_scaled(&embed(&d3, pc.start, nx), -grid.p[k]);
        d1.push(d);
        w.push(wk);
    }
    // weak u_x(L) = 0
    let last = npc - 1;
    let pl = &grid.pieces[last];
    let gl: Vec<(usize, f64)> = d1[last].rows[pl.n_intervals()].iter().map(|&(j, v)| (pl.start + j, v)).collect();
    for &(i, a) in &gl {
        for &(j, b) in &gl {
            dispersive.add(i, j, -grid.p[last] * a * b);
        }
    }

    // constraint rows
    let mut constraints = SparseRows::zeros(0, nx);
    let push_row = |c: &mut SparseRows, row: Vec<(usize, f64)>| {
        c.rows.push(Vec::new());
        let r = c.rows.len() - 1;
        for (j, v) in row {
            c.add(r, j, v);
        }
        r
    };
    push_row(&mut constraints, vec![(0, 1.0)]);
    push_row(&mut constraints, vec![(nx - 1, 1.0)]);
    let mut tc_rows = Vec::new();
    let mut slaves = vec![0, nx - 1];
    for k in 1..npc {
        let (lp, rp) = (&grid.pieces[k - 1], &grid.pieces[k]);
        let d2l = d1[k - 1].mul(&d1[k - 1]);
        let d2r = d1[k].mul(&d1[k]);
        let (sl, sr) = (grid.p[k - 1].sqrt(), grid.p[k].sqrt());
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        for &(j, v) in &d1[k - 1].rows[lp.n_intervals()] {
            r1.push((lp.start + j, sl * v));
        }
        for &(j, v) in &d1[k].rows[0] {
            r1.push((rp.start + j, -sr * v));
        }
        for &(j, v) in &d2l.rows[lp.n_intervals()] {
            r2.push((lp.start + j, grid.p[k - 1] * v));
        }
        for &(j, v) in &d2r.rows[0] {
            r2.push((rp.start + j, -grid.p[k] * v));
        }
        let a = push_row(&mut constraints, r1);
        let b = push_row(&mut constraints, r2);
        tc_rows.push([a, b]);
        slaves.push(rp.start - 1);
        slaves.push(rp.start + 1);
    }
    let (masters, e) = condense(&constraints, &slaves, nx)?;
    let et = e.transpose();
    let mass_r = et.scale_cols(&mass).mul(&e);
    let mut op = DiscreteOperator {
        grid: grid.clone(),
        bc,
        order,
        d1,
        w,
        mass,
        dispersive,
        constraints,
        tc_rows,
        masters,
        e,
        et,
        mass_r,
        drift,
        static_kr: None,
    };
    if !op.drift.is_time_dependent() {
        op.static_kr = Some(op.condense_full(&op.full_matrix(0)));
    }
    Ok(op)
}

/// Solves the constraint rows for the slave values: u = E u_M.
fn condense(c: &SparseRows, slaves: &[usize], nx: usize) -> Result<(Vec<usize>, SparseRows)> {
    let ns = slaves.len();
    let mut is_slave = vec![usize::MAX; nx];
    for (s, &i) in slaves.iter().enumerate() {
        if is_slave[i] != usize::MAX {
            return Err(Error::DegenerateGrid("slave nodes overlap; pieces too short".into()));
        }
        is_slave[i] = s;
    }
    let masters: Vec<usize> = (0..nx).filter(|&i| is_slave[i] == usize::MAX).collect();
    let mut mcol = vec![usize::MAX; nx];
    for (m, &i) in masters.iter().enumerate() {
        mcol[i] = m;
    }
    // masters touched by constraints
    let mut touched: Vec<usize> = c.rows.iter().flatten().map(|e| e.0).filter(|&j| mcol[j] != usize::MAX).collect();
    touched.sort_unstable();
    touched.dedup();
    let mut cs = vec![vec![0.0; ns]; c.nrows()];
    let mut cm = vec![vec![0.0; touched.len()]; c.nrows()];
    for (r, row) in c.rows.iter().enumerate() {
        for &(j, v) in row {
            if is_slave[j] != usize::MAX {
                cs[r][is_slave[j]] += v;
            } else {
                let t = touched.binary_search(&j).unwrap();
                cm[r][t] -= v;
            }
        }
    }
    let sol = dense_solve(cs, cm)?;
    let mut e = SparseRows::zeros(nx, masters.len());
    for i in 0..nx {
        if mcol[i] != usize::MAX {
            e.add(i, mcol[i], 1.0);
        } else {
            for (t, &j) in touched.iter().enumerate() {
                let v = sol[is_slave[i]][t];
                if v.abs() > 1e-300 {
                    e.add(i, mcol[j], v);
                }
            }
        }
    }
    Ok((masters, e))
}

impl DiscreteOperator {
    pub fn nx(&self) -> usize {
        self.grid.nx()
    }

    pub fn nm(&self) -> usize {
        self.masters.len()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.static_kr.is_none()
    }

    /// Same assembly with another drift.
    pub fn with_drift(&self, drift: Drift) -> DiscreteOperator {
        let mut op = DiscreteOperator { drift, static_kr: None, ..self.clone() };
        if !op.drift.is_time_dependent() {
            op.static_kr = Some(op.condense_full(&op.full_matrix(0)));
        }
        op
    }

    pub fn adjoint(&self) -> DiscreteOperator {
        DiscreteOperator {
            bc: match self.bc {
                BoundarySide::Forward => BoundarySide::Adjoint,
                BoundarySide::Adjoint => BoundarySide::Forward,
            },
            ..self.clone()
        }
    }

    /// Drift-term matrix −Σ R_kᵀ W_k diag(b) D1_k R_k.
    pub fn advection_matrix(&self, b: &[f64]) -> SparseRows {
        let nx = self.nx();
        let mut out = SparseRows::zeros(nx, nx);
        for (k, pc) in self.grid.pieces.iter().enumerate() {
            let wb: Vec<f64> = (0..=pc.n_intervals()).map(|i| self.w[k][i] * b[pc.start + i]).collect();
            out.add_scaled(&embed(&self.d1[k].scale_rows(&wb), pc.start, nx), -1.0);
        }
        out
    }

    /// Conservative term −Σ R_kᵀ W_k D1_k diag(c) R_k.
    pub fn conservative_matrix(&self, c: &[f64]) -> SparseRows {
        let nx = self.nx();
        let mut out = SparseRows::zeros(nx, nx);
        for (k, pc) in self.grid.pieces.iter().enumerate() {
            let cl: Vec<f64> = (0..=pc.n_intervals()).map(|i| c[pc.start + i]).collect();
            let m = self.d1[k].scale_cols(&cl).scale_rows(&self.w[k]);
            out.add_scaled(&embed(&m, pc.start, nx), -1.0);
        }
        out
    }

    /// Forward full-node matrix frozen at t_{n+1/2}.
    pub fn full_matrix(&self, n: usize) -> SparseRows {
        let nx = self.nx();
        let mut k = self.dispersive.clone();
        if let Some(b) = &self.drift.b {
            k.add_scaled(&self.advection_matrix(&b.midpoint(n, nx)), 1.0);
        }
        if let Some(c) = &self.drift.conservative {
            k.add_scaled(&self.conservative_matrix(&c.midpoint(n, nx)), 1.0);
        }
        if let Some(d) = &self.drift.d {
            let dv = d.midpoint(n, nx);
            for i in 0..nx {
                k.add(i, i, -self.mass[i] * dv[i]);
            }
        }
        k
    }

    pub fn condense_full(&self, k: &SparseRows) -> SparseRows {
        self.et.mul(&k.mul(&self.e))
    }

    /// Forward condensed matrix K_r(t_{n+1/2}).
    pub fn forward_condensed(&self, n: usize) -> SparseRows {
        match &self.static_kr {
            Some(k) => k.clone(),
            None => self.condense_full(&self.full_matrix(n)),
        }
    }

    /// Condensed matrix in this operator's orientation (transpose for the adjoint side).
    pub fn matrix(&self, n: usize) -> SparseRows {
        let k = self.forward_condensed(n);
        match self.bc {
            BoundarySide::Forward => k,
            BoundarySide::Adjoint => k.transpose(),
        }
    }

    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        self.e.matvec(c)
    }

    /// Eᵀ M f.
    pub fn load(&self, f: &[f64]) -> Vec<f64> {
        let mf: Vec<f64> = f.iter().zip(&self.mass).map(|(a, b)| a * b).collect();
        self.et.matvec(&mf)
    }

    /// M-orthogonal projection of nodal data onto the constrained space (coefficients).
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let lu = BandLu::factor(&BandMatrix::from_sparse(&self.mass_r))?;
        Ok(lu.solve(&self.load(y)))
    }

    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.mass).map(|((x, y), m)| x * y * m).sum()
    }

    pub fn mass_norm(&self, a: &[f64]) -> f64 {
        self.mass_inner(a, a).sqrt()
    }

    /// Local SBP derivative of a global nodal vector on piece k.
    pub fn piece_d1(&self, k: usize, u: &[f64]) -> Vec<f64> {
        let pc = &self.grid.pieces[k];
        self.d1[k].matvec(&u[pc.start..=pc.end])
    }

    /// (u_x, u_xx) at both ends of piece k from the SBP end rows.
    pub fn end_derivatives(&self, k: usize, u: &[f64]) -> ([f64; 2], [f64; 2]) {
        let du = self.piece_d1(k, u);
        let d2 = self.d1[k].matvec(&du);
        let n = du.len() - 1;
        ([du[0], du[n]], [d2[0], d2[n]])
    }

    /// SBP estimate of u_x at x = 0 and x = L.
    pub fn boundary_slopes(&self, u: &[f64]) -> (f64, f64) {
        let np = self.grid.pieces.len();
        (self.end_derivatives(0, u).0[0], self.end_derivatives(np - 1, u).0[1])
    }

    /// Nonlinear flux −(1/3)(D1(y²) + y D1 y) tested against W, on all nodes.
    pub fn nonlinear_load(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nx()];
        for (k, pc) in self.grid.pieces.iter().enumerate() {
            let yl = &y[pc.start..=pc.end];
            let y2: Vec<f64> = yl.iter().map(|v| v * v).collect();
            let a = self.d1[k].matvec(&y2);
            let b = self.d1[k].matvec(yl);
            for i in 0..yl.len() {
                out[pc.start + i] -= self.w[k][i] * (a[i] + yl[i] * b[i]) / 3.0;
            }
        }
        out
    }

    /// Jacobian of `nonlinear_load` at y.
    pub fn nonlinear_jacobian(&self, y: &[f64]) -> SparseRows {
        let nx = self.nx();
        let mut jac = SparseRows::zeros(nx, nx);
        for (k, pc) in self.grid.pieces.iter().enumerate() {
            let yl: Vec<f64> = y[pc.start..=pc.end].to_vec();
            let dy = self.d1[k].matvec(&yl);
            let two_y: Vec<f64> = yl.iter().map(|v| 2.0 * v).collect();
            let mut m = self.d1[k].scale_cols(&two_y);
            m.add_scaled(&self.d1[k].scale_rows(&yl), 1.0);
            for (i, d) in dy.iter().enumerate() {
                m.add(i, i, *d);
            }
            let m = m.scale_rows(&self.w[k]);
            jac.add_scaled(&embed(&m, pc.start, nx), -1.0 / 3.0);
        }
        jac
    }
}
