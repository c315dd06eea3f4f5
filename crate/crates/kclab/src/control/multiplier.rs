//! The HUM functional written in the multipliers λ_1..λ_nt of the discrete adjoint.
//!
//! With u_m = θλ_m + (1−θ)λ_{m+1} and B_m = S_{m−1}ᵀλ_m − R_mᵀλ_{m+1}, the functional is
//! ½Σ a_m B_mᵀM_r⁻¹B_m + ½Σ r_m u_mᵀWu_m − ⟨ℓ, λ⟩, block tridiagonal in time.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kdv_solver::operator::DiscreteOperator;
use crate::kdv_solver::solve::Stepper;
use crate::linalg::{axpy, BandMatrix, SparseRows};

pub(crate) struct MultiplierSystem<'a> {
    st: &'a Stepper,
    pub nm: usize,
    pub nt: usize,
    theta: f64,
    /// a_m for m = 1..=nt (a[0] unused).
    a: Vec<f64>,
    /// r_m for m = 0..=nt.
    r: Vec<f64>,
    /// M_r⁻¹.
    pub k: DMatrix<f64>,
    w: SparseRows,
}

fn dense_times_band_t(x: &DMatrix<f64>, b: &BandMatrix) -> DMatrix<f64> {
    // X Bᵀ
    let n = b.n;
    let mut out = DMatrix::zeros(x.nrows(), n);
    for j in 0..n {
        for k in b.col_range(j) {
            let v = b.get(j, k);
            for i in 0..x.nrows() {
                out[(i, j)] += x[(i, k)] * v;
            }
        }
    }
    out
}

fn band_times_dense(b: &BandMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.n, x.ncols());
    for i in 0..b.n {
        for k in b.col_range(i) {
            let v = b.get(i, k);
            for j in 0..x.ncols() {
                out[(i, j)] += v * x[(k, j)];
            }
        }
    }
    out
}

fn sparse_dense(s: &SparseRows, n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in s.rows.iter().enumerate() {
        for &(j, v) in row {
            d[(i, j)] += v;
        }
    }
    d
}

impl<'a> MultiplierSystem<'a> {
    pub fn new(op: &DiscreteOperator, st: &'a Stepper, mask: &[bool], c: &[f64], rho: &[f64], eps: f64) -> Self {
        let nm = op.nm();
        let nt = st.nt;
        let mut k = DMatrix::zeros(nm, nm);
        let mut unit = vec![0.0; nm];
        for j in 0..nm {
            unit[j] = 1.0;
            let col = st.solve_mass(&unit);
            unit[j] = 0.0;
            for i in 0..nm {
                k[(i, j)] = col[i];
            }
        }
        k = (&k + k.transpose()) * 0.5;
        let mm: Vec<f64> = op.mass.iter().zip(mask).map(|(m, &inside)| if inside { *m } else { 0.0 }).collect();
        let w = op.et.scale_cols(&mm).mul(&op.e);
        let mut a = vec![0.0; nt + 1];
        for m in 1..nt {
            a[m] = c[m] / (st.dt * st.omega(m));
        }
        a[nt] = eps;
        let r = (0..=nt).map(|m| st.dt * rho[m] / st.omega(m)).collect();
        MultiplierSystem { st, nm, nt, theta: st.theta, a, r, k, w }
    }

    fn kmul(&self, b: &[f64]) -> Vec<f64> {
        (&self.k * DVector::from_column_slice(b)).as_slice().to_vec()
    }

    /// B_m for m = 1..=nt, given λ (lam[j − 1] = λ_j).
    pub fn b_vectors(&self, lam: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nt = self.nt;
        let mut out = vec![vec![]; nt + 1];
        for m in 1..=nt {
            let mut b = self.st.s_matrix(m - 1).matvec_t(&lam[m - 1]);
            if m < nt {
                axpy(&mut b, -1.0, &self.st.r_matrix(m).matvec_t(&lam[m]));
            }
            out[m] = b;
        }
        out
    }

    /// u_m = θλ_m + (1−θ)λ_{m+1} for m = 0..=nt.
    pub fn u_vectors(&self, lam: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nt = self.nt;
        (0..=nt)
            .map(|m| {
                let mut u = vec![0.0; self.nm];
                if m >= 1 {
                    axpy(&mut u, self.theta, &lam[m - 1]);
                }
                if m < nt {
                    axpy(&mut u, 1.0 - self.theta, &lam[m]);
                }
                u
            })
            .collect()
    }

    pub fn apply(&self, lam: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nt = self.nt;
        let b = self.b_vectors(lam);
        let u = self.u_vectors(lam);
        let y: Vec<Vec<f64>> = (0..=nt)
            .map(|m| if m == 0 { vec![0.0; self.nm] } else { self.kmul(&b[m]).iter().map(|v| self.a[m] * v).collect() })
            .collect();
        let q: Vec<Vec<f64>> = (0..=nt).map(|m| self.w.matvec(&u[m]).iter().map(|v| self.r[m] * v).collect()).collect();
        (1..=nt)
            .map(|j| {
                let mut out = self.st.s_matrix(j - 1).matvec(&y[j]);
                if j >= 2 {
                    axpy(&mut out, -1.0, &self.st.r_matrix(j - 1).matvec(&y[j - 1]));
                }
                axpy(&mut out, self.theta, &q[j]);
                axpy(&mut out, 1.0 - self.theta, &q[j - 1]);
                out
            })
            .collect()
    }

    /// ℓ_j = Δt EᵀM(θh^j + (1−θ)h^{j−1}) + [j = 1] R_0 c^0.
    pub fn rhs(&self, op: &DiscreteOperator, c0: &[f64], h: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let nt = self.nt;
        let hl: Option<Vec<Vec<f64>>> = h.map(|rows| rows.iter().map(|r| op.load(r)).collect());
        (1..=nt)
            .map(|j| {
                let mut out = vec![0.0; self.nm];
                if let Some(hl) = &hl {
                    axpy(&mut out, self.st.dt * self.theta, &hl[j]);
                    axpy(&mut out, self.st.dt * (1.0 - self.theta), &hl[j - 1]);
                }
                if j == 1 {
                    axpy(&mut out, 1.0, &self.st.apply_r(0, c0));
                }
                out
            })
            .collect()
    }

    fn diag_block(&self, j: usize, wd: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.st.s_matrix(j - 1);
        let mut h = band_times_dense(s, &dense_times_band_t(&self.k, s)) * self.a[j];
        if j >= 2 {
            let r = self.st.r_matrix(j - 1);
            h += band_times_dense(r, &dense_times_band_t(&self.k, r)) * self.a[j - 1];
        }
        let th = self.theta;
        h += wd * (th * th * self.r[j] + (1.0 - th) * (1.0 - th) * self.r[j - 1]);
        (&h + h.transpose()) * 0.5
    }

    fn upper_block(&self, j: usize, wd: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.st.s_matrix(j - 1);
        let r = self.st.r_matrix(j);
        let th = self.theta;
        band_times_dense(s, &dense_times_band_t(&self.k, r)) * (-self.a[j]) + wd * (th * (1.0 - th) * self.r[j])
    }

    pub fn factor(&self) -> Result<BlockCholesky> {
        let nt = self.nt;
        let wd = sparse_dense(&self.w, self.nm);
        let mut diag = Vec::with_capacity(nt);
        let mut upper = Vec::with_capacity(nt);
        let mut schur = self.diag_block(1, &wd);
        for j in 1..=nt {
            let ch = jittered_cholesky(std::mem::replace(&mut schur, DMatrix::zeros(0, 0)), j)?;
            if j < nt {
                let b = self.upper_block(j, &wd);
                let x = ch.solve(&b);
                schur = self.diag_block(j + 1, &wd) - b.transpose() * x;
                schur = (&schur + schur.transpose()) * 0.5;
                upper.push(b);
            }
            diag.push(ch);
        }
        Ok(BlockCholesky { diag, upper })
    }
}

/// Cholesky with a growing diagonal shift when roundoff has destroyed definiteness;
/// the factorization is only used as a preconditioner.
fn jittered_cholesky(a: DMatrix<f64>, j: usize) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch);
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    for _ in 0..12 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok(ch);
        }
        shift *= 10.0;
    }
    Err(Error::LinearSolveFailure(format!("multiplier block {j} is not positive definite")))
}

pub(crate) struct BlockCholesky {
    diag: Vec<Cholesky<f64, Dyn>>,
    upper: Vec<DMatrix<f64>>,
}

impl BlockCholesky {
    pub fn solve(&self, r: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nt = self.diag.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(nt);
        for j in 0..nt {
            let mut v = DVector::from_column_slice(&r[j]);
            if j > 0 {
                let z = self.diag[j - 1].solve(&y[j - 1]);
                v -= self.upper[j - 1].transpose() * z;
            }
            y.push(v);
        }
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); nt];
        for j in (0..nt).rev() {
            let mut v = y[j].clone();
            if j + 1 < nt {
                v -= &self.upper[j] * &x[j + 1];
            }
            x[j] = self.diag[j].solve(&v);
        }
        x.into_iter().map(|v| v.as_slice().to_vec()).collect()
    }
}

pub(crate) fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| crate::linalg::dot(x, y)).sum()
}

pub(crate) fn axpy_rows(y: &mut [Vec<f64>], a: f64, x: &[Vec<f64>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        axpy(yi, a, xi);
    }
}
