//! Small sparse-row and banded containers plus a pivoted banded LU.

use crate::error::{Error, Result};

/// Row-wise sparse matrix with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseRows { ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |e| e.0) {
            Ok(p) => row[p].1 += v,
            Err(p) => row.insert(p, (j, v)),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &SparseRows, c: f64) {
        for (i, row) in other.rows.iter().enumerate() {
            for &(j, v) in row {
                self.add(i, j, c * v);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                y[j] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseRows {
        let mut t = SparseRows::zeros(self.ncols, self.nrows());
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                t.rows[j].push((i, v));
            }
        }
        t
    }

    /// self · other.
    pub fn mul(&self, other: &SparseRows) -> SparseRows {
        let mut out = SparseRows::zeros(self.nrows(), other.ncols);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![false; other.ncols];
        for (i, r) in self.rows.iter().enumerate() {
            let mut cols = Vec::new();
            for &(k, a) in r {
                for &(j, b) in &other.rows[k] {
                    if !mark[j] {
                        mark[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            out.rows[i] = cols.iter().map(|&j| (j, acc[j])).collect();
            for &j in &cols {
                acc[j] = 0.0;
                mark[j] = false;
            }
        }
        out
    }

    /// diag(d) · self.
    pub fn scale_rows(&self, d: &[f64]) -> SparseRows {
        let rows = self
            .rows
            .iter()
            .zip(d)
            .map(|(r, &s)| r.iter().map(|&(j, v)| (j, s * v)).collect())
            .collect();
        SparseRows { ncols: self.ncols, rows }
    }

    /// self · diag(d).
    pub fn scale_cols(&self, d: &[f64]) -> SparseRows {
        let rows = self.rows.iter().map(|r| r.iter().map(|&(j, v)| (j, v * d[j])).collect()).collect();
        SparseRows { ncols: self.ncols, rows }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows()];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                d[i][j] = v;
            }
        }
        d
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                if v != 0.0 {
                    if j < i {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
            }
        }
        (kl, ku)
    }
}

/// Square banded matrix; entry (i, j) lives at data[i * width + (j + kl - i)].
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn from_sparse(s: &SparseRows) -> Self {
        let (kl, ku) = s.bandwidths();
        let mut b = BandMatrix::zeros(s.nrows(), kl, ku);
        for (i, r) in s.rows.iter().enumerate() {
            for &(j, v) in r {
                if v != 0.0 {
                    b.set(i, j, v);
                }
            }
        }
        b
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.data[i * self.width() + j + self.kl - i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    pub fn col_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.col_range(i).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.col_range(i) {
                y[j] += self.get(i, j) * x[i];
            }
        }
        y
    }
}

/// Banded LU with partial pivoting: P-L factors kept as elementary multipliers,
/// U stored row-wise with upper bandwidth ku + kl.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    wu: usize,
    u: Vec<f64>,
    lmul: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        let wu = a.ku + kl;
        // working row i holds columns i - kl ..= i + wu
        let w = kl + wu + 1;
        let mut work = vec![0.0; n * w];
        for i in 0..n {
            for j in a.col_range(i) {
                work[i * w + j + kl - i] = a.get(i, j);
            }
        }
        let idx = |i: usize, j: usize| i * w + j + kl - i;
        let mut lmul = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let scale = work.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = work[idx(k, k)].abs();
            for i in k + 1..=last {
                let v = work[idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-300) || best <= 1e-15 * scale * f64::EPSILON {
                return Err(Error::LinearSolveFailure(format!("zero pivot at column {k}")));
            }
            piv[k] = p;
            let jend = (k + wu).min(n - 1);
            if p != k {
                for j in k..=jend {
                    work.swap(idx(k, j), idx(p, j));
                }
            }
            let d = work[idx(k, k)];
            for i in k + 1..=last {
                let l = work[idx(i, k)] / d;
                lmul[k * kl + (i - k - 1)] = l;
                work[idx(i, k)] = 0.0;
                if l != 0.0 {
                    for j in k + 1..=jend {
                        work[idx(i, j)] -= l * work[idx(k, j)];
                    }
                }
            }
        }
        // compact U
        let mut u = vec![0.0; n * (wu + 1)];
        for i in 0..n {
            for j in i..=(i + wu).min(n - 1) {
                u[i * (wu + 1) + j - i] = work[idx(i, j)];
            }
        }
        Ok(BandLu { n, kl, wu, u, lmul, piv })
    }

    fn uget(&self, i: usize, j: usize) -> f64 {
        self.u[i * (self.wu + 1) + j - i]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.n, self.kl);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.lmul[k * kl + (i - k - 1)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.wu).min(n - 1) {
                s -= self.uget(i, j) * x[j];
            }
            x[i] = s / self.uget(i, i);
        }
        x
    }

    /// Solves Aᵀ x = b with the same factorization.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.n, self.kl);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(self.wu)..i {
                s -= self.uget(j, i) * x[j];
            }
            x[i] = s / self.uget(i, i);
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                s -= self.lmul[k * kl + (i - k - 1)] * x[i];
            }
            x[k] = s;
            x.swap(k, self.piv[k]);
        }
        x
    }
}

/// Dense Gaussian elimination with partial pivoting (small systems only).
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
            .unwrap();
        if a[p][k].abs() < 1e-13 {
            return Err(Error::LinearSolveFailure(format!("singular constraint block at {k}")));
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            if l == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= l * a[k][j];
            }
            for j in 0..b[i].len() {
                b[i][j] -= l * b[k][j];
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..b[k].len() {
            let mut s = b[k][j];
            for i in k + 1..n {
                s -= a[k][i] * b[i][j];
            }
            b[k][j] = s / a[k][k];
        }
    }
    Ok(b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in a.col_range(i) {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn lu_solves_and_transposes() {
        for (seed, (kl, ku)) in [(1, 2), (3, 1), (0, 0), (5, 5)].iter().enumerate() {
            let a = random_band(40, *kl, *ku, seed as u64);
            let lu = BandLu::factor(&a).unwrap();
            let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.matvec(&x);
            let y = lu.solve(&b);
            let bt = a.matvec_t(&x);
            let yt = lu.solve_transpose(&bt);
            for i in 0..40 {
                assert!((y[i] - x[i]).abs() < 1e-9, "{kl} {ku}");
                assert!((yt[i] - x[i]).abs() < 1e-9, "{kl} {ku} t");
            }
        }
    }

    #[test]
    fn pivoting_needed() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        for (i, j, v) in [(0, 0, 0.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 0.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 1.0)] {
            a.set(i, j, v);
        }
        let lu = BandLu::factor(&a).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        let r = a.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
        let singular = BandMatrix::zeros(4, 1, 1);
        assert!(BandLu::factor(&singular).is_err());
    }

    #[test]
    fn sparse_product() {
        let mut a = SparseRows::zeros(2, 3);
        a.add(0, 0, 1.0);
        a.add(0, 2, 2.0);
        a.add(1, 1, 3.0);
        let t = a.transpose();
        let p = a.mul(&t);
        assert_eq!(p.to_dense(), vec![vec![5.0, 0.0], vec![0.0, 9.0]]);
    }
}
