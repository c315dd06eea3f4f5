//! Diagonal-norm summation-by-parts first derivatives and Fornberg stencils.

use crate::domain::Grid;
use crate::linalg::SparseRows;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbpOrder {
    Second,
    Fourth,
}

/// Intervals a piece needs before the fourth-order boundary closure fits.
pub const FOURTH_ORDER_MIN_INTERVALS: usize = 7;

const NORM4: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];
const CLOSURE4: [[f64; 6]; 4] = [
    [-24.0 / 17.0, 59.0 / 34.0, -4.0 / 17.0, -3.0 / 34.0, 0.0, 0.0],
    [-0.5, 0.0, 0.5, 0.0, 0.0, 0.0],
    [4.0 / 43.0, -59.0 / 86.0, 0.0, 59.0 / 86.0, -4.0 / 43.0, 0.0],
    [3.0 / 98.0, 0.0, -59.0 / 98.0, 0.0, 32.0 / 49.0, -4.0 / 49.0],
];

pub fn grid_order(grid: &Grid) -> SbpOrder {
    if grid.pieces.iter().all(|p| p.n_intervals() >= FOURTH_ORDER_MIN_INTERVALS) {
        SbpOrder::Fourth
    } else {
        SbpOrder::Second
    }
}

/// (D1, diagonal of W) on n + 1 equispaced nodes with spacing h; W D1 + D1ᵀ W = diag(−1, 0, …, 0, 1).
pub fn sbp_first_derivative(n: usize, h: f64, order: SbpOrder) -> (SparseRows, Vec<f64>) {
    let m = n + 1;
    let mut d = SparseRows::zeros(m, m);
    let mut w = vec![h; m];
    match order {
        SbpOrder::Second => {
            w[0] = 0.5 * h;
            w[n] = 0.5 * h;
            d.add(0, 0, -1.0 / h);
            d.add(0, 1, 1.0 / h);
            d.add(n, n - 1, -1.0 / h);
            d.add(n, n, 1.0 / h);
            for i in 1..n {
                d.add(i, i - 1, -0.5 / h);
                d.add(i, i + 1, 0.5 / h);
            }
        }
        SbpOrder::Fourth => {
            assert!(n >= FOURTH_ORDER_MIN_INTERVALS);
            for i in 0..4 {
                w[i] = NORM4[i] * h;
                w[n - i] = NORM4[i] * h;
                for (j, &c) in CLOSURE4[i].iter().enumerate() {
                    if c != 0.0 {
                        d.add(i, j, c / h);
                        d.add(n - i, n - j, -c / h);
                    }
                }
            }
            let st = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
            for i in 4..=n - 4 {
                for (o, &c) in st.iter().enumerate() {
                    if c != 0.0 {
                        d.add(i, i + o - 2, c / h);
                    }
                }
            }
        }
    }
    (d, w)
}

/// Finite-difference weights at x0 for derivatives 0..=m on nodes xs.
pub fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// q-th derivative on one piece (local indices 0..=n), fourth order, one-sided windows at the ends.
pub fn piece_derivative(n: usize, h: f64, q: usize) -> SparseRows {
    let npts = (q + 4).min(n + 1);
    let mut d = SparseRows::zeros(n + 1, n + 1);
    for i in 0..=n {
        let start = (i as isize - (npts as isize - 1) / 2).clamp(0, (n + 1 - npts) as isize) as usize;
        let xs: Vec<f64> = (start..start + npts).map(|k| (k as f64 - i as f64) * h).collect();
        let wts = fornberg(0.0, &xs, q);
        for (k, &c) in wts[q].iter().enumerate() {
            d.add(i, start + k, c);
        }
    }
    d
}
