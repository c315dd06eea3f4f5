//! Space-time samples with interface traces, piecewise calculus and dumps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::write_atomic;
use crate::domain::Grid;
use crate::error::Result;
use crate::linalg::SparseRows;

use super::operator::DiscreteOperator;
use super::sbp::piece_derivative;

/// (u, u_x, u_xx) on both sides of one interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub left: [f64; 3],
    pub right: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    /// values[n][i] at time t0 + n dt and node i.
    pub values: Vec<Vec<f64>>,
    pub traces: Vec<Vec<Trace>>,
    pub grid: Grid,
    pub t0: f64,
    pub dt: f64,
}

/// Fourth-order per-piece derivative matrices and trapezoid weights.
#[derive(Debug, Clone)]
pub struct PiecewiseCalculus {
    pub d: Vec<[SparseRows; 3]>,
    pub weights: Vec<Vec<f64>>,
}

/// Per-piece samples of a nodal function and its derivatives.
#[derive(Debug, Clone)]
pub struct PieceSamples {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub ux: Vec<f64>,
    pub uxx: Vec<f64>,
    pub w: Vec<f64>,
}

impl PiecewiseCalculus {
    pub fn new(grid: &Grid) -> Self {
        let mut d = Vec::new();
        let mut weights = Vec::new();
        for pc in &grid.pieces {
            let n = pc.n_intervals();
            d.push([piece_derivative(n, pc.h, 1), piece_derivative(n, pc.h, 2), piece_derivative(n, pc.h, 3)]);
            let mut w = vec![pc.h; n + 1];
            w[0] = 0.5 * pc.h;
            w[n] = 0.5 * pc.h;
            weights.push(w);
        }
        PiecewiseCalculus { d, weights }
    }

    pub fn samples(&self, grid: &Grid, u: &[f64]) -> Vec<PieceSamples> {
        grid.pieces
            .iter()
            .enumerate()
            .map(|(k, pc)| {
                let ul = u[pc.start..=pc.end].to_vec();
                PieceSamples {
                    x: grid.nodes[pc.start..=pc.end].to_vec(),
                    ux: self.d[k][0].matvec(&ul),
                    uxx: self.d[k][1].matvec(&ul),
                    u: ul,
                    w: self.weights[k].clone(),
                }
            })
            .collect()
    }

    /// Piecewise trapezoid ∫ f(x, u, u_x, u_xx) over nodes selected by `keep`.
    pub fn integrate<F>(&self, grid: &Grid, u: &[f64], keep: impl Fn(f64) -> bool, f: F) -> f64
    where
        F: Fn(f64, f64, f64, f64) -> f64,
    {
        self.samples(grid, u)
            .iter()
            .map(|s| {
                (0..s.x.len())
                    .filter(|&i| keep(s.x[i]))
                    .map(|i| s.w[i] * f(s.x[i], s.u[i], s.ux[i], s.uxx[i]))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn fornberg_traces(grid: &Grid, calc: &PiecewiseCalculus, u: &[f64]) -> Vec<Trace> {
    (1..grid.pieces.len())
        .map(|k| {
            let (lp, rp) = (&grid.pieces[k - 1], &grid.pieces[k]);
            let ul = &u[lp.start..=lp.end];
            let ur = &u[rp.start..=rp.end];
            let nl = lp.n_intervals();
            let row = |m: &SparseRows, i: usize, v: &[f64]| m.rows[i].iter().map(|&(j, c)| c * v[j]).sum::<f64>();
            Trace {
                left: [ul[nl], row(&calc.d[k - 1][0], nl, ul), row(&calc.d[k - 1][1], nl, ul)],
                right: [ur[0], row(&calc.d[k][0], 0, ur), row(&calc.d[k][1], 0, ur)],
            }
        })
        .collect()
}

fn sbp_traces(op: &DiscreteOperator, u: &[f64]) -> Vec<Trace> {
    (1..op.grid.pieces.len())
        .map(|k| {
            let (dl, ddl) = op.end_derivatives(k - 1, u);
            let (dr, ddr) = op.end_derivatives(k, u);
            let a = op.grid.interface_index[k - 1];
            Trace { left: [u[a], dl[1], ddl[1]], right: [u[a], dr[0], ddr[0]] }
        })
        .collect()
}

impl Field {
    /// Field produced by a solver: traces from the operator's own end rows.
    pub fn from_operator(op: &DiscreteOperator, values: Vec<Vec<f64>>, t0: f64, dt: f64) -> Field {
        let traces = values.iter().map(|u| sbp_traces(op, u)).collect();
        Field { values, traces, grid: op.grid.clone(), t0, dt }
    }

    /// Field from samples: traces from fourth-order one-sided stencils.
    pub fn from_samples(grid: &Grid, values: Vec<Vec<f64>>, t0: f64, dt: f64) -> Field {
        let calc = PiecewiseCalculus::new(grid);
        let traces = values.iter().map(|u| fornberg_traces(grid, &calc, u)).collect();
        Field { values, traces, grid: grid.clone(), t0, dt }
    }

    pub fn zeros(grid: &Grid) -> Field {
        let values = vec![vec![0.0; grid.nx()]; grid.nt + 1];
        Field::from_samples(grid, values, 0.0, grid.dt())
    }

    pub fn nt(&self) -> usize {
        self.values.len() - 1
    }

    pub fn nx(&self) -> usize {
        self.grid.nx()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn last(&self) -> &[f64] {
        &self.values[self.values.len() - 1]
    }

    /// Traces recomputed from the values with one-sided stencils.
    pub fn recomputed_traces(&self) -> Vec<Vec<Trace>> {
        let calc = PiecewiseCalculus::new(&self.grid);
        self.values.iter().map(|u| fornberg_traces(&self.grid, &calc, u)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.values.len() * self.nx());
        for row in &self.values {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes `<base>.f64` (little-endian, time-major) and `<base>.json`.
    pub fn dump(&self, dir: &Path, base: &str) -> Result<FieldSidecar> {
        let bytes = self.to_le_bytes();
        let checksum = format!("{:x}", Sha256::digest(&bytes));
        let l = *self.grid.nodes.last().unwrap();
        let gamma = self.grid.interface_index.iter().map(|&i| self.grid.nodes[i]).collect();
        let side = FieldSidecar {
            nt: self.nt(),
            nx: self.nx(),
            t: self.time(self.nt()),
            t0: self.t0,
            l,
            gamma,
            checksum,
        };
        write_atomic(&dir.join(format!("{base}.f64")), &bytes)?;
        let json = serde_json::to_vec_pretty(&side).map_err(|e| crate::error::Error::Io(e.to_string()))?;
        write_atomic(&dir.join(format!("{base}.json")), &json)?;
        Ok(side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub nt: usize,
    pub nx: usize,
    #[serde(rename = "T")]
    pub t: f64,
    pub t0: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub gamma: Vec<f64>,
    pub checksum: String,
}

/// Reads a dump back (values only; traces recomputed from stencils).
pub fn read_field_values(path: &Path, nx: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path)?;
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(vals.chunks(nx).map(|c| c.to_vec()).collect())
}
