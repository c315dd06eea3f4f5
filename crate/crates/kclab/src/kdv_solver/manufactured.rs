//! Manufactured solutions that satisfy the boundary and transmission conditions exactly.
//!
//! With ζ the stretched coordinate (ζ' = 1/√p), any smooth v(ζ) gives u = v∘ζ
//! with u, √p u_x and p u_xx continuous. v(ζ) = sin²(πζ/Z) vanishes with its
//! slope at both ends, so u(0) = u(L) = u_x(L) = 0.

use std::f64::consts::PI;

use crate::domain::{build_grid, PiecewiseDomain};
use crate::error::Result;

use super::operator::{assemble_operator, BoundarySide, Drift};
use super::solve::solve_linear;

#[derive(Debug, Clone)]
pub struct Manufactured {
    pub dom: PiecewiseDomain,
}

impl Manufactured {
    pub fn new(dom: &PiecewiseDomain) -> Self {
        Manufactured { dom: dom.clone() }
    }

    /// d^k/dζ^k of sin²(πζ/Z) = (1 − cos(2πζ/Z))/2.
    fn v(&self, z: f64, k: u32) -> f64 {
        let w = 2.0 * PI / self.dom.stretched_length();
        let c = (w * z).cos();
        let s = (w * z).sin();
        match k {
            0 => 0.5 * (1.0 - c),
            1 => 0.5 * w * s,
            2 => 0.5 * w * w * c,
            _ => -0.5 * w * w * w * s,
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        (-t).exp() * self.v(self.dom.stretch(x), 0)
    }

    /// f = y_t + p y_xxx.
    pub fn source(&self, t: f64, x: f64) -> f64 {
        let z = self.dom.stretch(x);
        let p = self.dom.p_at(x);
        (-t).exp() * (-self.v(z, 0) + self.v(z, 3) / p.sqrt())
    }
}

/// Discrete L∞(0,T; L²) error of the θ = 1/2 scheme against the manufactured solution.
pub fn manufactured_error(dom: &PiecewiseDomain, h: f64, nt: usize, t_final: f64) -> Result<(f64, f64)> {
    let grid = build_grid(dom, h, nt, t_final)?;
    let op = assemble_operator(&grid, dom, BoundarySide::Forward, Drift::none())?;
    let ms = Manufactured::new(dom);
    let times = grid.times();
    let exact: Vec<Vec<f64>> = times.iter().map(|&t| grid.nodes.iter().map(|&x| ms.value(t, x)).collect()).collect();
    let f: Vec<Vec<f64>> = times.iter().map(|&t| grid.nodes.iter().map(|&x| ms.source(t, x)).collect()).collect();
    let field = solve_linear(&op, &exact[0], Some(&f), 0.5)?;
    let mut err: f64 = 0.0;
    for (u, e) in field.values.iter().zip(&exact) {
        let d: Vec<f64> = u.iter().zip(e).map(|(a, b)| a - b).collect();
        err = err.max(op.mass_norm(&d));
    }
    let hmax = grid.pieces.iter().map(|p| p.h).fold(0.0, f64::max);
    Ok((hmax, err))
}

/// Least-squares slope of log(err) against log(h).
pub fn observed_order(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = samples.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}
