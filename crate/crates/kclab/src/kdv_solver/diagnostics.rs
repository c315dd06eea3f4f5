//! Energy budgets, the Kato multiplier identity and interface residuals.

use serde::{Deserialize, Serialize};

use crate::domain::PiecewiseDomain;

use super::field::{Field, PiecewiseCalculus};
use super::operator::DiscreteOperator;
use super::solve::Source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    Dissipativity,
    Kato,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kind: EnergyKind,
    /// Dissipativity: largest per-step |ΔE − budget| relative to E(0); Kato: |lhs − rhs| / max(lhs, rhs).
    pub residual: f64,
    /// Dissipativity: Σ −Δt p₀ |y_x(t,0)|²; Kato: left-hand side.
    pub budget: f64,
    /// Dissipativity: Σ Δt p_L |y_x(t,L)|² from the weak boundary closure; Kato: right-hand side.
    pub secondary: f64,
    /// Largest relative per-step growth of ‖y‖ (negative when strictly decaying).
    pub max_growth: f64,
}

/// Piecewise Kato multiplier: q₀ = x/√p₀, q_k = (x − a_k)/√p_k + q_{k−1}(a_k⁻).
pub fn kato_multiplier(dom: &PiecewiseDomain, x: f64) -> f64 {
    dom.stretch(x)
}

pub fn energy_report(field: &Field, op: &DiscreteOperator, dom: &PiecewiseDomain, kind: EnergyKind, f: Source) -> EnergyReport {
    match kind {
        EnergyKind::Dissipativity => dissipativity(field, op, f),
        EnergyKind::Kato => kato(field, dom, f),
    }
}

fn dissipativity(field: &Field, op: &DiscreteOperator, f: Source) -> EnergyReport {
    let p = &op.grid.p;
    let (p0, pl) = (p[0], p[p.len() - 1]);
    let dt = field.dt;
    let e0 = op.mass_inner(&field.values[0], &field.values[0]);
    let scale = e0.max(f64::MIN_POSITIVE);
    let (mut residual, mut budget, mut secondary, mut growth) = (0.0f64, 0.0, 0.0, f64::NEG_INFINITY);
    for n in 0..field.nt() {
        let (a, b) = (&field.values[n], &field.values[n + 1]);
        let ea = op.mass_inner(a, a);
        let eb = op.mass_inner(b, b);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (g0, gl) = op.boundary_slopes(&mid);
        let mut src = 0.0;
        if let Some(rows) = f {
            let fm: Vec<f64> = rows[n].iter().zip(&rows[n + 1]).map(|(x, y)| 0.5 * (x + y)).collect();
            src = 2.0 * dt * op.mass_inner(&mid, &fm);
        }
        let step_budget = -dt * p0 * g0 * g0;
        let weak = -dt * pl * gl * gl;
        residual = residual.max(((eb - ea) - step_budget - weak - src).abs() / scale);
        budget += step_budget;
        secondary += -weak;
        if ea > 0.0 {
            growth = growth.max(eb.sqrt() / ea.sqrt() - 1.0);
        }
    }
    EnergyReport { kind: EnergyKind::Dissipativity, residual, budget, secondary, max_growth: growth }
}

fn kato(field: &Field, dom: &PiecewiseDomain, f: Source) -> EnergyReport {
    let grid = &field.grid;
    let calc = PiecewiseCalculus::new(grid);
    let nt = field.nt();
    let q = |x: f64| kato_multiplier(dom, x);
    let mut smooth = 0.0;
    let mut forcing = 0.0;
    for n in 0..=nt {
        let w = if n == 0 || n == nt { 0.5 } else { 1.0 } * field.dt;
        let u = &field.values[n];
        let samples = calc.samples(grid, u);
        for (k, s) in samples.iter().enumerate() {
            let sp = dom.p[k].sqrt();
            for i in 0..s.x.len() {
                smooth += w * s.w[i] * 3.0 * sp * s.ux[i] * s.ux[i];
            }
        }
        if let Some(rows) = f {
            for s in samples.iter().zip(calc.samples(grid, &rows[n])) {
                let (sy, sf) = s;
                for i in 0..sy.x.len() {
                    forcing += w * sy.w[i] * 2.0 * q(sy.x[i]) * sy.u[i] * sf.u[i];
                }
            }
        }
    }
    let weighted = |u: &[f64]| calc.integrate(grid, u, |_| true, |x, v, _, _| q(x) * v * v);
    let lhs = smooth + weighted(field.last());
    let rhs = weighted(&field.values[0]) + forcing;
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    let residual = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    EnergyReport { kind: EnergyKind::Kato, residual, budget: lhs, secondary: rhs, max_growth: 0.0 }
}

/// Per interface, the largest |[u]|, |[√p u_x]|, |[p u_xx]| over time.
pub fn tc_residual(field: &Field, dom: &PiecewiseDomain) -> Vec<[f64; 3]> {
    let ni = dom.gamma.len();
    let mut out = vec![[0.0f64; 3]; ni];
    for row in &field.traces {
        for (k, tr) in row.iter().enumerate().take(ni) {
            let (pl, pr) = (dom.p[k], dom.p[k + 1]);
            let r = [
                (tr.right[0] - tr.left[0]).abs(),
                (pr.sqrt() * tr.right[1] - pl.sqrt() * tr.left[1]).abs(),
                (pr * tr.right[2] - pl * tr.left[2]).abs(),
            ];
            for c in 0..3 {
                out[k][c] = out[k][c].max(r[c]);
            }
        }
    }
    out
}
