//! Numerical audit of the Carleman and observability inequalities.
//!
//! Weighted integrals are accumulated as e^{−shift}·∬(…) where `shift` is the
//! largest log-weight on the grid, so reports stay finite for any s. Ratios
//! are unaffected by the common factor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::artifacts::{fmt_f64, Csv};
use crate::domain::{check_hypothesis_m, Grid, ObservationSet, PiecewiseDomain};
use crate::error::{Error, Result};
use crate::kdv_solver::field::{Field, PiecewiseCalculus};
use crate::kdv_solver::operator::{Coefficient, DiscreteOperator, Drift};
use crate::kdv_solver::solve::{solve_adjoint_with, AdjointSolution, Stepper};
use crate::kdv_solver::{sbp::piece_derivative, tc_residual};
use crate::weights::{CarlemanWeights, WeightMode};

/// Relative tolerance on the interface jumps of a sampled admissible function.
pub const TC_TOLERANCE: f64 = 1e-8;

/// Weighted pieces of both sides; all values carry the factor e^{−log_scale}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub u: f64,
    pub ux: f64,
    pub uxx: f64,
    pub source: f64,
    pub obs_u: f64,
    pub obs_ux: f64,
    pub obs_uxx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub s: f64,
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub log_scale: f64,
    pub breakdown: Breakdown,
}

impl CarlemanReport {
    /// ln of the unscaled left-hand side.
    pub fn ln_lhs(&self) -> f64 {
        self.lhs.ln() + self.log_scale
    }
}

/// Per-node samples of u, u_x, u_xx and ℒu on every piece at every time level.
#[derive(Debug, Clone)]
pub struct FieldDerivatives {
    /// [n][k] → (u, u_x, u_xx, ℒu) on the nodes of piece k.
    pub layers: Vec<Vec<[Vec<f64>; 4]>>,
}

fn time_derivative(values: &[Vec<f64>], dt: f64, n: usize, i: usize) -> f64 {
    let nt = values.len() - 1;
    if n == 0 {
        (-3.0 * values[0][i] + 4.0 * values[1][i] - values[2][i]) / (2.0 * dt)
    } else if n == nt {
        (3.0 * values[nt][i] - 4.0 * values[nt - 1][i] + values[nt - 2][i]) / (2.0 * dt)
    } else {
        (values[n + 1][i] - values[n - 1][i]) / (2.0 * dt)
    }
}

impl FieldDerivatives {
    /// ℒu = u_t + p u_xxx + b u_x + d u with fourth-order one-sided stencils per piece.
    pub fn new(u: &Field, drift: Option<&Drift>) -> Result<Self> {
        let grid = &u.grid;
        let mut b = None;
        let mut d = None;
        if let Some(dr) = drift {
            if dr.conservative.is_some() {
                return Err(Error::InvalidInput("conservative drift is not part of this operator".into()));
            }
            b = dr.b.as_ref();
            d = dr.d.as_ref();
        }
        let d3: Vec<_> = grid.pieces.iter().map(|pc| piece_derivative(pc.n_intervals(), pc.h, 3)).collect();
        let calc = PiecewiseCalculus::new(grid);
        let layers = (0..u.values.len())
            .map(|n| {
                let samples = calc.samples(grid, &u.values[n]);
                samples
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let pc = &grid.pieces[k];
                        let uxxx = d3[k].matvec(&s.u);
                        let lu: Vec<f64> = (0..s.u.len())
                            .map(|i| {
                                let gi = pc.start + i;
                                let mut v = time_derivative(&u.values, u.dt, n, gi) + grid.p[k] * uxxx[i];
                                if let Some(c) = b {
                                    v += c.at(n, gi) * s.ux[i];
                                }
                                if let Some(c) = d {
                                    v += c.at(n, gi) * s.u[i];
                                }
                                v
                            })
                            .collect();
                        [s.u, s.ux, s.uxx, lu]
                    })
                    .collect()
            })
            .collect();
        Ok(FieldDerivatives { layers })
    }
}

/// Weight tables for one (s, λ) on one space-time grid, shifted in log space.
#[derive(Debug, Clone)]
pub struct WeightedQuadrature {
    pub s: f64,
    pub lambda: f64,
    pub shift: f64,
    /// [n][k][i] → (w5, w3, w1, w0) including quadrature weights.
    tables: Vec<Vec<Vec<[f64; 4]>>>,
    /// [k][i] → node inside ω.
    in_omega: Vec<Vec<bool>>,
}

impl WeightedQuadrature {
    pub fn new(w: &CarlemanWeights, grid: &Grid, obs: Option<&ObservationSet>, t0: f64, dt: f64, nt: usize) -> Result<Self> {
        let calc = PiecewiseCalculus::new(grid);
        let (s, lam) = (w.s, w.lambda);
        let pw = [(5.0, 5.0 * s.ln() + 6.0 * lam.ln()), (3.0, 3.0 * s.ln() + 4.0 * lam.ln()), (1.0, s.ln() + 2.0 * lam.ln()), (0.0, 0.0)];
        let mut logs = vec![vec![vec![[f64::NEG_INFINITY; 4]; 0]; grid.pieces.len()]; nt + 1];
        let mut shift = f64::NEG_INFINITY;
        for (n, layer) in logs.iter_mut().enumerate() {
            let t = (t0 + n as f64 * dt).clamp(t0, t0 + nt as f64 * dt);
            for (k, pc) in grid.pieces.iter().enumerate() {
                let mut row = Vec::with_capacity(pc.n_intervals() + 1);
                for i in 0..=pc.n_intervals() {
                    let x = grid.nodes[pc.start + i];
                    let (lz, lx) = w.log_weights(t, x)?;
                    let mut e = [f64::NEG_INFINITY; 4];
                    if lz.is_finite() {
                        let base = -2.0 * s * lz.exp();
                        for (c, (k5, sl)) in pw.iter().enumerate() {
                            e[c] = base + k5 * lx + sl;
                            shift = shift.max(e[c]);
                        }
                    }
                    row.push(e);
                }
                layer[k] = row;
            }
        }
        if !shift.is_finite() {
            return Err(Error::WeightUnderflow("no finite weight on the grid".into()));
        }
        let tables = logs
            .into_iter()
            .enumerate()
            .map(|(n, layer)| {
                let wt = if n == 0 || n == nt { 0.5 * dt } else { dt };
                layer
                    .into_iter()
                    .enumerate()
                    .map(|(k, row)| {
                        row.into_iter()
                            .enumerate()
                            .map(|(i, e)| e.map(|v| if v.is_finite() { wt * calc.weights[k][i] * (v - shift).exp() } else { 0.0 }))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let in_omega = grid
            .pieces
            .iter()
            .map(|pc| (pc.start..=pc.end).map(|g| obs.is_some_and(|o| o.contains(grid.nodes[g]))).collect())
            .collect();
        Ok(WeightedQuadrature { s, lambda: lam, shift, tables, in_omega })
    }

    pub fn evaluate(&self, d: &FieldDerivatives) -> CarlemanReport {
        let mut b = Breakdown::default();
        for (layer, tab) in d.layers.iter().zip(&self.tables) {
            for (k, (vals, wk)) in layer.iter().zip(tab).enumerate() {
                for (i, w) in wk.iter().enumerate() {
                    let (u, ux, uxx, lu) = (vals[0][i], vals[1][i], vals[2][i], vals[3][i]);
                    let t5 = w[0] * u * u;
                    let t3 = w[1] * ux * ux;
                    let t1 = w[2] * uxx * uxx;
                    b.u += t5;
                    b.ux += t3;
                    b.uxx += t1;
                    b.source += w[3] * lu * lu;
                    if self.in_omega[k][i] {
                        b.obs_u += t5;
                        b.obs_ux += t3;
                        b.obs_uxx += t1;
                    }
                }
            }
        }
        let lhs = b.u + b.ux + b.uxx;
        let rhs = b.source + b.obs_u + b.obs_ux + b.obs_uxx;
        CarlemanReport { s: self.s, lambda: self.lambda, lhs, rhs, ratio: (rhs > 0.0).then(|| lhs / rhs), log_scale: self.shift, breakdown: b }
    }
}

fn check_admissible(u: &Field, dom: &PiecewiseDomain) -> Result<()> {
    let scale = 1.0 + u.traces.iter().flatten().flat_map(|t| t.left.iter().chain(&t.right)).fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = tc_residual(u, dom).iter().flatten().fold(0.0f64, |m, v| m.max(*v));
    if worst > TC_TOLERANCE * scale {
        return Err(Error::InadmissibleFunction(format!("transmission residual {worst:e} exceeds {:e}", TC_TOLERANCE * scale)));
    }
    let n = u.nx() - 1;
    for row in &u.values {
        if row[0].abs() > 1e-12 * scale || row[n].abs() > 1e-12 * scale {
            return Err(Error::InadmissibleFunction("boundary values do not vanish".into()));
        }
    }
    Ok(())
}

/// Both sides of the two-parameter (or symmetric-time) Carleman inequality on a sampled u.
pub fn carleman_sides(u: &Field, w: &CarlemanWeights, dom: &PiecewiseDomain, obs: &ObservationSet, drift: Option<&Drift>) -> Result<CarlemanReport> {
    if !matches!(w.mode, WeightMode::TwoParameter | WeightMode::SymmetricTime) {
        return Err(Error::InvalidInput("carleman_sides needs two-parameter or symmetric-time weights".into()));
    }
    check_admissible(u, dom)?;
    let q = WeightedQuadrature::new(w, &u.grid, Some(obs), u.t0, u.dt, u.nt())?;
    Ok(q.evaluate(&FieldDerivatives::new(u, drift)?))
}

/// Random admissible functions u = Σ_k b_k(t) sin(kπζ(x)/Z) in the stretched coordinate.
#[derive(Debug, Clone)]
pub struct AdmissibleSampler {
    pub dom: PiecewiseDomain,
    pub seed: u64,
    pub modes: usize,
    pub time_modes: usize,
}

impl AdmissibleSampler {
    pub fn new(dom: &PiecewiseDomain, seed: u64) -> Self {
        AdmissibleSampler { dom: dom.clone(), seed, modes: 4, time_modes: 3 }
    }

    fn rng(&self, id: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Sample `id` on (t0, t0 + nt·dt); the time factor vanishes to second order at both ends.
    pub fn sample_on(&self, grid: &Grid, id: u64, t0: f64, dt: f64, nt: usize) -> Field {
        let mut rng = self.rng(id);
        let z = self.dom.stretched_length();
        let coef: Vec<Vec<f64>> =
            (0..self.modes).map(|_| (0..self.time_modes).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let zeta: Vec<f64> = grid.nodes.iter().map(|&x| self.dom.stretch(x)).collect();
        let values = (0..=nt)
            .map(|n| {
                let tau = n as f64 / nt as f64;
                let bump = (PI * tau).sin().powi(2);
                let amps: Vec<f64> =
                    coef.iter().map(|c| bump * c.iter().enumerate().map(|(l, a)| a * (PI * l as f64 * tau).cos()).sum::<f64>()).collect();
                zeta.iter().map(|&zz| amps.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * zz / z).sin()).sum()).collect()
            })
            .collect();
        Field::from_samples(grid, project_admissible(grid, values), t0, dt)
    }

    pub fn sample(&self, grid: &Grid, id: u64) -> Field {
        self.sample_on(grid, id, 0.0, grid.dt(), grid.nt)
    }

    /// Sample on (−T, T) for symmetric-time weights.
    pub fn sample_symmetric(&self, grid: &Grid, id: u64) -> Field {
        self.sample_on(grid, id, -grid.t_final, grid.dt(), 2 * grid.nt)
    }
}

/// Rows of u(0), u(L) and [√p u_x], [p u_xx] at each interface in the one-sided trace stencils.
fn trace_constraints(grid: &Grid) -> Vec<Vec<(usize, f64)>> {
    let calc = PiecewiseCalculus::new(grid);
    let nx = grid.nx();
    let mut rows = vec![vec![(0, 1.0)], vec![(nx - 1, 1.0)]];
    for k in 1..grid.pieces.len() {
        let (lp, rp) = (&grid.pieces[k - 1], &grid.pieces[k]);
        let nl = lp.n_intervals();
        for (q, f) in [(0usize, 0.5f64), (1, 1.0)] {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let (pl, pr) = (grid.p[k - 1].powf(f), grid.p[k].powf(f));
            for &(j, c) in &calc.d[k][q].rows[0] {
                row.push((rp.start + j, pr * c));
            }
            for &(j, c) in &calc.d[k - 1][q].rows[nl] {
                row.push((lp.start + j, -pl * c));
            }
            rows.push(row);
        }
    }
    rows
}

/// Least-norm correction of each time level onto the discrete BC + TC set.
pub fn project_admissible(grid: &Grid, mut values: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let rows = trace_constraints(grid);
    let nc = rows.len();
    let dotr = |a: &[(usize, f64)], b: &[(usize, f64)]| -> f64 {
        a.iter().map(|&(i, x)| b.iter().filter(|e| e.0 == i).map(|e| e.1 * x).sum::<f64>()).sum()
    };
    let gram: Vec<Vec<f64>> = (0..nc).map(|i| (0..nc).map(|j| dotr(&rows[i], &rows[j])).collect()).collect();
    let rhs: Vec<Vec<f64>> = values.iter().map(|u| rows.iter().map(|r| r.iter().map(|&(i, c)| c * u[i]).sum()).collect()).collect();
    // one multi-RHS solve: columns are time levels
    let b: Vec<Vec<f64>> = (0..nc).map(|i| rhs.iter().map(|r| r[i]).collect()).collect();
    let y = crate::linalg::dense_solve(gram, b).expect("constraint rows are independent");
    for (n, u) in values.iter_mut().enumerate() {
        for (i, r) in rows.iter().enumerate() {
            for &(j, c) in r {
                u[j] -= c * y[i][n];
            }
        }
    }
    values
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub s: f64,
    pub lambda: f64,
    pub sample_id: u64,
    pub report: CarlemanReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeEstimate {
    pub lambda: f64,
    /// Smallest scanned s past which the max ratio changes by at most 5% per step.
    pub s0: Option<f64>,
    pub max_ratios: Vec<f64>,
    pub lambda_below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    pub knees: Vec<KneeEstimate>,
    /// (s₀, λ₀): the knee at the smallest λ past which the plateau value is stable to 5%.
    pub s0: Option<f64>,
    pub lambda0: Option<f64>,
}

/// Index of the first scan point after which consecutive values change by at most 5%.
pub fn plateau_knee(values: &[f64]) -> Option<usize> {
    let n = values.len();
    if n == 0 || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut knee = n - 1;
    for i in (1..n).rev() {
        if (values[i] / values[i - 1] - 1.0).abs() <= 0.05 {
            knee = i - 1;
        } else {
            break;
        }
    }
    (knee < n - 1 || n == 1).then_some(knee)
}

/// Max-ratio table over (s, λ) and sample ids 0..n_samples.
pub fn carleman_scan(
    sampler: &AdmissibleSampler,
    n_samples: u64,
    s_range: &[f64],
    lambda_range: &[f64],
    w: &CarlemanWeights,
    grid: &Grid,
    dom: &PiecewiseDomain,
    obs: &ObservationSet,
    drift: Option<&Drift>,
) -> Result<ScanTable> {
    if s_range.iter().chain(lambda_range).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("scan ranges must be positive".into()));
    }
    let symmetric = w.mode == WeightMode::SymmetricTime;
    let fields: Vec<FieldDerivatives> = (0..n_samples)
        .into_par_iter()
        .map(|id| {
            let u = if symmetric { sampler.sample_symmetric(grid, id) } else { sampler.sample(grid, id) };
            check_admissible(&u, dom)?;
            FieldDerivatives::new(&u, drift)
        })
        .collect::<Result<_>>()?;
    let (t0, nt) = if symmetric { (-grid.t_final, 2 * grid.nt) } else { (0.0, grid.nt) };
    let points: Vec<(f64, f64)> = lambda_range.iter().flat_map(|&l| s_range.iter().map(move |&s| (s, l))).collect();
    let quads: Vec<WeightedQuadrature> = points
        .par_iter()
        .map(|&(s, l)| {
            let wl = CarlemanWeights { s, lambda: l, ..w.clone() };
            WeightedQuadrature::new(&wl, grid, Some(obs), t0, grid.dt(), nt)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ScanRow> = quads
        .par_iter()
        .flat_map_iter(|q| {
            fields.iter().enumerate().map(move |(id, f)| ScanRow { s: q.s, lambda: q.lambda, sample_id: id as u64, report: q.evaluate(f) })
        })
        .collect();
    let threshold = w.beta.kappa.powi(2) / w.beta.norm_inf;
    let knees: Vec<KneeEstimate> = lambda_range
        .iter()
        .map(|&l| {
            let max_ratios: Vec<f64> = s_range
                .iter()
                .map(|&s| {
                    rows.iter().filter(|r| r.s == s && r.lambda == l).filter_map(|r| r.report.ratio).fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let s0 = plateau_knee(&max_ratios).map(|i| s_range[i]);
            KneeEstimate { lambda: l, s0, max_ratios, lambda_below_threshold: l < threshold }
        })
        .collect();
    let plateau: Vec<f64> = knees.iter().map(|k| *k.max_ratios.last().unwrap_or(&f64::NAN)).collect();
    let li = plateau_knee(&plateau);
    let lambda0 = li.map(|i| lambda_range[i]);
    let s0 = li.and_then(|i| knees[i].s0);
    Ok(ScanTable { rows, knees, s0, lambda0 })
}

/// Smooth random data satisfying the adjoint boundary conditions φ(0) = φ(L) = φ_x(0) = 0.
pub fn random_adjoint_profile(dom: &PiecewiseDomain, grid: &Grid, rng: &mut ChaCha8Rng, modes: usize) -> Vec<f64> {
    let z = dom.stretched_length();
    let mut c: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Σ k c_k = 0 kills the slope at ζ = 0.
    let tail: f64 = c.iter().enumerate().skip(1).map(|(k, v)| (k + 1) as f64 * v).sum();
    c[0] = -tail;
    let mut out: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| {
            let zz = dom.stretch(x);
            c.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * zz / z).sin()).sum()
        })
        .collect();
    let n = out.len() - 1;
    out[0] = 0.0;
    out[n] = 0.0;
    out
}

/// Random (φ_T, g) pairs for the observability suite.
pub fn random_adjoint_data(dom: &PiecewiseDomain, grid: &Grid, seed: u64, count: usize) -> Vec<(Vec<f64>, Vec<Vec<f64>>)> {
    (0..count)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_003 * id as u64));
            let phit = random_adjoint_profile(dom, grid, &mut rng, 5);
            let shapes: Vec<Vec<f64>> = (0..2).map(|_| random_adjoint_profile(dom, grid, &mut rng, 4)).collect();
            let freq: Vec<f64> = (0..2).map(|_| rng.gen_range(0.5..3.0)).collect();
            let amp: f64 = rng.gen_range(0.0..1.0);
            let g = grid
                .times()
                .iter()
                .map(|&t| {
                    let a: Vec<f64> = freq.iter().map(|f| amp * (PI * f * t / grid.t_final).cos()).collect();
                    (0..grid.nx()).map(|i| a[0] * shapes[0][i] + a[1] * shapes[1][i]).collect()
                })
                .collect();
            (phit, g)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilitySample {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    /// ∬e^{−4sα̂}(τ⁵|φ|² + τ³|φ_x|² + τ|φ_xx|²), ‖φ(0)‖², ∬e^{−2sα̂}|g|², observation term.
    pub terms: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub s: f64,
    pub lambda: f64,
    pub samples: Vec<ObservabilitySample>,
    pub max_ratio: Option<f64>,
}

/// Weighted observability inequality for adjoint solves of ℒ* = −∂_t − p∂³ − ∂_x − ȳ∂_x.
///
/// `op` must be the forward operator linearized around ȳ (see [`Drift::linearized`]).
pub fn observability_check(
    data: &[(Vec<f64>, Vec<Vec<f64>>)],
    w: &CarlemanWeights,
    op: &DiscreteOperator,
    st: &Stepper,
    obs: &ObservationSet,
) -> Result<ObservabilityReport> {
    let solved = adjoint_solves(data, w, op, st)?;
    Ok(observability_terms(&solved, data, w, op, obs))
}

fn adjoint_solves(data: &[(Vec<f64>, Vec<Vec<f64>>)], w: &CarlemanWeights, op: &DiscreteOperator, st: &Stepper) -> Result<Vec<AdjointSolution>> {
    if w.mode != WeightMode::OneParameter {
        return Err(Error::InvalidInput("observability needs one-parameter weights".into()));
    }
    data.par_iter().map(|(phit, g)| solve_adjoint_with(op, st, phit, Some(g))).collect()
}

fn observability_terms(
    solved: &[AdjointSolution],
    data: &[(Vec<f64>, Vec<Vec<f64>>)],
    w: &CarlemanWeights,
    op: &DiscreteOperator,
    obs: &ObservationSet,
) -> ObservabilityReport {
    let grid = &op.grid;
    let calc = PiecewiseCalculus::new(grid);
    let nt = grid.nt;
    let dt = grid.dt();
    let s = w.s;
    let times = grid.times();
    // per time level: (e^{−4sα̂}, e^{−2sα̂}, e^{−6sᾰ+2sα̂}τ⁷, τ)
    let tw: Vec<[f64; 4]> = times
        .iter()
        .map(|&t| {
            if t >= w.t_final {
                return [0.0; 4];
            }
            let (ah, ab, tau) = (w.alpha_hat(t), w.alpha_breve(t), w.tau(t));
            [(-4.0 * s * ah).exp(), (-2.0 * s * ah).exp(), (-6.0 * s * ab + 2.0 * s * ah + 7.0 * tau.ln()).exp(), tau]
        })
        .collect();
    let mask: Vec<bool> = grid.nodes.iter().map(|&x| obs.contains(x)).collect();
    let samples: Vec<ObservabilitySample> = solved
        .par_iter()
        .zip(data)
        .map(|(a, (_, g))| {
            let mut terms = [0.0f64; 4];
            for m in 0..=nt {
                let wt = if m == 0 || m == nt { 0.5 * dt } else { dt };
                let [e4, e2, ro, tau] = tw[m];
                let phi = &a.field.values[m];
                if e4 > 0.0 {
                    let q = calc.integrate(grid, phi, |_| true, |_, u, ux, uxx| tau.powi(5) * u * u + tau.powi(3) * ux * ux + tau * uxx * uxx);
                    terms[0] += wt * e4 * q;
                }
                terms[2] += wt * e2 * op.mass_inner(&g[m], &g[m]);
                if ro > 0.0 {
                    let o: f64 = (0..grid.nx()).filter(|&i| mask[i]).map(|i| op.mass[i] * phi[i] * phi[i]).sum();
                    terms[3] += wt * ro * o;
                }
            }
            terms[1] = op.mass_inner(&a.phi0, &a.phi0);
            let lhs = terms[0] + terms[1];
            let rhs = terms[2] + terms[3];
            ObservabilitySample { lhs, rhs, ratio: (rhs > 0.0).then(|| lhs / rhs), terms }
        })
        .collect();
    let max_ratio = samples.iter().filter_map(|s| s.ratio).reduce(f64::max);
    ObservabilityReport { s, lambda: w.lambda, samples, max_ratio }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityScan {
    pub lambda: f64,
    pub s: Vec<f64>,
    /// NaN where every right-hand side vanished.
    pub max_ratios: Vec<f64>,
    /// Last index of the plateau that starts at the smallest s.
    pub knee: Option<usize>,
    /// max ratio at 2·s_knee over max ratio at s_knee.
    pub doubling_growth: Option<f64>,
}

/// Last index i such that values[0..=i] change by at most 5% per step.
pub fn onset_plateau_end(values: &[f64]) -> Option<usize> {
    if values.is_empty() || !values[0].is_finite() {
        return None;
    }
    let mut end = 0;
    for i in 1..values.len() {
        if values[i].is_finite() && (values[i] / values[i - 1] - 1.0).abs() <= 0.05 {
            end = i;
        } else {
            break;
        }
    }
    Some(end)
}

/// Max observability ratio along `s_values` (increasing) at fixed λ; adjoints are solved once.
///
/// The knee is the end of the plateau at small s, and the doubling test compares the knee
/// against 2·s_knee evaluated directly.
pub fn observability_scan(
    data: &[(Vec<f64>, Vec<Vec<f64>>)],
    s_values: &[f64],
    w: &CarlemanWeights,
    op: &DiscreteOperator,
    st: &Stepper,
    obs: &ObservationSet,
) -> Result<ObservabilityScan> {
    if s_values.iter().any(|v| !(*v > 0.0)) || s_values.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidInput("s values must be positive and increasing".into()));
    }
    let solved = adjoint_solves(data, w, op, st)?;
    let at = |s: f64| {
        let ws = CarlemanWeights { s, ..w.clone() };
        observability_terms(&solved, data, &ws, op, obs).max_ratio.unwrap_or(f64::NAN)
    };
    let max_ratios: Vec<f64> = s_values.iter().map(|&s| at(s)).collect();
    let knee = onset_plateau_end(&max_ratios);
    let doubling_growth = knee.map(|k| at(2.0 * s_values[k]) / max_ratios[k]).filter(|g| g.is_finite());
    Ok(ObservabilityScan { lambda: w.lambda, s: s_values.to_vec(), max_ratios, knee, doubling_growth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub s: f64,
    pub lambda: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: Option<f64>,
    pub log_scale: f64,
}

/// Carleman inequality with the observation sλ∫e^{−2sη(t,0)}ξ(t,0)|φ_xx(t,0)|² for φ_t + pφ_xxx + φ_x = 0.
///
/// `op` is the forward operator with unit drift; φ is its discrete adjoint with zero source.
pub fn boundary_carleman(phits: &[Vec<f64>], w: &CarlemanWeights, dom: &PiecewiseDomain, op: &DiscreteOperator, st: &Stepper) -> Result<BoundaryReport> {
    if let Some(k) = (1..dom.p.len()).find(|&k| !(dom.p[k] > dom.p[k - 1])) {
        return Err(Error::MonotonicityViolated(format!("p_{k} = {} does not exceed p_{} = {}", dom.p[k], k - 1, dom.p[k - 1])));
    }
    if w.mode != WeightMode::BoundaryObs {
        return Err(Error::InvalidInput("boundary_carleman needs boundary-observation weights".into()));
    }
    let grid = &op.grid;
    let (s, lam) = (w.s, w.lambda);
    let q = WeightedQuadrature::new(w, grid, None, 0.0, grid.dt(), grid.nt)?;
    let calc = PiecewiseCalculus::new(grid);
    let times = grid.times();
    let dt = grid.dt();
    let nt = grid.nt;
    let results: Vec<(f64, f64)> = phits
        .par_iter()
        .map(|phit| {
            let a = solve_adjoint_with(op, st, phit, None)?;
            let field = Field::from_samples(grid, a.field.values.clone(), 0.0, dt);
            let lhs = q.evaluate(&FieldDerivatives::new(&field, None)?).lhs;
            let mut rhs = 0.0;
            for (m, &t) in times.iter().enumerate() {
                let (lz, lx) = w.log_weights(t, 0.0)?;
                if !lz.is_finite() {
                    continue;
                }
                let wt = if m == 0 || m == nt { 0.5 * dt } else { dt };
                let uxx = calc.d[0][1].rows[0].iter().map(|&(j, c)| c * a.field.values[m][j]).sum::<f64>();
                let lw = -2.0 * s * lz.exp() + lx + (s * lam).ln() - q.shift;
                rhs += wt * lw.exp() * uxx * uxx;
            }
            Ok((lhs, rhs))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<Option<f64>> = results.iter().map(|(l, r)| (*r > 0.0).then(|| l / r)).collect();
    Ok(BoundaryReport {
        s,
        lambda: lam,
        lhs: results.iter().map(|r| r.0).collect(),
        rhs: results.iter().map(|r| r.1).collect(),
        max_ratio: ratios.iter().flatten().copied().reduce(f64::max),
        ratios,
        log_scale: q.shift,
    })
}

/// Hypothesis M gate used by the CLI before scanning.
pub fn require_hypothesis_m(dom: &PiecewiseDomain, obs: &ObservationSet) -> Result<()> {
    let r = check_hypothesis_m(dom, obs);
    if r.pass {
        Ok(())
    } else {
        Err(Error::HypothesisViolated(r.failures.join("; ")))
    }
}

/// u(t, x) = b(t) φ(x) with φ supported in ω, used to test set inclusion.
pub fn localized_sample(grid: &Grid, obs: &ObservationSet) -> Field {
    let (l, r) = obs.omega;
    let c = 0.5 * (l + r);
    let h = 0.5 * (r - l);
    let profile: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&x| {
            let y = (x - c) / h;
            if y.abs() < 1.0 {
                (1.0 - y * y).powi(4)
            } else {
                0.0
            }
        })
        .collect();
    let values = (0..=grid.nt)
        .map(|n| {
            let b = (PI * n as f64 / grid.nt as f64).sin().powi(2);
            profile.iter().map(|v| b * v).collect()
        })
        .collect();
    Field::from_samples(grid, values, 0.0, grid.dt())
}

/// Constant drift coefficients b, d as a [`Drift`].
pub fn constant_drift(b: f64, d: f64) -> Drift {
    Drift { b: Some(Coefficient::Constant(b)), d: Some(Coefficient::Constant(d)), conservative: None }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NaN".into())
}

impl ScanTable {
    /// One row per (s, λ, sample).
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["s", "lambda", "sample_id", "lhs", "rhs", "ratio", "u", "ux", "uxx", "source", "obs_u", "obs_ux", "obs_uxx", "log_scale"]);
        for r in &self.rows {
            let (p, b) = (&r.report, &r.report.breakdown);
            let mut row = vec![fmt_f64(r.s), fmt_f64(r.lambda), r.sample_id.to_string(), fmt_f64(p.lhs), fmt_f64(p.rhs), fmt_opt(p.ratio)];
            row.extend([b.u, b.ux, b.uxx, b.source, b.obs_u, b.obs_ux, b.obs_uxx, p.log_scale].map(fmt_f64));
            csv.push(row);
        }
        csv
    }
}

impl ObservabilityScan {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["s", "lambda", "max_ratio"]);
        for (s, r) in self.s.iter().zip(&self.max_ratios) {
            csv.push(vec![fmt_f64(*s), fmt_f64(self.lambda), fmt_f64(*r)]);
        }
        csv
    }
}

impl ObservabilityReport {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["sample_id", "s", "lambda", "lhs", "rhs", "ratio", "weighted_phi", "phi0", "source", "observation"]);
        for (i, x) in self.samples.iter().enumerate() {
            let mut row = vec![i.to_string(), fmt_f64(self.s), fmt_f64(self.lambda), fmt_f64(x.lhs), fmt_f64(x.rhs), fmt_opt(x.ratio)];
            row.extend(x.terms.map(fmt_f64));
            csv.push(row);
        }
        csv
    }
}

impl BoundaryReport {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["sample_id", "s", "lambda", "lhs", "rhs", "ratio", "log_scale"]);
        for i in 0..self.lhs.len() {
            csv.push(vec![
                i.to_string(),
                fmt_f64(self.s),
                fmt_f64(self.lambda),
                fmt_f64(self.lhs[i]),
                fmt_f64(self.rhs[i]),
                fmt_opt(self.ratios[i]),
                fmt_f64(self.log_scale),
            ]);
        }
        csv
    }
}
