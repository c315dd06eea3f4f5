//! Piecewise domain, observation sets, admissibility hypotheses and
//! interface-aligned grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval (0, L) split at interfaces a_1 < ... < a_{N-1}, with coefficient
/// p_k on I_k = (a_k, a_{k+1}); a_0 = 0 and a_N = L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDomain {
    pub l: f64,
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
}

pub fn build_domain(l: f64, gamma: &[f64], p: &[f64]) -> Result<PiecewiseDomain> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::InvalidInput(format!("length L = {l} must be positive")));
    }
    if p.len() != gamma.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} coefficients for {} interfaces",
            p.len(),
            gamma.len()
        )));
    }
    for (index, &value) in p.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveCoefficient { index, value });
        }
    }
    let mut prev = 0.0;
    for &a in gamma {
        if !(a > prev) || !(a < l) {
            return Err(Error::UnorderedInterfaces(format!("{gamma:?} in (0, {l})")));
        }
        prev = a;
    }
    let rho0 = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let rho1 = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(PiecewiseDomain { l, gamma: gamma.to_vec(), p: p.to_vec(), rho0, rho1 })
}

impl PiecewiseDomain {
    pub fn n_pieces(&self) -> usize {
        self.p.len()
    }

    /// Endpoints a_0..a_N.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.gamma.len() + 2);
        v.push(0.0);
        v.extend_from_slice(&self.gamma);
        v.push(self.l);
        v
    }

    pub fn piece_bounds(&self, k: usize) -> (f64, f64) {
        let a = if k == 0 { 0.0 } else { self.gamma[k - 1] };
        let b = if k + 1 == self.n_pieces() { self.l } else { self.gamma[k] };
        (a, b)
    }

    /// Piece containing x, interfaces assigned to the piece on their right.
    pub fn piece_of(&self, x: f64) -> usize {
        self.gamma.iter().take_while(|&&a| x >= a).count()
    }

    pub fn p_at(&self, x: f64) -> f64 {
        self.p[self.piece_of(x).min(self.n_pieces() - 1)]
    }

    /// Reflection x -> L - x of interfaces and coefficients.
    pub fn mirror(&self) -> PiecewiseDomain {
        let gamma: Vec<f64> = self.gamma.iter().rev().map(|a| self.l - a).collect();
        let p: Vec<f64> = self.p.iter().rev().cloned().collect();
        PiecewiseDomain { l: self.l, gamma, p, rho0: self.rho0, rho1: self.rho1 }
    }

    /// Stretched coordinate ∫_0^x p^{-1/2}. A function F(stretch(x)) with F ∈ C²
    /// satisfies all three transmission conditions.
    pub fn stretch(&self, x: f64) -> f64 {
        let k = self.piece_of(x).min(self.n_pieces() - 1);
        let mut z = 0.0;
        for i in 0..k {
            let (a, b) = self.piece_bounds(i);
            z += (b - a) / self.p[i].sqrt();
        }
        let (a, _) = self.piece_bounds(k);
        z + (x - a) / self.p[k].sqrt()
    }

    pub fn stretched_length(&self) -> f64 {
        self.stretch(self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub omega: (f64, f64),
    pub j: usize,
    pub omega0: (f64, f64),
}

impl ObservationSet {
    /// Locates the piece containing ω and checks ω̄ ⊂ I_j, ω̄₀ ⊂ ω.
    pub fn new(dom: &PiecewiseDomain, omega: (f64, f64), omega0: (f64, f64)) -> Result<Self> {
        let (l, r) = omega;
        if !(l < r) {
            return Err(Error::InvalidInput(format!("empty observation interval {omega:?}")));
        }
        let j = dom.piece_of(l);
        if j >= dom.n_pieces() {
            return Err(Error::InvalidInput(format!("ω = {omega:?} outside (0, L)")));
        }
        let (a, b) = dom.piece_bounds(j);
        if !(l > a && r < b) {
            return Err(Error::InvalidInput(format!(
                "closure of ω = {omega:?} is not inside I_{j} = ({a}, {b})"
            )));
        }
        if !(omega0.0 > l && omega0.1 < r && omega0.0 < omega0.1) {
            return Err(Error::InvalidInput(format!("ω₀ = {omega0:?} is not compactly inside ω")));
        }
        Ok(ObservationSet { omega, j, omega0 })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.omega.0 && x < self.omega.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub pass: bool,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    fn from_failures(failures: Vec<String>, notes: Vec<String>) -> Self {
        HypothesisReport { pass: failures.is_empty(), failures, notes }
    }
}

/// Strict jump inequality at a_k ("down" means p(a_k⁻) > p(a_k⁺)).
fn jump_is(dom: &PiecewiseDomain, k: usize, down: bool) -> bool {
    let (lft, rgt) = (dom.p[k - 1], dom.p[k]);
    if down {
        lft > rgt
    } else {
        lft < rgt
    }
}

pub fn check_hypothesis_m(dom: &PiecewiseDomain, obs: &ObservationSet) -> HypothesisReport {
    let n = dom.n_pieces();
    let j = obs.j;
    let mut failures = Vec::new();
    if j >= n {
        failures.push(format!("piece index j = {j} out of range"));
        return HypothesisReport::from_failures(failures, vec![]);
    }
    for k in 1..n {
        let down = if n == 1 {
            unreachable!()
        } else if j == 0 {
            false
        } else if j == n - 1 {
            true
        } else {
            k <= j
        };
        if !jump_is(dom, k, down) {
            let rel = if down { ">" } else { "<" };
            failures.push(format!(
                "a_{k}: need p(a_{k}-) {rel} p(a_{k}+), got {} vs {}",
                dom.p[k - 1],
                dom.p[k]
            ));
        }
    }
    let mut notes = Vec::new();
    if n > 1 && (j == 0 || j == n - 1) {
        notes.push(
            "sign requirement on β_x read on pieces other than I_j (the quartic changes sign in ω₀)"
                .to_string(),
        );
    }
    HypothesisReport::from_failures(failures, notes)
}

/// Interface symmetry a_k + a_{N-k} = L with L/2 ∉ Γ; optionally p_k = p_{N-1-k}.
pub fn check_hypothesis_i(dom: &PiecewiseDomain, require_p_symmetry: bool) -> HypothesisReport {
    let mut failures = Vec::new();
    let m = dom.gamma.len();
    let half = dom.l / 2.0;
    // a few ulps of L: L − a need not round back to a partner bit-for-bit
    let tol = 4.0 * f64::EPSILON * dom.l;
    for (k, &a) in dom.gamma.iter().enumerate() {
        if (a - half).abs() <= tol {
            failures.push(format!("a_{} = L/2 is an interface", k + 1));
        }
        let partner = dom.gamma[m - 1 - k];
        if (a + partner - dom.l).abs() > tol {
            failures.push(format!("a_{} + a_{} = {} != L", k + 1, m - k, a + partner));
        }
    }
    if require_p_symmetry {
        let n = dom.n_pieces();
        for k in 0..n / 2 {
            if dom.p[k] != dom.p[n - 1 - k] {
                failures.push(format!("p_{k} = {} != p_{} = {}", dom.p[k], n - 1 - k, dom.p[n - 1 - k]));
            }
        }
    }
    HypothesisReport::from_failures(failures, vec![])
}

/// Jump pattern used by the potential-recovery experiments: p symmetric, the jump
/// sign changes exactly once and the change happens at the piece holding L/2.
pub fn check_symmetric_pattern(dom: &PiecewiseDomain) -> HypothesisReport {
    let mut rep = check_hypothesis_i(dom, true);
    let n = dom.n_pieces();
    if n == 1 {
        return rep;
    }
    let centre = dom.piece_of(dom.l / 2.0);
    for k in 1..n {
        let down = k <= centre;
        if !jump_is(dom, k, down) {
            rep.failures.push(format!(
                "a_{k}: expected the jump to go {} towards the centre piece {centre}",
                if down { "down" } else { "up" }
            ));
        }
    }
    rep.notes.push(format!("single jump-sign change at piece {centre} containing L/2"));
    rep.pass = rep.failures.is_empty();
    rep
}

/// Uniform grid on each piece; piece k spans nodes start..=end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceGrid {
    pub start: usize,
    pub end: usize,
    pub h: f64,
}

impl PieceGrid {
    pub fn n_intervals(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub interface_index: Vec<usize>,
    pub pieces: Vec<PieceGrid>,
    pub p: Vec<f64>,
    pub nt: usize,
    pub t_final: f64,
}

/// A piece needs at least this many interior nodes.
pub const MIN_INTERIOR_NODES: usize = 4;

pub fn build_grid(dom: &PiecewiseDomain, h_target: f64, nt: usize, t_final: f64) -> Result<Grid> {
    if !(h_target > 0.0) || !(t_final > 0.0) || nt < 2 {
        return Err(Error::InvalidInput(format!(
            "grid needs h > 0, T > 0, nt >= 2 (got h={h_target}, T={t_final}, nt={nt})"
        )));
    }
    let bp = dom.breakpoints();
    let mut nodes = vec![0.0];
    let mut pieces = Vec::new();
    let mut interface_index = Vec::new();
    for k in 0..dom.n_pieces() {
        let (a, b) = (bp[k], bp[k + 1]);
        let n = ((b - a) / h_target - 1e-9).ceil().max(1.0) as usize;
        if n < MIN_INTERIOR_NODES + 1 {
            return Err(Error::DegenerateGrid(format!(
                "piece {k} = ({a}, {b}) gets {} interior nodes at h = {h_target}",
                n - 1
            )));
        }
        let h = (b - a) / n as f64;
        let start = nodes.len() - 1;
        for i in 1..n {
            nodes.push(a + i as f64 * h);
        }
        nodes.push(b);
        if k > 0 {
            interface_index.push(start);
        }
        pieces.push(PieceGrid { start, end: nodes.len() - 1, h });
    }
    Ok(Grid { nodes, interface_index, pieces, p: dom.p.clone(), nt, t_final })
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.nodes.len()
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|n| self.t_final * n as f64 / self.nt as f64).collect()
    }

    /// Lumped piecewise trapezoid weights; interface nodes collect both sides.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.nx()];
        for pc in &self.pieces {
            for i in pc.start..pc.end {
                w[i] += 0.5 * pc.h;
                w[i + 1] += 0.5 * pc.h;
            }
        }
        w
    }

    /// True when x_i + x_{nx-1-i} = L to rounding for every node.
    pub fn is_symmetric(&self) -> bool {
        let n = self.nx();
        let l = self.nodes[n - 1];
        (0..n).all(|i| (self.nodes[i] + self.nodes[n - 1 - i] - l).abs() <= 1e-12 * l)
    }

    pub fn with_time(&self, nt: usize, t_final: f64) -> Grid {
        Grid { nt, t_final, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_piece_demo_domain() {
        let d = build_domain(3.0, &[1.0, 2.0], &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((d.rho0, d.rho1), (1.0, 3.0));
        assert_eq!(d.piece_of(1.0), 1);
        assert_eq!(d.piece_of(0.5), 0);
        assert_eq!(d.piece_of(3.0), 2);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            build_domain(2.0, &[1.0], &[1.0, -1.0]),
            Err(Error::NonPositiveCoefficient { index: 1, .. })
        ));
        assert!(matches!(build_domain(3.0, &[2.0, 1.0], &[1.0; 3]), Err(Error::UnorderedInterfaces(_))));
        assert!(matches!(build_domain(3.0, &[0.0], &[1.0; 2]), Err(Error::UnorderedInterfaces(_))));
        assert!(matches!(build_domain(3.0, &[1.0], &[1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn hypothesis_m_examples() {
        let d = build_domain(3.0, &[1.0, 2.0], &[3.0, 1.0, 2.0]).unwrap();
        let o = ObservationSet::new(&d, (1.2, 1.8), (1.3, 1.7)).unwrap();
        assert_eq!(o.j, 1);
        assert!(check_hypothesis_m(&d, &o).pass);
        let o0 = ObservationSet::new(&d, (0.2, 0.8), (0.3, 0.7)).unwrap();
        let r = check_hypothesis_m(&d, &o0);
        assert!(!r.pass);
        assert!(r.failures[0].starts_with("a_1"));
        let d2 = build_domain(2.0, &[1.0], &[1.0, 2.0]).unwrap();
        let o2 = ObservationSet::new(&d2, (0.2, 0.8), (0.3, 0.7)).unwrap();
        assert!(check_hypothesis_m(&d2, &o2).pass);
    }

    #[test]
    fn hypothesis_i_examples() {
        let d = build_domain(3.0, &[1.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!(check_hypothesis_i(&d, true).pass);
        let d = build_domain(2.0, &[1.0], &[1.0, 2.0]).unwrap();
        assert!(!check_hypothesis_i(&d, false).pass);
        let d = build_domain(3.0, &[0.5, 1.5], &[1.0; 3]).unwrap();
        assert!(!check_hypothesis_i(&d, false).pass);
    }

    #[test]
    fn grid_examples() {
        let d = build_domain(1.0, &[], &[1.0]).unwrap();
        assert!(matches!(build_grid(&d, 0.25, 4, 1.0), Err(Error::DegenerateGrid(_))));
        let d = build_domain(2.0, &[1.0], &[1.0, 4.0]).unwrap();
        let g = build_grid(&d, 0.1, 4, 1.0).unwrap();
        assert_eq!(g.nodes[g.interface_index[0]], 1.0);
        for pc in &g.pieces {
            for i in pc.start..pc.end {
                assert!((g.nodes[i + 1] - g.nodes[i] - pc.h).abs() < 1e-14);
            }
        }
        let g2 = build_grid(&d, 0.05, 4, 1.0).unwrap();
        for (a, b) in g.pieces.iter().zip(&g2.pieces) {
            assert_eq!(2 * a.n_intervals(), b.n_intervals());
        }
    }

    #[test]
    fn stretch_is_continuous() {
        let d = build_domain(3.0, &[1.0, 2.0], &[4.0, 1.0, 9.0]).unwrap();
        assert!((d.stretch(1.0) - 0.5).abs() < 1e-15);
        assert!((d.stretch(1.0 - 1e-12) - 0.5).abs() < 1e-11);
        assert!((d.stretched_length() - (0.5 + 1.0 + 1.0 / 3.0)).abs() < 1e-15);
    }
}
