//! Carleman weight profile β, its property audit, the weight families built
//! on it, and the interface matrix A(a).

use serde::{Deserialize, Serialize};

use crate::domain::{check_hypothesis_m, ObservationSet, PiecewiseDomain};
use crate::error::{Error, Result};

/// One piece of β. Affine: β = c + m (x − a). Quartic on (a, b), with u = x − a
/// and d = b − a: β = c + n u + m (u⁴/12 − d u³/6), so β″ = m (x − a)(x − b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BetaPiece {
    Affine { a: f64, b: f64, m: f64, c: f64 },
    Quartic { a: f64, b: f64, m: f64, n: f64, c: f64 },
}

impl BetaPiece {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            BetaPiece::Affine { a, b, .. } | BetaPiece::Quartic { a, b, .. } => (a, b),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            BetaPiece::Affine { a, m, c, .. } => c + m * (x - a),
            BetaPiece::Quartic { a, b, m, n, c } => {
                let (u, d) = (x - a, b - a);
                c + n * u + m * (u.powi(4) / 12.0 - d * u.powi(3) / 6.0)
            }
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            BetaPiece::Affine { m, .. } => m,
            BetaPiece::Quartic { a, b, m, n, .. } => n + m * quartic_integral(x - a, b - a),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            BetaPiece::Affine { .. } => 0.0,
            BetaPiece::Quartic { a, b, m, .. } => m * (x - a) * (x - b),
        }
    }

    pub fn d3(&self, x: f64) -> f64 {
        match *self {
            BetaPiece::Affine { .. } => 0.0,
            BetaPiece::Quartic { a, b, m, .. } => m * (2.0 * x - a - b),
        }
    }

    /// Real roots of β′ inside [a, b].
    pub fn derivative_roots(&self) -> Vec<f64> {
        match *self {
            BetaPiece::Affine { .. } => vec![],
            BetaPiece::Quartic { a, b, m, n, .. } => {
                let d = b - a;
                // n + m (u³/3 − d u²/2) = 0  ⇔  u³ − 1.5 d u² + 3n/m = 0
                if m == 0.0 {
                    return vec![];
                }
                real_cubic_roots(1.0, -1.5 * d, 0.0, 3.0 * n / m)
                    .into_iter()
                    .filter(|u| *u >= 0.0 && *u <= d)
                    .map(|u| a + u)
                    .collect()
            }
        }
    }

    /// (min, max) of β over the closed piece.
    pub fn range(&self) -> (f64, f64) {
        let (a, b) = self.bounds();
        let mut pts = vec![a, b];
        pts.extend(self.derivative_roots());
        let vals: Vec<f64> = pts.iter().map(|&x| self.value(x)).collect();
        (
            vals.iter().cloned().fold(f64::INFINITY, f64::min),
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// ∫_0^u t (t − d) dt.
pub fn quartic_integral(u: f64, d: f64) -> f64 {
    u * u * (u / 3.0 - d / 2.0)
}

/// Real roots of a3 x³ + a2 x² + a1 x + a0 (a3 ≠ 0) by discriminant analysis.
pub fn real_cubic_roots(a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    let (b, c, d) = (a2 / a3, a1 / a3, a0 / a3);
    // x = y − b/3, y³ + p y + q = 0
    let p = c - b * b / 3.0;
    let q = 2.0 * b.powi(3) / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let scale = (q.abs() / 2.0).max((p.abs() / 3.0).powf(1.5)).max(f64::MIN_POSITIVE);
    let mut roots = if disc > 1e-14 * scale * scale {
        let sq = disc.sqrt();
        vec![(-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt() + shift]
    } else if p.abs() < 1e-300 {
        vec![shift]
    } else if disc.abs() <= 1e-14 * scale * scale {
        let y = 3.0 * q / p;
        vec![y + shift, -y / 2.0 + shift]
    } else {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    };
    // one Newton polish per root
    for x in roots.iter_mut() {
        let f = ((a3 * *x + a2) * *x + a1) * *x + a0;
        let df = (3.0 * a3 * *x + 2.0 * a2) * *x + a1;
        if df != 0.0 {
            *x -= f / df;
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// Quartic on the observation piece, observation in the interior.
    Interior,
    /// Decreasing affine profile, observation at x = 0.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub kind: BetaKind,
    pub pieces: Vec<BetaPiece>,
    pub j: Option<usize>,
    pub r: f64,
    pub kappa: f64,
    pub norm_inf: f64,
    pub min: f64,
    pub c0: f64,
    pub notes: Vec<String>,
}

impl WeightFunction {
    pub fn piece_of(&self, x: f64) -> usize {
        let n = self.pieces.len();
        (0..n).find(|&k| x < self.pieces[k].bounds().1).unwrap_or(n - 1)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.pieces[self.piece_of(x)].value(x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.pieces[self.piece_of(x)].d1(x)
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.pieces[self.piece_of(x)].d2(x)
    }

    /// Scaled profile cβ (used by homogeneity checks).
    pub fn scaled(&self, s: f64) -> WeightFunction {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match *p {
                BetaPiece::Affine { a, b, m, c } => BetaPiece::Affine { a, b, m: s * m, c: s * c },
                BetaPiece::Quartic { a, b, m, n, c } => {
                    BetaPiece::Quartic { a, b, m: s * m, n: s * n, c: s * c }
                }
            })
            .collect();
        WeightFunction {
            pieces,
            r: s * self.r,
            norm_inf: s * self.norm_inf,
            min: s * self.min,
            c0: s * self.c0,
            ..self.clone()
        }
    }

    fn refresh_extrema(&mut self) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.pieces {
            let (a, b) = p.range();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        self.min = lo;
        self.norm_inf = hi.abs().max(lo.abs());
    }
}

/// Slope chain across interfaces from √p_{k−1} β_x(a_k⁻) = √p_k β_x(a_k⁺).
fn chain(p_prev: f64, p_next: f64, slope: f64) -> f64 {
    (p_prev / p_next).sqrt() * slope
}

/// Admissible open interval for the quartic curvature m_j.
pub fn quartic_window(a: f64, b: f64, omega0: (f64, f64), n: f64) -> (f64, f64) {
    let d = b - a;
    let il = quartic_integral(omega0.0 - a, d).abs();
    let ir = quartic_integral(omega0.1 - a, d).abs();
    let lower = (6.0 * n / d.powi(3)).max(n / ir);
    let upper = n / il;
    (lower, upper)
}

/// Range test: κ max < 2 min per piece with a 10% share of the limiting slack.
fn step4_ok(pieces: &[BetaPiece], kappa: f64, slope_margin: f64) -> bool {
    pieces.iter().all(|p| {
        let (lo, hi) = p.range();
        lo > 0.0 && 2.0 * lo - kappa * hi >= 0.1 * (2.0 - kappa) * hi && lo >= slope_margin
    })
}

fn set_intercepts(pieces: &mut [BetaPiece], c0: f64) {
    let mut c = c0;
    for p in pieces.iter_mut() {
        match p {
            BetaPiece::Affine { c: ck, .. } | BetaPiece::Quartic { c: ck, .. } => *ck = c,
        }
        c = p.value(p.bounds().1);
    }
}

fn search_c0(pieces: &mut [BetaPiece], kappa: f64, slope_margin: f64) -> Result<f64> {
    let mut c0 = 1.0;
    for _ in 0..400 {
        set_intercepts(pieces, c0);
        if step4_ok(pieces, kappa, slope_margin) {
            return Ok(c0);
        }
        c0 *= 2.0;
    }
    Err(Error::InvalidInput("no intercept c0 satisfies the piecewise range condition".into()))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 1.0 && kappa < 2.0) {
        return Err(Error::InvalidInput(format!("kappa = {kappa} must lie in (1, 2)")));
    }
    Ok(())
}

pub fn construct_beta(dom: &PiecewiseDomain, obs: &ObservationSet, kappa: f64) -> Result<WeightFunction> {
    construct_beta_with(dom, obs, kappa, 1.0)
}

/// β with interior observation on I_j, starting from slope m0 on I_0 (or n_0 = m0 when j = 0).
pub fn construct_beta_with(
    dom: &PiecewiseDomain,
    obs: &ObservationSet,
    kappa: f64,
    m0: f64,
) -> Result<WeightFunction> {
    check_kappa(kappa)?;
    if !(m0 > 0.0) {
        return Err(Error::InvalidInput(format!("m0 = {m0} must be positive")));
    }
    let rep = check_hypothesis_m(dom, obs);
    if !rep.pass {
        return Err(Error::HypothesisViolated(rep.failures.join("; ")));
    }
    let n_p = dom.n_pieces();
    let j = obs.j;
    let mut pieces = Vec::with_capacity(n_p);
    let mut slope = m0;
    for k in 0..j {
        let (a, b) = dom.piece_bounds(k);
        if k > 0 {
            slope = chain(dom.p[k - 1], dom.p[k], slope);
        }
        pieces.push(BetaPiece::Affine { a, b, m: slope, c: 0.0 });
    }
    let n = if j == 0 { m0 } else { chain(dom.p[j - 1], dom.p[j], slope) };
    let (a, b) = dom.piece_bounds(j);
    let (lower, upper) = quartic_window(a, b, obs.omega0, n);
    if !(upper.is_finite() && lower < upper) {
        return Err(Error::EmptyWindow { lower, upper });
    }
    let mj = 0.5 * (lower + upper);
    let quartic = BetaPiece::Quartic { a, b, m: mj, n, c: 0.0 };
    slope = quartic.d1(b);
    pieces.push(quartic);
    for k in j + 1..n_p {
        let (a, b) = dom.piece_bounds(k);
        slope = chain(dom.p[k - 1], dom.p[k], slope);
        pieces.push(BetaPiece::Affine { a, b, m: slope, c: 0.0 });
    }
    let slope_margin = affine_slope_margin(&pieces);
    let c0 = search_c0(&mut pieces, kappa, slope_margin.unwrap_or(0.0))?;
    let mut notes = rep.notes;
    notes.push(format!("m_j window ({lower}, {upper}), m_j = {mj}"));
    let mut w = WeightFunction {
        kind: BetaKind::Interior,
        pieces,
        j: Some(j),
        r: 0.0,
        kappa,
        norm_inf: 0.0,
        min: 0.0,
        c0,
        notes,
    };
    w.refresh_extrema();
    w.r = slope_margin.map_or(w.min, |s| s.min(w.min));
    Ok(w)
}

fn affine_slope_margin(pieces: &[BetaPiece]) -> Option<f64> {
    pieces
        .iter()
        .filter_map(|p| match p {
            BetaPiece::Affine { m, .. } => Some(m.abs()),
            _ => None,
        })
        .reduce(f64::min)
}

/// Decreasing piecewise-affine β for observation at x = 0; needs p increasing.
pub fn construct_boundary_beta(dom: &PiecewiseDomain, kappa: f64) -> Result<WeightFunction> {
    check_kappa(kappa)?;
    for k in 1..dom.n_pieces() {
        if !(dom.p[k] > dom.p[k - 1]) {
            return Err(Error::MonotonicityViolated(format!(
                "p_{} = {} is not above p_{} = {}",
                k,
                dom.p[k],
                k - 1,
                dom.p[k - 1]
            )));
        }
    }
    let mut pieces = Vec::new();
    let mut slope = -1.0;
    for k in 0..dom.n_pieces() {
        let (a, b) = dom.piece_bounds(k);
        if k > 0 {
            slope = chain(dom.p[k - 1], dom.p[k], slope);
        }
        pieces.push(BetaPiece::Affine { a, b, m: slope, c: 0.0 });
    }
    let margin = affine_slope_margin(&pieces).unwrap();
    // intercept fixed at the right end: shift so the last piece ends at c0
    let c0 = search_c0(&mut pieces, kappa, margin)?;
    let mut w = WeightFunction {
        kind: BetaKind::Boundary,
        pieces,
        j: None,
        r: 0.0,
        kappa,
        norm_inf: 0.0,
        min: 0.0,
        c0,
        notes: vec![],
    };
    w.refresh_extrema();
    w.r = margin.min(w.min);
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Signed slack; positive when the property holds.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub pass: bool,
    pub checks: Vec<Check>,
    pub max_tc_residual: f64,
}

impl BetaReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, margin: f64, detail: String) -> Check {
    Check { name: name.to_string(), pass: margin > 0.0, margin, detail }
}

/// Audit of the six properties of β; `obs` is `None` for the boundary profile.
pub fn verify_beta(
    beta: &WeightFunction,
    dom: &PiecewiseDomain,
    obs: Option<&ObservationSet>,
    kappa: f64,
) -> BetaReport {
    let mut checks = Vec::new();
    let r = beta.r;
    let n_p = beta.pieces.len();

    // (i)
    let min = beta.pieces.iter().map(|p| p.range().0).fold(f64::INFINITY, f64::min);
    checks.push(check(
        "min_beta",
        if r > 0.0 { min - r + f64::EPSILON * min.abs() } else { -1.0 },
        format!("min β = {min}, r = {r}"),
    ));

    // (ii) sign pattern outside the quartic piece
    let j = obs.map(|o| o.j);
    let mut sign_margin = f64::INFINITY;
    let mut sign_detail = String::new();
    for (k, p) in beta.pieces.iter().enumerate() {
        if Some(k) == j {
            continue;
        }
        let want_pos = match j {
            Some(j) => k < j,
            None => false,
        };
        let (a, b) = p.bounds();
        for x in [a, b, 0.5 * (a + b)] {
            let v = p.d1(x);
            let slack = if want_pos { v - r } else { -v - r };
            if slack < sign_margin {
                sign_margin = slack;
                sign_detail = format!("piece {k}: β_x = {v} (need {} r = {r})", if want_pos { "≥" } else { "≤ −" });
            }
        }
    }
    if sign_margin == f64::INFINITY {
        sign_detail = "no affine pieces".into();
    }
    // equality at the margin is acceptable
    let sign_margin = if sign_margin.is_finite() { sign_margin + 1e-14 * r.max(1.0) } else { 1.0 };
    checks.push(check("sign_pattern", sign_margin, sign_detail));

    // (iii) no critical point of β on Ī_j ∖ ω₀
    if let (Some(j), Some(o)) = (j, obs) {
        let p = &beta.pieces[j];
        let (a, b) = p.bounds();
        let (l, rr) = o.omega0;
        let roots = p.derivative_roots();
        let mut m = f64::INFINITY;
        let samples = 2000;
        for i in 0..=samples {
            let x = a + (b - a) * i as f64 / samples as f64;
            if x <= l || x >= rr {
                m = m.min(p.d1(x).abs());
            }
        }
        for x in [l, rr] {
            m = m.min(p.d1(x).abs());
        }
        let bad: Vec<f64> = roots.iter().cloned().filter(|&x| x <= l || x >= rr).collect();
        let margin = if bad.is_empty() { m } else { -1.0 };
        checks.push(check(
            "nonvanishing_outside_omega0",
            margin,
            format!("roots of β_j' {roots:?}, min |β_x| off ω₀ = {m}"),
        ));
    }

    // (iv)
    let mut range_margin = f64::INFINITY;
    for p in &beta.pieces {
        let (lo, hi) = p.range();
        range_margin = range_margin.min(2.0 * lo - kappa * hi);
    }
    checks.push(check("kappa_range", range_margin, format!("min over pieces of 2 min − κ max = {range_margin}")));

    // (v) transmission conditions, relative
    let mut tc = 0.0f64;
    for k in 1..n_p {
        let (lp, rp) = (&beta.pieces[k - 1], &beta.pieces[k]);
        let a = rp.bounds().0;
        let (pl, pr) = (dom.p[k - 1], dom.p[k]);
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
        let (v0, v1) = (lp.value(a), rp.value(a));
        let (g0, g1) = (pl.sqrt() * lp.d1(a), pr.sqrt() * rp.d1(a));
        let (h0, h1) = (pl * lp.d2(a), pr * rp.d2(a));
        tc = tc.max(rel(v0, v1)).max(rel(g0, g1));
        // β_xx vanishes on both sides; compare against the curvature scale
        let scale = beta.pieces.iter().map(|p| p.d2(0.5 * (p.bounds().0 + p.bounds().1)).abs()).fold(1.0, f64::max);
        tc = tc.max((h0 - h1).abs() / scale);
    }
    checks.push(check("transmission", 1e-12 - tc, format!("max relative TC residual {tc:e}")));

    // (vi) positive derivative jumps
    let mut jump = f64::INFINITY;
    for k in 1..n_p {
        let a = beta.pieces[k].bounds().0;
        jump = jump.min(beta.pieces[k].d1(a) - beta.pieces[k - 1].d1(a));
    }
    if n_p == 1 {
        jump = 1.0;
    }
    checks.push(check("positive_jumps", jump, format!("min [β_x]_a = {jump}")));

    BetaReport { pass: checks.iter().all(|c| c.pass), checks, max_tc_residual: tc }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    TwoParameter,
    OneParameter,
    SymmetricTime,
    BoundaryObs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlemanWeights {
    pub beta: WeightFunction,
    pub s: f64,
    pub lambda: f64,
    pub t_final: f64,
    pub mode: WeightMode,
}

impl CarlemanWeights {
    pub fn new(beta: WeightFunction, s: f64, lambda: f64, t_final: f64, mode: WeightMode) -> Result<Self> {
        if !(s > 0.0 && lambda > 0.0 && t_final > 0.0) {
            return Err(Error::InvalidInput(format!("s = {s}, λ = {lambda}, T = {t_final} must be positive")));
        }
        if mode == WeightMode::BoundaryObs && beta.kind != BetaKind::Boundary
            || mode != WeightMode::BoundaryObs && beta.kind == BetaKind::Boundary
        {
            return Err(Error::InvalidInput("weight mode does not match the β construction".into()));
        }
        let w = CarlemanWeights { beta, s, lambda, t_final, mode };
        if mode == WeightMode::OneParameter && lambda < w.lambda_threshold() {
            return Err(Error::InvalidInput(format!(
                "one-parameter weights need λ ≥ κ²/‖β‖ = {}",
                w.lambda_threshold()
            )));
        }
        Ok(w)
    }

    pub fn with_s(&self, s: f64) -> Self {
        CarlemanWeights { s, ..self.clone() }
    }

    pub fn lambda_threshold(&self) -> f64 {
        self.beta.kappa.powi(2) / self.beta.norm_inf
    }

    fn time_range(&self) -> (f64, f64) {
        match self.mode {
            WeightMode::SymmetricTime => (-self.t_final, self.t_final),
            _ => (0.0, self.t_final),
        }
    }

    fn check_point(&self, t: f64, x: f64) -> Result<()> {
        let (t0, t1) = self.time_range();
        let l = self.beta.pieces.last().unwrap().bounds().1;
        if !(t >= t0 && t <= t1 && x >= 0.0 && x <= l) {
            return Err(Error::OutOfDomain { t, x });
        }
        Ok(())
    }

    /// Time factor in the denominator (or 1/τ in one-parameter mode).
    pub fn theta(&self, t: f64) -> f64 {
        let tt = self.t_final;
        match self.mode {
            WeightMode::TwoParameter | WeightMode::BoundaryObs => t * (tt - t),
            WeightMode::SymmetricTime => (t + tt) * (tt - t),
            WeightMode::OneParameter => {
                if t <= tt / 2.0 {
                    tt * tt / 4.0
                } else {
                    t * (tt - t)
                }
            }
        }
    }

    /// ln(e^{κλ‖β‖} − e^{λb}) evaluated without forming either exponential.
    fn log_gap(&self, b: f64) -> f64 {
        let lam = self.lambda;
        let top = self.beta.kappa * lam * self.beta.norm_inf;
        lam * b + (top - lam * b).exp_m1().ln()
    }

    /// (ln ζ, ln ξ) where the primary weight is ζ = gap/θ and ξ = e^{λβ}/θ.
    pub fn log_weights(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        self.check_point(t, x)?;
        let th = self.theta(t);
        if th <= 0.0 {
            return Ok((f64::INFINITY, f64::INFINITY));
        }
        let b = self.beta.value(x);
        Ok((self.log_gap(b) - th.ln(), self.lambda * b - th.ln()))
    }

    /// Two-parameter modes return (η, ξ); one-parameter returns (α, τ).
    pub fn eval(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        let (lz, lx) = self.log_weights(t, x)?;
        match self.mode {
            WeightMode::OneParameter => Ok((lz.exp(), 1.0 / self.theta(t))),
            _ => Ok((lz.exp(), lx.exp())),
        }
    }

    /// ln(e^{−2sη} ξ^k), −∞ where the weight blows up.
    pub fn log_carleman_factor(&self, t: f64, x: f64, k: f64) -> Result<f64> {
        let (lz, lx) = self.log_weights(t, x)?;
        if !lz.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(-2.0 * self.s * lz.exp() + k * lx)
    }

    /// e^{−2sη} ξ^k |v|², exactly 0 at the blow-up instants.
    pub fn integrand(&self, t: f64, x: f64, k: f64, v: f64) -> Result<f64> {
        let lf = self.log_carleman_factor(t, x, k)?;
        if lf == f64::NEG_INFINITY || v == 0.0 {
            return Ok(0.0);
        }
        Ok((lf + 2.0 * v.abs().ln()).exp())
    }

    pub fn tau(&self, t: f64) -> f64 {
        1.0 / self.theta(t)
    }

    /// α̂(t) = τ(e^{κλ‖β‖} − e^{λ min β}).
    pub fn alpha_hat(&self, t: f64) -> f64 {
        self.log_gap(self.beta.min).exp() * self.tau(t)
    }

    /// ᾰ(t) = τ(e^{κλ‖β‖} − e^{λ‖β‖}).
    pub fn alpha_breve(&self, t: f64) -> f64 {
        self.log_gap(self.beta.norm_inf).exp() * self.tau(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceMatrix {
    pub a: f64,
    pub entries: [[f64; 3]; 3],
    pub minors: [f64; 3],
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
}

/// A(a) from one-sided values of p and β_x at the interface nearest to `a`.
pub fn interface_matrix(beta: &WeightFunction, dom: &PiecewiseDomain, a: f64) -> InterfaceMatrix {
    let k = dom
        .gamma
        .iter()
        .enumerate()
        .min_by(|x, y| (x.1 - a).abs().partial_cmp(&(y.1 - a).abs()).unwrap())
        .map(|(i, _)| i + 1)
        .expect("domain has no interfaces");
    let a = dom.gamma[k - 1];
    let (pl, pr) = (dom.p[k - 1], dom.p[k]);
    let (bl, br) = (beta.pieces[k - 1].d1(a), beta.pieces[k].d1(a));
    let jump = |f: &dyn Fn(f64, f64) -> f64| f(pr, br) - f(pl, bl);
    let a11 = jump(&|p, b| p * p * b.powi(5));
    let a22 = 8.0 / 3.0 * jump(&|p, b| p * b.powi(3));
    let a33 = jump(&|_, b| b);
    let a13 = jump(&|p, b| p * b.powi(3)) / 3.0;
    let entries = [[a11, 0.0, a13], [0.0, a22, 0.0], [a13, 0.0, a33]];
    let m1 = a11;
    let m2 = a11 * a22;
    let m3 = a22 * (a11 * a33 - a13 * a13);
    // spectrum: a22 and the eigenvalues of [[a11, a13], [a13, a33]]
    let tr = 0.5 * (a11 + a33);
    let rad = ((0.5 * (a11 - a33)).powi(2) + a13 * a13).sqrt();
    let min_eigenvalue = a22.min(tr - rad);
    InterfaceMatrix {
        a,
        entries,
        minors: [m1, m2, m3],
        min_eigenvalue,
        positive_definite: m1 > 0.0 && m2 > 0.0 && m3 > 0.0,
    }
}

/// Uniform lower bound γ = min over Γ of the smallest eigenvalue of A(a).
pub fn interface_gamma(beta: &WeightFunction, dom: &PiecewiseDomain) -> Option<f64> {
    dom.gamma
        .iter()
        .map(|&a| interface_matrix(beta, dom, a).min_eigenvalue)
        .reduce(f64::min)
}
