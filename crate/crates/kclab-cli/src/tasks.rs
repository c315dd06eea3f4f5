//! Task runners. Each writes its artifacts under `out` and returns scalar metrics.

use std::collections::BTreeMap;
use std::path::Path;

use kclab::artifacts::{fmt_f64, write_json, Csv};
use kclab::carleman_lab::*;
use kclab::control::*;
use kclab::domain::check_hypothesis_m;
use kclab::inverse::*;
use kclab::kdv_solver::*;
use kclab::weights::*;
use kclab::{Error, Field, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{self, ExperimentConfig, Profile, Setup, Task};

pub type Metrics = BTreeMap<String, f64>;

fn metrics<const N: usize>(items: [(&str, f64); N]) -> Metrics {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn write_summary(out: &Path, task: Task, seed: u64, m: &Metrics, detail: serde_json::Value) -> Result<()> {
    // JSON has no NaN; absent values become null
    let m: BTreeMap<&str, Option<f64>> = m.iter().map(|(k, v)| (k.as_str(), v.is_finite().then_some(*v))).collect();
    write_json(&out.join("summary.json"), &json!({ "task": task.name(), "seed": seed, "metrics": m, "detail": detail }))
}

fn obs(s: &Setup) -> &kclab::ObservationSet {
    s.obs.as_ref().expect("validated: observation present")
}

fn interior_beta(cfg: &ExperimentConfig, s: &Setup) -> Result<WeightFunction> {
    construct_beta(&s.dom, obs(s), cfg.weights.kappa)
}

fn lambda_of(cfg: &ExperimentConfig, beta: &WeightFunction) -> f64 {
    cfg.weights.lambda.unwrap_or(cfg.weights.lambda_factor * beta.kappa.powi(2) / beta.norm_inf)
}

fn forward(s: &Setup, drift: Drift) -> Result<(DiscreteOperator, Stepper)> {
    let op = assemble_operator(&s.grid, &s.dom, BoundarySide::Forward, drift)?;
    let st = Stepper::new(&op, 0.5)?;
    Ok((op, st))
}

pub fn run(task: Task, cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    match task {
        Task::Simulate => simulate(cfg, s, out),
        Task::Beta => beta(cfg, s, out),
        Task::Carleman => carleman(cfg, s, out),
        Task::Observability => observability(cfg, s, out),
        Task::Control => control(cfg, s, out),
        Task::Trajectory => trajectory(cfg, s, out),
        Task::Inverse => inverse(cfg, s, out),
        Task::Sweep => sweep(cfg, out),
    }
}

fn simulate(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let l = s.dom.l;
    let y0 = cfg
        .params
        .y0
        .clone()
        .unwrap_or(Profile::Gaussian { amplitude: 1.0, center: 0.5 * l, width: l / 15.0 })
        .sample(&s.grid, l);
    let (op, st) = forward(s, Drift::unit())?;
    let (y, picard) = if cfg.params.nonlinear {
        let r = solve_nonlinear_with(&op, &st, &y0, None, None)?;
        let worst = r.iterations.iter().copied().max().unwrap_or(0);
        (r.field, Some((worst, r.max_contraction)))
    } else {
        (solve_linear_with(&op, &st, &y0, None)?, None)
    };
    y.dump(out, "y")?;
    let e = energy_report(&y, &op, &s.dom, EnergyKind::Dissipativity, None);
    let mut m = metrics([
        ("initial_norm", op.mass_norm(&y0)),
        ("final_norm", op.mass_norm(y.last())),
        ("energy_residual", e.residual),
        ("max_growth", e.max_growth),
    ]);
    if let Some((it, c)) = picard {
        m.insert("max_picard_iterations".into(), it as f64);
        m.insert("max_contraction".into(), c);
    }
    write_summary(out, Task::Simulate, cfg.params.seed, &m, json!({ "energy": e, "nonlinear": cfg.params.nonlinear }))?;
    Ok(m)
}

fn beta(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let kappa = cfg.weights.kappa;
    let (beta, hyp) = if cfg.weights.mode == WeightMode::BoundaryObs {
        (construct_boundary_beta(&s.dom, kappa)?, None)
    } else {
        (interior_beta(cfg, s)?, Some(check_hypothesis_m(&s.dom, obs(s))))
    };
    let report = verify_beta(&beta, &s.dom, s.obs.as_ref().filter(|_| hyp.is_some()), kappa);
    let interfaces: Vec<InterfaceMatrix> = s.dom.gamma.iter().map(|&a| interface_matrix(&beta, &s.dom, a)).collect();
    let pieces: Vec<_> = beta.pieces.iter().enumerate().map(|(i, p)| json!({ "index": i, "piece": p })).collect();
    let doc = json!({
        "kind": beta.kind,
        "pieces": pieces,
        "observation_piece": beta.j,
        "r": beta.r,
        "kappa": beta.kappa,
        "norm_inf": beta.norm_inf,
        "min": beta.min,
        "c0": beta.c0,
        "notes": beta.notes,
        "hypothesis_m": hyp,
        "report": report,
        "interfaces": interfaces,
        "gamma": interface_gamma(&beta, &s.dom),
    });
    write_json(&out.join("beta.json"), &doc)?;
    let m = metrics([
        ("pass", if report.pass { 1.0 } else { 0.0 }),
        ("max_tc_residual", report.max_tc_residual),
        ("r", beta.r),
        ("lambda0", beta.kappa.powi(2) / beta.norm_inf),
        ("interface_gamma", opt(interface_gamma(&beta, &s.dom))),
    ]);
    write_summary(out, Task::Beta, cfg.params.seed, &m, json!({}))?;
    if !report.pass {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(Error::HypothesisViolated(format!("verify_beta failed: {}", failed.join(", "))));
    }
    Ok(m)
}

fn carleman(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let svals = cfg.weights.s_range.as_ref().expect("validated").values();
    let seed = cfg.params.seed;
    if cfg.weights.mode == WeightMode::BoundaryObs {
        return boundary(cfg, s, out, &svals);
    }
    let beta = interior_beta(cfg, s)?;
    let l0 = beta.kappa.powi(2) / beta.norm_inf;
    let lambdas: Vec<f64> = match cfg.weights.lambda {
        Some(l) => vec![l],
        None => cfg.weights.lambda_factors.iter().map(|f| f * l0).collect(),
    };
    let w = CarlemanWeights::new(beta, svals[0], lambdas[0], s.grid.t_final, cfg.weights.mode)?;
    let sampler = AdmissibleSampler::new(&s.dom, seed);
    let table = carleman_scan(&sampler, cfg.params.samples as u64, &svals, &lambdas, &w, &s.grid, &s.dom, obs(s), None)?;
    table.to_csv().write(&out.join("ratios.csv"))?;
    write_json(&out.join("knee.json"), &json!({ "s0": table.s0, "lambda0": table.lambda0, "knees": table.knees }))?;
    let worst = table.knees.iter().flat_map(|k| &k.max_ratios).copied().fold(f64::NAN, f64::max);
    let m = metrics([("s0", opt(table.s0)), ("lambda0", opt(table.lambda0)), ("max_ratio", worst), ("rows", table.rows.len() as f64)]);
    write_summary(out, Task::Carleman, seed, &m, json!({}))?;
    Ok(m)
}

fn boundary(cfg: &ExperimentConfig, s: &Setup, out: &Path, svals: &[f64]) -> Result<Metrics> {
    let seed = cfg.params.seed;
    let beta = construct_boundary_beta(&s.dom, cfg.weights.kappa)?;
    let lam = lambda_of(cfg, &beta);
    let w = CarlemanWeights::new(beta, svals[0], lam, s.grid.t_final, WeightMode::BoundaryObs)?;
    let (op, st) = forward(s, Drift::unit())?;
    let phits: Vec<Vec<f64>> = random_adjoint_data(&s.dom, &s.grid, seed, cfg.params.samples).into_iter().map(|d| d.0).collect();
    let mut csv = Csv::new(&["s", "lambda", "sample_id", "lhs", "rhs", "ratio", "log_scale"]);
    let mut maxes = vec![];
    for &sv in svals {
        let r = boundary_carleman(&phits, &w.with_s(sv), &s.dom, &op, &st)?;
        for i in 0..r.lhs.len() {
            let ratio = r.ratios[i].map(fmt_f64).unwrap_or_else(|| "NaN".into());
            csv.push(vec![fmt_f64(sv), fmt_f64(lam), i.to_string(), fmt_f64(r.lhs[i]), fmt_f64(r.rhs[i]), ratio, fmt_f64(r.log_scale)]);
        }
        maxes.push(opt(r.max_ratio));
    }
    csv.write(&out.join("ratios.csv"))?;
    let knee = plateau_knee(&maxes);
    write_json(&out.join("knee.json"), &json!({ "lambda": lam, "s": svals, "max_ratios": maxes.iter().map(|v| v.is_finite().then_some(*v)).collect::<Vec<_>>(), "knee_s": knee.map(|k| svals[k]) }))?;
    let worst = maxes.iter().copied().fold(f64::NAN, f64::max);
    let m = metrics([("lambda", lam), ("max_ratio", worst), ("knee_s", opt(knee.map(|k| svals[k])))]);
    write_summary(out, Task::Carleman, seed, &m, json!({ "boundary": true }))?;
    Ok(m)
}

fn observability(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let seed = cfg.params.seed;
    let svals = cfg.weights.s_range.as_ref().expect("validated").values();
    let beta = interior_beta(cfg, s)?;
    let lam = lambda_of(cfg, &beta);
    let w = CarlemanWeights::new(beta, svals[0], lam, s.grid.t_final, cfg.weights.mode)?;
    let (op, st) = forward(s, Drift::unit())?;
    let data = random_adjoint_data(&s.dom, &s.grid, seed, cfg.params.samples);
    let scan = observability_scan(&data, &svals, &w, &op, &st, obs(s))?;
    scan.to_csv().write(&out.join("ratios.csv"))?;
    let knee_s = scan.knee.map(|k| scan.s[k]);
    let at_knee = scan.knee.map(|k| scan.max_ratios[k]);
    write_json(&out.join("knee.json"), &json!({ "lambda": lam, "knee_s": knee_s, "max_ratio_at_knee": at_knee, "doubling_growth": scan.doubling_growth }))?;
    if let Some(ks) = knee_s {
        observability_check(&data, &w.with_s(ks), &op, &st, obs(s))?.to_csv().write(&out.join("knee_samples.csv"))?;
    }
    let m = metrics([("lambda", lam), ("knee_s", opt(knee_s)), ("max_ratio_at_knee", opt(at_knee)), ("doubling_growth", opt(scan.doubling_growth))]);
    write_summary(out, Task::Observability, seed, &m, json!({}))?;
    Ok(m)
}

fn control_weights(cfg: &ExperimentConfig, s: &Setup) -> Result<CarlemanWeights> {
    let beta = interior_beta(cfg, s)?;
    let lam = lambda_of(cfg, &beta);
    CarlemanWeights::new(beta, cfg.weights.s, lam, s.grid.t_final, cfg.weights.mode)
}

fn control(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let w = control_weights(cfg, s)?;
    let (op, st) = forward(s, Drift::unit())?;
    let z0 = cfg.params.y0.clone().unwrap_or(Profile::Sin2 { amplitude: 1.0, ramp: true }).sample(&s.grid, s.dom.l);
    let r = hum_control(&op, &st, obs(s), &z0, None, &w, cfg.params.eps, SolverOptions::default())?;
    r.v.dump(out, "v")?;
    r.z.dump(out, "z")?;
    let mut csv = Csv::new(&["restart", "residual"]);
    for (i, v) in r.residual_history.iter().enumerate() {
        csv.push(vec![i.to_string(), fmt_f64(*v)]);
    }
    csv.write(&out.join("residuals.csv"))?;
    let summary = r.summary(&w, 0);
    let decay = decay_check(&r, &w, &op);
    let m = metrics([
        ("eps", r.eps),
        ("terminal_norm", r.terminal_norm),
        ("initial_norm", r.initial_norm),
        ("terminal_ratio", decay.terminal_ratio),
        ("cg_iters", r.cg_iters as f64),
        ("consistency", r.consistency),
    ]);
    let detail = json!({ "control": summary, "weighted_norms": r.weighted_norms, "max_weighted": decay.max_weighted, "tail_ratio": decay.tail_ratio });
    write_summary(out, Task::Control, cfg.params.seed, &m, detail)?;
    Ok(m)
}

fn trajectory(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let w = control_weights(cfg, s)?;
    let (op, _) = forward(s, Drift::unit())?;
    let l = s.dom.l;
    let ybar0 = cfg.params.y0.clone().unwrap_or(Profile::Sin2 { amplitude: 0.5, ramp: false }).sample(&s.grid, l);
    let pert = cfg.params.perturbation.clone().unwrap_or(Profile::Sine { amplitude: 1.0, k: 2.0 }).sample(&s.grid, l);
    let pn = op.mass_norm(&pert);
    if pn == 0.0 {
        return Err(Error::InvalidInput("perturbation profile vanishes on the grid".into()));
    }
    let k = cfg.params.delta * op.mass_norm(&ybar0) / pn;
    let y0: Vec<f64> = ybar0.iter().zip(&pert).map(|(a, b)| a + k * b).collect();
    let p = &cfg.params;
    let tr = control_to_trajectory(&op, obs(s), &ybar0, &y0, &w, p.eps, p.tol, p.max_outer, SolverOptions::default())?;
    tr.y.dump(out, "y")?;
    tr.ybar.dump(out, "ybar")?;
    tr.control.v.dump(out, "v")?;
    let mut csv = Csv::new(&["outer", "terminal_gap"]);
    for (i, v) in tr.trace.iter().enumerate() {
        csv.push(vec![(i + 1).to_string(), fmt_f64(*v)]);
    }
    csv.write(&out.join("trace.csv"))?;
    let m = metrics([
        ("terminal_gap", *tr.trace.last().unwrap()),
        ("outer_iters", tr.outer_iters as f64),
        ("cg_iters", tr.control.cg_iters as f64),
        ("delta", k * pn),
    ]);
    write_summary(out, Task::Trajectory, p.seed, &m, json!({ "control": tr.control.summary(&w, tr.outer_iters) }))?;
    Ok(m)
}

fn cosine(s: &Setup, a: f64, k: f64) -> Vec<f64> {
    let l = s.dom.l;
    s.grid.nodes.iter().map(|&x| a * (2.0 * std::f64::consts::PI * k * x / l).cos()).collect()
}

fn inverse(cfg: &ExperimentConfig, s: &Setup, out: &Path) -> Result<Metrics> {
    let p = &cfg.params;
    let o = obs(s);
    let dom = &s.dom;
    let support = p.y0_support.unwrap_or_else(|| dom.piece_bounds(dom.piece_of(0.5 * dom.l)));
    let core = p.core.unwrap_or(o.omega);
    let y0 = admissible_y0(dom, &s.grid, p.y0_amplitude, support);
    let (base, _) = forward(s, Drift::none())?;
    let mu = cosine(s, p.potential_amplitude, 1.0);
    let rows: Vec<(String, StabilityReport)> = (1..=p.perturbations)
        .into_par_iter()
        .map(|k| {
            let d = cosine(s, p.perturbation_amplitude, k as f64);
            let nu: Vec<f64> = mu.iter().zip(d).map(|(a, b)| a + b).collect();
            let pair = PotentialPair::new(mu.clone(), nu, p.m)?;
            Ok((k.to_string(), stability_experiment(&base, dom, o, &y0, &pair, core)?))
        })
        .collect::<Result<_>>()?;
    StabilityReport::to_csv(&rows).write(&out.join("ratios.csv"))?;
    let c = rows.iter().filter_map(|(_, r)| r.ratio).fold(f64::NAN, f64::max);
    let mut m = metrics([("stability_constant", c), ("r0", rows[0].1.r0), ("K", rows[0].1.k)]);
    let mut detail = json!({ "support": support, "core": core });
    if p.recover {
        let clean = solve_with_potential(&base, &mu, &y0)?.field.values;
        let observed = add_noise(&clean, &s.grid, p.noise, p.seed);
        let prob = RecoveryProblem::new(&base, o, &y0, &observed, p.reg)?;
        let zero = vec![0.0; s.grid.nx()];
        let rec = recover_potential(&prob, p.m, &zero, Some(&mu), RecoveryOptions::default())?;
        Field::from_samples(&s.grid, vec![rec.mu.clone()], 0.0, s.grid.dt()).dump(out, "mu")?;
        m.insert("recovery_error".into(), opt(rec.error));
        m.insert("recovery_iterations".into(), rec.iterations as f64);
        m.insert("final_objective".into(), *rec.objective.last().unwrap_or(&f64::NAN));
        detail["noise"] = json!(p.noise);
        detail["reg"] = json!(p.reg);
    }
    write_summary(out, Task::Inverse, p.seed, &m, detail)?;
    Ok(m)
}

struct SweepRow {
    value: String,
    outcome: std::result::Result<Metrics, String>,
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let spec = cfg.sweep.as_ref().expect("validated");
    let mut base = serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?;
    // the inner runs are plain task runs
    base["sweep"] = serde_json::Value::Null;
    base["task"] = serde_json::Value::Null;
    let rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let value = serde_json::to_string(v).unwrap_or_default().replace(',', ";");
            let mut c = base.clone();
            let outcome = match c.pointer_mut(&spec.param) {
                None => Err("ConfigError".to_string()),
                Some(slot) => {
                    *slot = v.clone();
                    match config::parse(c).and_then(|c| config::validate(&c, spec.task).map(|s| (c, s))) {
                        Err(_) => Err("ConfigError".to_string()),
                        Ok((c, s)) => {
                            let dir = out.join(format!("run_{i:04}"));
                            run(spec.task, &c, &s, &dir).map_err(|e| e.name().to_string())
                        }
                    }
                }
            };
            SweepRow { value, outcome }
        })
        .collect();
    let keys: std::collections::BTreeSet<&String> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).flat_map(|m| m.keys()).collect();
    let mut header = vec!["run", "param", "value", "status", "error"];
    header.extend(keys.iter().map(|k| k.as_str()));
    let mut csv = Csv::new(&header);
    let mut failed = 0;
    for (i, r) in rows.iter().enumerate() {
        let mut row = vec![i.to_string(), spec.param.clone(), r.value.clone()];
        match &r.outcome {
            Ok(m) => {
                row.extend(["ok".to_string(), String::new()]);
                row.extend(keys.iter().map(|k| m.get(*k).map(|v| fmt_f64(*v)).unwrap_or_default()));
            }
            Err(name) => {
                failed += 1;
                row.extend(["error".to_string(), name.clone()]);
                row.extend(keys.iter().map(|_| String::new()));
            }
        }
        csv.push(row);
    }
    csv.write(&out.join("sweep.csv"))?;
    let m = metrics([("runs", rows.len() as f64), ("failed", failed as f64)]);
    write_summary(out, Task::Sweep, cfg.params.seed, &m, json!({ "task": spec.task.name(), "param": spec.param }))?;
    Ok(m)
}
