use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Problem};
use super::plot::{contour_svg, objective_svg, Series};
use crate::error::Result;
use crate::optimizers::{run, warn_penalty, Method, RunConstants, RunOptions, Termination, Trace};
use crate::problem::{lambda_min, Objective, Point};
use crate::spectral::{verify_escape_lemma, verify_prox_corollary, SpectralReport};
use crate::verification::{initial_point, quantiles, trace_ledger, LedgerSummary, Quantiles};

pub const TRACE_HEADER: [&str; 6] = ["t", "f", "sum_block_grad_sq", "full_grad_norm", "perturbed", "returned"];

/// Second-order certificate of a returned point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ss2Check {
    pub grad_norm: f64,
    pub grad_bound: f64,
    pub grad_ok: bool,
    pub lambda_min: Option<f64>,
    pub curvature_bound: Option<f64>,
    pub curvature_ok: Option<bool>,
}

impl Ss2Check {
    pub fn ok(&self) -> bool {
        self.grad_ok && self.curvature_ok.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub termination: String,
    pub iterations: usize,
    pub final_f: f64,
    /// `f` at the returned point.
    pub result_f: f64,
    pub result_grad_norm: f64,
    pub iterations_to_target: Option<usize>,
    pub perturbations: usize,
    pub ledger_violations: usize,
    pub ss2_ok: Option<bool>,
    pub max_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsSummary {
    pub count: usize,
    pub returned: usize,
    pub budget_exhausted: usize,
    pub ss2_failures: usize,
    pub ledger_violations: usize,
    pub ball_violations: usize,
    pub reached_target: usize,
    pub result_f: Option<Quantiles>,
    pub iterations_to_target: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallCheck {
    pub tau: f64,
    pub max_norm_sq: f64,
    pub inside: bool,
}

/// Contents of `report.json` for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub experiment: String,
    pub method: Method,
    pub seed: u64,
    pub constants: RunConstants,
    pub budget: usize,
    pub termination: Termination,
    pub iterations: usize,
    pub final_f: f64,
    pub result: Vec<f64>,
    pub result_f: f64,
    pub final_grad_norm: f64,
    pub lambda_min_at_result: Option<f64>,
    pub ss2: Option<Ss2Check>,
    pub ledger: LedgerSummary,
    /// Zero violations in every seed's ledgers.
    pub ledgers_clean: bool,
    pub spectral: Option<SpectralReport>,
    pub ball: Option<BallCheck>,
    pub seeds: SeedsSummary,
}

pub struct MethodResult {
    pub method: Method,
    /// Trace of the first seed.
    pub trace: Trace,
    pub report: MethodReport,
    pub rows: Vec<SeedRow>,
}

pub struct ExperimentResult {
    pub name: String,
    pub methods: Vec<MethodResult>,
}

impl ExperimentResult {
    pub fn ledgers_clean(&self) -> bool {
        self.methods.iter().all(|m| m.report.ledgers_clean)
    }

    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<usize>,
}

fn ss2_check(obj: &dyn Objective, x: &Point, g_th: f64, epsilon: Option<f64>) -> Ss2Check {
    let grad_norm = obj.gradient(x).norm();
    let lmin = obj.hessian(x).map(|h| lambda_min(&h));
    let k = obj.constants();
    let bound = epsilon.map(|e| -(k.l_max() * k.rho * e).cbrt());
    let curvature_ok = match (lmin, bound) {
        (Some(l), Some(b)) => Some(l >= b),
        _ => None,
    };
    Ss2Check {
        grad_norm,
        grad_bound: 2.0 * g_th,
        grad_ok: grad_norm <= 2.0 * g_th,
        lambda_min: lmin,
        curvature_bound: bound,
        curvature_ok,
    }
}

/// Lemma and corollary checks at the start centre when it has negative curvature.
pub fn spectral_at(obj: &dyn Objective, center: &Point, method: Method, step: f64) -> Option<SpectralReport> {
    let h = obj.hessian(center)?;
    let lmin = lambda_min(&h);
    if lmin >= 0.0 {
        return None;
    }
    let k = obj.constants();
    let l_max = k.l_max();
    let eta = if method.is_proximal() { 1.0 / step } else { step };
    if eta > 1.0 / l_max {
        warn!("step {eta} exceeds 1/L_max = {}; skipping eigenvalue checks", 1.0 / l_max);
        return None;
    }
    let gamma = (-lmin).min(l_max);
    let p = obj.partition();
    let lemma = verify_escape_lemma(&h, &p, eta, gamma, k.l, l_max).ok()?;
    let cor = verify_prox_corollary(&h, &p, eta, gamma).ok()?;
    Some(lemma.with_corollary(&cor))
}

fn run_method(
    cfg: &ExperimentConfig,
    problem: &Problem,
    method: Method,
    seeds: &[u64],
    budget_override: Option<usize>,
) -> Result<MethodResult> {
    let obj = problem.objective.as_ref();
    let (constants, budget) = cfg.run_constants(method, obj)?;
    let budget = budget_override.unwrap_or(budget);
    if method.is_proximal() {
        warn_penalty(constants.step, obj.constants().l_max());
    }
    let center = cfg.start_center(obj.dim())?;
    let radius = cfg.init_radius();
    let epsilon = cfg.epsilon();
    let l = obj.constants().l;
    let record_points = obj.dim() == 2;
    let base = RunOptions {
        method,
        constants,
        budget,
        seed: 0,
        inner: cfg.inner.unwrap_or_default(),
        record_points: false,
    };
    info!("{}: {method} over {} seeds, budget {budget}", cfg.name, seeds.len());

    let results: Vec<(SeedRow, Option<Trace>, LedgerSummary)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let x0 = initial_point(&center, radius, seed)?;
            let opts = RunOptions {
                seed,
                record_points: record_points && i == 0,
                ..base.clone()
            };
            let trace = run(obj, &x0, &opts)?;
            let ledger = trace_ledger(&trace, l).summary();
            let xr = Point::from_vec(trace.result.clone());
            let ss2 = trace.returned().then(|| ss2_check(obj, &xr, constants.g_th, epsilon));
            let row = SeedRow {
                seed,
                termination: trace.termination.label().to_string(),
                iterations: trace.records.len().saturating_sub(1),
                final_f: trace.final_f(),
                result_f: obj.value(&xr),
                result_grad_norm: obj.gradient(&xr).norm(),
                iterations_to_target: cfg.target.and_then(|lv| trace.iterations_to(lv)),
                perturbations: trace.events.len(),
                ledger_violations: ledger.violations,
                ss2_ok: ss2.map(|s| s.ok()),
                max_norm_sq: trace.max_norm_sq,
            };
            Ok((row, (i == 0).then_some(trace), ledger))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(results.len());
    let mut primary = None;
    for (row, trace, ledger) in results {
        if let Some(t) = trace {
            primary = Some((t, ledger));
        }
        rows.push(row);
    }
    let (trace, ledger) = primary.expect("at least one seed");
    let ball_violations = problem
        .tau
        .map(|tau| rows.iter().filter(|r| r.max_norm_sq > tau).count())
        .unwrap_or(0);
    let result_fs: Vec<f64> = rows.iter().map(|r| r.result_f).collect();
    let to_target: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.iterations_to_target.map(|t| t as f64))
        .collect();
    let seeds_summary = SeedsSummary {
        count: rows.len(),
        returned: rows.iter().filter(|r| r.termination == "returned_ss2").count(),
        budget_exhausted: rows.iter().filter(|r| r.termination == "budget_exhausted").count(),
        ss2_failures: rows.iter().filter(|r| r.ss2_ok == Some(false)).count(),
        ledger_violations: rows.iter().map(|r| r.ledger_violations).sum(),
        ball_violations,
        reached_target: to_target.len(),
        result_f: quantiles(&result_fs),
        iterations_to_target: quantiles(&to_target),
    };

    let xr = Point::from_vec(trace.result.clone());
    let report = MethodReport {
        experiment: cfg.name.clone(),
        method,
        seed: trace.seed,
        constants,
        budget,
        termination: trace.termination.clone(),
        iterations: trace.records.len().saturating_sub(1),
        final_f: trace.final_f(),
        result: trace.result.clone(),
        result_f: obj.value(&xr),
        final_grad_norm: obj.gradient(&xr).norm(),
        lambda_min_at_result: obj.hessian(&xr).map(|h| lambda_min(&h)),
        ss2: trace.returned().then(|| ss2_check(obj, &xr, constants.g_th, epsilon)),
        ledger,
        ledgers_clean: seeds_summary.ledger_violations == 0,
        spectral: spectral_at(obj, &center, method, constants.step),
        ball: problem.tau.map(|tau| BallCheck {
            tau,
            max_norm_sq: trace.max_norm_sq,
            inside: trace.max_norm_sq <= tau,
        }),
        seeds: seeds_summary,
    };
    Ok(MethodResult {
        method,
        trace,
        report,
        rows,
    })
}

/// Runs every configured method over every seed, in memory.
pub fn execute(cfg: &ExperimentConfig, ov: &Overrides) -> Result<ExperimentResult> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let seeds = match ov.seed {
        Some(s) => vec![s],
        None => cfg.seeds(),
    };
    let methods = cfg
        .methods
        .iter()
        .map(|&m| run_method(cfg, &problem, m, &seeds, ov.budget))
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        methods,
    })
}

pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            r.f.to_string(),
            r.sum_block_grad_sq.to_string(),
            r.full_grad_norm.to_string(),
            u8::from(r.perturbed).to_string(),
            u8::from(r.returned).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn trajectory_points(trace: &Trace) -> Vec<[f64; 2]> {
    trace
        .records
        .iter()
        .filter_map(|r| r.x.as_ref().map(|x| [x[0], x[1]]))
        .collect()
}

fn write_trajectory_csv(trace: &Trace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x1", "x2"])?;
    for r in &trace.records {
        if let Some(x) = &r.x {
            w.write_record([r.t.to_string(), x[0].to_string(), x[1].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_rows_csv(rows: &[SeedRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn series_of(trace: &Trace) -> Series {
    Series {
        label: trace.method.name().to_string(),
        t: trace.records.iter().map(|r| r.t as f64).collect(),
        f: trace.records.iter().map(|r| r.f).collect(),
        events: trace.events.iter().map(|e| e.t as f64).collect(),
    }
}

/// Writes traces, reports, per-seed tables and plots under `out`.
pub fn write_artifacts(cfg: &ExperimentConfig, res: &ExperimentResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    for m in &res.methods {
        let dir = out.join(m.method.name());
        fs::create_dir_all(&dir)?;
        write_trace_csv(&m.trace, &dir.join("trace.csv"))?;
        write_json(&m.report, &dir.join("report.json"))?;
        write_rows_csv(&m.rows, &dir.join("seeds.csv"))?;
        if m.trace.records.iter().any(|r| r.x.is_some()) {
            write_trajectory_csv(&m.trace, &dir.join("trajectory.csv"))?;
        }
    }
    let series: Vec<Series> = res.methods.iter().map(|m| series_of(&m.trace)).collect();
    fs::write(out.join("objective.svg"), objective_svg(&series, cfg.plot.log_x)?)?;
    let problem = cfg.build_problem()?;
    if problem.objective.dim() == 2 {
        let trajs: Vec<(String, Vec<[f64; 2]>)> = res
            .methods
            .iter()
            .map(|m| (m.method.name().to_string(), trajectory_points(&m.trace)))
            .collect();
        fs::write(
            out.join("contour.svg"),
            contour_svg(problem.objective.as_ref(), cfg.plot.contour_box, &trajs)?,
        )?;
    }
    Ok(())
}

/// [`execute`] followed by [`write_artifacts`].
pub fn run_experiment(cfg: &ExperimentConfig, ov: &Overrides, out: &Path) -> Result<ExperimentResult> {
    let res = execute(cfg, ov)?;
    write_artifacts(cfg, &res, out)?;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"{
        "name": "small",
        "problem": {"kind": "quartic", "a": [[1, 2], [2, 1]], "tau": 5.0, "split": 1},
        "methods": ["agd", "pagd"],
        "constants": {"mode": "manual", "eta": 0.02, "r": 1e-5, "g_th": 1e-5, "f_th": 1e-9, "t_th": 200, "epsilon": 1e-4},
        "init": {"radius": 1e-3},
        "seeds": [4, 5],
        "budget": 3000,
        "target": -1.9
    }"#;

    #[test]
    fn writes_expected_artifacts() {
        let cfg = ExperimentConfig::from_json(CFG, Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let res = run_experiment(&cfg, &Overrides::default(), dir.path()).unwrap();
        assert!(res.ledgers_clean());
        for f in ["objective.svg", "contour.svg", "pagd/trace.csv", "pagd/report.json", "agd/trajectory.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let text = fs::read_to_string(dir.path().join("pagd/trace.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,f,sum_block_grad_sq,full_grad_norm,perturbed,returned");
        let pagd = res.method(Method::Pagd).unwrap();
        assert!(pagd.trace.returned());
        let ss2 = pagd.report.ss2.unwrap();
        assert!(ss2.ok());
        assert!(pagd.report.spectral.is_some());
        assert_eq!(pagd.report.seeds.count, 2);
    }

    #[test]
    fn seed_override_runs_one_seed() {
        let cfg = ExperimentConfig::from_json(CFG, Path::new(".")).unwrap();
        let res = execute(
            &cfg,
            &Overrides {
                seed: Some(9),
                budget: Some(500),
            },
        )
        .unwrap();
        let m = res.method(Method::Agd).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.trace.seed, 9);
        assert_eq!(m.report.budget, 500);
    }
}
