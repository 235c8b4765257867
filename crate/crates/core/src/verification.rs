//! Trajectory ledgers and sampling checks for the per-sweep inequalities,
//! smoothness constants and escape behaviour.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optimizers::{run, RunOptions, Trace};
use crate::problem::{
    sample_uniform_ball, seeded_rng, spectral_norm, Block, Objective, Point, SmoothnessConstants, INIT_STREAM,
};

pub const LEDGER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub check: String,
    /// Iteration or sample index.
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
}

/// Append-only record of `lhs ≤ rhs` checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityLedger {
    pub tolerance: f64,
    entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub checks: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

impl Default for InequalityLedger {
    fn default() -> Self {
        Self::new(LEDGER_TOL)
    }
}

impl InequalityLedger {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, check: &str, index: usize, lhs: f64, rhs: f64) {
        let slack = rhs - lhs;
        self.entries.push(LedgerEntry {
            check: check.to_string(),
            index,
            lhs,
            rhs,
            slack: if slack.is_nan() { f64::NEG_INFINITY } else { slack },
        });
    }

    pub fn extend(&mut self, other: InequalityLedger) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_violation(&self, e: &LedgerEntry) -> bool {
        e.slack < -self.tolerance
    }

    pub fn violations(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.iter().filter(|e| self.is_violation(e))
    }

    pub fn summary(&self) -> LedgerSummary {
        LedgerSummary {
            checks: self.entries.len(),
            violations: self.violations().count(),
            worst_slack: self.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations().next().is_none()
    }
}

fn pre_perturbation_f(trace: &Trace) -> HashMap<usize, f64> {
    trace.events.iter().map(|e| (e.t, e.f_tilde)).collect()
}

/// Sufficient decrease of every sweep: `f(x^{t+1}) ≤ f(x^t) − (η/2)Σ_k‖∇_k‖²`
/// for gradient sweeps and `f(x^{t+1}) ≤ f(x^t) − (ν/2)‖x^{t+1} − x^t‖²` for
/// proximal ones. When `x^{t+1}` was perturbed, its unperturbed value is used.
pub fn check_descent(trace: &Trace) -> InequalityLedger {
    let mut ledger = InequalityLedger::default();
    let step = trace.constants.step;
    let tilde = pre_perturbation_f(trace);
    let proximal = trace.method.is_proximal();
    for w in trace.records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let f_next = tilde.get(&next.t).copied().unwrap_or(next.f);
        let decrease = if proximal {
            0.5 * step * cur.step_norm * cur.step_norm
        } else {
            0.5 * step * cur.sum_block_grad_sq
        };
        ledger.push("descent", cur.t, f_next, cur.f - decrease);
    }
    ledger
}

/// `‖∇f(x^t)‖² ≤ 4Σ_k‖∇_k f(h_{−k}, x_k)‖²`, or `≤ 4ν²‖x^{t+1} − x^t‖²` for
/// proximal sweeps, at every recorded iterate.
pub fn check_grad_ratio(trace: &Trace) -> InequalityLedger {
    let mut ledger = InequalityLedger::default();
    let nu = trace.constants.step;
    for r in &trace.records {
        let rhs = if trace.method.is_proximal() {
            4.0 * nu * nu * r.step_norm * r.step_norm
        } else {
            4.0 * r.sum_block_grad_sq
        };
        ledger.push("grad_ratio", r.t, r.full_grad_norm * r.full_grad_norm, rhs);
    }
    ledger
}

/// `f(x̃ + ξ) − f(x̃) ≤ ‖∇f(x̃)‖‖ξ‖ + (L/2)‖ξ‖²` at every perturbation.
pub fn check_perturbation_increase(trace: &Trace, l: f64) -> InequalityLedger {
    let mut ledger = InequalityLedger::default();
    for e in &trace.events {
        let Some(rec) = trace.record_at(e.t) else { continue };
        let xi: f64 = e.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        ledger.push(
            "perturbation_increase",
            e.t,
            rec.f - e.f_tilde,
            e.grad_norm_tilde * xi + 0.5 * l * xi * xi,
        );
    }
    ledger
}

/// Descent, gradient-ratio and perturbation checks for one trace.
pub fn trace_ledger(trace: &Trace, l: f64) -> InequalityLedger {
    let mut ledger = check_descent(trace);
    ledger.extend(check_grad_ratio(trace));
    ledger.extend(check_perturbation_increase(trace, l));
    ledger
}

/// Largest sampled difference quotients over pairs in a ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub samples: usize,
    pub l: f64,
    pub l_block: [f64; 2],
    /// `l_cross[k]`: block-k gradient against changes of the other block.
    pub l_cross: [f64; 2],
    /// `None` without an analytic Hessian.
    pub rho: Option<f64>,
}

impl LipschitzEstimate {
    /// True when no estimate exceeds the declared constant (up to `tol`, relative).
    pub fn within(&self, c: &SmoothnessConstants, tol: f64) -> bool {
        let le = |est: f64, dec: f64| est <= dec * (1.0 + tol) + tol;
        le(self.l, c.l)
            && (0..2).all(|k| le(self.l_block[k], c.l_block[k]) && le(self.l_cross[k], c.l_cross[k]))
            && self.rho.is_none_or(|r| le(r, c.rho))
    }
}

fn quotient(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Replaces block `block` of `x` by a uniform sample keeping `‖x‖ ≤ radius`.
fn resample_block<R: Rng + ?Sized>(rng: &mut R, obj: &dyn Objective, x: &Point, block: Block, radius: f64) -> Result<Point> {
    let p = obj.partition();
    let range = p.range(block);
    let mut other_sq = x.norm_squared() - x.rows(range.start, range.len()).norm_squared();
    other_sq = other_sq.max(0.0);
    let r = (radius * radius - other_sq).max(0.0).sqrt();
    let v = sample_uniform_ball(rng, range.len(), r)?;
    let mut y = x.clone();
    y.rows_mut(range.start, range.len()).copy_from(&v);
    Ok(y)
}

/// Samples `n` pairs in `B₀(radius)` for each quotient. Sample `i` does not
/// depend on `n`, so the estimates are nondecreasing in `n` for a fixed seed.
pub fn estimate_lipschitz<R: Rng + ?Sized>(
    obj: &dyn Objective,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    let d = obj.dim();
    let mut est = LipschitzEstimate {
        samples: n,
        l: 0.0,
        l_block: [0.0; 2],
        l_cross: [0.0; 2],
        rho: None,
    };
    let p = obj.partition();
    for _ in 0..n {
        let x = sample_uniform_ball(rng, d, radius)?;
        let y = sample_uniform_ball(rng, d, radius)?;
        let gx = obj.gradient(&x);
        let gy = obj.gradient(&y);
        est.l = est.l.max(quotient((&gx - &gy).norm(), (&x - &y).norm()));
        if let (Some(hx), Some(hy)) = (obj.hessian(&x), obj.hessian(&y)) {
            let q = quotient(spectral_norm(&(hx - hy)), (&x - &y).norm());
            est.rho = Some(est.rho.unwrap_or(0.0).max(q));
        }
        for (k, block) in Block::BOTH.into_iter().enumerate() {
            let r = p.range(block);
            let ro = p.range(block.other());
            // own block varies
            let z = resample_block(rng, obj, &x, block, radius)?;
            let num = (obj.block_gradient(block, &x) - obj.block_gradient(block, &z)).norm();
            let den = (x.rows(r.start, r.len()) - z.rows(r.start, r.len())).norm();
            est.l_block[k] = est.l_block[k].max(quotient(num, den));
            // other block varies
            let z = resample_block(rng, obj, &x, block.other(), radius)?;
            let num = (obj.block_gradient(block, &x) - obj.block_gradient(block, &z)).norm();
            let den = (x.rows(ro.start, ro.len()) - z.rows(ro.start, ro.len())).norm();
            est.l_cross[k] = est.l_cross[k].max(quotient(num, den));
        }
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub x0: Vec<f64>,
    pub escaped: bool,
    /// First iteration with `f ≤ f(x̃) − f_th` (`f(x⁰) − f_th` without a perturbation).
    pub iterations_to_escape: Option<usize>,
    pub iterations_to_target: Option<usize>,
    pub final_f: f64,
    pub termination: String,
    pub perturbations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolated quantiles; `None` for an empty sample.
pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quantiles {
        min: v[0],
        q25: at(0.25),
        median: at(0.5),
        q75: at(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStudy {
    pub seeds: usize,
    pub escape_rate: f64,
    pub escape_quantiles: Option<Quantiles>,
    pub target: Option<f64>,
    pub target_quantiles: Option<Quantiles>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Start point for `seed`: the saddle plus a uniform sample from `B₀(radius)`.
pub fn initial_point(saddle: &Point, radius: f64, seed: u64) -> Result<Point> {
    let mut rng = seeded_rng(seed, INIT_STREAM);
    Ok(saddle + sample_uniform_ball(&mut rng, saddle.len(), radius)?)
}

fn outcome(trace: &Trace, x0: &Point, f0: f64, target: Option<f64>) -> SeedOutcome {
    let f_th = trace.constants.f_th;
    let (escaped, iterations_to_escape) = match trace.events.first() {
        Some(e) => {
            let level = e.f_tilde - f_th;
            let check = trace.record_at(e.t + trace.constants.t_th as usize).map(|r| r.f <= level);
            let first = trace.records.iter().skip(e.t).find(|r| r.f <= level).map(|r| r.t);
            (check.unwrap_or(false), first)
        }
        None => {
            let first = trace.iterations_to(f0 - f_th);
            (first.is_some(), first)
        }
    };
    SeedOutcome {
        seed: trace.seed,
        x0: x0.iter().copied().collect(),
        escaped,
        iterations_to_escape,
        iterations_to_target: target.and_then(|lv| trace.iterations_to(lv)),
        final_f: trace.final_f(),
        termination: trace.termination.label().to_string(),
        perturbations: trace.events.len(),
    }
}

/// Runs `opts` once per seed from `saddle + U(B₀(init_radius))`, in parallel,
/// with results in seed order.
pub fn escape_probability_study(
    obj: &dyn Objective,
    saddle: &Point,
    opts: &RunOptions,
    seeds: &[u64],
    init_radius: f64,
    target: Option<f64>,
) -> Result<EscapeStudy> {
    let f0 = obj.value(saddle);
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let x0 = initial_point(saddle, init_radius, seed)?;
            let o = RunOptions { seed, ..opts.clone() };
            let trace = run(obj, &x0, &o)?;
            Ok(outcome(&trace, &x0, f0, target))
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len();
    let escaped = outcomes.iter().filter(|o| o.escaped).count();
    let esc: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.iterations_to_escape.map(|t| t as f64))
        .collect();
    let tgt: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.iterations_to_target.map(|t| t as f64))
        .collect();
    Ok(EscapeStudy {
        seeds: n,
        escape_rate: if n == 0 { 0.0 } else { escaped as f64 / n as f64 },
        escape_quantiles: quantiles(&esc),
        target,
        target_quantiles: quantiles(&tgt),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{QuadraticForm, QuarticSaddle};
    use crate::optimizers::{Method, RunConstants};
    use crate::problem::BlockPartition;
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;

    fn a2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])
    }

    fn fig2() -> RunConstants {
        RunConstants {
            step: 0.02,
            r: 1e-5,
            g_th: 1e-5,
            f_th: 1e-9,
            t_th: 2155,
        }
    }

    struct Linear;
    impl Objective for Linear {
        fn partition(&self) -> BlockPartition {
            BlockPartition::new(3, 1).unwrap()
        }
        fn value(&self, x: &Point) -> f64 {
            x[0] - 2.0 * x[1] + 0.5 * x[2]
        }
        fn gradient(&self, _x: &Point) -> Point {
            dvector![1.0, -2.0, 0.5]
        }
        fn hessian(&self, _x: &Point) -> Option<DMatrix<f64>> {
            Some(DMatrix::zeros(3, 3))
        }
        fn constants(&self) -> SmoothnessConstants {
            SmoothnessConstants {
                l: 0.0,
                l_block: [0.0; 2],
                l_cross: [0.0; 2],
                rho: 0.0,
            }
        }
    }

    #[test]
    fn stationary_trace_has_zero_sides() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let tr = run(&q, &dvector![0.0, 0.0], &RunOptions::new(Method::Agd, fig2(), 20, 0)).unwrap();
        let led = check_descent(&tr);
        assert!(led.entries().iter().all(|e| e.lhs == 0.0 && e.rhs == 0.0));
        let led = check_grad_ratio(&tr);
        assert!(led.entries().iter().all(|e| e.lhs == 0.0 && e.rhs == 0.0));
    }

    #[test]
    fn fig2_style_trace_is_clean() {
        let q = QuarticSaddle::new(a2(), 5.0, 1).unwrap();
        let x0 = initial_point(&dvector![0.0, 0.0], 1e-3, 3).unwrap();
        let tr = run(&q, &x0, &RunOptions::new(Method::Pagd, fig2(), 20_000, 3)).unwrap();
        let led = trace_ledger(&tr, q.constants().l);
        assert!(led.is_clean(), "{:?}", led.summary());
        assert!(led.summary().checks > 100);
    }

    #[test]
    fn papp_trace_is_clean() {
        let q = QuarticSaddle::new(a2(), 5.0, 1).unwrap();
        let mut c = fig2();
        c.step = 3.0 * q.constants().l_max();
        c.t_th = 400;
        let tr = run(&q, &dvector![0.0, 0.0], &RunOptions::new(Method::Papp, c, 20_000, 1)).unwrap();
        let led = trace_ledger(&tr, q.constants().l);
        assert!(led.is_clean(), "{:?}", led.summary());
    }

    #[test]
    fn oversized_step_is_detected() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let mut c = fig2();
        c.step = 2.0 / q.constants().l_max();
        let tr = run(&q, &dvector![0.3, 0.1], &RunOptions::new(Method::Agd, c, 20, 0)).unwrap();
        let led = check_descent(&tr);
        assert!(led.summary().violations > 0);
        assert!(led.summary().worst_slack < -LEDGER_TOL);
    }

    #[test]
    fn random_quartic_trajectories_keep_grad_ratio() {
        let q = QuarticSaddle::new(a2(), 5.0, 1).unwrap();
        for seed in 0..50 {
            let x0 = initial_point(&dvector![0.0, 0.0], 1.0, seed).unwrap();
            let tr = run(&q, &x0, &RunOptions::new(Method::Pagd, fig2(), 500, seed)).unwrap();
            assert!(check_grad_ratio(&tr).is_clean(), "seed {seed}");
        }
    }

    #[test]
    fn linear_objective_estimates_zero() {
        let mut rng = seeded_rng(0, 0);
        let e = estimate_lipschitz(&Linear, 2.0, 200, &mut rng).unwrap();
        assert_eq!(e.l, 0.0);
        assert_eq!(e.l_block, [0.0; 2]);
        assert_eq!(e.l_cross, [0.0; 2]);
        assert_eq!(e.rho, Some(0.0));
    }

    #[test]
    fn quartic_estimates_below_declared() {
        let tau = 3.0;
        let q = QuarticSaddle::new(a2(), tau, 1).unwrap();
        let mut rng = seeded_rng(1, 0);
        let e = estimate_lipschitz(&q, tau.sqrt(), 2000, &mut rng).unwrap();
        assert!(e.l <= 15.0);
        assert!(e.rho.unwrap() <= 6.0 * tau.sqrt());
        assert!(e.within(&q.constants(), 1e-12), "{e:?} {:?}", q.constants());
    }

    #[test]
    fn quadratic_estimate_approaches_norm() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let mut rng = seeded_rng(2, 0);
        let e = estimate_lipschitz(&q, 1.0, 10_000, &mut rng).unwrap();
        assert!(e.l <= 6.0 + 1e-12);
        assert!(e.l >= 0.95 * 6.0);
    }

    #[test]
    fn empty_study() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let s = escape_probability_study(
            &q,
            &dvector![0.0, 0.0],
            &RunOptions::new(Method::Pagd, fig2(), 100, 0),
            &[],
            1e-3,
            None,
        )
        .unwrap();
        assert_eq!(s.seeds, 0);
        assert!(s.outcomes.is_empty());
        assert!(s.escape_quantiles.is_none());
    }

    #[test]
    fn quadratic_saddle_escapes_and_is_reproducible() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let seeds: Vec<u64> = (0..100).collect();
        let mut c = fig2();
        c.t_th = 300;
        let opts = RunOptions::new(Method::Pagd, c, 301, 0);
        let a = escape_probability_study(&q, &dvector![0.0, 0.0], &opts, &seeds, 0.0, None).unwrap();
        assert!(a.escape_rate >= 0.95, "{}", a.escape_rate);
        let b = escape_probability_study(&q, &dvector![0.0, 0.0], &opts, &seeds, 0.0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantiles_of_small_sample() {
        let q = quantiles(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((q.min, q.median, q.max), (1.0, 2.0, 3.0));
        assert_eq!(q.q25, 1.5);
    }

    proptest! {
        #[test]
        fn estimates_monotone_in_n(seed in 0u64..1000, n in 2usize..60, extra in 1usize..60) {
            let q = QuarticSaddle::new(a2(), 3.0, 1).unwrap();
            let small = estimate_lipschitz(&q, 3f64.sqrt(), n, &mut seeded_rng(seed, 0)).unwrap();
            let large = estimate_lipschitz(&q, 3f64.sqrt(), n + extra, &mut seeded_rng(seed, 0)).unwrap();
            prop_assert!(large.l >= small.l);
            prop_assert!(large.rho.unwrap() >= small.rho.unwrap());
            for k in 0..2 {
                prop_assert!(large.l_block[k] >= small.l_block[k]);
                prop_assert!(large.l_cross[k] >= small.l_cross[k]);
            }
        }
    }
}
