use log::warn;

use super::constants::{default_budget, derive_constants, PagdInputs, RunConstants, Variant};
use super::sweep::{agd_sweep, app_sweep, InnerSolveConfig};
use super::trace::{IterRecord, Method, PerturbationEvent, Termination, Trace};
use crate::error::{Error, Result};
use crate::problem::{sample_uniform_ball, seeded_rng, Objective, Point, PERTURB_STREAM};

/// Everything a run needs besides the objective and the start point.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub method: Method,
    pub constants: RunConstants,
    /// Iteration guard for perturbed methods; iteration count for unperturbed ones.
    pub budget: usize,
    pub seed: u64,
    pub inner: InnerSolveConfig,
    /// Store every iterate in the trace.
    pub record_points: bool,
}

impl RunOptions {
    pub fn new(method: Method, constants: RunConstants, budget: usize, seed: u64) -> Self {
        Self {
            method,
            constants,
            budget,
            seed,
            inner: InnerSolveConfig::default(),
            record_points: false,
        }
    }
}

struct Step {
    next: Point,
    sum_sq: f64,
    step_norm: f64,
}

fn sweep(obj: &dyn Objective, x: &Point, opts: &RunOptions) -> Result<Step> {
    let c = &opts.constants;
    if opts.method.is_proximal() {
        let s = app_sweep(obj, x, c.step, &opts.inner)?;
        Ok(Step {
            sum_sq: s.sum_sq(),
            step_norm: s.step_norm,
            next: s.next,
        })
    } else {
        let s = agd_sweep(obj, x, c.step)?;
        let step_norm = (&s.next - x).norm();
        Ok(Step {
            sum_sq: s.sum_sq(),
            step_norm,
            next: s.next,
        })
    }
}

fn is_small(step: &Step, opts: &RunOptions) -> bool {
    let c = &opts.constants;
    if opts.method.is_proximal() {
        step.step_norm <= c.g_th / c.step
    } else {
        step.sum_sq <= c.g_th * c.g_th
    }
}

/// Runs one of the four drivers from `x0`.
///
/// For the perturbed methods the iteration at `t` first applies the return
/// rule (when `t − t_p = t_th`), then evaluates the sweep from `x^t`; if that
/// sweep is small and no perturbation happened in the last `t_th`
/// iterations, `x^t` is saved as `x̃`, perturbed by `ξ ~ U(B₀(r))`, and the
/// sweep is recomputed from the perturbed point.
pub fn run(obj: &dyn Objective, x0: &Point, opts: &RunOptions) -> Result<Trace> {
    opts.constants.validate()?;
    if x0.len() != obj.dim() {
        return Err(Error::Usage(format!(
            "start point has length {}, objective has dimension {}",
            x0.len(),
            obj.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("start point has non-finite entries".into()));
    }
    let perturbed = opts.method.is_perturbed();
    let consts = opts.constants;
    let t_th = consts.t_th as i64;
    let mut rng = seeded_rng(opts.seed, PERTURB_STREAM);

    let mut records: Vec<IterRecord> = Vec::with_capacity(opts.budget.min(1 << 20) + 1);
    let mut events: Vec<PerturbationEvent> = Vec::new();
    let mut x = x0.clone();
    let mut t_p: i64 = -(t_th + 1);
    let mut tilde: Option<(Point, f64)> = None;
    let mut best: (f64, Point) = (f64::INFINITY, x0.clone());
    let mut max_norm_sq = 0.0_f64;

    let mut record = |t: usize, x: &Point, f: f64, step: &Step, flags: (bool, bool), records: &mut Vec<IterRecord>| {
        max_norm_sq = max_norm_sq.max(x.norm_squared());
        records.push(IterRecord {
            t,
            f,
            sum_block_grad_sq: step.sum_sq,
            full_grad_norm: obj.gradient(x).norm(),
            step_norm: step.step_norm,
            perturbed: flags.0,
            returned: flags.1,
            x: opts.record_points.then(|| x.iter().copied().collect()),
        });
    };

    for t in 0..=opts.budget {
        let ctx = |e: Error, x: &Point| e.at_iteration(t, x.as_slice());
        let mut f = obj.value(&x);
        if !f.is_finite() {
            return Err(ctx(Error::numerical("non-finite objective value"), &x));
        }

        if perturbed && t as i64 - t_p == t_th {
            let (xt, ft) = tilde.as_ref().expect("window implies a perturbation");
            if f - ft > -consts.f_th {
                let step = sweep(obj, &x, opts).map_err(|e| ctx(e, &x))?;
                record(t, &x, f, &step, (false, true), &mut records);
                return Ok(Trace {
                    method: opts.method,
                    seed: opts.seed,
                    constants: consts,
                    records,
                    events,
                    termination: Termination::ReturnedSs2 {
                        t,
                        point: xt.iter().copied().collect(),
                    },
                    result: xt.iter().copied().collect(),
                    max_norm_sq,
                });
            }
        }

        let mut step = sweep(obj, &x, opts).map_err(|e| ctx(e, &x))?;
        if t == opts.budget {
            record(t, &x, f, &step, (false, false), &mut records);
            if f < best.0 {
                best = (f, x.clone());
            }
            break;
        }

        let mut did_perturb = false;
        if perturbed && is_small(&step, opts) && t as i64 - t_p > t_th {
            let xi = sample_uniform_ball(&mut rng, x.len(), consts.r)?;
            let x_tilde = x.clone();
            events.push(PerturbationEvent {
                t,
                xi: xi.iter().copied().collect(),
                x_tilde: x_tilde.iter().copied().collect(),
                f_tilde: f,
                grad_norm_tilde: obj.gradient(&x_tilde).norm(),
            });
            x = &x_tilde + xi;
            tilde = Some((x_tilde, f));
            t_p = t as i64;
            f = obj.value(&x);
            step = sweep(obj, &x, opts).map_err(|e| ctx(e, &x))?;
            did_perturb = true;
        }

        record(t, &x, f, &step, (did_perturb, false), &mut records);
        if f < best.0 {
            best = (f, x.clone());
        }
        x = step.next;
    }

    let iterations = opts.budget;
    let (termination, result) = if perturbed {
        (Termination::BudgetExhausted { iterations }, best.1)
    } else {
        (Termination::MaxIters { iterations }, x)
    };
    Ok(Trace {
        method: opts.method,
        seed: opts.seed,
        constants: consts,
        records,
        events,
        termination,
        result: result.iter().copied().collect(),
        max_norm_sq,
    })
}

/// PA-GD with every constant derived from `inputs` and the default budget.
pub fn pagd_run(obj: &dyn Objective, x0: &Point, inputs: &PagdInputs, seed: u64) -> Result<Trace> {
    let k = derive_constants(inputs, obj.dim(), Variant::Pagd)?;
    let budget = default_budget(inputs, &k) as usize;
    run(obj, x0, &RunOptions::new(Method::Pagd, k.run_constants(), budget, seed))
}

/// PA-PP with derived constants; requires `ν = L_max/c ≥ 3 L_max`.
pub fn papp_run(obj: &dyn Objective, x0: &Point, inputs: &PagdInputs, seed: u64) -> Result<Trace> {
    let k = derive_constants(inputs, obj.dim(), Variant::Papp)?;
    check_penalty(k.nu, inputs.l_max)?;
    let budget = default_budget(inputs, &k) as usize;
    run(obj, x0, &RunOptions::new(Method::Papp, k.run_constants(), budget, seed))
}

/// `ν ≥ 3 L_max`, the descent-lemma hypothesis of the proximal sweep.
pub fn check_penalty(nu: f64, l_max: f64) -> Result<()> {
    if nu < 3.0 * l_max {
        return Err(Error::Config(format!(
            "nu >= 3 L_max violated: nu = {nu}, 3 L_max = {}",
            3.0 * l_max
        )));
    }
    Ok(())
}

/// Like [`check_penalty`] but only logs, for manually configured runs.
pub fn warn_penalty(nu: f64, l_max: f64) {
    if let Err(e) = check_penalty(nu, l_max) {
        warn!("{e}");
    }
}
