use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{block_read, Block, Objective, Point};

/// Result of one alternating gradient sweep.
#[derive(Debug, Clone)]
pub struct GradSweep {
    pub next: Point,
    /// `‖∇_k f(h_{-k}, x_k)‖` for k = 1, 2, at the points the sweep used.
    pub block_grad_norms: [f64; 2],
}

impl GradSweep {
    pub fn sum_sq(&self) -> f64 {
        self.block_grad_norms.iter().map(|g| g * g).sum()
    }
}

fn write_block(x: &mut Point, obj: &dyn Objective, block: Block, v: &Point) {
    let r = obj.partition().range(block);
    x.rows_mut(r.start, r.len()).copy_from(v);
}

fn ensure_finite(v: &Point, what: &str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite {what}")))
    }
}

/// One AGD sweep: block 1 steps first, block 2 then sees the updated block 1.
pub fn agd_sweep(obj: &dyn Objective, x: &Point, eta: f64) -> Result<GradSweep> {
    if !(eta > 0.0) {
        return Err(Error::Usage(format!("step size must be > 0, got {eta}")));
    }
    let mut next = x.clone();
    let mut norms = [0.0; 2];
    for (i, block) in Block::BOTH.into_iter().enumerate() {
        let g = obj.block_gradient(block, &next);
        ensure_finite(&g, "block gradient")?;
        norms[i] = g.norm();
        let updated = block_read(&next, &obj.partition(), block) - g * eta;
        write_block(&mut next, obj, block, &updated);
    }
    Ok(GradSweep {
        next,
        block_grad_norms: norms,
    })
}

/// How the proximal block subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Damped Newton when the objective exposes a Hessian, fixed point otherwise.
    #[default]
    Auto,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolveConfig {
    /// Bound on `‖y − x_k + ∇_k f(h, y)/ν‖`, scaled by `max(1, ‖x_k‖)`.
    pub tolerance: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub method: InnerMethod,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iters: 200,
            method: InnerMethod::Auto,
        }
    }
}

/// Result of one alternating proximal sweep.
#[derive(Debug, Clone)]
pub struct ProxSweep {
    pub next: Point,
    /// `‖x⁺ − x‖`.
    pub step_norm: f64,
    /// `‖∇_k f(h_{-k}, x⁺_k)‖` at the accepted block solutions.
    pub block_grad_norms: [f64; 2],
    pub inner_iters: [usize; 2],
}

impl ProxSweep {
    pub fn sum_sq(&self) -> f64 {
        self.block_grad_norms.iter().map(|g| g * g).sum()
    }
}

/// Solves `argmin_y f(h, y) + (ν/2)‖y − anchor‖²` for `block`, where `h` is
/// the complementary block of `point`. Returns the minimiser, the block
/// gradient there and the iteration count.
pub fn solve_prox_block(
    obj: &dyn Objective,
    block: Block,
    point: &Point,
    anchor: &Point,
    nu: f64,
    cfg: &InnerSolveConfig,
) -> Result<(Point, Point, usize)> {
    let p = obj.partition();
    let r = p.range(block);
    let tol = cfg.tolerance * anchor.norm().max(1.0);
    let mut z = point.clone();
    z.rows_mut(r.start, r.len()).copy_from(anchor);
    let mut y = anchor.clone();
    let mut g = obj.block_gradient(block, &z);
    ensure_finite(&g, "block gradient")?;
    let residual = |y: &Point, g: &Point| (y - anchor) + g / nu;

    for iter in 0..=cfg.max_iters {
        let res = residual(&y, &g);
        let res_norm = res.norm();
        if res_norm <= tol {
            return Ok((y, g, iter));
        }
        if iter == cfg.max_iters {
            break;
        }
        let newton = match cfg.method {
            InnerMethod::Auto => obj.block_hessian(block, &z),
            InnerMethod::FixedPoint => None,
        };
        let mut accepted = None;
        if let Some(hk) = newton {
            let n = hk.nrows();
            let system: DMatrix<f64> = hk + DMatrix::identity(n, n) * nu;
            if let Some(chol) = system.cholesky() {
                // ∇φ(y) = ν·res
                let dir = chol.solve(&(&res * nu));
                let mut step = 1.0;
                for _ in 0..30 {
                    let cand = &y - &dir * step;
                    z.rows_mut(r.start, r.len()).copy_from(&cand);
                    let gc = obj.block_gradient(block, &z);
                    if gc.iter().all(|v| v.is_finite()) && residual(&cand, &gc).norm() < res_norm {
                        accepted = Some((cand, gc));
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
        let (ny, ng) = match accepted {
            Some(v) => v,
            None => {
                let cand = anchor - &g / nu;
                z.rows_mut(r.start, r.len()).copy_from(&cand);
                let gc = obj.block_gradient(block, &z);
                (cand, gc)
            }
        };
        ensure_finite(&ng, "block gradient")?;
        y = ny;
        g = ng;
    }
    Err(Error::numerical(format!(
        "proximal subproblem for block {block:?} did not reach tolerance {tol:.1e} in {} iterations",
        cfg.max_iters
    )))
}

/// One alternating proximal-point sweep.
pub fn app_sweep(obj: &dyn Objective, x: &Point, nu: f64, inner: &InnerSolveConfig) -> Result<ProxSweep> {
    if !(nu > 0.0) {
        return Err(Error::Usage(format!("proximal penalty must be > 0, got {nu}")));
    }
    let p = obj.partition();
    let mut next = x.clone();
    let mut norms = [0.0; 2];
    let mut iters = [0; 2];
    for (i, block) in Block::BOTH.into_iter().enumerate() {
        let anchor = block_read(x, &p, block).into_owned();
        let (y, g, n) = solve_prox_block(obj, block, &next, &anchor, nu, inner)?;
        norms[i] = g.norm();
        iters[i] = n;
        write_block(&mut next, obj, block, &y);
    }
    let step_norm = (&next - x).norm();
    Ok(ProxSweep {
        next,
        step_norm,
        block_grad_norms: norms,
        inner_iters: iters,
    })
}
