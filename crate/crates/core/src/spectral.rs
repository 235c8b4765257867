//! Block splits of a Hessian, the linearised AGD/APP iteration operators and
//! numerical checks of their eigenvalue bounds.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::Variant;
use crate::problem::{lambda_min, require_symmetric, spectral_norm, BlockPartition, Objective, Point};

/// Symmetry tolerance for Hessians handed to the split.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Imaginary parts below this (relative to `max(1, ‖B‖)`) count as real.
pub const REAL_TOL: f64 = 1e-8;

/// `H = H_u + H_l`, with `H_l` holding only the (2,1) block.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianSplit {
    pub h: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub partition: BlockPartition,
}

/// `H = H′_u + H′_l`, with `H′_u` holding only the (1,2) block.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimedSplit {
    pub h: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub partition: BlockPartition,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    Agd(HessianSplit),
    Prox(PrimedSplit),
}

fn check_shape(h: &DMatrix<f64>, p: &BlockPartition) -> Result<()> {
    if h.nrows() != p.dim() || h.ncols() != p.dim() {
        return Err(Error::Usage(format!(
            "Hessian is {}x{}, partition has dimension {}",
            h.nrows(),
            h.ncols(),
            p.dim()
        )));
    }
    require_symmetric(h, SYMMETRY_TOL)
}

/// Copies of `h` keeping only the (2,1) block and only the (1,2) block.
fn off_blocks(h: &DMatrix<f64>, p: &BlockPartition) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = p.dim();
    let s = p.split_index();
    let mut b21 = DMatrix::zeros(d, d);
    let mut b12 = DMatrix::zeros(d, d);
    b21.view_mut((s, 0), (d - s, s)).copy_from(&h.view((s, 0), (d - s, s)));
    b12.view_mut((0, s), (s, d - s)).copy_from(&h.view((0, s), (s, d - s)));
    (b21, b12)
}

pub fn split_agd(h: &DMatrix<f64>, p: &BlockPartition) -> Result<HessianSplit> {
    check_shape(h, p)?;
    let (lower, _) = off_blocks(h, p);
    let mut upper = h.clone();
    let s = p.split_index();
    let d = p.dim();
    upper.view_mut((s, 0), (d - s, s)).fill(0.0);
    Ok(HessianSplit {
        h: h.clone(),
        upper,
        lower,
        partition: *p,
    })
}

pub fn split_prox(h: &DMatrix<f64>, p: &BlockPartition) -> Result<PrimedSplit> {
    check_shape(h, p)?;
    let (_, upper) = off_blocks(h, p);
    let mut lower = h.clone();
    let s = p.split_index();
    let d = p.dim();
    lower.view_mut((0, s), (s, d - s)).fill(0.0);
    Ok(PrimedSplit {
        h: h.clone(),
        upper,
        lower,
        partition: *p,
    })
}

pub fn split_hessian(h: &DMatrix<f64>, p: &BlockPartition, variant: Variant) -> Result<Split> {
    Ok(match variant {
        Variant::Pagd => Split::Agd(split_agd(h, p)?),
        Variant::Papp => Split::Prox(split_prox(h, p)?),
    })
}

impl Split {
    fn parts(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Split::Agd(s) => (&s.upper, &s.lower),
            Split::Prox(s) => (&s.upper, &s.lower),
        }
    }
}

/// `(M, T)` with `M = I + ηH_l`, `T = I − ηH_u` for either split.
pub fn build_mt(split: &Split, eta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(eta > 0.0) {
        return Err(Error::Usage(format!("eta must be > 0, got {eta}")));
    }
    let (upper, lower) = split.parts();
    let n = upper.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    Ok((&id + lower * eta, &id - upper * eta))
}

/// `M⁻¹T`; `M` is unit lower triangular so this is a forward substitution.
pub fn agd_operator(split: &HessianSplit, eta: f64) -> Result<DMatrix<f64>> {
    let (m, t) = build_mt(&Split::Agd(split.clone()), eta)?;
    m.solve_lower_triangular(&t)
        .ok_or_else(|| Error::numerical("M is singular"))
}

/// `T′⁻¹M′`; `T′` is unit upper triangular so this is a back substitution.
pub fn prox_operator(split: &PrimedSplit, eta: f64) -> Result<DMatrix<f64>> {
    let (m, t) = build_mt(&Split::Prox(split.clone()), eta)?;
    t.solve_upper_triangular(&m)
        .ok_or_else(|| Error::numerical("T' is singular"))
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: Complex<f64>,
    /// Present for (numerically) real eigenvalues.
    pub vector: Option<DVector<f64>>,
    pub residual: f64,
}

/// Right null vector of `B − λI`, from the smallest singular value.
fn real_eigenvector(b: &DMatrix<f64>, lambda: f64) -> Result<(DVector<f64>, f64)> {
    let n = b.nrows();
    let shifted = b - DMatrix::<f64>::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::numerical("SVD did not return V"))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::numerical("empty matrix"))?;
    let mut v: DVector<f64> = v_t.row(k).transpose();
    v /= v.norm();
    // sign convention: largest-magnitude entry positive
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    let residual = (b * &v - &v * lambda).norm();
    Ok((v, residual))
}

/// Eigenvalues of a square matrix and unit right eigenvectors for the real ones.
pub fn real_eigs(b: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    if b.nrows() != b.ncols() {
        return Err(Error::Usage(format!("matrix is {}x{}, not square", b.nrows(), b.ncols())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let scale = spectral_norm(b).max(1.0);
    let schur = b
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical("QR iteration did not converge"))?;
    let mut out = Vec::with_capacity(b.nrows());
    for value in schur.complex_eigenvalues().iter() {
        if value.im.abs() <= REAL_TOL * scale {
            let (v, residual) = real_eigenvector(b, value.re)?;
            out.push(EigenPair {
                value: *value,
                vector: Some(v),
                residual,
            });
        } else {
            out.push(EigenPair {
                value: *value,
                vector: None,
                residual: f64::NAN,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

/// Eigenvalue data for `M⁻¹T` (AGD) and `T′⁻¹M′` (APP) against their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub dim: usize,
    pub lambda_min_h: f64,
    pub eta_used: f64,
    pub gamma_used: f64,
    pub lambda_max_mt: Option<f64>,
    /// Largest `|Im λ|` over all eigenvalues of `M⁻¹T`.
    pub max_imag_mt: Option<f64>,
    pub lemma_bound: Option<f64>,
    pub lemma_slack: Option<f64>,
    pub lemma: Option<Verdict>,
    pub escape_dir: Option<Vec<f64>>,
    pub lambda_min_pos_tm: Option<f64>,
    pub corollary_bound: Option<f64>,
    pub corollary_slack: Option<f64>,
    pub corollary: Option<Verdict>,
}

impl SpectralReport {
    fn empty(dim: usize, lambda_min_h: f64, eta: f64, gamma: f64) -> Self {
        Self {
            dim,
            lambda_min_h,
            eta_used: eta,
            gamma_used: gamma,
            lambda_max_mt: None,
            max_imag_mt: None,
            lemma_bound: None,
            lemma_slack: None,
            lemma: None,
            escape_dir: None,
            lambda_min_pos_tm: None,
            corollary_bound: None,
            corollary_slack: None,
            corollary: None,
        }
    }

    /// Merges the corollary fields of `other` into `self`.
    pub fn with_corollary(mut self, other: &SpectralReport) -> Self {
        self.lambda_min_pos_tm = other.lambda_min_pos_tm;
        self.corollary_bound = other.corollary_bound;
        self.corollary_slack = other.corollary_slack;
        self.corollary = other.corollary;
        self
    }
}

/// Slack below which a bound is counted as violated.
pub const BOUND_TOL: f64 = 1e-10;

fn require_negative_curvature(h: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Usage(format!("gamma must be > 0, got {gamma}")));
    }
    let lmin = lambda_min(h);
    if lmin > -gamma {
        return Err(Error::Usage(format!(
            "lambda_min(H) = {lmin} does not satisfy lambda_min(H) <= -gamma = {}",
            -gamma
        )));
    }
    Ok(lmin)
}

/// Largest real eigenvalue of `M⁻¹T` against `1 + ηγ/(1 + L/L_max)`, with
/// the corresponding unit eigenvector as the escape direction.
pub fn verify_escape_lemma(
    h: &DMatrix<f64>,
    p: &BlockPartition,
    eta: f64,
    gamma: f64,
    l: f64,
    l_max: f64,
) -> Result<SpectralReport> {
    let split = split_agd(h, p)?;
    let lmin = require_negative_curvature(h, gamma)?;
    if !(l_max > 0.0 && l > 0.0) {
        return Err(Error::Usage(format!("L and L_max must be > 0, got L = {l}, L_max = {l_max}")));
    }
    let b = agd_operator(&split, eta)?;
    let eigs = real_eigs(&b)?;
    let max_imag = eigs.iter().map(|e| e.value.im.abs()).fold(0.0, f64::max);
    let top = eigs
        .iter()
        .max_by(|a, b| a.value.re.total_cmp(&b.value.re))
        .ok_or_else(|| Error::numerical("no eigenvalues"))?;
    let bound = 1.0 + eta * gamma / (1.0 + l / l_max);
    let lam = top.value.re;
    let slack = lam - bound;
    let mut report = SpectralReport::empty(p.dim(), lmin, eta, gamma);
    report.lambda_max_mt = Some(lam);
    report.max_imag_mt = Some(max_imag);
    report.lemma_bound = Some(bound);
    report.lemma_slack = Some(slack);
    report.escape_dir = top.vector.as_ref().map(|v| v.iter().copied().collect());
    report.lemma = Some(if top.vector.is_none() {
        Verdict::Indeterminate
    } else if slack > BOUND_TOL {
        Verdict::Pass
    } else {
        Verdict::Fail
    });
    Ok(report)
}

/// Smallest positive real eigenvalue of `T′⁻¹M′` against `1 − ηγ/2`.
pub fn verify_prox_corollary(h: &DMatrix<f64>, p: &BlockPartition, eta: f64, gamma: f64) -> Result<SpectralReport> {
    let split = split_prox(h, p)?;
    let lmin = require_negative_curvature(h, gamma)?;
    let b = prox_operator(&split, eta)?;
    let eigs = real_eigs(&b)?;
    let pos = eigs
        .iter()
        .filter(|e| e.vector.is_some() && e.value.re > 0.0)
        .map(|e| e.value.re)
        .min_by(f64::total_cmp);
    let bound = 1.0 - eta * gamma / 2.0;
    let mut report = SpectralReport::empty(p.dim(), lmin, eta, gamma);
    report.corollary_bound = Some(bound);
    match pos {
        Some(lam) => {
            let slack = bound - lam;
            report.lambda_min_pos_tm = Some(lam);
            report.corollary_slack = Some(slack);
            report.corollary = Some(if slack >= -BOUND_TOL { Verdict::Pass } else { Verdict::Fail });
        }
        None => report.corollary = Some(Verdict::Indeterminate),
    }
    Ok(report)
}

/// One sampled instance for the eigenvalue suites.
#[derive(Debug, Clone)]
pub struct LemmaInstance {
    pub h: DMatrix<f64>,
    pub partition: BlockPartition,
    pub eta: f64,
    pub gamma: f64,
    pub l: f64,
    pub l_max: f64,
}

/// Random symmetric `H = Q D Qᵀ` with at least one eigenvalue below zero and
/// constants satisfying `‖H‖ ≤ L`, `‖H_kk‖ ≤ L_max ≤ L`, `0 < γ ≤ min(−λ_min, L_max)`
/// and `0 < η ≤ 1/L_max`.
pub fn sample_lemma_instance<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<LemmaInstance> {
    if d < 2 {
        return Err(Error::Usage(format!("dimension must be >= 2, got {d}")));
    }
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let mut diag: DVector<f64> = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0) * 2.0);
    let neg = rng.random_range(0..d);
    diag[neg] = -rng.random_range(0.05..2.0);
    let h = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let split = rng.random_range(1..d);
    let p = BlockPartition::new(d, split)?;
    let s = p.split_index();
    let b11 = spectral_norm(&h.view((0, 0), (s, s)).into_owned());
    let b22 = spectral_norm(&h.view((s, s), (d - s, d - s)).into_owned());
    let l = spectral_norm(&h) * rng.random_range(1.0..1.5);
    let l_max = (b11.max(b22) * rng.random_range(1.0..1.5)).min(l);
    let lmin = lambda_min(&h);
    let gamma = (-lmin).min(l_max) * rng.random_range(0.05..1.0);
    let eta = rng.random_range(0.05..1.0) / l_max;
    Ok(LemmaInstance {
        h,
        partition: p,
        eta,
        gamma,
        l,
        l_max,
    })
}

/// Both sides of a matrix-norm inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralReport {
    /// `‖∫₀¹∇²f(θx)dθ − ∇²f(y)‖ ≤ ρ(‖x‖ + ‖y‖)`.
    pub integral: BoundCheck,
    /// Upper-block-triangular mixing of `∇²f(x)` and `∇²f(y)` against `∇²f(z)`.
    pub upper_blocks: BoundCheck,
    /// (2,1) block of `∇²f(x) − ∇²f(y)`.
    pub lower_block: BoundCheck,
}

impl IntegralReport {
    pub fn worst_slack(&self) -> f64 {
        self.integral
            .slack()
            .min(self.upper_blocks.slack())
            .min(self.lower_block.slack())
    }
}

pub const SIMPSON_NODES: usize = 33;

/// `∫₀¹ ∇²f(θx) dθ` by composite Simpson on [`SIMPSON_NODES`] nodes.
pub fn averaged_hessian(obj: &dyn Objective, x: &Point) -> Result<DMatrix<f64>> {
    let intervals = SIMPSON_NODES - 1;
    let h = 1.0 / intervals as f64;
    let d = obj.dim();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for i in 0..=intervals {
        let w = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let hess = hessian_of(obj, &(x * (i as f64 * h)))?;
        acc += hess * w;
    }
    Ok(acc * (h / 3.0))
}

fn hessian_of(obj: &dyn Objective, x: &Point) -> Result<DMatrix<f64>> {
    obj.hessian(x)
        .ok_or_else(|| Error::Usage("objective has no analytic Hessian".into()))
}

/// Checks the averaged-Hessian bound at `(x, y)` and the block-masked bounds
/// at `(x, y, z)` with the problem's Hessian-Lipschitz constant `rho`.
pub fn integral_hessian_bound_check(
    obj: &dyn Objective,
    x: &Point,
    y: &Point,
    z: &Point,
    rho: f64,
) -> Result<IntegralReport> {
    let d = obj.dim();
    for v in [x, y, z] {
        if v.len() != d {
            return Err(Error::Usage(format!("point has length {}, objective has dimension {d}", v.len())));
        }
    }
    let p = obj.partition();
    let s = p.split_index();
    let hx = hessian_of(obj, x)?;
    let hy = hessian_of(obj, y)?;
    let hz = hessian_of(obj, z)?;

    let avg = averaged_hessian(obj, x)?;
    let integral = BoundCheck {
        lhs: spectral_norm(&(avg - &hy)),
        rhs: rho * (x.norm() + y.norm()),
    };

    // rows of block 1 from x, block 22 from y, (2,1) zeroed
    let mut mixed = hx.clone();
    mixed.view_mut((s, s), (d - s, d - s)).copy_from(&hy.view((s, s), (d - s, d - s)));
    mixed.view_mut((s, 0), (d - s, s)).fill(0.0);
    let mut base = hz;
    base.view_mut((s, 0), (d - s, s)).fill(0.0);
    let upper_blocks = BoundCheck {
        lhs: spectral_norm(&(mixed - base)),
        rhs: rho * ((x - z).norm() + (y - z).norm()),
    };

    let diff = (&hx - &hy).view((s, 0), (d - s, s)).into_owned();
    let lower_block = BoundCheck {
        lhs: spectral_norm(&diff),
        rhs: rho * (x - y).norm(),
    };
    Ok(IntegralReport {
        integral,
        upper_blocks,
        lower_block,
    })
}
