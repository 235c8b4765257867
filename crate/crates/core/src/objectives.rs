//! Concrete test problems with analytic derivatives and smoothness constants.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::{
    block_read, require_symmetric, spectral_norm, symmetric_eigenvalues, Block, BlockPartition,
    Objective, Point, SmoothnessConstants,
};

const SYMMETRY_TOL: f64 = 1e-12;

fn sub_blocks(a: &DMatrix<f64>, p: &BlockPartition) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (s, d) = (p.split_index(), p.dim());
    let a11 = a.view((0, 0), (s, s)).into_owned();
    let a22 = a.view((s, s), (d - s, d - s)).into_owned();
    let a12 = a.view((0, s), (s, d - s)).into_owned();
    (a11, a22, a12)
}

fn rows_times(a: &DMatrix<f64>, rows: std::ops::Range<usize>, x: &Point) -> Point {
    a.rows(rows.start, rows.len()) * x
}

/// `f(x) = xᵀAx`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    a: DMatrix<f64>,
    partition: BlockPartition,
}

impl QuadraticForm {
    pub fn new(a: DMatrix<f64>, split: usize) -> Result<Self> {
        require_symmetric(&a, SYMMETRY_TOL)?;
        let partition = BlockPartition::new(a.nrows(), split)?;
        Ok(Self { a, partition })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Minimiser of the block-`block` proximal subproblem
    /// `min_y f(h, y) + (nu/2)|y - anchor|^2`, by a direct linear solve.
    pub fn prox_block_closed_form(&self, block: Block, x: &Point, anchor: &Point, nu: f64) -> Result<Point> {
        let p = &self.partition;
        let own = p.range(block);
        let other = p.range(block.other());
        let akk = self.a.view((own.start, own.start), (own.len(), own.len()));
        let ako = self.a.view((own.start, other.start), (own.len(), other.len()));
        let x_other = block_read(x, p, block.other());
        let lhs = 2.0 * akk + DMatrix::identity(own.len(), own.len()) * nu;
        let rhs = anchor * nu - 2.0 * ako * x_other;
        lhs.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("closed-form proximal system is singular"))
    }
}

impl Objective for QuadraticForm {
    fn partition(&self) -> BlockPartition {
        self.partition
    }

    fn value(&self, x: &Point) -> f64 {
        x.dot(&(&self.a * x))
    }

    fn gradient(&self, x: &Point) -> Point {
        2.0 * (&self.a * x)
    }

    fn block_gradient(&self, block: Block, x: &Point) -> Point {
        2.0 * rows_times(&self.a, self.partition.range(block), x)
    }

    fn hessian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        Some(2.0 * &self.a)
    }

    fn constants(&self) -> SmoothnessConstants {
        let (a11, a22, a12) = sub_blocks(&self.a, &self.partition);
        let cross = 2.0 * spectral_norm(&a12);
        SmoothnessConstants {
            l: 2.0 * spectral_norm(&self.a),
            l_block: [2.0 * spectral_norm(&a11), 2.0 * spectral_norm(&a22)],
            l_cross: [cross, cross],
            rho: 0.0,
        }
    }
}

/// `f(x) = xᵀAx + ¼‖x‖⁴₄`, analysed on the ball `{‖x‖² ≤ τ}`.
#[derive(Debug, Clone)]
pub struct QuarticSaddle {
    a: DMatrix<f64>,
    tau: f64,
    partition: BlockPartition,
    constants: SmoothnessConstants,
}

impl QuarticSaddle {
    pub fn new(a: DMatrix<f64>, tau: f64, split: usize) -> Result<Self> {
        require_symmetric(&a, SYMMETRY_TOL)?;
        let partition = BlockPartition::new(a.nrows(), split)?;
        let constants = quartic_constants(&a, tau, &partition)?;
        Ok(Self {
            a,
            tau,
            partition,
            constants,
        })
    }

    /// Uses `τ = max(λ_max(A), ‖A‖₂)`, the smallest radius on which both the
    /// lemma precondition and the `5τ` ceiling hold.
    pub fn with_default_tau(a: DMatrix<f64>, split: usize) -> Result<Self> {
        require_symmetric(&a, SYMMETRY_TOL)?;
        let tau = spectral_norm(&a).max(f64::MIN_POSITIVE);
        Self::new(a, tau, split)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Whether `x` lies in the analysis ball `{‖x‖² ≤ τ}`.
    pub fn in_ball(&self, x: &Point) -> bool {
        x.norm_squared() <= self.tau
    }

    /// Value, gradient and Hessian in one pass.
    pub fn eval_grad_hess(&self, x: &Point) -> (f64, Point, DMatrix<f64>) {
        (
            self.value(x),
            self.gradient(x),
            self.hessian(x).expect("quartic has an analytic Hessian"),
        )
    }
}

impl Objective for QuarticSaddle {
    fn partition(&self) -> BlockPartition {
        self.partition
    }

    fn value(&self, x: &Point) -> f64 {
        x.dot(&(&self.a * x)) + 0.25 * x.iter().map(|v| v.powi(4)).sum::<f64>()
    }

    fn gradient(&self, x: &Point) -> Point {
        let mut g = 2.0 * (&self.a * x);
        for (gi, xi) in g.iter_mut().zip(x.iter()) {
            *gi += xi.powi(3);
        }
        g
    }

    fn block_gradient(&self, block: Block, x: &Point) -> Point {
        let r = self.partition.range(block);
        let mut g = 2.0 * rows_times(&self.a, r.clone(), x);
        for (gi, xi) in g.iter_mut().zip(x.rows(r.start, r.len()).iter()) {
            *gi += xi.powi(3);
        }
        g
    }

    fn hessian(&self, x: &Point) -> Option<DMatrix<f64>> {
        let mut h = 2.0 * &self.a;
        for i in 0..x.len() {
            h[(i, i)] += 3.0 * x[i] * x[i];
        }
        Some(h)
    }

    fn constants(&self) -> SmoothnessConstants {
        self.constants
    }
}

/// Smoothness constants of the quartic saddle on `{‖x‖² ≤ τ}`.
///
/// `L = 5τ` and `ρ = 6√τ` in the regime `τ ≥ ‖A‖₂`. When only
/// `λ_max(A) ≤ τ < ‖A‖₂` holds (strongly negative spectrum), the `5τ` ceiling
/// understates `‖2A‖`, so `L = 2‖A‖₂ + 3τ` is reported instead. Block constants
/// bound the Hessian blocks over the ball: `2‖A_kk‖ + 3τ` on the diagonal and
/// `2‖A_12‖` off it.
pub fn quartic_constants(a: &DMatrix<f64>, tau: f64, p: &BlockPartition) -> Result<SmoothnessConstants> {
    let lmax_a = *symmetric_eigenvalues(a).last().unwrap_or(&0.0);
    if !(tau >= lmax_a) || !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Usage(format!(
            "tau = {tau} must be positive and at least lambda_max(A) = {lmax_a}"
        )));
    }
    let norm_a = spectral_norm(a);
    let l = (5.0 * tau).max(2.0 * norm_a + 3.0 * tau);
    let (a11, a22, a12) = sub_blocks(a, p);
    let cross = (2.0 * spectral_norm(&a12)).min(l);
    Ok(SmoothnessConstants {
        l,
        l_block: [
            (2.0 * spectral_norm(&a11) + 3.0 * tau).min(l),
            (2.0 * spectral_norm(&a22) + 3.0 * tau).min(l),
        ],
        l_cross: [cross, cross],
        rho: 6.0 * tau.sqrt(),
    })
}

/// `A = U D Uᵀ` with `D` i.i.d. `N(0, 2)` and `U` Haar-orthogonal.
pub fn random_saddle_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<DMatrix<f64>> {
    let (u, diag) = random_saddle_factors(rng, d)?;
    let a = &u * DMatrix::from_diagonal(&diag) * u.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// The orthogonal factor and diagonal behind [`random_saddle_matrix`].
pub fn random_saddle_factors<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if d < 2 {
        return Err(Error::Usage(format!("random saddle matrix needs d >= 2, got {d}")));
    }
    let sd = 2.0_f64.sqrt();
    let diag = DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok((q, diag))
}

/// `f(X, Y) = ‖Z − XY‖²_F` with `x = [vec(X); vec(Y)]` (column-major),
/// `X` of size `m×r` in block 1 and `Y` of size `r×d` in block 2.
#[derive(Debug, Clone)]
pub struct MatrixFactorization {
    z: DMatrix<f64>,
    rank: usize,
    radius: f64,
    partition: BlockPartition,
}

impl MatrixFactorization {
    /// `radius` bounds `‖x‖` on the region the reported constants cover.
    pub fn new(z: DMatrix<f64>, rank: usize, radius: f64) -> Result<Self> {
        if rank == 0 || z.is_empty() {
            return Err(Error::Usage("matrix factorization needs rank >= 1 and nonempty Z".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::Usage(format!("region radius must be > 0, got {radius}")));
        }
        let (m, d) = z.shape();
        let partition = BlockPartition::new(m * rank + rank * d, m * rank)?;
        Ok(Self {
            z,
            rank,
            radius,
            partition,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Splits `x` into `(X, Y)`.
    pub fn unpack(&self, x: &Point) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if x.len() != self.partition.dim() {
            return Err(Error::Usage(format!(
                "point has length {}, expected m*r + r*d = {}",
                x.len(),
                self.partition.dim()
            )));
        }
        let (m, d) = self.z.shape();
        let r = self.rank;
        let xm = DMatrix::from_column_slice(m, r, &x.as_slice()[..m * r]);
        let ym = DMatrix::from_column_slice(r, d, &x.as_slice()[m * r..]);
        Ok((xm, ym))
    }

    pub fn pack(xm: &DMatrix<f64>, ym: &DMatrix<f64>) -> Point {
        Point::from_iterator(
            xm.len() + ym.len(),
            xm.as_slice().iter().chain(ym.as_slice().iter()).copied(),
        )
    }

    /// Value and gradient; errors on a dimension mismatch.
    pub fn eval_grad(&self, x: &Point) -> Result<(f64, Point)> {
        let (xm, ym) = self.unpack(x)?;
        let resid = &self.z - &xm * &ym;
        let gx = -2.0 * &resid * ym.transpose();
        let gy = -2.0 * xm.transpose() * &resid;
        Ok((resid.norm_squared(), Self::pack(&gx, &gy)))
    }
}

impl Objective for MatrixFactorization {
    fn partition(&self) -> BlockPartition {
        self.partition
    }

    fn value(&self, x: &Point) -> f64 {
        let (xm, ym) = self.unpack(x).expect("dimension checked by caller");
        (&self.z - xm * ym).norm_squared()
    }

    fn gradient(&self, x: &Point) -> Point {
        self.eval_grad(x).expect("dimension checked by caller").1
    }

    fn block_gradient(&self, block: Block, x: &Point) -> Point {
        let (xm, ym) = self.unpack(x).expect("dimension checked by caller");
        let resid = &self.z - &xm * &ym;
        let g = match block {
            Block::First => -2.0 * resid * ym.transpose(),
            Block::Second => -2.0 * xm.transpose() * resid,
        };
        Point::from_column_slice(g.as_slice())
    }

    /// Bounds valid on `{‖x‖ ≤ R}`: own-block `2R²`, cross-block
    /// `2R² + 2‖Z‖_F`, global `3R² + 2‖Z‖_F`, Hessian Lipschitz `6R`.
    fn constants(&self) -> SmoothnessConstants {
        let r2 = self.radius * self.radius;
        let zn = self.z.norm();
        SmoothnessConstants {
            l: 3.0 * r2 + 2.0 * zn,
            l_block: [2.0 * r2, 2.0 * r2],
            l_cross: [2.0 * r2 + 2.0 * zn, 2.0 * r2 + 2.0 * zn],
            rho: 6.0 * self.radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{finite_diff_grad, seeded_rng, INIT_STREAM};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn a2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])
    }

    #[test]
    fn quartic_origin_is_stationary() {
        let q = QuarticSaddle::new(a2(), 3.0, 1).unwrap();
        let (f, g, _) = q.eval_grad_hess(&dvector![0.0, 0.0]);
        assert_eq!(f, 0.0);
        assert_eq!(g, dvector![0.0, 0.0]);
    }

    #[test]
    fn quartic_at_unit_point() {
        let q = QuarticSaddle::new(a2(), 3.0, 1).unwrap();
        let (f, g, h) = q.eval_grad_hess(&dvector![1.0, 0.0]);
        assert_abs_diff_eq!(f, 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-15);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[5.0, 4.0, 4.0, 2.0]));
    }

    #[test]
    fn quartic_global_minimum() {
        let q = QuarticSaddle::new(a2(), 5.0, 1).unwrap();
        let s = 2.0_f64.sqrt();
        let x = dvector![s, -s];
        assert_abs_diff_eq!(q.value(&x), -2.0, epsilon = 1e-14);
        assert!(q.gradient(&x).norm() < 1e-14);
    }

    #[test]
    fn quartic_fd_gradient() {
        let q = QuarticSaddle::new(a2(), 3.0, 1).unwrap();
        let g = finite_diff_grad(&q, &dvector![1.0, 0.0], 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn quartic_constants_formula() {
        let p = BlockPartition::new(2, 1).unwrap();
        let c = quartic_constants(&a2(), 3.0, &p).unwrap();
        assert_abs_diff_eq!(c.l, 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.rho, 6.0 * 3.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c.l_block[0], 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.l_cross[0], 4.0, epsilon = 1e-12);
        assert!(c.l_max() <= c.l);

        let z = quartic_constants(&DMatrix::zeros(2, 2), 1.0, &p).unwrap();
        assert_abs_diff_eq!(z.l, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z.rho, 6.0, epsilon = 1e-15);
    }

    #[test]
    fn quartic_constants_reject_small_tau() {
        let p = BlockPartition::new(2, 1).unwrap();
        assert!(matches!(
            quartic_constants(&a2(), 2.9, &p),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn quartic_rejects_asymmetric_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.1, 1.0]);
        assert!(QuarticSaddle::new(a, 5.0, 1).is_err());
    }

    #[test]
    fn quadratic_saddle_hessian_spectrum() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let ev = symmetric_eigenvalues(&q.hessian(&Point::zeros(2)).unwrap());
        assert_abs_diff_eq!(ev[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 6.0, epsilon = 1e-12);
        let c = q.constants();
        assert_abs_diff_eq!(c.l, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.l_max(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn random_saddle_matrix_structure() {
        let mut rng = seeded_rng(5, INIT_STREAM);
        let (u, d) = random_saddle_factors(&mut rng, 8).unwrap();
        let utu = u.transpose() * &u;
        assert!((utu - DMatrix::identity(8, 8)).amax() < 1e-12);
        let a = &u * DMatrix::from_diagonal(&d) * u.transpose();
        let mut ev = symmetric_eigenvalues(&((&a + a.transpose()) * 0.5));
        let mut dd: Vec<f64> = d.iter().copied().collect();
        dd.sort_by(f64::total_cmp);
        ev.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(dd.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }

        let mut rng = seeded_rng(6, INIT_STREAM);
        let a = random_saddle_matrix(&mut rng, 30).unwrap();
        assert!((&a - a.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn random_saddle_matrix_rejects_small_dim() {
        let mut rng = seeded_rng(6, INIT_STREAM);
        assert!(random_saddle_matrix(&mut rng, 1).is_err());
    }

    #[test]
    fn random_saddle_matrices_have_negative_curvature() {
        let mut rng = seeded_rng(21, INIT_STREAM);
        let negative = (0..20)
            .filter(|_| symmetric_eigenvalues(&random_saddle_matrix(&mut rng, 100).unwrap())[0] < 0.0)
            .count();
        assert!(negative as f64 / 20.0 >= 0.99);
    }

    #[test]
    fn matfac_exact_factorisation_is_minimum() {
        let xm = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let ym = DMatrix::from_row_slice(1, 3, &[0.5, 1.0, 3.0]);
        let mf = MatrixFactorization::new(&xm * &ym, 1, 10.0).unwrap();
        let (f, g) = mf.eval_grad(&MatrixFactorization::pack(&xm, &ym)).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn matfac_zero_left_factor() {
        let z = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 4.0]);
        let ym = DMatrix::from_row_slice(2, 3, &[0.3, -0.2, 1.0, 0.7, 0.1, -0.4]);
        let xm = DMatrix::zeros(2, 2);
        let mf = MatrixFactorization::new(z.clone(), 2, 10.0).unwrap();
        let (f, g) = mf.eval_grad(&MatrixFactorization::pack(&xm, &ym)).unwrap();
        assert_abs_diff_eq!(f, z.norm_squared(), epsilon = 1e-14);
        let gx = -2.0 * &z * ym.transpose();
        assert!((Point::from_column_slice(gx.as_slice()) - g.rows(0, 4)).norm() < 1e-14);
        assert_eq!(g.rows(4, 6).norm(), 0.0);
    }

    #[test]
    fn matfac_fd_gradient() {
        let mut rng = seeded_rng(9, INIT_STREAM);
        let z = DMatrix::from_fn(3, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mf = MatrixFactorization::new(z, 2, 5.0).unwrap();
        let x = Point::from_fn(mf.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let (_, g) = mf.eval_grad(&x).unwrap();
        let fd = finite_diff_grad(&mf, &x, 1e-5).unwrap();
        assert!((g - fd).norm() <= 1e-5);
    }

    #[test]
    fn matfac_dimension_mismatch() {
        let mf = MatrixFactorization::new(DMatrix::zeros(2, 2), 1, 1.0).unwrap();
        assert!(matches!(mf.eval_grad(&Point::zeros(3)), Err(Error::Usage(_))));
    }

    #[test]
    fn quadratic_prox_closed_form_satisfies_optimality() {
        let q = QuadraticForm::new(a2(), 1).unwrap();
        let x = dvector![0.3, -0.7];
        let nu = 12.0;
        let anchor = block_read(&x, &q.partition(), Block::First).into_owned();
        let y = q.prox_block_closed_form(Block::First, &x, &anchor, nu).unwrap();
        let mut xn = x.clone();
        xn[0] = y[0];
        let resid = q.block_gradient(Block::First, &xn) + (&y - &anchor) * nu;
        assert!(resid.norm() < 1e-14);
    }
}
