//! Objective contract, two-block partitioning, dense helpers and the
//! uniform-ball perturbation sampler.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the problem space.
pub type Point = DVector<f64>;

/// The generator every run owns. One 64-bit seed plus a stream id pins it.
pub type RunRng = ChaCha8Rng;

/// Stream used for initial-point sampling.
pub const INIT_STREAM: u64 = 0;
/// Stream used for perturbations inside a run.
pub const PERTURB_STREAM: u64 = 1;

pub fn seeded_rng(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One of the two coordinate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    First,
    Second,
}

impl Block {
    pub const BOTH: [Block; 2] = [Block::First, Block::Second];

    /// Maps the 1-based block index used in the literature to a block.
    pub fn from_index(k: usize) -> Result<Self> {
        match k {
            1 => Ok(Block::First),
            2 => Ok(Block::Second),
            _ => Err(Error::Usage(format!("block index must be 1 or 2, got {k}"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Block::First => Block::Second,
            Block::Second => Block::First,
        }
    }
}

/// Split of `0..dim` into two contiguous, nonempty ranges `[0, split)` and `[split, dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    dim: usize,
    split: usize,
}

impl BlockPartition {
    pub fn new(dim: usize, split: usize) -> Result<Self> {
        if dim < 2 || split == 0 || split >= dim {
            return Err(Error::Usage(format!(
                "split index must lie in [1, {}], got {split} for dimension {dim}",
                dim.saturating_sub(1)
            )));
        }
        Ok(Self { dim, split })
    }

    /// Even split, block 1 gets the smaller half when `dim` is odd.
    pub fn halves(dim: usize) -> Result<Self> {
        Self::new(dim, dim / 2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split_index(&self) -> usize {
        self.split
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::First => 0..self.split,
            Block::Second => self.split..self.dim,
        }
    }

    pub fn len(&self, block: Block) -> usize {
        self.range(block).len()
    }

    pub fn offset(&self, block: Block) -> usize {
        self.range(block).start
    }
}

/// Returns the contiguous sub-vector of `x` for `block`.
pub fn block_read<'a>(x: &'a Point, p: &BlockPartition, block: Block) -> DVectorView<'a, f64> {
    let r = p.range(block);
    x.rows(r.start, r.len())
}

/// Index-based variant of [`block_read`] taking the 1-based block index.
pub fn block_read_index(x: &Point, p: &BlockPartition, k: usize) -> Result<Point> {
    if x.len() != p.dim() {
        return Err(Error::Usage(format!(
            "point has length {}, partition expects {}",
            x.len(),
            p.dim()
        )));
    }
    let block = Block::from_index(k)?;
    Ok(block_read(x, p, block).into_owned())
}

/// Builds the full point from a block's own coordinates and the complementary block.
pub fn assemble(p: &BlockPartition, block: Block, own: &[f64], other: &[f64]) -> Point {
    debug_assert_eq!(own.len(), p.len(block));
    debug_assert_eq!(other.len(), p.len(block.other()));
    let mut x = Point::zeros(p.dim());
    x.rows_mut(p.offset(block), own.len()).copy_from_slice(own);
    x.rows_mut(p.offset(block.other()), other.len())
        .copy_from_slice(other);
    x
}

/// Gradient, block-wise and Hessian Lipschitz constants of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Global gradient Lipschitz constant.
    pub l: f64,
    /// Own-block constants `L_k`.
    pub l_block: [f64; 2],
    /// Cross-block constants `L~_k`.
    pub l_cross: [f64; 2],
    /// Hessian Lipschitz constant.
    pub rho: f64,
}

impl SmoothnessConstants {
    pub fn l_max(&self) -> f64 {
        self.l_block
            .iter()
            .chain(self.l_cross.iter())
            .fold(0.0_f64, |m, v| m.max(*v))
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.l, self.l_block[0], self.l_block[1], self.l_cross[0], self.l_cross[1], self.rho];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "smoothness constants must be finite and nonnegative: {self:?}"
            )));
        }
        if self.l_max() > self.l * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "L_max = {} exceeds L = {}",
                self.l_max(),
                self.l
            )));
        }
        Ok(())
    }
}

/// A smooth objective over a two-block partition.
pub trait Objective: Send + Sync {
    fn partition(&self) -> BlockPartition;

    fn dim(&self) -> usize {
        self.partition().dim()
    }

    fn value(&self, x: &Point) -> f64;

    fn gradient(&self, x: &Point) -> Point;

    /// Partial gradient with respect to `block`, evaluated at the assembled point `x`.
    fn block_gradient(&self, block: Block, x: &Point) -> Point {
        let g = self.gradient(x);
        block_read(&g, &self.partition(), block).into_owned()
    }

    fn hessian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        None
    }

    /// Diagonal block of the Hessian for `block`.
    fn block_hessian(&self, block: Block, x: &Point) -> Option<DMatrix<f64>> {
        let h = self.hessian(x)?;
        let r = self.partition().range(block);
        Some(h.view((r.start, r.start), (r.len(), r.len())).into_owned())
    }

    fn constants(&self) -> SmoothnessConstants;
}

/// Partial gradient `∇_k f(x_{-k}, x_k)` from separate block coordinates.
pub fn block_grad(obj: &dyn Objective, block: Block, other: &[f64], own: &[f64]) -> Point {
    let x = assemble(&obj.partition(), block, own, other);
    obj.block_gradient(block, &x)
}

/// Draws a point uniformly from the `d`-dimensional ball of radius `r` centred at the origin.
pub fn sample_uniform_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, r: f64) -> Result<Point> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Usage(format!("ball radius must be finite and >= 0, got {r}")));
    }
    if d == 0 {
        return Err(Error::Usage("ball dimension must be >= 1".into()));
    }
    if r == 0.0 {
        return Ok(Point::zeros(d));
    }
    let dir = loop {
        let g = Point::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 0.0 && n.is_finite() {
            break g / n;
        }
    };
    // u in (0, 1]
    let u: f64 = 1.0 - rng.random::<f64>();
    let radius = (r * u.powf(1.0 / d as f64)).min(r);
    let mut xi = dir * radius;
    // Rounding in the scaling can push the norm a hair past r.
    let n = xi.norm();
    if n > r {
        xi *= r / n;
    }
    Ok(xi)
}

/// Central-difference gradient with step `h`.
pub fn finite_diff_grad(obj: &dyn Objective, x: &Point, h: f64) -> Result<Point> {
    if !(h > 0.0) {
        return Err(Error::Usage(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut xp = x.clone();
    let mut g = Point::zeros(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = obj.value(&xp);
        xp[i] = xi - h;
        let fm = obj.value(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Largest absolute asymmetry relative to the largest entry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn require_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Usage(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let a = asymmetry(m);
    if a > tol {
        return Err(Error::Usage(format!(
            "matrix is not symmetric: relative asymmetry {a:.3e} exceeds {tol:.1e}"
        )));
    }
    Ok(())
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

/// Spectral (operator 2-) norm, for any rectangular matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |a, s| a.max(*s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    struct Quad {
        a: DMatrix<f64>,
    }

    impl Objective for Quad {
        fn partition(&self) -> BlockPartition {
            BlockPartition::halves(self.a.nrows()).unwrap()
        }
        fn value(&self, x: &Point) -> f64 {
            x.dot(&(&self.a * x))
        }
        fn gradient(&self, x: &Point) -> Point {
            2.0 * &self.a * x
        }
        fn constants(&self) -> SmoothnessConstants {
            unimplemented!()
        }
    }

    struct Constant;

    impl Objective for Constant {
        fn partition(&self) -> BlockPartition {
            BlockPartition::new(3, 1).unwrap()
        }
        fn value(&self, _x: &Point) -> f64 {
            7.5
        }
        fn gradient(&self, _x: &Point) -> Point {
            Point::zeros(3)
        }
        fn constants(&self) -> SmoothnessConstants {
            unimplemented!()
        }
    }

    #[test]
    fn block_read_slices() {
        let x = dvector![1.0, 2.0, 3.0];
        let p = BlockPartition::new(3, 1).unwrap();
        assert_eq!(block_read_index(&x, &p, 1).unwrap(), dvector![1.0]);
        assert_eq!(block_read_index(&x, &p, 2).unwrap(), dvector![2.0, 3.0]);
        let y = dvector![5.0, -5.0];
        let p2 = BlockPartition::new(2, 1).unwrap();
        assert_eq!(block_read_index(&y, &p2, 2).unwrap(), dvector![-5.0]);
    }

    #[test]
    fn block_read_rejects_bad_index() {
        let x = dvector![1.0, 2.0, 3.0];
        let p = BlockPartition::new(3, 1).unwrap();
        assert!(matches!(block_read_index(&x, &p, 0), Err(Error::Usage(_))));
        assert!(matches!(block_read_index(&x, &p, 3), Err(Error::Usage(_))));
    }

    #[test]
    fn partition_requires_two_nonempty_blocks() {
        assert!(BlockPartition::new(3, 0).is_err());
        assert!(BlockPartition::new(3, 3).is_err());
        assert!(BlockPartition::new(1, 1).is_err());
        let p = BlockPartition::new(5, 2).unwrap();
        assert_eq!(p.range(Block::First), 0..2);
        assert_eq!(p.range(Block::Second), 2..5);
    }

    #[test]
    fn assemble_inverts_block_read() {
        let p = BlockPartition::new(4, 3).unwrap();
        let x = dvector![1.0, -2.0, 3.5, 9.0];
        for b in Block::BOTH {
            let own: Vec<f64> = block_read(&x, &p, b).iter().copied().collect();
            let other: Vec<f64> = block_read(&x, &p, b.other()).iter().copied().collect();
            assert_eq!(assemble(&p, b, &own, &other), x);
        }
    }

    #[test]
    fn zero_radius_ball_is_origin() {
        let mut rng = seeded_rng(3, PERTURB_STREAM);
        let xi = sample_uniform_ball(&mut rng, 5, 0.0).unwrap();
        assert_eq!(xi, Point::zeros(5));
    }

    #[test]
    fn negative_radius_is_usage_error() {
        let mut rng = seeded_rng(3, PERTURB_STREAM);
        assert!(matches!(
            sample_uniform_ball(&mut rng, 2, -1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn ball_mean_radius_matches_radial_density() {
        // Oracle: E|xi| = int_0^1 t * d t^{d-1} dt, by composite Simpson.
        let d = 2usize;
        let n = 1000;
        let h = 1.0 / n as f64;
        let dens = |t: f64| t * d as f64 * t.powi(d as i32 - 1);
        let mut s = dens(0.0) + dens(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * dens(i as f64 * h);
        }
        let oracle = s * h / 3.0;
        assert_abs_diff_eq!(oracle, 2.0 / 3.0, epsilon = 1e-12);

        let mut rng = seeded_rng(11, PERTURB_STREAM);
        let samples = 100_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let xi = sample_uniform_ball(&mut rng, d, 1.0).unwrap();
            assert!(xi.norm() <= 1.0);
            acc += xi.norm();
        }
        assert_abs_diff_eq!(acc / samples as f64, oracle, epsilon = 0.01);
    }

    #[test]
    fn ball_inner_half_fraction_is_binomial() {
        for d in [2usize, 3, 5] {
            let mut rng = seeded_rng(100 + d as u64, PERTURB_STREAM);
            let n = 10_000;
            let r = 0.7;
            let inside = (0..n)
                .filter(|_| sample_uniform_ball(&mut rng, d, r).unwrap().norm() <= r / 2.0)
                .count();
            let p = 0.5f64.powi(d as i32);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (inside as f64 - n as f64 * p).abs() <= 3.0 * sigma,
                "d={d}: {inside} inside, expected {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let q = Quad {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        let g = finite_diff_grad(&q, &dvector![1.0, 0.0], 1e-5).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn finite_difference_on_constant_is_zero() {
        let g = finite_diff_grad(&Constant, &dvector![0.3, -1.0, 2.0], 1e-5).unwrap();
        assert!(g.norm() <= 1e-10);
    }

    #[test]
    fn finite_difference_rejects_nonpositive_step() {
        let g = finite_diff_grad(&Constant, &dvector![0.3, -1.0, 2.0], 0.0);
        assert!(matches!(g, Err(Error::Usage(_))));
    }

    #[test]
    fn block_grad_reassembles_point() {
        let q = Quad {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        // x = (1, 1): grad = 2Ax = (6, 6); block 2 sees x_1 as the complement.
        let g2 = block_grad(&q, Block::Second, &[0.4], &[1.0]);
        assert_abs_diff_eq!(g2[0], 2.0 * (2.0 * 0.4 + 1.0), epsilon = 1e-15);
    }
}
