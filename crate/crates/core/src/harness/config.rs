use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{random_saddle_matrix, MatrixFactorization, QuadraticForm, QuarticSaddle};
use crate::optimizers::{
    default_budget, derive_constants, InnerSolveConfig, Method, PagdInputs, RunConstants, Variant,
};
use crate::problem::{seeded_rng, Objective, Point};

/// Where the matrix `A` of a quadratic or quartic problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMatrix {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        #[serde(default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        a_csv: Option<PathBuf>,
        #[serde(default)]
        random_a: Option<RandomMatrix>,
        /// Size of block 1; defaults to `⌊d/2⌋`.
        #[serde(default)]
        split: Option<usize>,
    },
    Quartic {
        #[serde(default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        a_csv: Option<PathBuf>,
        #[serde(default)]
        random_a: Option<RandomMatrix>,
        #[serde(default)]
        split: Option<usize>,
        /// Ball `‖x‖² ≤ τ`; defaults to `‖A‖₂`.
        #[serde(default)]
        tau: Option<f64>,
    },
    Matfac {
        z: Vec<Vec<f64>>,
        rank: usize,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstantsSpec {
    Manual {
        /// Step size for `agd`/`pagd`.
        #[serde(default)]
        eta: Option<f64>,
        /// Proximal penalty for `app`/`papp`.
        #[serde(default)]
        nu: Option<f64>,
        r: f64,
        g_th: f64,
        f_th: f64,
        t_th: u64,
        /// Accuracy used by the returned-point curvature check.
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Derived {
        c: f64,
        epsilon: f64,
        delta: f64,
        delta_f: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    /// Centre of the start ball; defaults to the origin.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Start uniformly in `B(center, radius)`, drawn per seed.
    #[serde(default)]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    /// `[x_min, x_max, y_min, y_max]` of the contour plot.
    #[serde(default = "default_box")]
    pub contour_box: [f64; 4],
    #[serde(default)]
    pub log_x: bool,
}

fn default_box() -> [f64; 4] {
    [-2.5, 2.5, -2.5, 2.5]
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            contour_box: default_box(),
            log_x: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub methods: Vec<Method>,
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub init: Option<InitSpec>,
    pub seeds: SeedSpec,
    /// Iteration guard; required with manual constants.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Objective level whose first crossing is reported per seed.
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub inner: Option<InnerSolveConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub plot: PlotSpec,
    /// Directory used to resolve relative paths inside the config.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(cfg_err(format!("{field}: matrix is empty")));
    }
    let m = rows[0].len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(cfg_err(format!("{field}: row {i} has {} entries, expected {m}", r.len())));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Reads a headerless numeric CSV into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| cfg_err(format!("{}: {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    matrix_from_rows(&rows, &path.display().to_string())
}

/// A built problem plus what the harness needs to know about it.
pub struct Problem {
    pub objective: Box<dyn Objective>,
    /// Quartic ball `‖x‖² ≤ τ`.
    pub tau: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    fn matrix(
        &self,
        a: &Option<Vec<Vec<f64>>>,
        a_csv: &Option<PathBuf>,
        random_a: &Option<RandomMatrix>,
    ) -> Result<DMatrix<f64>> {
        match (a, a_csv, random_a) {
            (Some(rows), None, None) => matrix_from_rows(rows, "problem.a"),
            (None, Some(p), None) => read_matrix_csv(&self.base_dir.join(p)),
            (None, None, Some(r)) => {
                let mut rng = seeded_rng(r.seed, 0);
                random_saddle_matrix(&mut rng, r.dim)
            }
            _ => Err(cfg_err("problem: exactly one of a, a_csv, random_a is required")),
        }
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let split_of = |split: &Option<usize>, d: usize| split.unwrap_or(d / 2);
        match &self.problem {
            ProblemSpec::Quadratic {
                a,
                a_csv,
                random_a,
                split,
            } => {
                let a = self.matrix(a, a_csv, random_a)?;
                let s = split_of(split, a.nrows());
                Ok(Problem {
                    objective: Box::new(QuadraticForm::new(a, s)?),
                    tau: None,
                })
            }
            ProblemSpec::Quartic {
                a,
                a_csv,
                random_a,
                split,
                tau,
            } => {
                let a = self.matrix(a, a_csv, random_a)?;
                let s = split_of(split, a.nrows());
                let q = match tau {
                    Some(t) => QuarticSaddle::new(a, *t, s)?,
                    None => QuarticSaddle::with_default_tau(a, s)?,
                };
                let tau = q.tau();
                Ok(Problem {
                    objective: Box::new(q),
                    tau: Some(tau),
                })
            }
            ProblemSpec::Matfac { z, rank, radius } => {
                let z = matrix_from_rows(z, "problem.z")?;
                Ok(Problem {
                    objective: Box::new(MatrixFactorization::new(z, *rank, *radius)?),
                    tau: None,
                })
            }
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.seeds()
    }

    pub fn start_center(&self, dim: usize) -> Result<Point> {
        match self.init.as_ref().and_then(|i| i.center.as_ref()) {
            Some(c) if c.len() != dim => Err(cfg_err(format!(
                "init.center has length {}, problem has dimension {dim}",
                c.len()
            ))),
            Some(c) => Ok(Point::from_vec(c.clone())),
            None => Ok(Point::zeros(dim)),
        }
    }

    pub fn init_radius(&self) -> f64 {
        self.init.as_ref().map(|i| i.radius).unwrap_or(0.0)
    }

    /// Accuracy target of the curvature check, when known.
    pub fn epsilon(&self) -> Option<f64> {
        match &self.constants {
            ConstantsSpec::Manual { epsilon, .. } => *epsilon,
            ConstantsSpec::Derived { epsilon, .. } => Some(*epsilon),
        }
    }

    /// Run constants and budget for `method` on `obj`.
    pub fn run_constants(&self, method: Method, obj: &dyn Objective) -> Result<(RunConstants, usize)> {
        match &self.constants {
            ConstantsSpec::Manual {
                eta,
                nu,
                r,
                g_th,
                f_th,
                t_th,
                ..
            } => {
                let (step, field) = if method.is_proximal() { (nu, "nu") } else { (eta, "eta") };
                let step = step.ok_or_else(|| cfg_err(format!("constants.{field} is required for method {method}")))?;
                let c = RunConstants {
                    step,
                    r: *r,
                    g_th: *g_th,
                    f_th: *f_th,
                    t_th: *t_th,
                };
                c.validate().map_err(|e| cfg_err(format!("constants: {e}")))?;
                let budget = self
                    .budget
                    .ok_or_else(|| cfg_err("budget is required with manual constants"))?;
                Ok((c, budget))
            }
            ConstantsSpec::Derived {
                c,
                epsilon,
                delta,
                delta_f,
            } => {
                let k = obj.constants();
                let inputs = PagdInputs {
                    l_max: k.l_max(),
                    l: k.l,
                    rho: k.rho,
                    epsilon: *epsilon,
                    delta: *delta,
                    delta_f: *delta_f,
                    c: *c,
                };
                let variant = if method.is_proximal() { Variant::Papp } else { Variant::Pagd };
                let d = derive_constants(&inputs, obj.dim(), variant)?;
                let budget = match self.budget {
                    Some(b) => b,
                    None => default_budget(&inputs, &d) as usize,
                };
                Ok((d.run_constants(), budget))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(cfg_err("methods: at least one method is required"));
        }
        if self.seeds().is_empty() {
            return Err(cfg_err("seeds: at least one seed is required"));
        }
        if let Some(init) = &self.init {
            if !(init.radius >= 0.0) || !init.radius.is_finite() {
                return Err(cfg_err(format!("init.radius must be finite and >= 0, got {}", init.radius)));
            }
        }
        let b = &self.plot.contour_box;
        if !(b[0] < b[1] && b[2] < b[3]) {
            return Err(cfg_err("plot.contour_box must be [x_min, x_max, y_min, y_max] with min < max"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }
}
