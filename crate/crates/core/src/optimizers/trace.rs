use serde::{Deserialize, Serialize};

use super::constants::RunConstants;

/// The four drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Agd,
    Pagd,
    App,
    Papp,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Agd => "agd",
            Method::Pagd => "pagd",
            Method::App => "app",
            Method::Papp => "papp",
        }
    }

    pub fn is_proximal(&self) -> bool {
        matches!(self, Method::App | Method::Papp)
    }

    pub fn is_perturbed(&self) -> bool {
        matches!(self, Method::Pagd | Method::Papp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agd" => Ok(Method::Agd),
            "pagd" => Ok(Method::Pagd),
            "app" => Ok(Method::App),
            "papp" => Ok(Method::Papp),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// State at iteration `t` and statistics of the sweep taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    /// `f(x^t)`, after the perturbation when one was applied at `t`.
    pub f: f64,
    /// `Σ_k ‖∇_k f(h_{-k}, x_k)‖²` of the sweep from `x^t`.
    pub sum_block_grad_sq: f64,
    pub full_grad_norm: f64,
    /// `‖x^{t+1} − x^t‖` of the sweep from `x^t`.
    pub step_norm: f64,
    pub perturbed: bool,
    pub returned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEvent {
    pub t: usize,
    pub xi: Vec<f64>,
    /// The unperturbed point `x̃`.
    pub x_tilde: Vec<f64>,
    pub f_tilde: f64,
    pub grad_norm_tilde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum Termination {
    /// Decrease check failed after a perturbation window; `point` is `x̃^{t_p}`.
    ReturnedSs2 { t: usize, point: Vec<f64> },
    /// Unperturbed run reached its iteration count.
    MaxIters { iterations: usize },
    /// Perturbed run hit the iteration guard; the best-objective iterate is returned.
    BudgetExhausted { iterations: usize },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReturnedSs2 { .. } => "returned_ss2",
            Termination::MaxIters { .. } => "max_iters",
            Termination::BudgetExhausted { .. } => "budget_exhausted",
        }
    }
}

/// Full history of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub method: Method,
    pub seed: u64,
    pub constants: RunConstants,
    pub records: Vec<IterRecord>,
    pub events: Vec<PerturbationEvent>,
    pub termination: Termination,
    pub result: Vec<f64>,
    /// `max_t ‖x^t‖²` over all recorded iterates.
    pub max_norm_sq: f64,
}

impl Trace {
    pub fn final_f(&self) -> f64 {
        self.records.last().map(|r| r.f).unwrap_or(f64::NAN)
    }

    /// First iteration whose objective is at or below `level`.
    pub fn iterations_to(&self, level: f64) -> Option<usize> {
        self.records.iter().find(|r| r.f <= level).map(|r| r.t)
    }

    pub fn returned(&self) -> bool {
        matches!(self.termination, Termination::ReturnedSs2 { .. })
    }

    pub fn record_at(&self, t: usize) -> Option<&IterRecord> {
        // records are indexed by t
        self.records.get(t).filter(|r| r.t == t)
    }
}
