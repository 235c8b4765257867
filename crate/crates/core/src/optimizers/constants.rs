use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which perturbed method the constants are for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pagd,
    Papp,
}

/// User-facing inputs of the perturbed drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PagdInputs {
    pub l_max: f64,
    pub l: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_f: f64,
    pub c: f64,
}

impl PagdInputs {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| Err(Error::Config(what));
        let named = [
            ("L_max", self.l_max),
            ("L", self.l),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("delta_f", self.delta_f),
            ("c", self.c),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return fail(format!("0 < c <= 1 violated: c = {}", self.c));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return fail(format!("0 < delta <= 1 violated: delta = {}", self.delta));
        }
        if !(self.l_max > 0.0) {
            return fail(format!("L_max > 0 violated: L_max = {}", self.l_max));
        }
        if self.l < self.l_max {
            return fail(format!("L_max <= L violated: L_max = {}, L = {}", self.l_max, self.l));
        }
        if !(self.rho > 0.0) {
            return fail(format!("rho > 0 violated: rho = {}", self.rho));
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon > 0 violated: epsilon = {}", self.epsilon));
        }
        let cap = self.l_max * self.l_max / self.rho;
        if self.epsilon > cap {
            return fail(format!(
                "epsilon <= L_max^2/rho violated: epsilon = {}, L_max^2/rho = {cap}",
                self.epsilon
            ));
        }
        if !(self.delta_f > 0.0) {
            return fail(format!("delta_f > 0 violated: delta_f = {}", self.delta_f));
        }
        Ok(())
    }

    /// `(L_max ρ ε)^{1/3}`, the curvature tolerance of the second-order target.
    pub fn gamma(&self) -> f64 {
        (self.l_max * self.rho * self.epsilon).cbrt()
    }
}

/// Every constant the perturbed drivers derive from [`PagdInputs`].
///
/// For PA-PP `p1` is fixed at 1 and `p2` holds `P = 1 + L log(2d)/L_max`,
/// which makes the shared formulas below reduce to the PA-PP ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub variant: Variant,
    pub dim: usize,
    pub p1: f64,
    pub p2: f64,
    pub chi: f64,
    pub eta: f64,
    pub nu: f64,
    pub r: f64,
    pub g_th: f64,
    pub f_th: f64,
    pub t_th: u64,
}

impl DerivedConstants {
    /// Step parameter the driver consumes: `η` for PA-GD, `ν` for PA-PP.
    pub fn run_constants(&self) -> RunConstants {
        RunConstants {
            step: match self.variant {
                Variant::Pagd => self.eta,
                Variant::Papp => self.nu,
            },
            r: self.r,
            g_th: self.g_th,
            f_th: self.f_th,
            t_th: self.t_th,
        }
    }
}

/// The five numbers a perturbed run needs, however they were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    /// `η` (gradient variants) or `ν` (proximal variants).
    pub step: f64,
    pub r: f64,
    pub g_th: f64,
    pub f_th: f64,
    pub t_th: u64,
}

impl RunConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("step parameter must be > 0, got {}", self.step)));
        }
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return Err(Error::Config(format!("r must be >= 0, got {}", self.r)));
        }
        if !(self.g_th >= 0.0) || !(self.f_th >= 0.0) {
            return Err(Error::Config(format!(
                "thresholds must be >= 0, got g_th = {}, f_th = {}",
                self.g_th, self.f_th
            )));
        }
        if self.t_th == 0 {
            return Err(Error::Config("t_th must be >= 1".into()));
        }
        Ok(())
    }
}

/// Exact substitution into the input lines of the two perturbed algorithms.
pub fn derive_constants(inputs: &PagdInputs, dim: usize, variant: Variant) -> Result<DerivedConstants> {
    inputs.validate()?;
    if dim < 2 {
        return Err(Error::Config(format!("dimension must be >= 2, got {dim}")));
    }
    let PagdInputs {
        l_max,
        l,
        rho,
        epsilon,
        delta,
        delta_f,
        c,
    } = *inputs;
    let d = dim as f64;
    let p2 = 1.0 + l * (2.0 * d).ln() / l_max;
    let p1 = match variant {
        Variant::Pagd => 1.0 + l / l_max,
        Variant::Papp => 1.0,
    };
    // ln of the argument, assembled term by term to stay finite.
    let ln_arg = 6.0 * p1.ln() + 2.0 * p2.ln() + d.ln() + (5.0 / 3.0) * l_max.ln() + delta_f.ln()
        - 5.0 * c.ln()
        - rho.ln() / 3.0
        - (7.0 / 3.0) * epsilon.ln()
        - delta.ln();
    let chi = 6.0 * ln_arg.max(4.0);
    let cp = chi * p1;
    let eta = c / l_max;
    let r = c.powi(3) / chi.powi(3) * rho * epsilon / (l_max * p1.powi(3) * p2);
    let g_th = c * c * epsilon / (cp.powi(3) * p2);
    let f_th = c.powi(5) * epsilon * epsilon / (l_max * cp.powi(6) * p2 * p2);
    let t_th = (l_max * cp / (c * c * inputs.gamma())).ceil();
    if !t_th.is_finite() || t_th > u64::MAX as f64 {
        return Err(Error::Config(format!("t_th overflows: {t_th}")));
    }
    Ok(DerivedConstants {
        variant,
        dim,
        p1,
        p2,
        chi,
        eta,
        nu: l_max / c,
        r,
        g_th,
        f_th,
        t_th: t_th as u64,
    })
}

/// Iteration count of the convergence theorem evaluated at these constants.
pub fn iteration_bound(inputs: &PagdInputs, k: &DerivedConstants) -> f64 {
    let cp = k.chi * k.p1;
    cp.powi(7) * k.p2 * k.p2 / inputs.c.powi(7) * inputs.l_max * inputs.l_max * inputs.delta_f
        / (inputs.epsilon * inputs.epsilon * inputs.gamma())
}

pub const MAX_BUDGET: u64 = 10_000_000;

/// Ten times [`iteration_bound`], capped at 10⁷ and never shorter than one window.
pub fn default_budget(inputs: &PagdInputs, k: &DerivedConstants) -> u64 {
    let b = 10.0 * iteration_bound(inputs, k);
    let b = if b.is_finite() { b.ceil().min(MAX_BUDGET as f64) } else { MAX_BUDGET as f64 };
    (b as u64).max(k.t_th.saturating_add(2))
}

/// Unit quantities of the escape analysis, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProofScales {
    pub gamma: f64,
    pub kappa: f64,
    /// `log(dκ/δ)` at the failure probability that makes it equal to `χ`.
    pub log_term: f64,
    pub f: f64,
    pub g: f64,
    pub s: f64,
    pub t: f64,
}

impl ProofScales {
    pub fn new(inputs: &PagdInputs, k: &DerivedConstants) -> Self {
        let gamma = inputs.gamma();
        let l = inputs.l_max;
        let rho = inputs.rho;
        let eta = k.eta;
        let kappa = l / gamma;
        let lg = k.chi;
        let (p1, p2) = (k.p1, k.p2);
        let el = eta * l;
        let f = el.powi(5) * gamma.powi(3) / (kappa.powi(3) * rho * rho) / (lg.powi(6) * p1.powi(6) * p2 * p2);
        let g = el * el * gamma * gamma / rho / (lg.powi(3) * p1.powi(3) * p2);
        let s = el * el * gamma / (kappa * rho) / (lg * lg * p1 * p1 * p2);
        let t = lg * p1 / (eta * gamma);
        Self {
            gamma,
            kappa,
            log_term: lg,
            f,
            g,
            s,
            t,
        }
    }

    /// Relative residuals of `√F = √η G/κ`, `ηGT/κ = S`, `ρS³ = ηL_max F/P₂`.
    pub fn relation_residuals(&self, inputs: &PagdInputs, k: &DerivedConstants) -> [f64; 3] {
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        let eta = k.eta;
        [
            rel(self.f.sqrt(), eta.sqrt() * self.g / self.kappa),
            rel(eta * self.g * self.t / self.kappa, self.s),
            rel(inputs.rho * self.s.powi(3), eta * inputs.l_max * self.f / k.p2),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn base() -> PagdInputs {
        PagdInputs {
            l_max: 4.0,
            l: 6.0,
            rho: 1.0,
            epsilon: 1e-3,
            delta: 0.1,
            delta_f: 1.0,
            c: 0.5,
        }
    }

    #[test]
    fn eta_and_p1_by_substitution() {
        let k = derive_constants(&base(), 2, Variant::Pagd).unwrap();
        assert_eq!(k.eta, 0.125);
        let mut i = base();
        i.l = i.l_max;
        let k = derive_constants(&i, 2, Variant::Pagd).unwrap();
        assert_eq!(k.p1, 2.0);
        let k = derive_constants(&base(), 2, Variant::Papp).unwrap();
        assert_eq!(k.nu, 8.0);
        assert_eq!(k.p1, 1.0);
    }

    #[test]
    fn chi_clamps_at_24() {
        let mut i = base();
        i.delta_f = 1e-300;
        let k = derive_constants(&i, 2, Variant::Pagd).unwrap();
        assert_eq!(k.chi, 24.0);
        i.delta_f = 1e300;
        let k = derive_constants(&i, 2, Variant::Pagd).unwrap();
        assert!(k.chi > 24.0);
    }

    #[test]
    fn formulas_match_direct_evaluation() {
        let i = base();
        let d = 10.0_f64;
        let k = derive_constants(&i, 10, Variant::Pagd).unwrap();
        let p1 = 1.0 + i.l / i.l_max;
        let p2 = 1.0 + i.l * (2.0 * d).ln() / i.l_max;
        let arg = p1.powi(6) * p2 * p2 * d * i.l_max.powf(5.0 / 3.0) * i.delta_f
            / (i.c.powi(5) * i.rho.cbrt() * i.epsilon.powf(7.0 / 3.0) * i.delta);
        let chi = 6.0 * arg.ln().max(4.0);
        assert_relative_eq!(k.chi, chi, max_relative = 1e-12);
        assert_relative_eq!(
            k.r,
            i.c.powi(3) / chi.powi(3) * i.rho * i.epsilon / (i.l_max * p1.powi(3) * p2),
            max_relative = 1e-12
        );
        assert_relative_eq!(k.g_th, i.c * i.c * i.epsilon / ((chi * p1).powi(3) * p2), max_relative = 1e-12);
        assert_relative_eq!(
            k.f_th,
            i.c.powi(5) * i.epsilon * i.epsilon / (i.l_max * (chi * p1).powi(6) * p2 * p2),
            max_relative = 1e-12
        );
        let t = i.l_max * chi * p1 / (i.c * i.c * (i.l_max * i.rho * i.epsilon).cbrt());
        assert_eq!(k.t_th, t.ceil() as u64);
    }

    #[test]
    fn violated_preconditions_name_the_inequality() {
        let mut i = base();
        i.c = 1.5;
        let e = derive_constants(&i, 2, Variant::Pagd).unwrap_err().to_string();
        assert!(e.contains("c <= 1"), "{e}");
        let mut i = base();
        i.epsilon = 100.0;
        let e = derive_constants(&i, 2, Variant::Pagd).unwrap_err().to_string();
        assert!(e.contains("L_max^2/rho"), "{e}");
        let mut i = base();
        i.delta = 0.0;
        assert!(derive_constants(&i, 2, Variant::Pagd).is_err());
        let mut i = base();
        i.delta_f = 0.0;
        assert!(derive_constants(&i, 2, Variant::Pagd).is_err());
    }

    #[test]
    fn budget_is_capped() {
        let i = base();
        let k = derive_constants(&i, 2, Variant::Pagd).unwrap();
        assert_eq!(default_budget(&i, &k), MAX_BUDGET);
    }

    #[test]
    fn proof_scales_reproduce_thresholds() {
        let i = base();
        let k = derive_constants(&i, 4, Variant::Pagd).unwrap();
        let s = ProofScales::new(&i, &k);
        assert_relative_eq!(s.f, k.f_th, max_relative = 1e-10);
        assert_relative_eq!(s.g / s.kappa, k.g_th, max_relative = 1e-10);
        assert_relative_eq!(s.t / i.c, k.t_th as f64, max_relative = 1e-3);
    }

    proptest! {
        #[test]
        fn proof_scale_relations_hold(
            l_max in 0.5f64..20.0,
            ratio in 1.0f64..5.0,
            rho in 0.1f64..10.0,
            eps_frac in 1e-6f64..1.0,
            c in 0.01f64..1.0,
            d in 2usize..200,
        ) {
            let i = PagdInputs {
                l_max,
                l: l_max * ratio,
                rho,
                epsilon: eps_frac * l_max * l_max / rho,
                delta: 0.05,
                delta_f: 3.0,
                c,
            };
            for v in [Variant::Pagd, Variant::Papp] {
                let k = derive_constants(&i, d, v).unwrap();
                prop_assert!((k.eta - c / l_max).abs() <= 1e-15 * k.eta);
                prop_assert!(k.chi >= 24.0);
                let s = ProofScales::new(&i, &k);
                for r in s.relation_residuals(&i, &k) {
                    prop_assert!(r < 1e-10, "residual {r}");
                }
            }
        }
    }
}
