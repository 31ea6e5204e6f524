//! The diversity-regularised objective and its fitness field.
//!
//! ```text
//! J̃(p) = Σ U_i p_i + λ(α H[p] − β pᵀKp) + ε H[p] − β_KL KL(p ‖ p_base)
//! F_i  = U_i − 2λβ (Kp)_i − (λα + ε)(1 + log p_i) − β_KL (1 + log(p_i / base_i))
//! ```
//!
//! `F` is the exact variational derivative of `J̃` (the `+1` constants are
//! kept so finite differences match without a gauge correction). The barrier
//! strength `A = ε + λα + β_KL` makes `J̃` `A`-strongly concave on the affine
//! simplex whenever `K` is PSD.

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::simplex::{entropy, kl};

/// Coefficients of the objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveSpec {
    pub utility: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub beta_kl: f64,
    #[serde(default)]
    pub eps_barrier: f64,
    #[serde(default)]
    pub base_policy: Option<Vec<f64>>,
}

impl ObjectiveSpec {
    /// Objective without KL anchor.
    pub fn new(utility: Vec<f64>, lambda: f64, alpha: f64, beta: f64, eps_barrier: f64) -> Result<Self> {
        let spec = Self {
            utility,
            lambda,
            alpha,
            beta,
            beta_kl: 0.0,
            eps_barrier,
            base_policy: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks nonnegative coefficients, finite utilities and a strictly
    /// positive base policy whenever the KL anchor is active.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("beta_kl", self.beta_kl),
            ("eps_barrier", self.eps_barrier),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(
                    "ObjectiveSpec",
                    format!("{name} = {v} must be finite and nonnegative"),
                ));
            }
        }
        if self.utility.iter().any(|u| !u.is_finite()) {
            return Err(Error::domain("ObjectiveSpec", "non-finite utility"));
        }
        match (&self.base_policy, self.beta_kl > 0.0) {
            (None, true) => Err(Error::domain(
                "ObjectiveSpec",
                "beta_kl > 0 requires a base policy",
            )),
            (Some(b), _) if b.len() != self.utility.len() || b.iter().any(|&x| !(x > 0.0)) => {
                Err(Error::domain(
                    "ObjectiveSpec",
                    "base policy must be strictly positive with one entry per trace",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn size(&self) -> usize {
        self.utility.len()
    }

    /// Barrier strength `A = ε + λα + β_KL`.
    pub fn barrier_strength(&self) -> f64 {
        self.eps_barrier + self.lambda * self.alpha + self.beta_kl
    }

    /// Effective entropy coefficient `ε_tot = ε + λα`.
    pub fn eps_tot(&self) -> f64 {
        self.eps_barrier + self.lambda * self.alpha
    }

    /// `U_max = max |U_i|`.
    pub fn utility_max(&self) -> f64 {
        self.utility.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Diversity energy `D[p] = α H[p] − β pᵀKp`.
pub fn diversity_energy(p: &[f64], alpha: f64, beta: f64, k: &KernelMatrix) -> f64 {
    let h = if alpha == 0.0 { 0.0 } else { alpha * entropy(p) };
    h - beta * k.quad(p)
}

fn check_interior(op: &'static str, p: &[f64], spec: &ObjectiveSpec) -> Result<()> {
    if p.len() != spec.size() {
        return Err(Error::domain(op, "policy length does not match utility length"));
    }
    let needs_log = spec.lambda * spec.alpha + spec.eps_barrier + spec.beta_kl > 0.0;
    if needs_log {
        if let Some(i) = p.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::domain(
                op,
                format!("coordinate {i} is zero while a logarithmic barrier is active"),
            ));
        }
    }
    Ok(())
}

/// `J̃(p)`.
pub fn objective_value(p: &[f64], spec: &ObjectiveSpec, k: &KernelMatrix) -> Result<f64> {
    check_interior("objective_value", p, spec)?;
    let utility: f64 = spec.utility.iter().zip(p).map(|(u, x)| u * x).sum();
    let diversity = spec.lambda * diversity_energy(p, spec.alpha, spec.beta, k);
    let barrier = if spec.eps_barrier > 0.0 {
        spec.eps_barrier * entropy(p)
    } else {
        0.0
    };
    let anchor = match (&spec.base_policy, spec.beta_kl > 0.0) {
        (Some(base), true) => spec.beta_kl * kl(p, base)?,
        _ => 0.0,
    };
    Ok(utility + diversity + barrier - anchor)
}

/// Variational derivative `F(p) = δJ̃/δp`.
pub fn fitness(p: &[f64], spec: &ObjectiveSpec, k: &KernelMatrix) -> Result<Vec<f64>> {
    check_interior("fitness", p, spec)?;
    let kp = k.matvec(p);
    let ent = spec.lambda * spec.alpha + spec.eps_barrier;
    let two_lb = 2.0 * spec.lambda * spec.beta;
    Ok((0..p.len())
        .map(|i| {
            let mut f = spec.utility[i] - two_lb * kp[i];
            if ent > 0.0 {
                f -= ent * (1.0 + p[i].ln());
            }
            if let (Some(base), true) = (&spec.base_policy, spec.beta_kl > 0.0) {
                f -= spec.beta_kl * (1.0 + (p[i] / base[i]).ln());
            }
            f
        })
        .collect())
}

/// `vᵀ ∇²J̃(p) v = −A Σ v_i²/p_i − 2λβ vᵀKv` for tangent `v`.
pub fn hessian_quadratic(p: &[f64], v: &[f64], spec: &ObjectiveSpec, k: &KernelMatrix) -> f64 {
    let a = spec.barrier_strength();
    let shah: f64 = v.iter().zip(p).map(|(x, q)| x * x / q).sum();
    -a * shah - 2.0 * spec.lambda * spec.beta * k.quad(v)
}

/// Lyapunov rate `dJ̃/dt = Σ p_i (F_i − E_p F)² = Var_p(F)` along the
/// replicator flow.
pub fn lyapunov_rate(p: &[f64], f: &[f64]) -> f64 {
    let mean: f64 = p.iter().zip(f).map(|(a, b)| a * b).sum();
    p.iter().zip(f).map(|(a, b)| a * (b - mean) * (b - mean)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn diversity_reduces_to_entropy_or_quadratic() {
        let p = [0.25; 4];
        let k = KernelMatrix::identity(4);
        assert_abs_diff_eq!(diversity_energy(&p, 0.7, 0.0, &k), 0.7 * 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(diversity_energy(&p, 0.0, 2.0, &k), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn pure_utility_fitness() {
        let spec = ObjectiveSpec::new(vec![1.0, 0.0, 0.5], 0.0, 0.0, 0.0, 0.0).unwrap();
        let f = fitness(&[0.2, 0.3, 0.5], &spec, &KernelMatrix::zeros(3)).unwrap();
        assert_eq!(f, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn kl_at_base_is_uniform_shift() {
        let base = vec![0.2, 0.3, 0.5];
        let spec = ObjectiveSpec {
            utility: vec![0.0; 3],
            lambda: 0.0,
            alpha: 0.0,
            beta: 0.0,
            beta_kl: 0.4,
            eps_barrier: 0.0,
            base_policy: Some(base.clone()),
        };
        let f = fitness(&base, &spec, &KernelMatrix::zeros(3)).unwrap();
        for v in f {
            assert_abs_diff_eq!(v, -0.4, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_with_barrier_is_domain_error() {
        let spec = ObjectiveSpec::new(vec![1.0, 0.0], 1.0, 0.1, 0.0, 0.0).unwrap();
        assert!(fitness(&[1.0, 0.0], &spec, &KernelMatrix::zeros(2)).is_err());
    }
}
