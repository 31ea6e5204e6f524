//! Equilibria of the flows.
//!
//! * Two-level stationary states (constant on correct traces, constant on
//!   incorrect traces) reduce to a scalar root `F(z) = h(z) − ε z = 0` in the
//!   log-gap `z = log(L_C / L_I)`, with `L_I(z) = 1/(N + M e^z)` and
//!   `L_C = e^z L_I`. Both DPO and GRPO roots are found by bisection inside
//!   brackets that the slope conditions make valid.
//! * The DCR maximizer is reached by running the exponentiated-gradient flow
//!   of `J̃` until the fitness is constant on the support.

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::objective::{fitness, ObjectiveSpec};
use crate::scores::{grpo_characteristic, DpoSpec, GrpoSpec};
use crate::simplex::{normalize_in_place, SimplexSpec};

/// Absolute residual target for scalar roots.
pub const ROOT_TOL: f64 = 1e-10;
/// Central-difference step for `h'(z⋆)`.
pub const SENSITIVITY_STEP: f64 = 1e-6;

/// Stationary state constant on each class.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TwoLevelEquilibrium {
    pub gap: f64,
    pub level_correct: f64,
    pub level_incorrect: f64,
    /// `|h(z⋆) − ε z⋆|`.
    pub residual: f64,
    /// Whether the closed-form bracket for the root holds.
    pub bounds_ok: bool,
    /// `true` when the root lies outside the feasible band of the trim (the
    /// constrained flow then stops at the band edge).
    pub truncated: bool,
}

impl TwoLevelEquilibrium {
    fn from_gap(gap: f64, m: usize, n: usize, residual: f64, bounds_ok: bool, truncated: bool) -> Self {
        let li = 1.0 / (n as f64 + m as f64 * gap.exp());
        Self {
            gap,
            level_correct: gap.exp() * li,
            level_incorrect: li,
            residual,
            bounds_ok,
            truncated,
        }
    }

    /// Policy vector with correct traces first.
    pub fn policy(&self, m: usize, n: usize) -> Vec<f64> {
        let mut p = vec![self.level_correct; m];
        p.extend(std::iter::repeat(self.level_incorrect).take(n));
        p
    }
}

/// `(L_C(z), L_I(z))`.
pub fn two_level(z: f64, m: usize, n: usize) -> (f64, f64) {
    let li = 1.0 / (n as f64 + m as f64 * z.exp());
    (z.exp() * li, li)
}

/// Bisection for a decreasing function with `f(lo) > 0 > f(hi)`.
pub fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, op: &'static str) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(Error::domain(
            op,
            format!("invalid bracket: f({lo}) = {flo}, f({hi}) = {fhi}"),
        ));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// DPO gap function `h(z) = g(log L_C(z)) + g(log L_I(z))`.
pub fn dpo_gap_function(spec: &DpoSpec, z: f64, m: usize, n: usize) -> f64 {
    let (lc, li) = two_level(z, m, n);
    spec.g(lc.ln()) + spec.g(li.ln())
}

/// Unique DPO two-level gap under the slope condition `ε > β/4`.
pub fn dpo_two_level_gap(spec: &DpoSpec, m: usize, n: usize, eps: f64) -> Result<TwoLevelEquilibrium> {
    if m == 0 || n == 0 {
        return Err(Error::domain("dpo_two_level_gap", "requires M ≥ 1 and N ≥ 1"));
    }
    if !(eps > spec.beta / 4.0) {
        return Err(Error::refused(
            "dpo_two_level_gap",
            format!("slope condition violated: ε = {eps} ≤ β/4 = {}", spec.beta / 4.0),
        ));
    }
    let f = |z: f64| dpo_gap_function(spec, z, m, n) - eps * z;
    let z = bisect_decreasing(f, 0.0, 2.0 / eps + 1.0, "dpo_two_level_gap")?;
    let residual = f(z).abs();
    let lo = 2.0 * spec.g(0.0) / eps;
    let hi = 2.0 / eps;
    let bounds_ok = z >= lo - 1e-12 && z <= hi + 1e-12 && residual <= ROOT_TOL;
    Ok(TwoLevelEquilibrium::from_gap(z, m, n, residual, bounds_ok, false))
}

/// `dz⋆/dε = −z⋆/(ε − h'(z⋆))` with `h'` by central difference.
pub fn dpo_gap_sensitivity(spec: &DpoSpec, m: usize, n: usize, eps: f64) -> Result<f64> {
    let eq = dpo_two_level_gap(spec, m, n, eps)?;
    let z = eq.gap;
    let h = SENSITIVITY_STEP;
    let dh = (dpo_gap_function(spec, z + h, m, n) - dpo_gap_function(spec, z - h, m, n)) / (2.0 * h);
    Ok(-z / (eps - dh))
}

/// Correct mass at gap `z`: `ρ(z) = M e^z / (N + M e^z)`.
pub fn rho_of_gap(z: f64, m: usize, n: usize) -> f64 {
    let mz = m as f64 * z.exp();
    mz / (n as f64 + mz)
}

/// Inverse of [`rho_of_gap`]: `Ψ(ρ) = log(ρ N / ((1−ρ) M))`.
pub fn gap_of_rho(rho: f64, m: usize, n: usize) -> f64 {
    (rho * n as f64 / ((1.0 - rho) * m as f64)).ln()
}

/// GRPO scalar fixed point `h_G(ρ(z)) = ε z` under `ε > D_G/4`.
pub fn grpo_scalar_fixed_point(
    spec: GrpoSpec,
    m: usize,
    n: usize,
    eps: f64,
    domain: SimplexSpec,
) -> Result<TwoLevelEquilibrium> {
    if m == 0 || n == 0 {
        return Err(Error::domain("grpo_scalar_fixed_point", "requires M ≥ 1 and N ≥ 1"));
    }
    let dg = spec.d_g();
    if !(eps > dg / 4.0) {
        return Err(Error::refused(
            "grpo_scalar_fixed_point",
            format!("slope condition violated: ε = {eps} ≤ D_G/4 = {}", dg / 4.0),
        ));
    }
    let f = |z: f64| grpo_characteristic(rho_of_gap(z, m, n), spec).unwrap_or(f64::NAN) - eps * z;
    let z = bisect_decreasing(f, 0.0, spec.h_star() / eps + 1.0, "grpo_scalar_fixed_point")?;
    let residual = f(z).abs();
    let d = domain.floor;
    let lo = gap_of_rho(m as f64 * d, m, n);
    let hi = gap_of_rho(1.0 - n as f64 * d, m, n);
    let truncated = !(z >= lo && z <= hi);
    let g = spec.group_size as f64;
    let bounds_ok = residual <= ROOT_TOL && z >= (1.0 - 1.0 / g) / eps - 1e-12 && z <= spec.h_star() / eps + 1e-12;
    Ok(TwoLevelEquilibrium::from_gap(z, m, n, residual, bounds_ok, truncated))
}

/// Result of [`solve_dcr_equilibrium`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DcrEquilibrium {
    pub policy: Vec<f64>,
    pub iterations: usize,
    /// `max_i F_i − min_i F_i` at the returned policy.
    pub kkt_residual: f64,
    /// `‖Δp‖₁` of the last step.
    pub last_step_l1: f64,
}

/// Iteration cap for [`solve_dcr_equilibrium`].
pub const DCR_MAX_ITERATIONS: usize = 10_000_000;

/// Spread of the fitness, `max F − min F` (gauge-free KKT residual for an
/// interior point).
pub fn kkt_residual(p: &[f64], objective: &ObjectiveSpec, kernel: &KernelMatrix) -> Result<f64> {
    let f = fitness(p, objective, kernel)?;
    let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(hi - lo)
}

/// Default solver step `1/(A + 2λβ max|K_ij|)`, for which the mirror-ascent
/// iteration is monotone.
pub fn dcr_default_step(objective: &ObjectiveSpec, kernel: &KernelMatrix) -> f64 {
    1.0 / (objective.barrier_strength() + 2.0 * objective.lambda * objective.beta * kernel.norm_max())
}

/// Unique maximizer of `J̃` reached by exponentiated-gradient ascent from
/// `start`; stops once the fitness spread falls below `tol`.
pub fn solve_dcr_equilibrium(
    objective: &ObjectiveSpec,
    kernel: &KernelMatrix,
    start: &[f64],
    tol: f64,
) -> Result<DcrEquilibrium> {
    let a = objective.barrier_strength();
    if !(a > 0.0) {
        return Err(Error::refused(
            "solve_dcr_equilibrium",
            "barrier strength A = 0: the maximizer need not be unique",
        ));
    }
    objective.validate()?;
    if start.len() != objective.size() || kernel.size() != objective.size() {
        return Err(Error::domain("solve_dcr_equilibrium", "size mismatch"));
    }
    if start.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("solve_dcr_equilibrium", "start must be interior"));
    }
    let eta = dcr_default_step(objective, kernel);
    let mut p = start.to_vec();
    let mut logp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let mut kp = vec![0.0; p.len()];
    let two_lb = 2.0 * objective.lambda * objective.beta;
    let log_base: Option<Vec<f64>> = match (&objective.base_policy, objective.beta_kl > 0.0) {
        (Some(b), true) => Some(b.iter().map(|x| x.ln()).collect()),
        _ => None,
    };
    let mut last_step = f64::INFINITY;
    for it in 0..DCR_MAX_ITERATIONS {
        kernel.matvec_into(&p, &mut kp);
        // Gauge-free fitness: U − 2λβ Kp − A log p + β_KL log base.
        let f: Vec<f64> = (0..p.len())
            .map(|i| {
                let mut v = objective.utility[i] - two_lb * kp[i] - a * logp[i];
                if let Some(lb) = &log_base {
                    v += objective.beta_kl * lb[i];
                }
                v
            })
            .collect();
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi - lo <= tol {
            return Ok(DcrEquilibrium {
                policy: p,
                iterations: it,
                kkt_residual: hi - lo,
                last_step_l1: if it == 0 { 0.0 } else { last_step },
            });
        }
        // Work in log space so that very small masses keep full relative
        // precision.
        for i in 0..p.len() {
            logp[i] += eta * (f[i] - hi);
        }
        let lse = {
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + logp.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        let mut step = 0.0;
        for i in 0..p.len() {
            logp[i] -= lse;
            let next = logp[i].exp();
            step += (next - p[i]).abs();
            p[i] = next;
        }
        normalize_in_place(&mut p);
        last_step = step;
    }
    Err(Error::NoConvergence {
        op: "solve_dcr_equilibrium",
        iterations: DCR_MAX_ITERATIONS,
        residual: last_step,
    })
}

/// Predicted and measured suppression of trace `i` relative to trace `c`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SuppressionReport {
    /// `exp(((U_i − U_c) − 2λβ((Kp)_i − (Kp)_c)) / ε_tot)`; for unit utility
    /// and a gated kernel this is `exp(−(1 − 2λβ(K_eff p⋆)_c)/ε_tot)`.
    pub predicted: f64,
    pub measured: f64,
    /// `(U_c − U_i) − 2λβ((Kp)_c − (Kp)_i)`, i.e. `1 − 2λβ(K_eff p⋆)_c` in
    /// the gated unit-utility case.
    pub margin: f64,
    pub relative_error: f64,
}

/// Suppression identity at a converged equilibrium.
pub fn suppression_ratio(
    p_star: &[f64],
    objective: &ObjectiveSpec,
    kernel: &KernelMatrix,
    c: usize,
    i: usize,
) -> Result<SuppressionReport> {
    if objective.beta_kl > 0.0 {
        return Err(Error::refused(
            "suppression_ratio",
            "the identity is derived without a KL anchor",
        ));
    }
    let eps_tot = objective.eps_tot();
    if !(eps_tot > 0.0) {
        return Err(Error::refused("suppression_ratio", "ε_tot must be positive"));
    }
    let kp = kernel.matvec(p_star);
    let two_lb = 2.0 * objective.lambda * objective.beta;
    let margin = (objective.utility[c] - objective.utility[i]) - two_lb * (kp[c] - kp[i]);
    let predicted = (-margin / eps_tot).exp();
    let measured = p_star[i] / p_star[c];
    Ok(SuppressionReport {
        predicted,
        measured,
        margin,
        relative_error: (measured - predicted).abs() / predicted,
    })
}

/// Output of [`water_filling`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WaterFilling {
    pub support: Vec<usize>,
    pub level: f64,
    pub policy: Vec<f64>,
}

/// Grid used to certify strict monotonicity of score functions.
const MONOTONE_GRID: usize = 1000;

/// Single-site equilibrium with zero barrier: finds the level `c⋆` with
/// `Σ_{i∈S⋆} f_i^{-1}(c⋆) = 1` and support
/// `S⋆ = {i : f_i(1) ≤ c⋆ < f_i(0)}`.
pub fn water_filling(fs: &[&dyn Fn(f64) -> f64], tol: f64) -> Result<WaterFilling> {
    if fs.is_empty() {
        return Err(Error::domain("water_filling", "no sites"));
    }
    for (k, f) in fs.iter().enumerate() {
        let mut prev = f(0.0);
        for j in 1..=MONOTONE_GRID {
            let v = f(j as f64 / MONOTONE_GRID as f64);
            if !(v < prev) || !v.is_finite() {
                return Err(Error::refused(
                    "water_filling",
                    format!("site {k} is not strictly decreasing on [0, 1]"),
                ));
            }
            prev = v;
        }
    }
    let inverse = |f: &dyn Fn(f64) -> f64, c: f64| -> f64 {
        if c >= f(0.0) {
            0.0
        } else if c <= f(1.0) {
            1.0
        } else {
            bisect_decreasing(|s| f(s) - c, 0.0, 1.0, "water_filling").unwrap_or(0.0)
        }
    };
    let total = |c: f64| fs.iter().map(|f| inverse(*f, c)).sum::<f64>();
    let mut lo = fs.iter().map(|f| f(1.0)).fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = fs.iter().map(|f| f(0.0)).fold(f64::NEG_INFINITY, f64::max);
    // Invariant: total(lo) ≥ 1 > total(hi); converge to the largest level
    // that still places unit mass.
    while hi - lo > tol.max(1e-15) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = lo;
    let mut policy: Vec<f64> = fs.iter().map(|f| inverse(*f, level)).collect();
    normalize_in_place(&mut policy);
    let support = fs
        .iter()
        .enumerate()
        .filter(|(_, f)| level < f(0.0))
        .map(|(k, _)| k)
        .collect();
    Ok(WaterFilling {
        support,
        level,
        policy,
    })
}

/// Two-level KKT gap residual for the gated DCR objective:
/// `1 − 2λβ(V_C − V_I) − A log(p_C/δ⋆)`.
pub fn dcr_two_level_gap_residual(objective: &ObjectiveSpec, v_gap: f64, p_correct: f64, delta: f64) -> f64 {
    1.0 - 2.0 * objective.lambda * objective.beta * v_gap - objective.barrier_strength() * (p_correct / delta).ln()
}

/// Machine-readable equilibrium record.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EquilibriumRecord {
    pub solver: String,
    pub params: serde_json::Value,
    pub z_star: Option<f64>,
    pub levels: Vec<f64>,
    pub residual: f64,
    pub bounds_ok: bool,
}

impl EquilibriumRecord {
    pub fn two_level(solver: &str, params: serde_json::Value, eq: &TwoLevelEquilibrium) -> Self {
        Self {
            solver: solver.to_string(),
            params,
            z_star: Some(eq.gap),
            levels: vec![eq.level_correct, eq.level_incorrect],
            residual: eq.residual,
            bounds_ok: eq.bounds_ok,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grpo_g2_closed_form() {
        let dom = SimplexSpec::new(2, 1e-6).unwrap();
        let eq = grpo_scalar_fixed_point(GrpoSpec::new(2).unwrap(), 1, 1, 0.5, dom).unwrap();
        assert_abs_diff_eq!(eq.gap, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn water_filling_two_sites() {
        let f1 = |s: f64| 1.0 - s;
        let f2 = |s: f64| 0.5 - s;
        let wf = water_filling(&[&f1, &f2], 1e-13).unwrap();
        assert_abs_diff_eq!(wf.level, 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(wf.policy[0], 0.75, epsilon = 1e-10);
    }

    #[test]
    fn non_monotone_refused() {
        let f = |s: f64| (s - 0.5).abs();
        assert!(water_filling(&[&f], 1e-12).is_err());
    }
}
