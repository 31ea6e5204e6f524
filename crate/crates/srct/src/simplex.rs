//! Simplex geometry shared by every flow.
//!
//! The state space is the probability simplex `Δ^{S-1}` over `S` traces and
//! its trimmed version `Δ_δ = {p : p_i ≥ δ}`. This module provides:
//!
//! - [`SimplexSpec`], [`PolicyVector`], [`LogitVector`]: validated carriers.
//! - The logit chart: [`softmax`] and its mean-zero inverse [`logit_lift`].
//! - The parametric floor [`clip_renormalize`] and its guaranteed floor
//!   [`delta_eff`].
//! - Information functionals: [`entropy`], [`kl`], [`mean_log`].
//! - The entropy face gap `L_S(δ)` ([`face_gap`]) with two-sided bounds.
//! - Log-ratio and Shahshahani-metric helpers.
//!
//! Conventions: natural logarithms; `0·log 0 = 0` by an explicit branch;
//! simplex membership is checked to `1e-12` in the mass sum.

use crate::error::{Error, Result};

/// Tolerance on `|Σ p_i − 1|` for a valid policy.
pub const SUM_TOL: f64 = 1e-12;

/// Tolerance on `|Σ θ_i|` for a gauge-fixed logit vector.
pub const GAUGE_TOL: f64 = 1e-10;

/// Clip applied before any logarithm of a simulated policy coordinate.
pub const LOG_CLIP: f64 = 1e-12;

/// Smallest mass a simulated coordinate may carry. Long zero-barrier runs
/// would otherwise underflow to exact zero after ~750 nats of suppression,
/// which breaks log-ratio bookkeeping; the floor is far below every
/// threshold the experiments look at.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// Size and floor of a (trimmed) simplex.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimplexSpec {
    pub size: usize,
    pub floor: f64,
}

impl SimplexSpec {
    /// Validates `S ≥ 1` and `0 < δ ≤ 1/S` (the trimmed simplex is nonempty).
    pub fn new(size: usize, floor: f64) -> Result<Self> {
        if size == 0 {
            return Err(Error::domain("SimplexSpec", "size must be at least 1"));
        }
        if !(floor > 0.0 && floor <= 1.0 / size as f64 + 1e-15) {
            return Err(Error::domain(
                "SimplexSpec",
                format!("floor {floor} outside (0, 1/S] for S = {size}"),
            ));
        }
        Ok(Self { size, floor })
    }

    /// Floor guaranteed by [`clip_renormalize`] at this spec.
    pub fn delta_eff(&self) -> f64 {
        delta_eff(self.floor, self.size)
    }

    /// True if `p` lies in the trimmed simplex up to `tol`.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.size
            && (p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL.max(tol)
            && p.iter().all(|&x| x >= self.floor - tol)
    }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct PolicyVector {
    mass: Vec<f64>,
}

impl PolicyVector {
    /// Validates nonnegativity and unit mass (to [`SUM_TOL`]).
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::domain("PolicyVector", "empty policy"));
        }
        if let Some((i, &x)) = mass.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::domain(
                "PolicyVector",
                format!("coordinate {i} = {x} is not a nonnegative finite number"),
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(
                "PolicyVector",
                format!("mass sums to {total}, not 1"),
            ));
        }
        Ok(Self { mass })
    }

    /// Normalises nonnegative weights with positive total.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::domain(
                "PolicyVector::from_weights",
                "weights must be nonnegative with positive finite total",
            ));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { mass: weights })
    }

    /// The uniform distribution over `size` traces.
    pub fn uniform(size: usize) -> Self {
        Self {
            mass: vec![1.0 / size as f64; size],
        }
    }

    /// The vertex `e_k`.
    pub fn vertex(size: usize, k: usize) -> Self {
        let mut mass = vec![0.0; size];
        mass[k] = 1.0;
        Self { mass }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }

    /// True if every coordinate is at least `δ − 1e-12`.
    pub fn is_trimmed(&self, delta: f64) -> bool {
        self.mass.iter().all(|&x| x >= delta - 1e-12)
    }
}

impl std::ops::Deref for PolicyVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.mass
    }
}

/// Logits on the mean-zero gauge slice `Σ θ_i = 0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct LogitVector {
    logits: Vec<f64>,
}

impl LogitVector {
    /// Validates finiteness and the gauge condition `|Σ θ_i| ≤ 1e-10`.
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("LogitVector", "non-finite logit"));
        }
        let s: f64 = logits.iter().sum();
        if s.abs() > GAUGE_TOL {
            return Err(Error::domain(
                "LogitVector",
                format!("logits sum to {s}; expected the mean-zero gauge"),
            ));
        }
        Ok(Self { logits })
    }

    /// Projects arbitrary finite logits onto the gauge slice.
    pub fn centered(mut logits: Vec<f64>) -> Self {
        let mean = logits.iter().sum::<f64>() / logits.len().max(1) as f64;
        logits.iter_mut().for_each(|x| *x -= mean);
        Self { logits }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.logits
    }
}

impl std::ops::Deref for LogitVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.logits
    }
}

/// Softmax with max-subtraction; total on finite input.
pub fn softmax(theta: &[f64]) -> PolicyVector {
    PolicyVector {
        mass: softmax_vec(theta),
    }
}

pub(crate) fn softmax_vec(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = theta.iter().map(|&t| (t - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Mean-zero logit lift `G(p) = log p − mean(log p)`.
///
/// Rejects any zero coordinate.
pub fn logit_lift(p: &[f64]) -> Result<LogitVector> {
    if let Some(i) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::domain(
            "logit_lift",
            format!("coordinate {i} is not strictly positive"),
        ));
    }
    Ok(LogitVector::centered(p.iter().map(|x| x.ln()).collect()))
}

/// Floor `δ_eff = δ⋆ / (1 + (S−1)δ⋆)` guaranteed by [`clip_renormalize`].
pub fn delta_eff(delta: f64, size: usize) -> f64 {
    delta / (1.0 + (size as f64 - 1.0) * delta)
}

/// Clip–renormalise `C(p) = max(p, δ⋆) / ‖max(p, δ⋆)‖₁`.
pub fn clip_renormalize(p: &[f64], delta: f64) -> PolicyVector {
    let clipped: Vec<f64> = p.iter().map(|&x| x.max(delta)).collect();
    let total: f64 = clipped.iter().sum();
    PolicyVector {
        mass: clipped.into_iter().map(|x| x / total).collect(),
    }
}

/// `x log x` with `0 log 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Shannon entropy `H[p] = −Σ p_i log p_i` (nats).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogx(x)).sum::<f64>()
}

/// Mean log `⟨log p⟩ = Σ p_i log p_i = −H[p]`.
pub fn mean_log(p: &[f64]) -> f64 {
    p.iter().map(|&x| xlogx(x)).sum()
}

/// `KL(p‖q) = Σ p_i log(p_i/q_i)`; requires `q_i > 0` wherever `p_i > 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain("kl", "length mismatch"));
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if !(b > 0.0) {
            return Err(Error::domain(
                "kl",
                format!("q[{i}] = {b} but p[{i}] = {a} > 0 (support violation)"),
            ));
        }
        acc += a * (a / b).ln();
    }
    Ok(acc.max(0.0))
}

/// Entropy face gap `L_S(δ) = (1−δ) log((1−δ)/((S−1)δ))`: the minimum of
/// `⟨log p⟩ − log δ` over the face `p_1 = δ`.
pub fn face_gap(size: usize, delta: f64) -> Result<f64> {
    if size < 2 {
        return Err(Error::domain("face_gap", "requires S ≥ 2"));
    }
    let s = size as f64;
    if !(delta > 0.0 && delta <= 1.0 / s + 1e-15) {
        return Err(Error::domain(
            "face_gap",
            format!("δ = {delta} outside (0, 1/S] for S = {size}"),
        ));
    }
    let v = (1.0 - delta) * ((1.0 - delta) / ((s - 1.0) * delta)).ln();
    Ok(v.max(0.0))
}

/// Two-sided bounds `(lower, upper)` on [`face_gap`]:
/// `ℓ − (1+ℓ)δ ≤ L_S(δ) ≤ ℓ` with `ℓ = log(1/((S−1)δ))`.
pub fn face_gap_bounds(size: usize, delta: f64) -> Result<(f64, f64)> {
    face_gap(size, delta)?;
    let l = (1.0 / ((size as f64 - 1.0) * delta)).ln();
    Ok((l - (1.0 + l) * delta, l))
}

/// Antisymmetric matrix `z_ij = log(p_i/p_j)` (row-major `S×S`).
pub fn log_ratio_matrix(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::domain(
            "log_ratio_matrix",
            format!("coordinate {i} is zero"),
        ));
    }
    let logs: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let n = p.len();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            z[i * n + j] = logs[i] - logs[j];
        }
    }
    Ok(z)
}

/// Shahshahani squared norm `Σ u_i² / p_i` of a tangent vector at `p`.
pub fn shahshahani_norm2(u: &[f64], p: &[f64]) -> Result<f64> {
    if u.len() != p.len() {
        return Err(Error::domain("shahshahani_norm2", "length mismatch"));
    }
    if let Some(i) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::domain(
            "shahshahani_norm2",
            format!("base point coordinate {i} is zero"),
        ));
    }
    Ok(u.iter().zip(p).map(|(a, b)| a * a / b).sum())
}

/// Shahshahani inner product `Σ u_i v_i / p_i`.
pub fn shahshahani_inner(u: &[f64], v: &[f64], p: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .zip(p)
        .map(|((a, b), c)| a * b / c)
        .sum()
}

/// Rescales in place to unit mass.
pub fn normalize_in_place(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
}

/// Euclidean projection of an arbitrary vector onto the trimmed simplex
/// `{x : x_i ≥ δ, Σ x_i = 1}` (requires `Sδ ≤ 1`).
pub fn project_trimmed(y: &[f64], delta: f64) -> Vec<f64> {
    let n = y.len();
    let budget = 1.0 - n as f64 * delta;
    if budget <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let shifted: Vec<f64> = y.iter().map(|&v| v - delta).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - budget) / (k as f64 + 1.0);
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut x: Vec<f64> = shifted.iter().map(|&v| (v - tau).max(0.0) + delta).collect();
    normalize_in_place(&mut x);
    x
}

/// Removes the mean so that `Σ u_i = 0` (projection onto the tangent space).
pub fn tangent_project(u: &mut [f64]) {
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|x| *x -= mean);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_of_zero_is_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for &x in p.iter() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_half_quarter_quarter() {
        let c = 2f64.ln() / 3.0;
        let p = softmax(&[2f64.ln() - c, -c, -c]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn logit_lift_rejects_zero() {
        assert!(logit_lift(&[0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn logit_lift_log_ratio() {
        let t = logit_lift(&[0.5, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(t[0] - t[1], 2f64.ln(), epsilon = 1e-14);
        assert!(t.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn clip_examples() {
        let p = clip_renormalize(&[0.96, 0.02, 0.02], 0.05);
        assert_abs_diff_eq!(p[0], 0.96 / 1.06, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.05 / 1.06, epsilon = 1e-12);
        assert!(p[1] >= delta_eff(0.05, 3));
        let v = clip_renormalize(&[1.0, 0.0, 0.0], 0.1);
        assert_abs_diff_eq!(v[0], 1.0 / 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.1 / 1.2, epsilon = 1e-15);
    }

    #[test]
    fn face_gap_values() {
        assert_abs_diff_eq!(face_gap(4, 0.25).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(face_gap(4, 0.1).unwrap(), 0.9 * 3f64.ln(), epsilon = 1e-14);
        assert!(face_gap(4, 0.3).is_err());
        let (lo, hi) = face_gap_bounds(12, 0.01).unwrap();
        let v = face_gap(12, 0.01).unwrap();
        assert!(lo <= v && v <= hi);
    }

    #[test]
    fn kl_support_violation() {
        assert!(kl(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn projection_respects_floor() {
        let x = project_trimmed(&[1.2, -0.1, -0.1], 0.05);
        assert!(x.iter().all(|&v| v >= 0.05 - 1e-15));
        assert_abs_diff_eq!(x.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        let inside = [0.5, 0.3, 0.2];
        let y = project_trimmed(&inside, 0.05);
        for (a, b) in inside.iter().zip(&y) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }
}
