//! Closed-form constants, Lipschitz moduli and thresholds.
//!
//! Every quantity is evaluated from its closed form; the only numerical
//! searches are 1-D suprema over the feasible correct-mass band
//! `ρ ∈ [K_C δ⋆, 1 − K_I δ⋆]`, done on a dense grid and refined by golden
//! section (tolerance `1e-8` in `ρ`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::{DeltaKOption, KernelMatrix};
use crate::objective::ObjectiveSpec;
use crate::scores::{grpo_characteristic, score_envelopes, ClassPartition, GrpoSpec, ScoreField};
use crate::simplex::{face_gap, SimplexSpec};

/// Grid resolution for band suprema.
pub const BAND_GRID: usize = 10_000;
/// Golden-section tolerance in `ρ`.
pub const BAND_TOL: f64 = 1e-8;

/// `sup ‖H_{kℓ}(θ)‖₂` over logits and sizes, attained at `S = 2`.
pub fn hessian_l2_sup() -> f64 {
    1.0 / 54f64.sqrt()
}

/// Global Lipschitz constant of the softmax Jacobian in `ℓ₁`: `1/(3√3)`.
pub fn jacobian_l1_lipschitz() -> f64 {
    1.0 / (3.0 * 3f64.sqrt())
}

/// `Λ(δ⋆) = 1 + log(1/δ⋆)`.
pub fn lambda_const(delta: f64) -> f64 {
    1.0 + (1.0 / delta).ln()
}

/// `C_A = A (2 + √K) Λ`.
pub fn c_a(a: f64, size: usize, delta: f64) -> f64 {
    a * (2.0 + (size as f64).sqrt()) * lambda_const(delta)
}

/// Tight entropic Lipschitz constant `C_log = (2Λ − 1) + √K Λ`.
pub fn c_log(size: usize, delta: f64) -> f64 {
    let l = lambda_const(delta);
    (2.0 * l - 1.0) + (size as f64).sqrt() * l
}

/// Log-ratio drive bound `B = 2U_max + 4λβ‖K‖_∞ + β_KL log(max base / min base)`.
pub fn log_ratio_drive_bound(objective: &ObjectiveSpec, kernel: &KernelMatrix) -> f64 {
    let kl = match (&objective.base_policy, objective.beta_kl > 0.0) {
        (Some(b), true) => {
            let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
            objective.beta_kl * (hi / lo).ln()
        }
        _ => 0.0,
    };
    2.0 * objective.utility_max() + 4.0 * objective.lambda * objective.beta * kernel.norm_inf() + kl
}

/// Sharp drive bound for unit-utility gated objectives: `B♯ = 1 + 2λβ Δ_K`.
pub fn sharp_drive_bound(objective: &ObjectiveSpec, kernel: &KernelMatrix) -> (f64, DeltaKOption) {
    let (dk, opt) = kernel.delta_k();
    (1.0 + 2.0 * objective.lambda * objective.beta * dk, opt)
}

/// Log-ratio cap `M = max{max|z₀|, B/A}`.
pub fn log_ratio_cap(max_initial_log_ratio: f64, drive: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::domain("log_ratio_cap", "barrier strength A must be positive"));
    }
    Ok(max_initial_log_ratio.abs().max(drive / a))
}

/// Time-uniform floor `1/(S e^M)`.
pub fn dynamic_floor(cap: f64, size: usize) -> f64 {
    (-cap).exp() / size as f64
}

/// Minimal incorrect-face entropy gap at fixed correct mass `ρ`.
pub fn e_min_incorrect(rho: f64, delta: f64, kc: usize, ki: usize) -> f64 {
    let mut e = (delta - 1.0) * delta.ln();
    if kc >= 1 {
        e += xlog_ratio(rho, kc as f64);
    }
    if ki >= 2 {
        e += xlog_ratio(1.0 - delta - rho, (ki - 1) as f64);
    }
    e
}

/// Minimal correct-face entropy gap at fixed correct mass `ρ`.
pub fn e_min_correct(rho: f64, delta: f64, kc: usize, ki: usize) -> f64 {
    let mut e = (delta - 1.0) * delta.ln();
    if kc >= 2 {
        e += xlog_ratio(rho - delta, (kc - 1) as f64);
    }
    if ki >= 1 {
        e += xlog_ratio(1.0 - rho, ki as f64);
    }
    e
}

/// `x log(x/n)` with `0 log 0 = 0`.
fn xlog_ratio(x: f64, n: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (x / n).ln()
    }
}

fn band(delta: f64, kc: usize, ki: usize) -> Result<(f64, f64)> {
    let lo = kc as f64 * delta;
    let hi = 1.0 - ki as f64 * delta;
    if lo > hi + 1e-15 {
        return Err(Error::domain(
            "band",
            format!("infeasible band: (K_C + K_I) δ⋆ = {} > 1", lo + ki as f64 * delta),
        ));
    }
    Ok((lo, hi.max(lo)))
}

/// Maximizes `f` on `[lo, hi]` by a dense grid followed by golden section
/// around the best grid point.
pub fn band_maximize<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= 0.0 {
        return (lo, f(lo));
    }
    let step = (hi - lo) / BAND_GRID as f64;
    let mut best = (lo, f(lo));
    for k in 1..=BAND_GRID {
        let x = if k == BAND_GRID { hi } else { lo + k as f64 * step };
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > BAND_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v > best.1 {
        (x, v)
    } else {
        best
    }
}

/// Exact GRPO barrier-dominance threshold
/// `ε_crit = max_ρ ρ h_G(ρ) / E_min^I(ρ)` over the feasible band.
pub fn grpo_eps_crit(spec: GrpoSpec, kc: usize, ki: usize, delta: f64) -> Result<f64> {
    let (lo, hi) = band(delta, kc, ki)?;
    if kc == 0 || ki == 0 {
        return Ok(0.0);
    }
    let ratio = |rho: f64| {
        let e = e_min_incorrect(rho, delta, kc, ki);
        let h = grpo_characteristic(rho.clamp(0.0, 1.0), spec).unwrap_or(f64::NAN);
        if e <= 0.0 {
            f64::INFINITY
        } else {
            rho * h / e
        }
    };
    Ok(band_maximize(ratio, lo, hi).1)
}

/// `min_ρ [ε E_min^I(ρ) − ρ h_G(ρ)]` over the feasible band; nonnegative iff
/// the exact GRPO barrier-dominance test passes.
pub fn grpo_bd_margin(eps: f64, spec: GrpoSpec, kc: usize, ki: usize, delta: f64) -> Result<f64> {
    let (lo, hi) = band(delta, kc, ki)?;
    let neg = |rho: f64| {
        let e = e_min_incorrect(rho, delta, kc, ki);
        let h = grpo_characteristic(rho.clamp(0.0, 1.0), spec).unwrap_or(f64::NAN);
        rho * h - eps * e
    };
    Ok(-band_maximize(neg, lo, hi).1)
}

/// Relaxed GRPO thresholds `√(G−1)/L_K(δ)` and
/// `(1 − K_I δ)√(G−1)/(K_I δ L_K(δ))`.
pub fn grpo_eps_relaxed(spec: GrpoSpec, kc: usize, ki: usize, delta: f64) -> Result<(f64, f64)> {
    let l = face_gap(kc + ki, delta)?;
    let hs = spec.h_star();
    let a = hs / l;
    let b = if ki == 0 {
        f64::INFINITY
    } else {
        (1.0 - ki as f64 * delta) * hs / (ki as f64 * delta * l)
    };
    Ok((a, b))
}

/// Sufficient STaR thresholds on incorrect and correct faces.
pub fn star_eps_suf(kc: usize, ki: usize, delta: f64) -> Result<(f64, f64)> {
    let (lo, hi) = band(delta, kc, ki)?;
    let inc = if ki == 0 {
        0.0
    } else {
        band_maximize(|r| r / e_min_incorrect(r, delta, kc, ki), lo, hi).1
    };
    let cor = band_maximize(
        |r| {
            let s2 = delta * delta + (r - delta) * (r - delta);
            (s2 - delta).max(0.0) / (r * e_min_correct(r, delta, kc, ki))
        },
        lo.max(delta),
        hi,
    )
    .1;
    Ok((inc, cor))
}

/// Two regimes for the Lipschitz constant of `θ ↦ DP(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipRegime {
    /// Hard clip: `L_DP ≤ 1/(4δ²) + √S/(3√3 δ)`.
    Hard,
    /// Smoothed clip with temperature constant `c_τ`.
    Smooth { c_tau: f64 },
}

/// Lipschitz constant of `DP` under a clip regime.
pub fn l_dp(size: usize, delta: f64, regime: ClipRegime) -> f64 {
    let tail = (size as f64).sqrt() / (3.0 * 3f64.sqrt()) / delta;
    match regime {
        ClipRegime::Hard => 1.0 / (4.0 * delta * delta) + tail,
        ClipRegime::Smooth { c_tau } => (1.0 + c_tau) / (4.0 * delta * delta) + c_tau / (2.0 * delta) + tail,
    }
}

/// Composite Lipschitz constant of `∇_θ Φ`:
/// `L_θ ≤ L_p/(16δ²) + G_p(√S/(12√3 δ²) + ½ L_DP)`.
pub fn composite_lipschitz(l_p: f64, g_p: f64, size: usize, delta: f64, regime: ClipRegime) -> f64 {
    let s = (size as f64).sqrt();
    l_p / (16.0 * delta * delta) + g_p * (s / (12.0 * 3f64.sqrt() * delta * delta) + 0.5 * l_dp(size, delta, regime))
}

/// Bounds `(G_p, L_p)` on the gradient size and Lipschitz modulus of the DCR
/// objective on the trim: `G_p ≤ ‖U‖₂ + 2λβ‖K‖₂ + A(1 + log(1/δ))√S`,
/// `L_p ≤ 2λβ‖K‖₂ + A/δ`.
pub fn dcr_gradient_bounds(objective: &ObjectiveSpec, kernel: &KernelMatrix, delta: f64) -> (f64, f64) {
    let a = objective.barrier_strength();
    let lb2 = 2.0 * objective.lambda * objective.beta * kernel.norm_2();
    let u2 = objective.utility.iter().map(|u| u * u).sum::<f64>().sqrt();
    let s = (objective.size() as f64).sqrt();
    (u2 + lb2 + a * lambda_const(delta) * s, lb2 + a / delta)
}

/// Global Lipschitz modulus of the SRCT drift `F = p⊙(φ−φ̄) − ε E(p)` on
/// the trimmed simplex, using the sharpest per-field closed form.
pub fn drift_lipschitz(field: &ScoreField, domain: SimplexSpec, entropy_weight: f64) -> Result<f64> {
    let d = domain.floor;
    if !(d > 0.0) {
        return Err(Error::domain("drift_lipschitz", "trim δ⋆ must be positive"));
    }
    let k = domain.size as f64;
    let lam = lambda_const(d);
    let env = score_envelopes(field, domain)?;
    Ok(match field {
        ScoreField::Star(part) => {
            let (ji, j1) = crate::scores::star_jacobian_bounds(domain, part.correct_count());
            0.5 * (ji * j1).sqrt() + 3.0 * k.sqrt() + entropy_weight * (2.0 + k.sqrt()) * lam
        }
        ScoreField::Grpo { partition, spec } => {
            let (kc, ki) = (partition.correct_count(), partition.incorrect_count());
            let tan = (kc as f64 * ki as f64).sqrt() * (spec.h_star() + spec.d_g());
            (1.0 - (k - 1.0) * d) * tan + grpo_m_gamma(*spec, kc, ki, d) + entropy_weight * lam * (2.0 + k.sqrt())
        }
        ScoreField::Dpo(spec) => env.l_phi + 2.0 * spec.m_gamma_inf(d) + entropy_weight * c_log(domain.size, d),
        _ => 0.5 * env.l_phi + 3.0 * env.m_2 + c_a(entropy_weight, domain.size, d),
    })
}

/// `M_γ = √(G−1)√max(K_C, K_I)`, or the trim-aware `√(G−1)/(K_I δ)·√max`
/// when smaller.
pub fn grpo_m_gamma(spec: GrpoSpec, kc: usize, ki: usize, delta: f64) -> f64 {
    let base = spec.h_star() * (kc.max(ki) as f64).sqrt();
    if ki >= 1 {
        base.min(spec.h_star() / (ki as f64 * delta) * (kc.max(ki) as f64).sqrt())
    } else {
        base
    }
}

/// Constants of the bandwise confinement bound for the unreflected diffusion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BandBound {
    pub eta0: f64,
    /// `true` when `η₀` was not supplied and the default
    /// `min(0.05, 1 − Kδ⋆)` was used.
    pub eta0_defaulted: bool,
    pub gamma_band: f64,
    pub mu_band: f64,
    pub sigma2_max: f64,
    /// `exp(−2μ(Y₀−δ⋆)/σ²)` when `ε Γ_band > M_φ`, otherwise `None`.
    pub hit_probability: Option<f64>,
}

/// Face gap at level `y`: `Γ(y) = (1−y) log((1−y)/((K−1)y))`.
pub fn gamma_face(y: f64, size: usize) -> f64 {
    (1.0 - y) * ((1.0 - y) / ((size as f64 - 1.0) * y)).ln()
}

/// Bandwise confinement constants and hitting-probability bound.
pub fn band_bound(
    size: usize,
    delta: f64,
    eps: f64,
    m_phi: f64,
    gamma: f64,
    eta0: Option<f64>,
    y0: f64,
) -> Result<BandBound> {
    let room = 1.0 - size as f64 * delta;
    if !(room > 0.0) {
        return Err(Error::domain("band_bound", "band width requires K δ⋆ < 1"));
    }
    let (eta0, eta0_defaulted) = match eta0 {
        Some(e) if e > 0.0 && e <= room => (e, false),
        Some(e) => return Err(Error::domain("band_bound", format!("η₀ = {e} outside (0, 1 − Kδ⋆]"))),
        None => (0.05f64.min(room), true),
    };
    let y_max = delta + eta0;
    let gamma_band = -band_maximize(|y| -gamma_face(y, size), delta, y_max).1;
    let mu_band = delta * (eps * gamma_band - m_phi);
    let sigma2_max = gamma * y_max * (1.0 - delta);
    let hit_probability = (eps * gamma_band > m_phi && sigma2_max > 0.0)
        .then(|| (-2.0 * mu_band / sigma2_max * (y0 - delta)).exp());
    Ok(BandBound {
        eta0,
        eta0_defaulted,
        gamma_band,
        mu_band,
        sigma2_max,
        hit_probability,
    })
}

/// One named constant with the formula it was evaluated from.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConstantEntry {
    pub value: f64,
    pub formula: String,
}

/// Named constants, sorted by identifier.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct ConstantsReport {
    pub entries: BTreeMap<String, ConstantEntry>,
}

impl ConstantsReport {
    pub fn insert(&mut self, name: &str, value: f64, formula: &str) {
        self.entries.insert(
            name.to_string(),
            ConstantEntry {
                value,
                formula: formula.to_string(),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.value)
    }

    /// Aligned `name  value  formula` lines.
    pub fn to_text(&self) -> String {
        let width = self.entries.keys().map(|k| k.len()).max().unwrap_or(0);
        self.entries
            .iter()
            .map(|(k, e)| format!("{k:<width$}  {:>24.17e}  {}\n", e.value, e.formula))
            .collect()
    }
}

/// Parameters for [`compute_constants`].
#[derive(Debug, Clone)]
pub struct ConstantsParams {
    pub domain: SimplexSpec,
    pub partition: ClassPartition,
    pub objective: ObjectiveSpec,
    pub kernel: KernelMatrix,
    pub grpo: GrpoSpec,
    pub dpo_beta: f64,
    pub dpo_ell0: f64,
    /// Flow entropy weight for the STaR/GRPO/DPO fields.
    pub eps: f64,
    /// Diffusion scale `γ = η/B` for the band bound.
    pub gamma: f64,
    pub eta0: Option<f64>,
}

/// Evaluates every closed-form constant for `params`.
pub fn compute_constants(params: &ConstantsParams) -> Result<ConstantsReport> {
    let dom = params.domain;
    let (s, d) = (dom.size, dom.floor);
    let (kc, ki) = (params.partition.correct_count(), params.partition.incorrect_count());
    band(d, kc, ki)?;
    if d >= 1.0 / s as f64 {
        return Err(Error::domain("compute_constants", "trim δ⋆ must be below 1/S"));
    }
    let mut r = ConstantsReport::default();
    let o = &params.objective;
    let a = o.barrier_strength();
    let lam = lambda_const(d);
    r.insert("A", a, "eps + lambda*alpha + beta_kl");
    r.insert("eps_tot", o.eps_tot(), "eps + lambda*alpha");
    r.insert("Lambda", lam, "1 + log(1/delta)");
    r.insert("C_A", c_a(a, s, d), "A*(2 + sqrt(S))*Lambda");
    r.insert("C_log", c_log(s, d), "(2*Lambda - 1) + sqrt(S)*Lambda");
    r.insert("L_K", face_gap(s, d)?, "(1-delta)*log((1-delta)/((S-1)*delta))");
    r.insert("delta_eff", dom.delta_eff(), "delta/(1 + (S-1)*delta)");
    r.insert("hessian_l2_sup", hessian_l2_sup(), "1/sqrt(54)");
    r.insert("jacobian_l1_lipschitz", jacobian_l1_lipschitz(), "1/(3*sqrt(3))");

    let k = &params.kernel;
    r.insert("kernel_norm_inf", k.norm_inf(), "max_i sum_j |K_ij|");
    r.insert("kernel_norm_2", k.norm_2(), "largest |eigenvalue| of K");
    let (dk, opt) = k.delta_k();
    r.insert("Delta_K", dk, &format!("tightest option: {opt:?}"));
    let b = log_ratio_drive_bound(o, k);
    r.insert("B", b, "2*U_max + 4*lambda*beta*||K||_inf + beta_kl*log(base_max/base_min)");
    let (bs, _) = sharp_drive_bound(o, k);
    r.insert("B_sharp", bs, "1 + 2*lambda*beta*Delta_K");
    if a > 0.0 {
        let m = log_ratio_cap(0.0, b, a)?;
        r.insert("M", m, "max(max|z0|, B/A) with uniform start");
        r.insert("dynamic_floor", dynamic_floor(m, s), "exp(-M)/S");
        let ms = log_ratio_cap(0.0, bs, a)?;
        r.insert("M_sharp", ms, "max(max|z0|, B_sharp/A) with uniform start");
        r.insert("dynamic_floor_sharp", dynamic_floor(ms, s), "exp(-M_sharp)/S");
        r.insert("rate_strong_concavity", 2.0 * a, "2*A");
    }

    let g = params.grpo;
    r.insert("grpo_D_G", g.d_g(), "sup |h_G'| on a 1e4-point grid");
    r.insert("grpo_h_star", g.h_star(), "sqrt(G-1)");
    r.insert("grpo_eps_crit", grpo_eps_crit(g, kc, ki, d)?, "max_rho rho*h_G(rho)/E_min^I(rho)");
    let (ra, rb) = grpo_eps_relaxed(g, kc, ki, d)?;
    r.insert("grpo_eps_relaxed", ra, "sqrt(G-1)/L_K");
    r.insert("grpo_eps_relaxed_trim", rb, "(1-K_I*delta)*sqrt(G-1)/(K_I*delta*L_K)");
    r.insert("grpo_M_gamma", grpo_m_gamma(g, kc, ki, d), "sqrt(G-1)*sqrt(max(K_C,K_I)), trim-aware min");
    let grpo_field = ScoreField::Grpo {
        partition: params.partition.clone(),
        spec: g,
    };
    let grpo_env = score_envelopes(&grpo_field, dom)?;
    r.insert("grpo_L_gamma_tan", grpo_env.l_phi, "sqrt(K_C*K_I)*(sqrt(G-1) + D_G)");
    r.insert("grpo_drift_lipschitz", drift_lipschitz(&grpo_field, dom, params.eps)?, "(1-(K-1)delta)L_tan + M_gamma + eps*Lambda*(2+sqrt(K))");

    if kc >= 1 {
        let (si, sc) = star_eps_suf(kc, ki, d)?;
        r.insert("star_eps_sharp", 1.0 / face_gap(s, d)?, "1/L_K");
        r.insert("star_eps_suf_incorrect", si, "max_rho rho/E_min^I(rho)");
        r.insert("star_eps_suf_correct", sc, "max_rho max(0, S2max - delta)/(rho*E_min^C(rho))");
        let star = ScoreField::Star(params.partition.clone());
        let (ji, j1) = crate::scores::star_jacobian_bounds(dom, kc);
        r.insert("star_jacobian_inf", ji, "2/delta + M + 2");
        r.insert("star_jacobian_1", j1, "2/(M*delta) + 3K");
        r.insert("star_drift_lipschitz", drift_lipschitz(&star, dom, params.eps)?, "0.5*sqrt(J_inf*J_1) + 3*sqrt(K) + eps*(2+sqrt(K))*Lambda");
    }

    let dpo = crate::scores::DpoSpec::from_partition(params.dpo_beta, params.dpo_ell0, &params.partition)?;
    r.insert("dpo_M_gamma_inf", dpo.m_gamma_inf(d), "g(log delta)");
    r.insert("dpo_L_f", dpo.l_f(d), "beta/(4*delta)");
    r.insert("dpo_c_open", dpo.c_open(), "sup_{l<=0} -g'(l)");
    r.insert("dpo_c_max", dpo.c_max(d, s), "max of -g' on [log delta, log(1-(S-1)delta)]");
    let dpo_field = ScoreField::Dpo(dpo.clone());
    let dpo_env = score_envelopes(&dpo_field, dom)?;
    r.insert("dpo_L_phi", dpo_env.l_phi, "K*M_gamma_inf + (sqrt(K)+1)*L_f");
    r.insert("dpo_drift_lipschitz", drift_lipschitz(&dpo_field, dom, params.eps)?, "L_phi + 2*M_gamma_inf + eps*C_log");

    let dcr = ScoreField::Dcr(Box::new(crate::scores::DcrField {
        objective: o.clone(),
        kernel: k.clone(),
    }));
    r.insert("dcr_drift_lipschitz", drift_lipschitz(&dcr, dom, o.eps_tot())?, "0.5*L_phi + 3*M_phi2 + eps_tot*Lambda*(2+sqrt(S))");
    let (gp, lp) = dcr_gradient_bounds(o, k, d);
    r.insert("dcr_G_p", gp, "||U||_2 + 2*lambda*beta*||K||_2 + A*Lambda*sqrt(S)");
    r.insert("dcr_L_p", lp, "2*lambda*beta*||K||_2 + A/delta");
    r.insert("L_DP_hard", l_dp(s, d, ClipRegime::Hard), "1/(4 delta^2) + sqrt(S)/(3 sqrt(3) delta)");
    r.insert(
        "L_theta",
        composite_lipschitz(lp, gp, s, d, ClipRegime::Hard),
        "L_p/(16 delta^2) + G_p*(sqrt(S)/(12 sqrt(3) delta^2) + L_DP/2)",
    );

    let m_phi = grpo_env.m_inf;
    let bb = band_bound(s, d, params.eps, m_phi, params.gamma, params.eta0, d + 0.5 * params.eta0.unwrap_or(0.05f64.min(1.0 - s as f64 * d)))?;
    r.insert("band_eta0", bb.eta0, if bb.eta0_defaulted { "default min(0.05, 1 - K*delta)" } else { "supplied" });
    r.insert("band_Gamma", bb.gamma_band, "inf_{y in [delta, delta+eta0]} Gamma(y)");
    r.insert("band_mu", bb.mu_band, "delta*(eps*Gamma_band - M_phi), GRPO M_phi");
    r.insert("band_sigma2_max", bb.sigma2_max, "gamma*y_max*(1-delta)");
    Ok(r)
}
