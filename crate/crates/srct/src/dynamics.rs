//! Time stepping on the simplex.
//!
//! # Integrators
//!
//! The canonical step is the exponentiated-gradient (replicator) update
//!
//! ```text
//! p̃_i = p_i · exp(η [φ_i − ε log p_i]),    p ← p̃ / ‖p̃‖₁
//! ```
//!
//! which changes every log-ratio by exactly `z_ij ← (1−ηε) z_ij + η(φ_i − φ_j)`.
//! [`euler_ode_step`] integrates the SRCT drift
//! `F(p) = p ⊙ (φ − φ̄) − ε p ⊙ (log p − ⟨log p⟩)` directly and exists for
//! order checks.
//!
//! # Mini-batch noise
//!
//! A batch `n ~ Multinomial(B, p)` gives `p̂ = n/B` and `ξ = p̂ − p` with
//! `E ξ = 0` and `E‖ξ‖² = (1 − ‖p‖²)/B`. The score is evaluated at `p̂`.
//! Under [`NoiseModel::Sampling`] (the default) the sampling fluctuation is
//! also applied to the state,
//!
//! ```text
//! p̃_i = (p_i + η ξ_i) · exp(η [φ_i(p̂) − ε log p_i])
//! ```
//!
//! which to first order in `η` is the stochastic-approximation step
//! `p + η(F + ξ)`; it stays positive for `η < 1` because `ξ_i ≥ −p_i`.
//! [`NoiseModel::FitnessOnly`] keeps only the `p̂` dependence of `φ`.
//!
//! # Randomness
//!
//! Every trajectory owns a ChaCha stream keyed by `(seed, stream id)` and
//! consumes it sequentially, so results do not depend on how trajectories are
//! distributed across worker threads. Multinomial draws use inverse-CDF
//! sampling of `B` uniforms, which couples runs that share a key (common
//! random numbers for matched comparisons).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::bounds;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::objective::{objective_value, ObjectiveSpec};
use crate::scores::ScoreField;
use crate::simplex::{face_gap, mean_log, normalize_in_place, project_trimmed, SimplexSpec, LOG_CLIP, POSITIVITY_FLOOR};

/// Integrator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    ExpGradient,
    EulerOde,
}

/// Step size, entropy weight and horizon of a flow.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FlowConfig {
    pub step_size: f64,
    pub entropy_weight: f64,
    pub steps: usize,
    #[serde(default)]
    pub integrator: Integrator,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn new(step_size: f64, entropy_weight: f64, steps: usize) -> Self {
        Self {
            step_size,
            entropy_weight,
            steps,
            integrator: Integrator::ExpGradient,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size {} must be positive", self.step_size)));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(Error::Config(format!(
                "entropy weight {} must be nonnegative",
                self.entropy_weight
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mini-batch sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BatchConfig {
    pub batch_size: u64,
    pub seed: u64,
    /// Stream id; runs sharing `(seed, stream)` see the same uniforms.
    pub stream: u64,
}

impl BatchConfig {
    pub fn new(batch_size: u64, seed: u64, stream: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            batch_size,
            seed,
            stream,
        })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, self.stream)
    }
}

/// How mini-batch sampling noise enters the state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Sampling,
    FitnessOnly,
}

/// Deterministic ChaCha stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit stream id from a label (FNV-1a).
pub fn stream_id(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Largest batch drawn by inverse-CDF sampling; larger batches use
/// sequential conditional binomials.
pub const INVERSE_CDF_MAX_BATCH: u64 = 1 << 16;

/// Counts `n ~ Multinomial(B, p)`.
pub fn sample_counts<R: Rng + ?Sized>(p: &[f64], batch: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; p.len()];
    if batch <= INVERSE_CDF_MAX_BATCH {
        let mut cdf = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        for &x in p {
            acc += x;
            cdf.push(acc);
        }
        let total = acc;
        let last = p.len() - 1;
        for _ in 0..batch {
            let u: f64 = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= u).min(last);
            counts[k] += 1;
        }
    } else {
        let mut remaining = batch;
        let mut mass_left = 1.0;
        for (k, &x) in p.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if k == p.len() - 1 || mass_left <= 0.0 {
                counts[k] += remaining;
                break;
            }
            let prob = (x / mass_left).clamp(0.0, 1.0);
            let n = Binomial::new(remaining, prob).expect("valid binomial").sample(rng);
            counts[k] = n;
            remaining -= n;
            mass_left -= x;
        }
    }
    counts
}

/// Mini-batch noise `ξ = n/B − p`.
pub fn sample_noise<R: Rng + ?Sized>(p: &[f64], batch: u64, rng: &mut R) -> Vec<f64> {
    sample_counts(p, batch, rng)
        .iter()
        .zip(p)
        .map(|(&n, &x)| n as f64 / batch as f64 - x)
        .collect()
}

/// One exponentiated-gradient step (allocating).
pub fn exp_gradient_step(p: &[f64], phi: &[f64], step_size: f64, entropy_weight: f64) -> Vec<f64> {
    let mut out = p.to_vec();
    exp_gradient_step_in_place(&mut out, phi, step_size, entropy_weight);
    out
}

/// One exponentiated-gradient step in place.
pub fn exp_gradient_step_in_place(p: &mut [f64], phi: &[f64], step_size: f64, entropy_weight: f64) {
    let mut m = f64::NEG_INFINITY;
    let mut a = vec![0.0; p.len()];
    for k in 0..p.len() {
        let barrier = if entropy_weight == 0.0 {
            0.0
        } else {
            entropy_weight * p[k].max(LOG_CLIP).ln()
        };
        a[k] = step_size * (phi[k] - barrier);
        m = m.max(a[k]);
    }
    for k in 0..p.len() {
        p[k] *= (a[k] - m).exp();
    }
    normalize_in_place(p);
    apply_floor(p);
}

fn apply_floor(p: &mut [f64]) {
    if p.iter().any(|&x| x < POSITIVITY_FLOOR) {
        p.iter_mut().for_each(|x| *x = x.max(POSITIVITY_FLOOR));
        normalize_in_place(p);
    }
}

/// SRCT drift `F(p) = p⊙(φ − φ̄) − ε p⊙(log p − ⟨log p⟩)` for a given score.
pub fn srct_drift(p: &[f64], phi: &[f64], entropy_weight: f64) -> Vec<f64> {
    let phibar: f64 = p.iter().zip(phi).map(|(a, b)| a * b).sum();
    let ml = if entropy_weight == 0.0 { 0.0 } else { mean_log(p) };
    p.iter()
        .zip(phi)
        .map(|(&x, &f)| {
            let sel = x * (f - phibar);
            if entropy_weight == 0.0 || x == 0.0 {
                sel
            } else {
                sel - entropy_weight * x * (x.ln() - ml)
            }
        })
        .collect()
}

/// Maximum number of step halvings in [`euler_ode_step`].
pub const EULER_MAX_HALVINGS: usize = 40;

/// Explicit Euler step of the SRCT ODE with positivity backoff.
pub fn euler_ode_step(p: &[f64], field: &ScoreField, config: &FlowConfig) -> Result<Vec<f64>> {
    let phi = field.eval(p)?;
    let f = srct_drift(p, &phi, config.entropy_weight);
    let mut h = config.step_size;
    for _ in 0..=EULER_MAX_HALVINGS {
        let mut next: Vec<f64> = p.iter().zip(&f).map(|(x, d)| x + h * d).collect();
        if next.iter().all(|&x| x > 0.0) {
            normalize_in_place(&mut next);
            return Ok(next);
        }
        h *= 0.5;
    }
    Err(Error::NoConvergence {
        op: "euler_ode_step",
        iterations: EULER_MAX_HALVINGS,
        residual: h,
    })
}

/// One mini-batch step; returns the new policy and the noise `ξ`.
pub fn minibatch_step<R: Rng + ?Sized>(
    p: &[f64],
    field: &ScoreField,
    flow: &FlowConfig,
    batch: u64,
    noise: NoiseModel,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let counts = sample_counts(p, batch, rng);
    let p_hat: Vec<f64> = counts.iter().map(|&n| n as f64 / batch as f64).collect();
    let xi: Vec<f64> = p_hat.iter().zip(p).map(|(a, b)| a - b).collect();
    let phi = field.eval_batch(&p_hat);
    let mut next = match noise {
        NoiseModel::Sampling => p
            .iter()
            .zip(&xi)
            .map(|(&x, &e)| (x + flow.step_size * e).max(0.0))
            .collect(),
        NoiseModel::FitnessOnly => p.to_vec(),
    };
    // The barrier is evaluated at the pre-step policy, as in the deterministic
    // step; the multiplicative form keeps the update positive.
    let mut m = f64::NEG_INFINITY;
    let mut a = vec![0.0; p.len()];
    for k in 0..p.len() {
        let barrier = if flow.entropy_weight == 0.0 {
            0.0
        } else {
            flow.entropy_weight * p[k].max(LOG_CLIP).ln()
        };
        a[k] = flow.step_size * (phi[k] - barrier);
        m = m.max(a[k]);
    }
    for k in 0..p.len() {
        next[k] *= (a[k] - m).exp();
    }
    normalize_in_place(&mut next);
    apply_floor(&mut next);
    (next, xi)
}

/// Wright–Fisher noise increment `√γ(√p ⊙ dW − p Σ √p_k dW_k)` with
/// `dW ~ N(0, dt I)`.
pub fn wright_fisher_increment<R: Rng + ?Sized>(p: &[f64], gamma: f64, dt: f64, rng: &mut R) -> Vec<f64> {
    let sd = dt.sqrt();
    let dw: Vec<f64> = (0..p.len())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let roots: Vec<f64> = p.iter().map(|x| x.max(0.0).sqrt()).collect();
    let common: f64 = roots.iter().zip(&dw).map(|(a, b)| a * b).sum();
    let g = gamma.sqrt();
    (0..p.len())
        .map(|i| g * (roots[i] * dw[i] - p[i] * common))
        .collect()
}

/// Euler–Maruyama step of the Wright–Fisher SDE followed by Euclidean
/// projection onto the trimmed simplex `Δ_δ` (the projection stands in for
/// the orthogonal reflection at step scale).
pub fn wright_fisher_step<R: Rng + ?Sized>(
    p: &[f64],
    drift: &[f64],
    gamma: f64,
    dt: f64,
    floor: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut next: Vec<f64> = p.iter().zip(drift).map(|(x, f)| x + f * dt).collect();
    if gamma > 0.0 {
        let inc = wright_fisher_increment(p, gamma, dt, rng);
        next.iter_mut().zip(&inc).for_each(|(x, d)| *x += d);
    }
    project_trimmed(&next, floor)
}

/// Sampling setup for a stochastic run.
#[derive(Debug, Clone, Copy)]
pub struct Sampling {
    pub batch: BatchConfig,
    pub noise: NoiseModel,
}

/// Runs a flow from `init`, calling `observe(step, p)` at step 0, at every
/// multiple of `record_every` and at the final step.
pub fn run_flow<F: FnMut(usize, &[f64])>(
    field: &ScoreField,
    flow: &FlowConfig,
    sampling: Option<&Sampling>,
    init: &[f64],
    mut observe: F,
) -> Result<Vec<f64>> {
    flow.validate()?;
    if init.len() != field.size() {
        return Err(Error::Config(format!(
            "initial policy has {} entries, field expects {}",
            init.len(),
            field.size()
        )));
    }
    let mut p = init.to_vec();
    let mut phi = vec![0.0; p.len()];
    let mut rng = sampling.map(|s| s.batch.rng());
    observe(0, &p);
    for step in 1..=flow.steps {
        match (sampling, rng.as_mut()) {
            (Some(s), Some(r)) => {
                p = minibatch_step(&p, field, flow, s.batch.batch_size, s.noise, r).0;
            }
            _ => match flow.integrator {
                Integrator::ExpGradient => {
                    field.eval_batch_into(&p, &mut phi);
                    exp_gradient_step_in_place(&mut p, &phi, flow.step_size, flow.entropy_weight);
                }
                Integrator::EulerOde => {
                    p = euler_ode_step(&p, field, flow)?;
                }
            },
        }
        if step % flow.record_every == 0 || step == flow.steps {
            observe(step, &p);
        }
    }
    Ok(p)
}

/// Recorded policies along a run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub policies: Vec<Vec<f64>>,
}

/// [`run_flow`] collecting every observed policy.
pub fn simulate(
    field: &ScoreField,
    flow: &FlowConfig,
    sampling: Option<&Sampling>,
    init: &[f64],
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    run_flow(field, flow, sampling, init, |s, p| {
        traj.steps.push(s);
        traj.policies.push(p.to_vec());
    })?;
    Ok(traj)
}

/// Which barrier-dominance test was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BdMode {
    /// `ε L_K(δ⋆) ≥ 1`.
    StarSharp,
    /// `ε E_min^I(ρ) ≥ ρ h_G(ρ)` over the feasible band.
    GrpoExact,
    /// `ε L_K(δ⋆) ≥ 2 M_{γ,∞}`.
    DpoLinf,
    /// `A L_K(δ⋆) ≥ osc(φ)` (face inequality with the field's oscillation).
    GenericLinf,
}

/// Result of [`bd_check`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BdReport {
    pub holds: bool,
    /// Inward minus outward pressure on the worst face (nonnegative iff the
    /// test passes).
    pub margin: f64,
    pub mode: BdMode,
    /// Smallest entropy weight passing the same test.
    pub threshold: f64,
}

/// Barrier-dominance test for forward invariance of `Δ_δ⋆`.
pub fn bd_check(field: &ScoreField, entropy_weight: f64, domain: SimplexSpec) -> Result<BdReport> {
    if field.size() != domain.size {
        return Err(Error::domain("bd_check", "field and domain sizes differ"));
    }
    let l = if domain.size >= 2 { face_gap(domain.size, domain.floor)? } else { 0.0 };
    let eps = entropy_weight;
    let linear = |pressure: f64, mode: BdMode| {
        let margin = eps * l - pressure;
        BdReport {
            holds: margin >= 0.0,
            margin,
            mode,
            threshold: if l > 0.0 { pressure / l } else { f64::INFINITY },
        }
    };
    Ok(match field {
        ScoreField::Star(_) => linear(1.0, BdMode::StarSharp),
        ScoreField::Grpo { partition, spec } => {
            let (m, n) = (partition.correct_count(), partition.incorrect_count());
            if m == 0 || n == 0 {
                linear(0.0, BdMode::GrpoExact)
            } else {
                let margin = bounds::grpo_bd_margin(eps, *spec, m, n, domain.floor)?;
                let threshold = bounds::grpo_eps_crit(*spec, m, n, domain.floor)?;
                BdReport {
                    holds: margin >= 0.0,
                    margin,
                    mode: BdMode::GrpoExact,
                    threshold,
                }
            }
        }
        ScoreField::Dpo(spec) => linear(2.0 * spec.m_gamma_inf(domain.floor), BdMode::DpoLinf),
        ScoreField::Dcr(d) => {
            let o = &d.objective;
            let umax = o.utility.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let umin = o.utility.iter().cloned().fold(f64::INFINITY, f64::min);
            let (dk, _) = d.kernel.delta_k();
            let kl_osc = match (&o.base_policy, o.beta_kl > 0.0) {
                (Some(b), true) => {
                    let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
                    o.beta_kl * (hi / lo).ln()
                }
                _ => 0.0,
            };
            linear((umax - umin) + 2.0 * o.lambda * o.beta * dk + kl_osc, BdMode::GenericLinf)
        }
        ScoreField::StarEmpirical(_) | ScoreField::GrpoIndicator(_) => linear(1.0, BdMode::GenericLinf),
        ScoreField::DpoNegLog(_) => linear((1.0 / domain.floor).ln(), BdMode::GenericLinf),
    })
}

/// Analytic envelope for one log-ratio `z_ij = log(p_i/p_j)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum PairEnvelope {
    /// `ż = d(t) − r z` with `d ∈ [lo, hi]`:
    /// `z(t) ∈ [z₀e^{−rt} + lo(1−e^{−rt})/r, z₀e^{−rt} + hi(1−e^{−rt})/r]`.
    Affine { rate: f64, lo: f64, hi: f64 },
    /// `|ż + r_0 z| ≤ c|z|` folded into `|z(t)| ≤ |z₀| e^{−rt}` (rate may be
    /// negative).
    Contract { rate: f64 },
}

/// Envelope for pair `(i, j)` under `field` with entropy weight `ε`.
pub fn pair_envelope(field: &ScoreField, entropy_weight: f64, i: usize, j: usize) -> PairEnvelope {
    let eps = entropy_weight;
    let affine = |lo: f64, hi: f64| PairEnvelope::Affine { rate: eps, lo, hi };
    match field {
        ScoreField::Star(part) | ScoreField::StarEmpirical(part) => match (part.is_correct(i), part.is_correct(j)) {
            (true, true) => affine(-1.0, 1.0),
            (false, false) => affine(0.0, 0.0),
            (true, false) => affine(0.0, 1.0),
            (false, true) => affine(-1.0, 0.0),
        },
        ScoreField::Grpo { partition, spec } => {
            let g = spec.group_size as f64;
            let (lo, hi) = (1.0 - 1.0 / g, spec.h_star());
            match (partition.is_correct(i), partition.is_correct(j)) {
                (true, false) => affine(lo, hi),
                (false, true) => affine(-hi, -lo),
                _ => affine(0.0, 0.0),
            }
        }
        ScoreField::GrpoIndicator(part) => match (part.is_correct(i), part.is_correct(j)) {
            (true, false) => affine(1.0, 1.0),
            (false, true) => affine(-1.0, -1.0),
            _ => affine(0.0, 0.0),
        },
        ScoreField::Dpo(spec) => {
            let (si, sj) = (spec.signs[i], spec.signs[j]);
            if si == sj {
                if si > 0.0 {
                    PairEnvelope::Contract { rate: eps }
                } else {
                    PairEnvelope::Contract {
                        rate: eps - spec.c_open(),
                    }
                }
            } else {
                let g0 = spec.g(0.0);
                if si > 0.0 {
                    affine(2.0 * g0, 2.0)
                } else {
                    affine(-2.0, -2.0 * g0)
                }
            }
        }
        ScoreField::DpoNegLog(part) => {
            let cap = (1.0 / LOG_CLIP).ln();
            match (part.is_correct(i), part.is_correct(j)) {
                (true, true) => PairEnvelope::Affine {
                    rate: 1.0 + eps,
                    lo: 0.0,
                    hi: 0.0,
                },
                (false, false) => affine(0.0, 0.0),
                (true, false) => affine(0.0, cap),
                (false, true) => affine(-cap, 0.0),
            }
        }
        ScoreField::Dcr(d) => {
            let o = &d.objective;
            let mut base = o.utility[i] - o.utility[j];
            if let (Some(b), true) = (&o.base_policy, o.beta_kl > 0.0) {
                base += o.beta_kl * (b[i] / b[j]).ln();
            }
            let spread = 2.0 * o.lambda * o.beta * d.kernel.row_difference(i, j);
            affine(base - spread, base + spread)
        }
    }
}

/// Summary of an envelope audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct EnvelopeReport {
    /// Number of `(pair, time)` checks performed.
    pub checked: usize,
    /// Checks outside the envelope beyond slack.
    pub violations: usize,
    /// Smallest signed distance to the envelope boundary (negative = outside).
    pub worst_slack: f64,
    /// Pairs excluded after a coordinate reached the positivity floor or the
    /// log clip.
    pub skipped_pairs: usize,
}

/// Coordinates below this are treated as floored and excluded from audits.
const AUDIT_FLOOR: f64 = 1e-250;

fn decay(rate: f64, step_size: f64, n: usize) -> (f64, f64) {
    let t = n as f64 * step_size;
    ((-rate * t).exp(), (1.0 - step_size * rate).powi(n as i32))
}

/// Checks every recorded log-ratio of a deterministic exponentiated-gradient
/// trajectory against its analytic envelope.
///
/// The continuous-time envelope is widened by the Euler slack `2η·max|d|`
/// and merged with its exact geometric-decay analogue, which bounds the
/// discrete recursion `z ← (1−ηr) z + η d`.
pub fn log_ratio_envelope_check(
    traj: &Trajectory,
    field: &ScoreField,
    step_size: f64,
    entropy_weight: f64,
) -> EnvelopeReport {
    let mut report = EnvelopeReport {
        worst_slack: f64::INFINITY,
        ..Default::default()
    };
    let Some(p0) = traj.policies.first() else {
        return report;
    };
    let s = p0.len();
    // The step evaluates `log max(p, LOG_CLIP)`, so below the clip the
    // entropy slice (and the DPO experiment score) no longer sees `log p`.
    let clip_sensitive = entropy_weight > 0.0 || matches!(field, ScoreField::DpoNegLog(_));
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let env = pair_envelope(field, entropy_weight, i, j);
            let z0 = (p0[i] / p0[j]).ln();
            let floor = if clip_sensitive { LOG_CLIP } else { AUDIT_FLOOR };
            if p0[i] < floor || p0[j] < floor {
                report.skipped_pairs += 1;
                continue;
            }
            for (&n, p) in traj.steps.iter().zip(&traj.policies).skip(1) {
                if p[i] < floor || p[j] < floor {
                    report.skipped_pairs += 1;
                    break;
                }
                let z = (p[i] / p[j]).ln();
                let (lo, hi, drive) = match env {
                    PairEnvelope::Affine { rate, lo, hi } => {
                        let (c, d) = decay(rate, step_size, n);
                        let t = n as f64 * step_size;
                        let gain = |x: f64| {
                            if rate.abs() < 1e-300 {
                                (x * t, x * t)
                            } else {
                                (x * (1.0 - c) / rate, x * (1.0 - d) / rate)
                            }
                        };
                        let (lc, ld) = gain(lo);
                        let (hc, hd) = gain(hi);
                        (
                            (z0 * c + lc).min(z0 * d + ld),
                            (z0 * c + hc).max(z0 * d + hd),
                            lo.abs().max(hi.abs()),
                        )
                    }
                    PairEnvelope::Contract { rate } => {
                        let (c, d) = decay(rate, step_size, n);
                        let r = z0.abs() * c.max(d.abs());
                        (-r, r, 0.0)
                    }
                };
                let slack = 2.0 * step_size * drive + 1e-9 * (1.0 + z.abs());
                let margin = (z - (lo - slack)).min((hi + slack) - z);
                report.checked += 1;
                report.worst_slack = report.worst_slack.min(margin);
                if margin < 0.0 {
                    report.violations += 1;
                }
            }
        }
    }
    report
}

/// Values of `J̃` along a trajectory.
pub fn lyapunov_series(traj: &Trajectory, objective: &ObjectiveSpec, kernel: &KernelMatrix) -> Result<Vec<f64>> {
    traj.policies
        .iter()
        .map(|p| objective_value(p, objective, kernel))
        .collect()
}
