//! Score fields `φ(p)` driving the replicator flows.
//!
//! Canonical (centred, `Σ p_i φ_i = 0`) fields:
//!
//! | field | formula |
//! |-------|---------|
//! | STaR  | `φ_c = (p_c − S₂)/ρ` on correct, `φ_i = −S₂/ρ` on incorrect; `ρ = Σ_C p`, `S₂ = Σ_C p²` |
//! | GRPO  | `γ̂_c = (1−ρ) h_G(ρ)`, `γ̂_i = −ρ h_G(ρ)` |
//! | DPO   | `γ_i = s_i g_β(log p_i)`, `φ = γ − Σ p_j γ_j`, `g_β(ℓ) = 1 − σ(β(ℓ−ℓ₀))` |
//! | DCR   | `φ = U − 2λβ K p + β_KL log p_base` (flow entropy weight `A`) |
//!
//! Experiment fitness tables (not centred; the exponentiated-gradient step is
//! gauge invariant, so only differences matter):
//!
//! | field | formula |
//! |-------|---------|
//! | STaR-empirical | `φ_i = p̂_i/ρ̂` on correct, else 0 |
//! | GRPO-indicator | `φ_i = 1{i ∈ C}` |
//! | DPO-neglog     | `φ_i = −log max(p̂_i, 1e-12)` on correct, else 0 |
//!
//! The GRPO characteristic `h_G(ρ) = E[f_G(1+S)]/(1−ρ)` with
//! `f_G(t) = √((G−t)/t)` and `S ~ Bin(G−1, ρ)` is evaluated by exact
//! summation; for `ρ > 1/2` the shifted identity `ρ h_G = E√(S/(G−S))`
//! removes the `0/0` at `ρ = 1`.

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::objective::ObjectiveSpec;
use crate::simplex::{SimplexSpec, LOG_CLIP};

/// Correct/incorrect split with cluster labels on correct traces.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClassPartition {
    is_correct: Vec<bool>,
    cluster: Vec<Option<usize>>,
    n_clusters: usize,
}

impl ClassPartition {
    /// `cluster[k]` must be `None` for incorrect traces.
    pub fn new(is_correct: Vec<bool>, cluster: Vec<Option<usize>>) -> Result<Self> {
        if is_correct.len() != cluster.len() {
            return Err(Error::domain("ClassPartition", "length mismatch"));
        }
        if let Some(k) = (0..cluster.len()).find(|&k| cluster[k].is_some() && !is_correct[k]) {
            return Err(Error::domain(
                "ClassPartition",
                format!("incorrect trace {k} carries a cluster label"),
            ));
        }
        let n_clusters = cluster.iter().flatten().map(|c| c + 1).max().unwrap_or(0);
        Ok(Self {
            is_correct,
            cluster,
            n_clusters,
        })
    }

    /// Correct traces first (cluster by cluster), then `n_incorrect` traces.
    pub fn from_cluster_sizes(cluster_sizes: &[usize], n_incorrect: usize) -> Self {
        let mut is_correct = Vec::new();
        let mut cluster = Vec::new();
        for (c, &size) in cluster_sizes.iter().enumerate() {
            for _ in 0..size {
                is_correct.push(true);
                cluster.push(Some(c));
            }
        }
        for _ in 0..n_incorrect {
            is_correct.push(false);
            cluster.push(None);
        }
        Self::new(is_correct, cluster).expect("constructed consistently")
    }

    /// `M` correct traces (indices `0..M`, one cluster) and `N` incorrect.
    pub fn two_class(m: usize, n: usize) -> Self {
        if m == 0 {
            return Self::from_cluster_sizes(&[], n);
        }
        Self::from_cluster_sizes(&[m], n)
    }

    pub fn size(&self) -> usize {
        self.is_correct.len()
    }

    pub fn is_correct(&self, k: usize) -> bool {
        self.is_correct[k]
    }

    pub fn correct_mask(&self) -> &[bool] {
        &self.is_correct
    }

    pub fn cluster_of(&self, k: usize) -> Option<usize> {
        self.cluster[k]
    }

    pub fn cluster_labels(&self) -> &[Option<usize>] {
        &self.cluster
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// `M = |C|`.
    pub fn correct_count(&self) -> usize {
        self.is_correct.iter().filter(|&&c| c).count()
    }

    /// `N = |I|`.
    pub fn incorrect_count(&self) -> usize {
        self.size() - self.correct_count()
    }

    pub fn correct_indices(&self) -> Vec<usize> {
        (0..self.size()).filter(|&k| self.is_correct[k]).collect()
    }

    pub fn incorrect_indices(&self) -> Vec<usize> {
        (0..self.size()).filter(|&k| !self.is_correct[k]).collect()
    }

    /// Correct mass `ρ(p)`.
    pub fn rho(&self, p: &[f64]) -> f64 {
        p.iter().zip(&self.is_correct).filter(|(_, &c)| c).map(|(x, _)| x).sum()
    }

    /// `S₂(p) = Σ_C p_c²`.
    pub fn s2(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.is_correct)
            .filter(|(_, &c)| c)
            .map(|(x, _)| x * x)
            .sum()
    }

    /// Lump index per trace: clusters `0..n_clusters`, then one lump per
    /// unclustered correct trace, then a single lump holding all incorrect
    /// traces.
    pub fn lump_labels(&self) -> Vec<usize> {
        let mut next = self.n_clusters;
        let mut labels = vec![0; self.size()];
        for k in 0..self.size() {
            if let Some(c) = self.cluster[k] {
                labels[k] = c;
            } else if self.is_correct[k] {
                labels[k] = next;
                next += 1;
            }
        }
        for k in 0..self.size() {
            if !self.is_correct[k] {
                labels[k] = next;
            }
        }
        labels
    }
}

/// GRPO group size.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrpoSpec {
    pub group_size: usize,
}

/// Largest group size supported by the exact binomial sum.
pub const MAX_GROUP_SIZE: usize = 1024;

impl GrpoSpec {
    pub fn new(group_size: usize) -> Result<Self> {
        if !(2..=MAX_GROUP_SIZE).contains(&group_size) {
            return Err(Error::domain(
                "GrpoSpec",
                format!("group size {group_size} outside [2, {MAX_GROUP_SIZE}]"),
            ));
        }
        Ok(Self { group_size })
    }

    /// `sup_ρ h_G = √(G−1)`.
    pub fn h_star(&self) -> f64 {
        ((self.group_size - 1) as f64).sqrt()
    }

    /// `D_G = sup |h_G'|` estimated by central differences on a `10⁴`-point
    /// grid over `[0, 1]`.
    pub fn d_g(&self) -> f64 {
        const GRID: usize = 10_000;
        let step = 1.0 / GRID as f64;
        let values: Vec<f64> = (0..=GRID).map(|k| h_g_unchecked(k as f64 * step, self.group_size)).collect();
        let mut sup: f64 = 0.0;
        for k in 0..=GRID {
            let d = if k == 0 {
                (values[1] - values[0]) / step
            } else if k == GRID {
                (values[GRID] - values[GRID - 1]) / step
            } else {
                (values[k + 1] - values[k - 1]) / (2.0 * step)
            };
            sup = sup.max(d.abs());
        }
        sup
    }
}

/// `f_G(t) = √((G−t)/t)`.
pub fn f_g(t: f64, g: usize) -> f64 {
    ((g as f64 - t) / t).max(0.0).sqrt()
}

fn binomial_pmf(n: usize, rho: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n + 1];
    if rho <= 0.5 {
        let q = 1.0 - rho;
        pmf[0] = q.powi(n as i32);
        for k in 0..n {
            pmf[k + 1] = if rho == 0.0 {
                0.0
            } else {
                pmf[k] * (n - k) as f64 / (k + 1) as f64 * rho / q
            };
        }
    } else {
        let q = 1.0 - rho;
        pmf[n] = rho.powi(n as i32);
        for k in (1..=n).rev() {
            pmf[k - 1] = if q == 0.0 {
                0.0
            } else {
                pmf[k] * k as f64 / (n - k + 1) as f64 * q / rho
            };
        }
    }
    pmf
}

fn h_g_unchecked(rho: f64, g: usize) -> f64 {
    let n = g - 1;
    let pmf = binomial_pmf(n, rho);
    if rho <= 0.5 {
        let c1: f64 = pmf.iter().enumerate().map(|(k, w)| w * f_g(1.0 + k as f64, g)).sum();
        c1 / (1.0 - rho)
    } else {
        let s: f64 = pmf
            .iter()
            .enumerate()
            .map(|(k, w)| w * (k as f64 / (g - k) as f64).sqrt())
            .sum();
        s / rho
    }
}

/// GRPO characteristic `h_G(ρ)`.
pub fn grpo_characteristic(rho: f64, spec: GrpoSpec) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(
            "grpo_characteristic",
            format!("ρ = {rho} outside [0, 1]"),
        ));
    }
    Ok(h_g_unchecked(rho, spec.group_size))
}

/// `c₁(ρ) = E[f_G(1+S)] = (1−ρ) h_G(ρ)`.
pub fn grpo_c1(rho: f64, spec: GrpoSpec) -> Result<f64> {
    Ok((1.0 - rho) * grpo_characteristic(rho, spec)?)
}

/// DPO preference parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DpoSpec {
    pub beta: f64,
    pub ell0: f64,
    /// `s_i ∈ {+1, −1}`.
    pub signs: Vec<f64>,
}

impl DpoSpec {
    pub fn new(beta: f64, ell0: f64, signs: Vec<f64>) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain("DpoSpec", format!("β = {beta} must be positive")));
        }
        if !ell0.is_finite() {
            return Err(Error::domain("DpoSpec", "ℓ₀ must be finite"));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::domain("DpoSpec", "signs must be ±1"));
        }
        Ok(Self { beta, ell0, signs })
    }

    /// Signs `+1` on correct, `−1` on incorrect traces.
    pub fn from_partition(beta: f64, ell0: f64, partition: &ClassPartition) -> Result<Self> {
        let signs = partition
            .correct_mask()
            .iter()
            .map(|&c| if c { 1.0 } else { -1.0 })
            .collect();
        Self::new(beta, ell0, signs)
    }

    /// `g_β(ℓ) = 1 − σ(β(ℓ−ℓ₀))`, evaluated stably.
    pub fn g(&self, ell: f64) -> f64 {
        sigmoid(-self.beta * (ell - self.ell0))
    }

    /// `g_β'(ℓ) = −(β/4) sech²(β(ℓ−ℓ₀)/2)`.
    pub fn g_prime(&self, ell: f64) -> f64 {
        let s = sigmoid(self.beta * (ell - self.ell0));
        -self.beta * s * (1.0 - s)
    }

    /// `M_{γ,∞} = g_β(log δ⋆)`.
    pub fn m_gamma_inf(&self, delta: f64) -> f64 {
        self.g(delta.ln())
    }

    /// `L_f = β/(4δ⋆)`.
    pub fn l_f(&self, delta: f64) -> f64 {
        self.beta / (4.0 * delta)
    }

    /// Open-domain contraction threshold `c_open = sup_{ℓ ≤ 0} (−g')`.
    pub fn c_open(&self) -> f64 {
        if self.ell0 <= 0.0 {
            self.beta / 4.0
        } else {
            let c = (self.beta * self.ell0 / 2.0).cosh();
            self.beta / 4.0 / (c * c)
        }
    }

    /// `c_max = sup (−g')` over the trimmed log-domain
    /// `[log δ⋆, log(1−(K−1)δ⋆)]`, by direct maximisation.
    pub fn c_max(&self, delta: f64, size: usize) -> f64 {
        let lo = delta.ln();
        let hi = (1.0 - (size as f64 - 1.0) * delta).max(delta).ln();
        if self.ell0 >= lo && self.ell0 <= hi {
            return self.beta / 4.0;
        }
        // −g' is unimodal with peak at ℓ₀, so the closest endpoint wins.
        let nearest = if self.ell0 < lo { lo } else { hi };
        -self.g_prime(nearest)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Objective plus kernel for the diversity-regularised field.
#[derive(Debug, Clone)]
pub struct DcrField {
    pub objective: ObjectiveSpec,
    pub kernel: KernelMatrix,
}

/// Tagged score field.
#[derive(Debug, Clone)]
pub enum ScoreField {
    Star(ClassPartition),
    Grpo { partition: ClassPartition, spec: GrpoSpec },
    Dpo(DpoSpec),
    Dcr(Box<DcrField>),
    StarEmpirical(ClassPartition),
    GrpoIndicator(ClassPartition),
    DpoNegLog(ClassPartition),
}

impl ScoreField {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreField::Star(_) => "star",
            ScoreField::Grpo { .. } => "grpo",
            ScoreField::Dpo(_) => "dpo",
            ScoreField::Dcr(_) => "dcr",
            ScoreField::StarEmpirical(_) => "star_empirical",
            ScoreField::GrpoIndicator(_) => "grpo_indicator",
            ScoreField::DpoNegLog(_) => "dpo_neglog",
        }
    }

    pub fn size(&self) -> usize {
        match self {
            ScoreField::Star(p)
            | ScoreField::Grpo { partition: p, .. }
            | ScoreField::StarEmpirical(p)
            | ScoreField::GrpoIndicator(p)
            | ScoreField::DpoNegLog(p) => p.size(),
            ScoreField::Dpo(s) => s.signs.len(),
            ScoreField::Dcr(d) => d.objective.size(),
        }
    }

    /// Flow entropy weight implied by the field itself (the barrier strength
    /// `A` for the DCR field), if any.
    pub fn intrinsic_entropy_weight(&self) -> Option<f64> {
        match self {
            ScoreField::Dcr(d) => Some(d.objective.barrier_strength()),
            _ => None,
        }
    }

    /// Evaluates `φ(p)` at an interior policy.
    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScoreField::Star(part) => star_score(p, part),
            ScoreField::Grpo { partition, spec } => grpo_score(p, partition, *spec),
            ScoreField::Dpo(spec) => dpo_score(p, spec),
            _ => Ok(self.eval_batch(p)),
        }
    }

    /// Evaluates `φ` at empirical frequencies, which may contain zeros.
    /// Degenerate batches fall back to the conventions used by the
    /// experiments: no correct sample ⇒ zero STaR field, logs clipped at
    /// `1e-12`.
    pub fn eval_batch(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.eval_batch_into(p, &mut out);
        out
    }

    pub fn eval_batch_into(&self, p: &[f64], out: &mut [f64]) {
        match self {
            ScoreField::Star(part) => {
                let rho = part.rho(p);
                if rho <= 0.0 {
                    out.iter_mut().for_each(|x| *x = 0.0);
                    return;
                }
                let s2 = part.s2(p);
                for k in 0..p.len() {
                    out[k] = if part.is_correct(k) { (p[k] - s2) / rho } else { -s2 / rho };
                }
            }
            ScoreField::Grpo { partition, spec } => {
                let rho = partition.rho(p).clamp(0.0, 1.0);
                let m = partition.correct_count();
                if m == 0 || m == partition.size() {
                    out.iter_mut().for_each(|x| *x = 0.0);
                    return;
                }
                let h = h_g_unchecked(rho, spec.group_size);
                for k in 0..p.len() {
                    out[k] = if partition.is_correct(k) { (1.0 - rho) * h } else { -rho * h };
                }
            }
            ScoreField::Dpo(spec) => {
                let mut mean = 0.0;
                for k in 0..p.len() {
                    out[k] = spec.signs[k] * spec.g(p[k].max(LOG_CLIP).ln());
                    mean += p[k] * out[k];
                }
                out.iter_mut().for_each(|x| *x -= mean);
            }
            ScoreField::Dcr(d) => {
                let spec = &d.objective;
                d.kernel.matvec_into(p, out);
                let two_lb = 2.0 * spec.lambda * spec.beta;
                for k in 0..p.len() {
                    out[k] = spec.utility[k] - two_lb * out[k];
                    if let (Some(base), true) = (&spec.base_policy, spec.beta_kl > 0.0) {
                        out[k] += spec.beta_kl * base[k].ln();
                    }
                }
            }
            ScoreField::StarEmpirical(part) => {
                let rho = part.rho(p);
                for k in 0..p.len() {
                    out[k] = if part.is_correct(k) && rho > 0.0 { p[k] / rho } else { 0.0 };
                }
            }
            ScoreField::GrpoIndicator(part) => {
                for k in 0..p.len() {
                    out[k] = if part.is_correct(k) { 1.0 } else { 0.0 };
                }
            }
            ScoreField::DpoNegLog(part) => {
                for k in 0..p.len() {
                    out[k] = if part.is_correct(k) { -p[k].max(LOG_CLIP).ln() } else { 0.0 };
                }
            }
        }
    }
}

/// STaR score; requires `M ≥ 1` and `ρ > 0`.
pub fn star_score(p: &[f64], partition: &ClassPartition) -> Result<Vec<f64>> {
    if partition.correct_count() == 0 {
        return Err(Error::domain("star_score", "no correct traces (M = 0)"));
    }
    if p.len() != partition.size() {
        return Err(Error::domain("star_score", "length mismatch"));
    }
    let rho = partition.rho(p);
    if !(rho > 0.0) {
        return Err(Error::domain("star_score", "correct mass ρ is zero"));
    }
    Ok(ScoreField::Star(partition.clone()).eval_batch(p))
}

/// Centred GRPO score; identically zero when either class is empty.
pub fn grpo_score(p: &[f64], partition: &ClassPartition, spec: GrpoSpec) -> Result<Vec<f64>> {
    if p.len() != partition.size() {
        return Err(Error::domain("grpo_score", "length mismatch"));
    }
    Ok(ScoreField::Grpo {
        partition: partition.clone(),
        spec,
    }
    .eval_batch(p))
}

/// Centred DPO score; rejects zero coordinates.
pub fn dpo_score(p: &[f64], spec: &DpoSpec) -> Result<Vec<f64>> {
    if p.len() != spec.signs.len() {
        return Err(Error::domain("dpo_score", "length mismatch"));
    }
    if let Some(i) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::domain("dpo_score", format!("coordinate {i} is zero")));
    }
    let mut out = vec![0.0; p.len()];
    let mut mean = 0.0;
    for k in 0..p.len() {
        out[k] = spec.signs[k] * spec.g(p[k].ln());
        mean += p[k] * out[k];
    }
    out.iter_mut().for_each(|x| *x -= mean);
    Ok(out)
}

/// Closed-form size and Lipschitz envelopes of a field on a trimmed simplex.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScoreEnvelope {
    /// `sup ‖φ‖_∞`.
    pub m_inf: f64,
    /// `sup ‖φ‖₂`.
    pub m_2: f64,
    /// Lipschitz modulus of `φ` in `ℓ₂`.
    pub l_phi: f64,
}

/// STaR Jacobian bounds `(‖J‖_∞, ‖J‖₁)` on the trimmed simplex.
pub fn star_jacobian_bounds(domain: SimplexSpec, m: usize) -> (f64, f64) {
    let d = domain.floor;
    let (mf, k) = (m as f64, domain.size as f64);
    (2.0 / d + mf + 2.0, 2.0 / (mf * d) + 3.0 * k)
}

/// Per-field envelopes.
pub fn score_envelopes(field: &ScoreField, domain: SimplexSpec) -> Result<ScoreEnvelope> {
    if field.size() != domain.size {
        return Err(Error::domain("score_envelopes", "field and domain sizes differ"));
    }
    let d = domain.floor;
    let k = domain.size as f64;
    Ok(match field {
        ScoreField::Star(part) => {
            let m = part.correct_count();
            if m == 0 {
                return Err(Error::domain("score_envelopes", "STaR requires M ≥ 1"));
            }
            let (ji, j1) = star_jacobian_bounds(domain, m);
            let lo = m as f64 * d;
            let hi = 1.0 - part.incorrect_count() as f64 * d;
            let q = |r: f64| 1.0 - 2.0 * r + k * r * r;
            let m2 = q(lo).max(q(hi)).min(k - 1.0).max(0.0).sqrt();
            ScoreEnvelope {
                m_inf: 1.0,
                m_2: m2,
                l_phi: (ji * j1).sqrt(),
            }
        }
        ScoreField::Grpo { partition, spec } => {
            let (kc, ki) = (partition.correct_count() as f64, partition.incorrect_count() as f64);
            let hs = spec.h_star();
            let mut m2 = hs * kc.max(ki).sqrt();
            if ki >= 1.0 {
                m2 = m2.min(hs / (ki * d) * kc.max(ki).sqrt());
            }
            ScoreEnvelope {
                m_inf: hs,
                m_2: m2,
                l_phi: (kc * ki).sqrt() * (hs + spec.d_g()),
            }
        }
        ScoreField::Dpo(spec) => {
            let mg = spec.m_gamma_inf(d);
            ScoreEnvelope {
                m_inf: 2.0 * mg,
                m_2: 2.0 * mg * k.sqrt(),
                l_phi: k * mg + (k.sqrt() + 1.0) * spec.l_f(d),
            }
        }
        ScoreField::Dcr(dcr) => {
            let o = &dcr.objective;
            let lb2 = 2.0 * o.lambda * o.beta;
            let (kl_inf, kl_2) = match (&o.base_policy, o.beta_kl > 0.0) {
                (Some(b), true) => {
                    let logs: Vec<f64> = b.iter().map(|x| x.ln().abs()).collect();
                    (
                        o.beta_kl * logs.iter().cloned().fold(0.0, f64::max),
                        o.beta_kl * logs.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    )
                }
                _ => (0.0, 0.0),
            };
            let u2 = o.utility.iter().map(|u| u * u).sum::<f64>().sqrt();
            ScoreEnvelope {
                m_inf: o.utility_max() + lb2 * dcr.kernel.norm_inf() + kl_inf,
                m_2: u2 + lb2 * dcr.kernel.norm_2() + kl_2,
                l_phi: lb2 * dcr.kernel.norm_2(),
            }
        }
        ScoreField::StarEmpirical(part) => {
            let rho_min = (part.correct_count() as f64 * d).max(f64::MIN_POSITIVE);
            ScoreEnvelope {
                m_inf: 1.0,
                m_2: 1.0,
                l_phi: 2.0 / rho_min,
            }
        }
        ScoreField::GrpoIndicator(part) => ScoreEnvelope {
            m_inf: 1.0,
            m_2: (part.correct_count() as f64).sqrt(),
            l_phi: 0.0,
        },
        ScoreField::DpoNegLog(part) => ScoreEnvelope {
            m_inf: (1.0 / d).ln(),
            m_2: (part.correct_count() as f64).sqrt() * (1.0 / d).ln(),
            l_phi: 1.0 / d,
        },
    })
}
