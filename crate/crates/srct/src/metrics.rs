//! Per-step metrics, lump aggregation, divergences, alignment diagnostics and
//! moving-average event detection.
//!
//! # Cluster Gini
//!
//! The cluster Gini is the mean-absolute-difference Gini coefficient of the
//! cluster masses renormalized to their own total,
//! `G = Σ_a Σ_b |x_a − x_b| / (2 n² x̄)`. Two conventions make it usable by
//! the event rules: a state with exactly one nonzero cluster has `G = 1`
//! (maximal concentration rather than the raw `(n−1)/n`), and a state with
//! no cluster mass has `G = 0`.
//!
//! # Events
//!
//! Conditions are evaluated on trailing moving averages over the last
//! `window` recorded rows (fewer at the start of a series). An event fires
//! at the first recorded step at or after `floor` where its smoothed
//! condition holds, provided the smoothed condition failed at some earlier
//! recorded step; a condition that holds from the first row on describes the
//! initial state, not a transition, and never fires.

use std::io::{Read, Write};

use crate::dynamics::srct_drift;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::scores::{grpo_characteristic, ClassPartition, ScoreField};
use crate::simplex::{entropy, xlogx};

/// Cluster-column labels `m_A, m_B, …`.
pub fn cluster_column(k: usize) -> String {
    let mut s = String::new();
    let mut k = k;
    loop {
        s.insert(0, (b'A' + (k % 26) as u8) as char);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    format!("m_{s}")
}

/// Inputs needed beyond the policy to populate a metric row.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub partition: ClassPartition,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Gated kernel used by the objective proxy and the kernel energy.
    pub k_eff: KernelMatrix,
    /// Kernel applied by the flow; the safety margin is measured with it.
    pub k_flow: KernelMatrix,
}

impl MetricContext {
    /// Context for flows without a kernel term (`J_p` reduces to the correct
    /// mass and the safety margin to 1).
    pub fn plain(partition: ClassPartition) -> Self {
        let s = partition.size();
        Self {
            partition,
            lambda: 0.0,
            alpha: 0.0,
            beta: 0.0,
            k_eff: KernelMatrix::zeros(s),
            k_flow: KernelMatrix::zeros(s),
        }
    }
}

/// Metrics of one recorded policy.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub entropy: f64,
    pub fixation: f64,
    pub max_p: f64,
    pub cluster_masses: Vec<f64>,
    pub gini: f64,
    pub incorrect_mass: f64,
    pub objective_proxy: f64,
    pub safety_margin: f64,
}

impl MetricRow {
    pub fn max_cluster(&self) -> f64 {
        self.cluster_masses.iter().cloned().fold(0.0, f64::max)
    }

    /// Checks the row invariants; `size` is the number of traces.
    pub fn check(&self, size: usize, tol: f64) -> std::result::Result<(), String> {
        let s = size as f64;
        if !(self.fixation >= 1.0 / s - tol && self.fixation <= 1.0 + tol) {
            return Err(format!("Fix = {} outside [1/S, 1]", self.fixation));
        }
        if !(self.gini >= -tol && self.gini <= 1.0 + tol) {
            return Err(format!("gini = {} outside [0, 1]", self.gini));
        }
        let total: f64 = self.cluster_masses.iter().sum();
        if total > 1.0 + tol {
            return Err(format!("cluster masses sum to {total} > 1"));
        }
        if !(self.entropy >= -tol && self.entropy <= s.ln() + tol) {
            return Err(format!("H = {} outside [0, log S]", self.entropy));
        }
        Ok(())
    }
}

/// Cluster masses of `p` (one entry per cluster).
pub fn cluster_masses(p: &[f64], partition: &ClassPartition) -> Vec<f64> {
    let mut m = vec![0.0; partition.n_clusters()];
    for (k, &x) in p.iter().enumerate() {
        if let Some(c) = partition.cluster_of(k) {
            m[c] += x;
        }
    }
    m
}

/// Cluster Gini (see the module documentation for conventions).
pub fn gini(masses: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    let nonzero = masses.iter().filter(|&&x| x > 0.0).count();
    if total <= 0.0 || masses.is_empty() {
        return 0.0;
    }
    if nonzero == 1 {
        return 1.0;
    }
    let n = masses.len() as f64;
    let mut acc = 0.0;
    for a in masses {
        for b in masses {
            acc += (a - b).abs();
        }
    }
    acc / total / (2.0 * n * n * (1.0 / n))
}

/// Safety margin `min_{c∈C} (1 − 2λβ (K p)_c)`.
pub fn safety_margin(p: &[f64], ctx: &MetricContext) -> f64 {
    let kp = ctx.k_flow.matvec(p);
    let two_lb = 2.0 * ctx.lambda * ctx.beta;
    (0..p.len())
        .filter(|&k| ctx.partition.is_correct(k))
        .map(|k| 1.0 - two_lb * kp[k])
        .fold(f64::INFINITY, f64::min)
}

/// Kernel energy `pᵀ K_eff p`.
pub fn kernel_energy(p: &[f64], ctx: &MetricContext) -> f64 {
    ctx.k_eff.quad(p)
}

/// Number of clusters holding at least `threshold` mass.
pub fn coverage(masses: &[f64], threshold: f64) -> usize {
    masses.iter().filter(|&&m| m >= threshold).count()
}

/// Metric row of `p`.
pub fn snapshot(step: usize, p: &[f64], ctx: &MetricContext) -> MetricRow {
    let h = entropy(p);
    let masses = cluster_masses(p, &ctx.partition);
    let incorrect: f64 = p
        .iter()
        .enumerate()
        .filter(|(k, _)| !ctx.partition.is_correct(*k))
        .map(|(_, x)| x)
        .sum();
    let correct: f64 = p
        .iter()
        .enumerate()
        .filter(|(k, _)| ctx.partition.is_correct(*k))
        .map(|(_, x)| x)
        .sum();
    let proxy = correct + ctx.lambda * ctx.alpha * h - ctx.lambda * ctx.beta * ctx.k_eff.quad(p);
    MetricRow {
        step,
        entropy: h,
        fixation: p.iter().map(|x| x * x).sum(),
        max_p: p.iter().cloned().fold(0.0, f64::max),
        gini: gini(&masses),
        cluster_masses: masses,
        incorrect_mass: incorrect,
        objective_proxy: proxy,
        safety_margin: safety_margin(p, ctx),
    }
}

/// Lump masses `q_k` under [`ClassPartition::lump_labels`].
pub fn lump_masses(p: &[f64], partition: &ClassPartition) -> Vec<f64> {
    let labels = partition.lump_labels();
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut q = vec![0.0; n];
    for (k, &l) in labels.iter().enumerate() {
        q[l] += p[k];
    }
    q
}

/// Closed-form lump derivatives `q̇_k` for a field with entropy weight `ε`.
///
/// Every lump obeys `q̇_k = Σ_{π∈C_k} p_π (φ_π − φ̄) − ε (m_k − q_k ⟨log p⟩)`
/// with `m_k = Σ_{π∈C_k} p_π log p_π`; the selection part is evaluated in the
/// per-field reduced form (STaR: `(S²_{k,C} − q_k S⁽²⁾)/ρ`; GRPO:
/// `h_G(ρ) q_k (corr_k − ρ)`; DPO, sign-pure lumps:
/// `s_k Σ p_π g(log p_π) − q_k γ̄`).
pub fn lump_drift_analytic(p: &[f64], field: &ScoreField, eps: f64, labels: &[usize]) -> Result<Vec<f64>> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut q = vec![0.0; n];
    let mut m = vec![0.0; n];
    let hbar: f64 = -entropy(p);
    for (k, &l) in labels.iter().enumerate() {
        q[l] += p[k];
        if p[k] > 0.0 {
            m[l] += p[k] * p[k].ln();
        }
    }
    let mut sel = vec![0.0; n];
    match field {
        ScoreField::Star(part) | ScoreField::StarEmpirical(part) => {
            let rho = part.rho(p);
            let s2 = part.s2(p);
            let mut s2k = vec![0.0; n];
            for (k, &l) in labels.iter().enumerate() {
                if part.is_correct(k) {
                    s2k[l] += p[k] * p[k];
                }
            }
            for l in 0..n {
                sel[l] = (s2k[l] - q[l] * s2) / rho;
            }
        }
        ScoreField::Grpo { partition, spec } => {
            let rho = partition.rho(p);
            let mcount = partition.correct_count();
            let h = if mcount == 0 || mcount == partition.size() {
                0.0
            } else {
                grpo_characteristic(rho, *spec)?
            };
            let mut corr = vec![0.0; n];
            for (k, &l) in labels.iter().enumerate() {
                if partition.is_correct(k) {
                    corr[l] += p[k];
                }
            }
            for l in 0..n {
                sel[l] = h * (corr[l] - rho * q[l]);
            }
        }
        ScoreField::GrpoIndicator(part) => {
            let rho = part.rho(p);
            let mut corr = vec![0.0; n];
            for (k, &l) in labels.iter().enumerate() {
                if part.is_correct(k) {
                    corr[l] += p[k];
                }
            }
            for l in 0..n {
                sel[l] = corr[l] - rho * q[l];
            }
        }
        ScoreField::Dpo(spec) => {
            let mut sign: Vec<Option<f64>> = vec![None; n];
            let mut gsum = vec![0.0; n];
            let mut gbar = 0.0;
            for (k, &l) in labels.iter().enumerate() {
                let s = spec.signs[k];
                match sign[l] {
                    None => sign[l] = Some(s),
                    Some(t) if t != s => {
                        return Err(Error::refused(
                            "lump_drift_analytic",
                            format!("lump {l} mixes preference signs"),
                        ))
                    }
                    _ => {}
                }
                let g = spec.g(p[k].ln());
                gsum[l] += p[k] * g;
                gbar += p[k] * s * g;
            }
            for l in 0..n {
                sel[l] = sign[l].unwrap_or(1.0) * gsum[l] - q[l] * gbar;
            }
        }
        _ => {
            let phi = field.eval(p)?;
            let phibar: f64 = p.iter().zip(&phi).map(|(a, b)| a * b).sum();
            for (k, &l) in labels.iter().enumerate() {
                sel[l] += p[k] * (phi[k] - phibar);
            }
        }
    }
    Ok((0..n).map(|l| sel[l] - eps * (m[l] - q[l] * hbar)).collect())
}

/// `max_k |q̇_k(analytic) − Σ_{π∈C_k} ṗ_π|`.
pub fn lump_drift_check(p: &[f64], field: &ScoreField, eps: f64, labels: &[usize]) -> Result<f64> {
    let analytic = lump_drift_analytic(p, field, eps, labels)?;
    let phi = field.eval(p)?;
    let f = srct_drift(p, &phi, eps);
    let mut agg = vec![0.0; analytic.len()];
    for (k, &l) in labels.iter().enumerate() {
        agg[l] += f[k];
    }
    Ok(analytic
        .iter()
        .zip(&agg)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Jensen–Shannon divergence (natural log), in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += 0.5 * (xlogx(a) + xlogx(b)) - xlogx(m);
    }
    acc.max(0.0)
}

/// Generalized Jensen–Shannon divergence of several distributions with equal
/// weights: `H(mean) − mean H`.
pub fn js_divergence_multi(ps: &[Vec<f64>]) -> f64 {
    if ps.is_empty() {
        return 0.0;
    }
    let n = ps.len() as f64;
    let s = ps[0].len();
    let mean: Vec<f64> = (0..s).map(|k| ps.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let mean_h = ps.iter().map(|p| entropy(p)).sum::<f64>() / n;
    (entropy(&mean) - mean_h).max(0.0)
}

/// Agreement between two update directions at base point `p`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Alignment {
    pub cos_euclid: f64,
    pub cos_shah: f64,
    pub sign_agreement: f64,
}

fn cosine(a: &[f64], b: &[f64], w: &dyn Fn(usize) -> f64) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        let wk = w(k);
        ab += a[k] * b[k] * wk;
        aa += a[k] * a[k] * wk;
        bb += b[k] * b[k] * wk;
    }
    if aa == 0.0 || bb == 0.0 {
        return if aa == bb { 1.0 } else { 0.0 };
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Euclidean and Shahshahani cosines of `dp_a`, `dp_b`, and the fraction of
/// trace pairs whose first-order log-ratio increments
/// `Δz_ij = dp_i/p_i − dp_j/p_j` share sign (pairs where both increments
/// vanish count as agreeing).
pub fn alignment(dp_a: &[f64], dp_b: &[f64], p: &[f64]) -> Alignment {
    let cos_euclid = cosine(dp_a, dp_b, &|_| 1.0);
    let cos_shah = cosine(dp_a, dp_b, &|k| 1.0 / p[k]);
    let ua: Vec<f64> = dp_a.iter().zip(p).map(|(d, x)| d / x).collect();
    let ub: Vec<f64> = dp_b.iter().zip(p).map(|(d, x)| d / x).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    const ZERO: f64 = 1e-15;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let za = ua[i] - ua[j];
            let zb = ub[i] - ub[j];
            let both_zero = za.abs() <= ZERO && zb.abs() <= ZERO;
            if both_zero || za * zb > 0.0 {
                agree += 1;
            }
            total += 1;
        }
    }
    Alignment {
        cos_euclid,
        cos_shah,
        sign_agreement: if total == 0 { 1.0 } else { agree as f64 / total as f64 },
    }
}

/// Thresholds for [`detect_events`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    pub window: usize,
    pub floor: usize,
    pub fixation_max_p: f64,
    pub fixation_max_cluster: f64,
    pub homogenization_gini: f64,
    pub homogenization_min_mass: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            window: 50,
            floor: 200,
            fixation_max_p: 0.75,
            fixation_max_cluster: 0.9,
            homogenization_gini: 0.10,
            homogenization_min_mass: 0.15,
        }
    }
}

/// Event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fixation,
    Homogenization,
}

/// A detected event with the smoothed values at the trigger.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub step: usize,
    pub max_p: f64,
    pub max_cluster: f64,
    pub gini: f64,
    pub min_nonzero_cluster: f64,
}

/// Runs both event detectors over a metric series.
pub fn detect_events(rows: &[MetricRow], config: &EventConfig) -> Vec<Event> {
    let nc = rows.first().map_or(0, |r| r.cluster_masses.len());
    let mut sum_max_p = 0.0;
    let mut sum_gini = 0.0;
    let mut sum_masses = vec![0.0; nc];
    let mut armed = [false; 2];
    let mut fired = [false; 2];
    let mut events = Vec::new();
    let w = config.window.max(1);
    for (t, row) in rows.iter().enumerate() {
        sum_max_p += row.max_p;
        sum_gini += row.gini;
        for (a, b) in sum_masses.iter_mut().zip(&row.cluster_masses) {
            *a += b;
        }
        if t >= w {
            let old = &rows[t - w];
            sum_max_p -= old.max_p;
            sum_gini -= old.gini;
            for (a, b) in sum_masses.iter_mut().zip(&old.cluster_masses) {
                *a -= b;
            }
        }
        let n = (t + 1).min(w) as f64;
        let max_p = sum_max_p / n;
        let gini = sum_gini / n;
        let masses: Vec<f64> = sum_masses.iter().map(|m| m / n).collect();
        let max_cluster = masses.iter().cloned().fold(0.0, f64::max);
        let min_nonzero = masses
            .iter()
            .cloned()
            .filter(|&m| m > 0.0)
            .fold(f64::INFINITY, f64::min);
        let conditions = [
            max_p >= config.fixation_max_p && max_cluster >= config.fixation_max_cluster,
            gini <= config.homogenization_gini && min_nonzero >= config.homogenization_min_mass,
        ];
        for (k, &holds) in conditions.iter().enumerate() {
            if fired[k] {
                continue;
            }
            if !holds {
                armed[k] = true;
            } else if armed[k] && row.step >= config.floor {
                fired[k] = true;
                events.push(Event {
                    kind: if k == 0 { EventKind::Fixation } else { EventKind::Homogenization },
                    step: row.step,
                    max_p,
                    max_cluster,
                    gini,
                    min_nonzero_cluster: min_nonzero,
                });
            }
        }
    }
    events
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV header for metric rows.
pub fn metrics_header(size: Option<usize>, n_clusters: usize) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    if let Some(s) = size {
        h.extend((0..s).map(|k| format!("p_{k}")));
    }
    h.extend(["H", "Fix"].iter().map(|s| s.to_string()));
    h.extend((0..n_clusters).map(cluster_column));
    h.extend(["gini", "inc_mass", "J_p", "safety_margin"].iter().map(|s| s.to_string()));
    h
}

/// Writes metric rows (optionally with the policy columns) as CSV.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow], policies: Option<&[Vec<f64>]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let nc = rows.first().map_or(0, |r| r.cluster_masses.len());
    let size = policies.and_then(|p| p.first()).map(|p| p.len());
    w.write_record(metrics_header(size, nc))?;
    for (k, r) in rows.iter().enumerate() {
        let mut rec = vec![r.step.to_string()];
        if let Some(ps) = policies {
            rec.extend(ps[k].iter().map(|&x| fmt_f64(x)));
        }
        rec.push(fmt_f64(r.entropy));
        rec.push(fmt_f64(r.fixation));
        rec.extend(r.cluster_masses.iter().map(|&x| fmt_f64(x)));
        rec.push(fmt_f64(r.gini));
        rec.push(fmt_f64(r.incorrect_mass));
        rec.push(fmt_f64(r.objective_proxy));
        rec.push(fmt_f64(r.safety_margin));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed metric CSV: rows plus the policy columns when present.
#[derive(Debug, Clone, Default)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub policies: Option<Vec<Vec<f64>>>,
}

/// Reads a CSV written by [`write_metrics_csv`]; `max_p` is recovered from
/// the policy columns (NaN when they are absent).
pub fn read_metrics_csv<R: Read>(input: R) -> Result<MetricTable> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("metric CSV is missing column `{name}`")))
    };
    let p_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("p_"))
        .map(|(k, _)| k)
        .collect();
    let m_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("m_"))
        .map(|(k, _)| k)
        .collect();
    let (c_step, c_h, c_fix) = (col("step")?, col("H")?, col("Fix")?);
    let (c_g, c_inc, c_j, c_s) = (col("gini")?, col("inc_mass")?, col("J_p")?, col("safety_margin")?);
    let mut table = MetricTable {
        rows: Vec::new(),
        policies: (!p_cols.is_empty()).then(Vec::new),
    };
    for rec in rd.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("column `{}`: {e}", header[k])))
        };
        let p: Vec<f64> = p_cols.iter().map(|&k| num(k)).collect::<Result<_>>()?;
        let step = rec[c_step]
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("column `step`: {e}")))?;
        table.rows.push(MetricRow {
            step,
            entropy: num(c_h)?,
            fixation: num(c_fix)?,
            max_p: if p.is_empty() { f64::NAN } else { p.iter().cloned().fold(0.0, f64::max) },
            cluster_masses: m_cols.iter().map(|&k| num(k)).collect::<Result<_>>()?,
            gini: num(c_g)?,
            incorrect_mass: num(c_inc)?,
            objective_proxy: num(c_j)?,
            safety_margin: num(c_s)?,
        });
        if let Some(ps) = table.policies.as_mut() {
            ps.push(p);
        }
    }
    Ok(table)
}
