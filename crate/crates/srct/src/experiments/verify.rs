//! The invariant suite behind the `verify` command.
//!
//! Each check is a fast, self-contained version of an identity or invariant
//! that the library guarantees; an artifact directory can additionally be
//! re-parsed and validated against the metric-row invariants.

use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;

use crate::dynamics::{log_ratio_envelope_check, sample_noise, simulate, stream_id, stream_rng, FlowConfig};
use crate::error::Result;
use crate::kernels::KernelMatrix;
use crate::metrics::{lump_drift_check, read_metrics_csv};
use crate::objective::{fitness, objective_value, ObjectiveSpec};
use crate::scores::{DpoSpec, GrpoSpec, ScoreField};
use crate::simplex::face_gap;

use super::config::{Config, Method};
use super::io::{Manifest, MANIFEST};
use super::study_a::{method_field, method_flow, run_one, Track};
use super::universe::TraceUniverse;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// All outcomes of a verification run.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn push_result(&mut self, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((ok, d)) => self.push(name, ok, d),
            Err(e) => self.push(name, false, format!("error: {e}")),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:<28} {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        s
    }
}

/// Uniform random point of the open simplex (flat Dirichlet).
pub fn random_interior<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..size).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    let t: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= t);
    w
}

fn canonical_fields(cfg: &Config, universe: &TraceUniverse) -> Result<Vec<ScoreField>> {
    let part = universe.partition.clone();
    Ok(vec![
        ScoreField::Star(part.clone()),
        ScoreField::Grpo {
            partition: part.clone(),
            spec: GrpoSpec::new(cfg.fields.grpo_group_size)?,
        },
        ScoreField::Dpo(DpoSpec::from_partition(cfg.fields.dpo_beta, cfg.fields.dpo_ell0, &part)?),
    ])
}

fn check_centering(cfg: &Config, universe: &TraceUniverse, points: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(0, stream_id("verify/centering"));
    let mut worst: f64 = 0.0;
    for field in canonical_fields(cfg, universe)? {
        for _ in 0..points {
            let p = random_interior(universe.size(), &mut rng);
            let phi = field.eval(&p)?;
            let c: f64 = p.iter().zip(&phi).map(|(a, b)| a * b).sum();
            worst = worst.max(c.abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |Σ p φ| = {worst:.3e}")))
}

fn check_fitness_gradient(universe: &TraceUniverse, points: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(0, stream_id("verify/gradient"));
    let obj = ObjectiveSpec::new(universe.rewards.clone(), 1.0, 0.05, 0.25, 1e-4)?;
    let k = universe.effective_kernel();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let p = random_interior(universe.size(), &mut rng);
        let f = fitness(&p, &obj, &k)?;
        // Tangent direction e_i − e_j scaled to stay inside the simplex.
        let i = rng.random_range(0..p.len());
        let j = (i + 1 + rng.random_range(0..p.len() - 1)) % p.len();
        let h = 1e-6 * p[i].min(p[j]);
        let mut a = p.clone();
        let mut b = p.clone();
        a[i] += h;
        a[j] -= h;
        b[i] -= h;
        b[j] += h;
        let fd = (objective_value(&a, &obj, &k)? - objective_value(&b, &obj, &k)?) / (2.0 * h);
        let exact = f[i] - f[j];
        worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
    }
    Ok((worst <= 1e-5, format!("max relative error = {worst:.3e}")))
}

fn check_face_gap() -> Result<(bool, String)> {
    // On the face p_1 = δ of the 3-simplex the remaining mass 1 − δ is split
    // as (x, 1 − δ − x); minimize ⟨log p⟩ − log δ over a fine grid.
    let mut worst: f64 = 0.0;
    for &delta in &[0.01, 0.05, 0.2, 0.3] {
        let rest = 1.0 - delta;
        let n = 200_000;
        let mut best = f64::INFINITY;
        for k in 1..n {
            let x = rest * k as f64 / n as f64;
            let y = rest - x;
            let v = delta * delta.ln() + x * x.ln() + y * y.ln() - delta.ln();
            best = best.min(v);
        }
        worst = worst.max((best - face_gap(3, delta)?).abs());
    }
    Ok((worst <= 1e-6, format!("max |closed form − grid| = {worst:.3e}")))
}

fn check_lumps(cfg: &Config, universe: &TraceUniverse, points: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(0, stream_id("verify/lumps"));
    let labels = universe.partition.lump_labels();
    let mut worst: f64 = 0.0;
    for field in canonical_fields(cfg, universe)? {
        for _ in 0..points {
            let p = random_interior(universe.size(), &mut rng);
            worst = worst.max(lump_drift_check(&p, &field, 1e-3, &labels)?);
        }
    }
    Ok((worst <= 1e-10, format!("max lump residual = {worst:.3e}")))
}

fn check_noise(draws: usize) -> (bool, String) {
    let mut rng = stream_rng(0, stream_id("verify/noise"));
    let p: Vec<f64> = (1..=12).map(|k| k as f64 / 78.0).collect();
    let b = 128u64;
    let mean = (0..draws)
        .map(|_| sample_noise(&p, b, &mut rng).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / draws as f64;
    let expected = (1.0 - p.iter().map(|x| x * x).sum::<f64>()) / b as f64;
    let rel = (mean - expected).abs() / expected;
    (rel <= 0.05, format!("E‖ξ‖² relative error = {rel:.3e}"))
}

fn check_runs(cfg: &Config, universe: &TraceUniverse, steps: usize) -> Result<(bool, String)> {
    let mut short = cfg.clone();
    short.flow.steps = steps;
    short.flow.record_every = 1;
    let s = universe.size();
    let mut n_rows = 0;
    for m in Method::ALL {
        for track in [Track::Deterministic, Track::Batch(16)] {
            let seed = cfg.seeds[0];
            let a = run_one(&short, universe, m, track, seed)?;
            let b = run_one(&short, universe, m, track, seed)?;
            if a.policies != b.policies {
                return Ok((false, format!("{} {track} is not reproducible", m.name())));
            }
            for r in &a.rows {
                if let Err(e) = r.check(s, 1e-9) {
                    return Ok((false, format!("{} {track} step {}: {e}", m.name(), r.step)));
                }
                let total: f64 = r.cluster_masses.iter().sum::<f64>() + r.incorrect_mass;
                if (total - 1.0).abs() > 1e-12 {
                    return Ok((false, format!("mass identity off by {:.3e}", total - 1.0)));
                }
            }
            n_rows += a.rows.len();
        }
    }
    Ok((true, format!("{n_rows} rows valid and reproducible")))
}

fn check_envelopes(cfg: &Config, universe: &TraceUniverse, steps: usize) -> Result<(bool, String)> {
    let mut violations = 0;
    let mut checked = 0;
    for m in Method::ALL {
        let field = method_field(m, universe);
        let flow = FlowConfig {
            steps,
            record_every: 1,
            ..method_flow(cfg, m)
        };
        let init = super::initial_policy(universe.size(), cfg.seeds[0], cfg.study_a.init_logit_sd);
        let traj = simulate(&field, &flow, None, &init)?;
        let rep = log_ratio_envelope_check(&traj, &field, flow.step_size, flow.entropy_weight);
        violations += rep.violations;
        checked += rep.checked;
    }
    Ok((violations == 0, format!("{violations} violations in {checked} checks")))
}

/// Validates an artifact directory: every metric table listed in its
/// manifest must re-parse and satisfy the row invariants.
pub fn check_artifacts(dir: &Path) -> Result<(bool, String)> {
    let manifest = Manifest::read(&dir.join(MANIFEST))?;
    let size = manifest.config.universe.cluster_sizes.iter().sum::<usize>() + manifest.config.universe.n_incorrect;
    let mut tables = 0;
    let mut rows = 0;
    for f in &manifest.files {
        let path = dir.join(f);
        if !path.exists() {
            return Ok((false, format!("listed file {f} is missing")));
        }
        if !f.ends_with(".csv") {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let header = text.lines().next().unwrap_or("");
        if !header.split(',').any(|h| h == "Fix") {
            continue;
        }
        let table = read_metrics_csv(text.as_bytes())?;
        for r in &table.rows {
            if let Err(e) = r.check(size, 1e-9) {
                return Ok((false, format!("{f} step {}: {e}", r.step)));
            }
        }
        tables += 1;
        rows += table.rows.len();
    }
    if manifest.study == "b" {
        let phase = dir.join("phase.csv");
        if phase.exists() {
            let n = csv::Reader::from_path(&phase)?.records().count();
            let b = &manifest.config.study_b;
            let expected = b.alphas.len() * b.betas.len() * manifest.config.seeds.len();
            if n != expected {
                return Ok((false, format!("phase.csv has {n} rows, expected {expected}")));
            }
        }
    }
    Ok((true, format!("{tables} metric tables, {rows} rows valid")))
}

/// Runs the suite; `artifacts` optionally names a directory to validate.
pub fn run_verify(cfg: &Config, artifacts: Option<&Path>) -> Result<VerifyReport> {
    let universe = TraceUniverse::from_config(&cfg.universe)?;
    let mut r = VerifyReport::default();
    r.push_result("centering", check_centering(cfg, &universe, 1000));
    r.push_result("fitness_gradient", check_fitness_gradient(&universe, 50));
    r.push_result("face_gap", check_face_gap());
    r.push_result("lump_identity", check_lumps(cfg, &universe, 100));
    let (ok, d) = check_noise(20_000);
    r.push("multinomial_noise", ok, d);
    r.push_result("metric_rows", check_runs(cfg, &universe, 300));
    r.push_result("log_ratio_envelopes", check_envelopes(cfg, &universe, 500));
    r.push_result(
        "kernel_psd",
        Ok({
            let k: KernelMatrix = universe.effective_kernel();
            let ev = k.min_eigenvalue();
            (ev >= -1e-10, format!("min eigenvalue of K_eff = {ev:.3e}"))
        }),
    );
    if let Some(dir) = artifacts {
        r.push_result("artifacts", check_artifacts(dir));
    }
    Ok(r)
}
