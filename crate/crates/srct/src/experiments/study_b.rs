//! Study B: the diversity-regularised objective on the trace universe.
//!
//! The flow fitness is `φ_i = r(i) − 2λβ(K p̂)_i` with entropy weight
//! `ε = ε_barrier + λα`. A grid over `(α, β)` is run for every seed; the focal
//! cell is additionally run with two ablations:
//!
//! * entropy-only: `β = 0`;
//! * ungated: the kernel is applied to every trace instead of the
//!   verifier-gated `K_eff`.

use std::fmt;

use crate::dynamics::{run_flow, stream_id, BatchConfig, FlowConfig, Sampling};
use crate::error::Result;
use crate::kernels::{build_effective_kernel, KernelMatrix};
use crate::metrics::{coverage, js_divergence_multi, kernel_energy, snapshot, MetricContext, MetricRow};
use crate::objective::ObjectiveSpec;
use crate::par::Execution;
use crate::scores::{DcrField, ScoreField};

use super::config::Config;
use super::initial_policy;
use super::universe::TraceUniverse;

/// Objective variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Dcr,
    EntropyOnly,
    Ungated,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dcr => "dcr",
            Variant::EntropyOnly => "entropy_only",
            Variant::Ungated => "ungated",
        })
    }
}

/// Gated and ungated kernels of the study.
#[derive(Debug, Clone)]
pub struct StudyKernels {
    pub gated: KernelMatrix,
    pub ungated: KernelMatrix,
}

impl StudyKernels {
    pub fn new(cfg: &Config, universe: &TraceUniverse) -> Result<Self> {
        Ok(match &cfg.study_b.kernel {
            Some(text) => {
                let k = KernelMatrix::from_text(text)?;
                Self {
                    gated: build_effective_kernel(&k, universe.partition.correct_mask()),
                    ungated: k,
                }
            }
            None => Self {
                gated: universe.effective_kernel(),
                ungated: universe.ungated_kernel(),
            },
        })
    }
}

/// One Study B trajectory.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Recorded policies (only the final one unless trajectories were kept).
    pub policies: Vec<Vec<f64>>,
    /// Smallest safety margin over the recorded training steps `t ≥ 1`.
    pub min_safety_margin: f64,
    /// Kernel energy `pᵀK_eff p` averaged over the tail of the run.
    pub tail_kernel_energy: f64,
}

impl CellRun {
    pub fn final_policy(&self) -> &[f64] {
        self.policies.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_row(&self) -> &MetricRow {
        self.rows.last().expect("runs record at least step 0")
    }

    /// Trajectory file stem.
    pub fn stem(&self) -> String {
        format!("{}_a{}_b{}_s{}", self.variant, self.alpha, self.beta, self.seed)
    }
}

/// Objective of a cell; `U = r`, no KL anchor.
pub fn cell_objective(cfg: &Config, universe: &TraceUniverse, alpha: f64, beta: f64) -> Result<ObjectiveSpec> {
    ObjectiveSpec::new(universe.rewards.clone(), cfg.study_b.lambda, alpha, beta, cfg.study_b.eps_barrier)
}

/// Random stream shared by all cells and variants, so that runs with the same
/// seed see the same uniforms.
pub fn batch_stream() -> u64 {
    stream_id("study_b")
}

/// Runs one cell for one seed.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    cfg: &Config,
    universe: &TraceUniverse,
    kernels: &StudyKernels,
    variant: Variant,
    alpha: f64,
    beta: f64,
    seed: u64,
    keep_trajectory: bool,
) -> Result<CellRun> {
    let beta_flow = if variant == Variant::EntropyOnly { 0.0 } else { beta };
    let k_flow = if variant == Variant::Ungated {
        kernels.ungated.clone()
    } else {
        kernels.gated.clone()
    };
    let objective = cell_objective(cfg, universe, alpha, beta_flow)?;
    let eps = objective.eps_tot();
    let field = ScoreField::Dcr(Box::new(DcrField {
        objective,
        kernel: k_flow.clone(),
    }));
    let flow = FlowConfig {
        record_every: cfg.flow.record_every,
        ..FlowConfig::new(cfg.flow.step_size, eps, cfg.flow.steps)
    };
    let sampling = Sampling {
        batch: BatchConfig::new(cfg.study_b.batch_size, seed, batch_stream())?,
        noise: cfg.study_b.noise_model,
    };
    let ctx = MetricContext {
        partition: universe.partition.clone(),
        lambda: cfg.study_b.lambda,
        alpha,
        beta: beta_flow,
        k_eff: kernels.gated.clone(),
        k_flow,
    };
    let init = initial_policy(universe.size(), seed, cfg.study_b.init_logit_sd);
    let mut rows = Vec::new();
    let mut energies = Vec::new();
    let mut policies = Vec::new();
    let last = run_flow(&field, &flow, Some(&sampling), &init, |step, p| {
        rows.push(snapshot(step, p, &ctx));
        energies.push(kernel_energy(p, &ctx));
        if keep_trajectory {
            policies.push(p.to_vec());
        }
    })?;
    if !keep_trajectory {
        policies.push(last);
    }
    let tail = ((energies.len() as f64 * cfg.study_b.tail_fraction).ceil() as usize).clamp(1, energies.len());
    let tail_kernel_energy = energies[energies.len() - tail..].iter().sum::<f64>() / tail as f64;
    // The initial policy is not produced by the objective, so the minimum is
    // taken over the training steps (step 0 only for an empty horizon).
    let min_safety_margin = rows
        .iter()
        .filter(|r| r.step > 0 || rows.len() == 1)
        .map(|r| r.safety_margin)
        .fold(f64::INFINITY, f64::min);
    Ok(CellRun {
        variant,
        alpha,
        beta,
        seed,
        rows,
        policies,
        min_safety_margin,
        tail_kernel_energy,
    })
}

/// Terminal metrics of one `(α, β, seed)` grid run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PhaseRow {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub incorrect_mass: f64,
    pub min_cluster_mass: f64,
    pub correct_mass: f64,
    pub kernel_energy: f64,
    #[serde(rename = "J_p")]
    pub objective_proxy: f64,
    pub min_safety_margin: f64,
    pub entropy: f64,
    /// Generalised Jensen–Shannon divergence of the cell's terminal policies
    /// across seeds (identical for all seeds of a cell).
    pub between_seed_jsd: f64,
    pub coverage: usize,
    pub cluster_masses: Vec<f64>,
}

/// Ablation comparison at the focal cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub min_safety_margin: f64,
    pub kernel_energy: f64,
    pub coverage: usize,
    pub incorrect_mass: f64,
    pub min_cluster_mass: f64,
    pub entropy: f64,
}

/// Output of [`run_study_b`].
#[derive(Debug, Clone)]
pub struct StudyBResult {
    /// `|α| × |β| × |seeds|` rows, ordered by `(α, β, seed)`.
    pub phase: Vec<PhaseRow>,
    pub ablations: Vec<AblationRow>,
    /// Full trajectories of the focal cell (every variant run).
    pub focal_runs: Vec<CellRun>,
}

fn is_focal(cfg: &Config, alpha: f64, beta: f64) -> bool {
    alpha == cfg.study_b.focal[0] && beta == cfg.study_b.focal[1]
}

/// Runs the grid and the focal-cell ablations.
pub fn run_study_b(cfg: &Config, exec: Execution) -> Result<StudyBResult> {
    let universe = TraceUniverse::from_config(&cfg.universe)?;
    let kernels = StudyKernels::new(cfg, &universe)?;
    let b = &cfg.study_b;
    let [fa, fb] = b.focal;
    let mut jobs = Vec::new();
    for &alpha in &b.alphas {
        for &beta in &b.betas {
            for &seed in &cfg.seeds {
                jobs.push((Variant::Dcr, alpha, beta, seed));
            }
        }
    }
    let mut variants = Vec::new();
    if b.entropy_only {
        variants.push(Variant::EntropyOnly);
    }
    if b.ungated {
        variants.push(Variant::Ungated);
    }
    let mut focal_dcr_in_grid = false;
    for &v in &variants {
        for &seed in &cfg.seeds {
            jobs.push((v, fa, fb, seed));
        }
    }
    if !(b.alphas.contains(&fa) && b.betas.contains(&fb)) && !variants.is_empty() {
        for &seed in &cfg.seeds {
            jobs.push((Variant::Dcr, fa, fb, seed));
        }
    } else {
        focal_dcr_in_grid = true;
    }
    let runs: Vec<CellRun> = exec
        .map(&jobs, |&(v, a, be, s)| {
            run_cell(cfg, &universe, &kernels, v, a, be, s, is_focal(cfg, a, be))
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let n_grid = b.alphas.len() * b.betas.len() * cfg.seeds.len();
    let mut phase = Vec::with_capacity(n_grid);
    for cell in runs[..n_grid].chunks(cfg.seeds.len()) {
        let terminal: Vec<Vec<f64>> = cell.iter().map(|r| r.final_policy().to_vec()).collect();
        let jsd = js_divergence_multi(&terminal);
        for r in cell {
            phase.push(phase_row(r, jsd, b.coverage_threshold));
        }
    }

    let mut ablations = Vec::new();
    let mut focal_runs = Vec::new();
    let focal_dcr: Vec<&CellRun> = if focal_dcr_in_grid {
        runs[..n_grid].iter().filter(|r| is_focal(cfg, r.alpha, r.beta)).collect()
    } else {
        runs[n_grid + variants.len() * cfg.seeds.len()..].iter().collect()
    };
    let ablation_runs: Vec<&CellRun> = runs[n_grid..n_grid + variants.len() * cfg.seeds.len()].iter().collect();
    for r in focal_dcr.iter().chain(ablation_runs.iter()) {
        let last = r.final_row();
        ablations.push(AblationRow {
            variant: r.variant.to_string(),
            seed: r.seed,
            min_safety_margin: r.min_safety_margin,
            kernel_energy: r.tail_kernel_energy,
            coverage: coverage(&last.cluster_masses, b.coverage_threshold),
            incorrect_mass: last.incorrect_mass,
            min_cluster_mass: last.cluster_masses.iter().cloned().fold(f64::INFINITY, f64::min),
            entropy: last.entropy,
        });
        focal_runs.push((*r).clone());
    }
    Ok(StudyBResult {
        phase,
        ablations,
        focal_runs,
    })
}

fn phase_row(r: &CellRun, jsd: f64, threshold: f64) -> PhaseRow {
    let last = r.final_row();
    PhaseRow {
        alpha: r.alpha,
        beta: r.beta,
        seed: r.seed,
        incorrect_mass: last.incorrect_mass,
        min_cluster_mass: last.cluster_masses.iter().cloned().fold(f64::INFINITY, f64::min),
        correct_mass: 1.0 - last.incorrect_mass,
        kernel_energy: r.tail_kernel_energy,
        objective_proxy: last.objective_proxy,
        min_safety_margin: r.min_safety_margin,
        entropy: last.entropy,
        between_seed_jsd: jsd,
        coverage: coverage(&last.cluster_masses, threshold),
        cluster_masses: last.cluster_masses.clone(),
    }
}
