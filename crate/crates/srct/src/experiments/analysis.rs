//! Closed-form reports: equilibrium records and constants.

use serde_json::json;

use crate::bounds::{compute_constants, ConstantsParams, ConstantsReport};
use crate::equilibria::{
    dpo_two_level_gap, grpo_scalar_fixed_point, solve_dcr_equilibrium, suppression_ratio, EquilibriumRecord,
};
use crate::error::{Error, Result};
use crate::objective::ObjectiveSpec;
use crate::scores::{ClassPartition, DpoSpec, GrpoSpec};
use crate::simplex::SimplexSpec;

use super::config::Config;
use super::study_b::{cell_objective, StudyKernels};
use super::universe::TraceUniverse;

/// Equilibrium solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Dpo,
    Grpo,
    Dcr,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpo" => Ok(Solver::Dpo),
            "grpo" => Ok(Solver::Grpo),
            "dcr" => Ok(Solver::Dcr),
            other => Err(Error::Config(format!("unknown solver `{other}` (expected dpo, grpo or dcr)"))),
        }
    }
}

/// Two-level DPO / GRPO equilibria for `m` correct and `n` incorrect traces,
/// and the DCR equilibrium of the Study B focal cell on the configured
/// universe.
pub fn equilibrium_record(cfg: &Config, solver: Solver, eps: f64, m: usize, n: usize) -> Result<EquilibriumRecord> {
    match solver {
        Solver::Dpo => {
            let part = ClassPartition::two_class(m, n);
            let spec = DpoSpec::from_partition(cfg.fields.dpo_beta, cfg.fields.dpo_ell0, &part)?;
            let eq = dpo_two_level_gap(&spec, m, n, eps)?;
            let params = json!({"beta": spec.beta, "ell0": spec.ell0, "eps": eps, "m": m, "n": n,
                "root_bracket": [2.0 * spec.g(0.0) / eps, 2.0 / eps]});
            Ok(EquilibriumRecord::two_level("dpo_two_level_gap", params, &eq))
        }
        Solver::Grpo => {
            let spec = GrpoSpec::new(cfg.fields.grpo_group_size)?;
            let domain = SimplexSpec::new(m + n, cfg.fields.delta.min(1.0 / (m + n) as f64))?;
            let eq = grpo_scalar_fixed_point(spec, m, n, eps, domain)?;
            let params = json!({"group_size": spec.group_size, "eps": eps, "m": m, "n": n,
                "delta": domain.floor, "truncated": eq.truncated});
            Ok(EquilibriumRecord::two_level("grpo_scalar_fixed_point", params, &eq))
        }
        Solver::Dcr => {
            let universe = TraceUniverse::from_config(&cfg.universe)?;
            let kernels = StudyKernels::new(cfg, &universe)?;
            let [alpha, beta] = cfg.study_b.focal;
            let objective = cell_objective(cfg, &universe, alpha, beta)?;
            let start = vec![1.0 / universe.size() as f64; universe.size()];
            let eq = solve_dcr_equilibrium(&objective, &kernels.gated, &start, 1e-13)?;
            let c = universe.partition.correct_indices()[0];
            let i = universe.partition.incorrect_indices().first().copied();
            let suppression = match i {
                Some(i) => Some(suppression_ratio(&eq.policy, &objective, &kernels.gated, c, i)?),
                None => None,
            };
            let params = json!({"alpha": alpha, "beta": beta, "lambda": objective.lambda,
                "eps_barrier": objective.eps_barrier, "iterations": eq.iterations,
                "suppression": suppression});
            Ok(EquilibriumRecord {
                solver: "solve_dcr_equilibrium".into(),
                params,
                z_star: None,
                levels: eq.policy,
                residual: eq.kkt_residual,
                bounds_ok: true,
            })
        }
    }
}

/// Constants for a trimmed simplex of `size` traces with floor `delta`.
///
/// When `size` matches the configured universe its partition and gated
/// kernel are used; otherwise a two-class universe with `correct` correct
/// traces (default `⌈S/2⌉`) forming one cluster. The objective is the Study B
/// focal cell with unit utility on correct traces.
pub fn constants_report(cfg: &Config, size: usize, delta: f64, correct: Option<usize>) -> Result<ConstantsReport> {
    let universe = TraceUniverse::from_config(&cfg.universe)?;
    let (partition, kernel) = if size == universe.size() && correct.map_or(true, |c| c == universe.partition.correct_count()) {
        (universe.partition.clone(), universe.effective_kernel())
    } else {
        let kc = correct.unwrap_or(size.div_ceil(2));
        if kc == 0 || kc >= size {
            return Err(Error::Config(format!(
                "--correct must lie in 1..{size} (got {kc})"
            )));
        }
        let u = TraceUniverse::from_config(&super::universe::UniverseConfig {
            cluster_sizes: vec![kc],
            n_incorrect: size - kc,
            ..cfg.universe.clone()
        })?;
        (u.partition.clone(), u.effective_kernel())
    };
    let utility: Vec<f64> = (0..size).map(|k| if partition.is_correct(k) { 1.0 } else { 0.0 }).collect();
    let [alpha, beta] = cfg.study_b.focal;
    let objective = ObjectiveSpec::new(utility, cfg.study_b.lambda, alpha, beta, cfg.study_b.eps_barrier)?;
    let params = ConstantsParams {
        domain: SimplexSpec::new(size, delta)?,
        partition,
        objective,
        kernel,
        grpo: GrpoSpec::new(cfg.fields.grpo_group_size)?,
        dpo_beta: cfg.fields.dpo_beta,
        dpo_ell0: cfg.fields.dpo_ell0,
        eps: cfg.study_a.eps.grpo,
        gamma: cfg.flow.step_size / cfg.study_b.batch_size as f64,
        eta0: None,
    };
    compute_constants(&params)
}
