//! Study A: collapse modes of the three scalar-objective methods.
//!
//! Each method drives the trace universe with the experiment fitness
//!
//! * STaR: `φ_i = p̂_i/ρ̂` on correct traces, 0 otherwise;
//! * GRPO: `φ_i = 1{i ∈ C}`;
//! * DPO: `φ_i = −log max(p̂_i, 10⁻¹²)` on correct traces, 0 otherwise,
//!
//! through the exponentiated-gradient step, either deterministically (`p̂ = p`)
//! or from a multinomial mini-batch of size `B`.

use std::fmt;

use crate::dynamics::{run_flow, stream_id, BatchConfig, FlowConfig, Sampling};
use crate::error::Result;
use crate::metrics::{detect_events, snapshot, Event, MetricContext, MetricRow};
use crate::par::Execution;
use crate::scores::ScoreField;

use super::config::{Config, Method};
use super::universe::TraceUniverse;
use super::{initial_policy, mean_sd};

/// Deterministic or mini-batch track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Track {
    Deterministic,
    Batch(u64),
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Track::Deterministic => write!(f, "det"),
            Track::Batch(b) => write!(f, "b{b}"),
        }
    }
}

/// One recorded run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub track: Track,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub policies: Vec<Vec<f64>>,
    pub events: Vec<Event>,
}

impl RunRecord {
    /// File stem: `{method}_s{seed}` for the deterministic track and
    /// `{method}_b{B}_s{seed}` for mini-batch tracks.
    pub fn stem(&self) -> String {
        match self.track {
            Track::Deterministic => format!("{}_s{}", self.method.name(), self.seed),
            Track::Batch(b) => format!("{}_b{b}_s{}", self.method.name(), self.seed),
        }
    }

    pub fn final_policy(&self) -> &[f64] {
        self.policies.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Experiment fitness of `method`.
pub fn method_field(method: Method, universe: &TraceUniverse) -> ScoreField {
    let part = universe.partition.clone();
    match method {
        Method::Star => ScoreField::StarEmpirical(part),
        Method::Grpo => ScoreField::GrpoIndicator(part),
        Method::Dpo => ScoreField::DpoNegLog(part),
    }
}

/// Flow settings of `method` under `cfg`.
pub fn method_flow(cfg: &Config, method: Method) -> FlowConfig {
    FlowConfig {
        record_every: cfg.flow.record_every,
        ..FlowConfig::new(cfg.flow.step_size, cfg.study_a.eps.get(method), cfg.flow.steps)
    }
}

/// Random stream of a mini-batch track.
pub fn batch_stream(method: Method, batch: u64) -> u64 {
    stream_id(&format!("study_a/{}/b{batch}", method.name()))
}

/// Runs a single `(method, track, seed)` trajectory.
pub fn run_one(cfg: &Config, universe: &TraceUniverse, method: Method, track: Track, seed: u64) -> Result<RunRecord> {
    let field = method_field(method, universe);
    let flow = method_flow(cfg, method);
    let init = initial_policy(universe.size(), seed, cfg.study_a.init_logit_sd);
    let sampling = match track {
        Track::Deterministic => None,
        Track::Batch(b) => Some(Sampling {
            batch: BatchConfig::new(b, seed, batch_stream(method, b))?,
            noise: cfg.study_a.noise_model,
        }),
    };
    let ctx = MetricContext::plain(universe.partition.clone());
    let mut rows = Vec::with_capacity(flow.steps / flow.record_every + 2);
    let mut policies = Vec::with_capacity(rows.capacity());
    run_flow(&field, &flow, sampling.as_ref(), &init, |step, p| {
        rows.push(snapshot(step, p, &ctx));
        policies.push(p.to_vec());
    })?;
    let events = detect_events(&rows, &cfg.events);
    Ok(RunRecord {
        method,
        track,
        seed,
        rows,
        policies,
        events,
    })
}

/// All `(method, track, seed)` jobs of the study, in output order.
pub fn jobs(cfg: &Config) -> Vec<(Method, Track, u64)> {
    let mut tracks = Vec::new();
    if cfg.study_a.deterministic {
        tracks.push(Track::Deterministic);
    }
    tracks.extend(cfg.study_a.batch_sizes.iter().map(|&b| Track::Batch(b)));
    let mut out = Vec::new();
    for &m in &cfg.study_a.methods {
        for &t in &tracks {
            for &s in &cfg.seeds {
                out.push((m, t, s));
            }
        }
    }
    out
}

/// Runs every job of the study.
pub fn run_study_a(cfg: &Config, exec: Execution) -> Result<Vec<RunRecord>> {
    let universe = TraceUniverse::from_config(&cfg.universe)?;
    exec.map(&jobs(cfg), |&(m, t, s)| run_one(cfg, &universe, m, t, s))
        .into_iter()
        .collect()
}

/// Seed mean and standard deviation of the headline metrics at one step.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub track: String,
    pub step: usize,
    pub seeds: usize,
    pub entropy_mean: f64,
    pub entropy_sd: f64,
    pub fixation_mean: f64,
    pub fixation_sd: f64,
    pub gini_mean: f64,
    pub gini_sd: f64,
    pub incorrect_mass_mean: f64,
    pub incorrect_mass_sd: f64,
}

/// Seed-mean/sd summary per `(method, track, recorded step)`.
pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, Track)> = runs.iter().map(|r| (r.method, r.track)).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (m, t) in keys {
        let group: Vec<&RunRecord> = runs.iter().filter(|r| r.method == m && r.track == t).collect();
        let n_rows = group.iter().map(|r| r.rows.len()).min().unwrap_or(0);
        for k in 0..n_rows {
            let col = |f: &dyn Fn(&MetricRow) -> f64| -> (f64, f64) {
                mean_sd(&group.iter().map(|r| f(&r.rows[k])).collect::<Vec<_>>())
            };
            let (h, hs) = col(&|r| r.entropy);
            let (fx, fxs) = col(&|r| r.fixation);
            let (g, gs) = col(&|r| r.gini);
            let (inc, incs) = col(&|r| r.incorrect_mass);
            out.push(SummaryRow {
                method: m.name().to_string(),
                track: t.to_string(),
                step: group[0].rows[k].step,
                seeds: group.len(),
                entropy_mean: h,
                entropy_sd: hs,
                fixation_mean: fx,
                fixation_sd: fxs,
                gini_mean: g,
                gini_sd: gs,
                incorrect_mass_mean: inc,
                incorrect_mass_sd: incs,
            });
        }
    }
    out
}
