//! Replicator steps versus algorithm-faithful procedural updates.
//!
//! Procedural rules act on logits `θ` with `p = softmax(θ)`:
//!
//! * STaR: draw up to `L` traces; at the first correct draw `c`,
//!   `θ ← θ + η(e_c − p)`; nothing happens if no draw is correct.
//! * GRPO: draw a group of `m` traces with rewards `r_j`, advantages
//!   `a_j = r_j − r̄`, and `θ ← θ + (η/m) Σ_j a_j e_{i_j}`.
//! * DPO: draw `B/2` pairs of traces (configurable). A correct–incorrect
//!   pair is a preference for the correct trace; a same-class pair is a tie.
//!   Under the Davidson model with `π = e^θ` and `D = π_i + π_j + ν√(π_iπ_j)`,
//!   `P(i ≻ j) = π_i/D` and `P(i ~ j) = ν√(π_iπ_j)/D`; the step ascends the
//!   mean log-likelihood of the batch.
//!
//! At every step the procedural state `p` is also advanced by one replicator
//! (Study A) step from its own mini-batch, and the two one-step updates are
//! compared (cosines, log-ratio sign agreement, Jensen–Shannon distance of the
//! two successors). Event times are compared between the procedural run and
//! an independent replicator run from the same initial policy.

use rand::Rng;

use crate::dynamics::{minibatch_step, stream_id, stream_rng, FlowConfig};
use crate::error::Result;
use crate::metrics::{alignment, detect_events, js_divergence, snapshot, Event, EventKind, MetricContext, MetricRow};
use crate::par::Execution;
use crate::simplex::softmax;

use super::config::{AlignmentConfig, Config, Method};
use super::initial_policy;
use super::study_a::{method_field, method_flow, run_one, Track};
use super::universe::TraceUniverse;

/// Draws one trace index from `p` by inversion.
fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Procedural STaR update of `theta`.
pub fn star_update<R: Rng + ?Sized>(theta: &mut [f64], universe: &TraceUniverse, max_draws: usize, eta: f64, rng: &mut R) {
    let p = softmax(theta).into_vec();
    for _ in 0..max_draws {
        let c = draw(&p, rng);
        if universe.partition.is_correct(c) {
            for (k, t) in theta.iter_mut().enumerate() {
                *t -= eta * p[k];
            }
            theta[c] += eta;
            return;
        }
    }
}

/// Procedural GRPO update of `theta`.
pub fn grpo_update<R: Rng + ?Sized>(theta: &mut [f64], universe: &TraceUniverse, group: usize, eta: f64, rng: &mut R) {
    let p = softmax(theta).into_vec();
    let picks: Vec<usize> = (0..group).map(|_| draw(&p, rng)).collect();
    let rewards: Vec<f64> = picks.iter().map(|&i| universe.rewards[i]).collect();
    let mean = rewards.iter().sum::<f64>() / group as f64;
    for (&i, &r) in picks.iter().zip(&rewards) {
        theta[i] += eta / group as f64 * (r - mean);
    }
}

/// Gradient of the Davidson log-likelihood of one comparison with respect to
/// `θ_i, θ_j`: `(∂/∂θ_i, ∂/∂θ_j)` for "i beats j" (`tie = false`) or a tie.
pub fn davidson_gradient(theta_i: f64, theta_j: f64, nu: f64, tie: bool) -> (f64, f64) {
    // Shift by the larger logit for stability; the probabilities are
    // invariant under a common shift.
    let m = theta_i.max(theta_j);
    let (pi, pj) = ((theta_i - m).exp(), (theta_j - m).exp());
    let geo = (pi * pj).sqrt();
    let d = pi + pj + nu * geo;
    let common_i = (pi + 0.5 * nu * geo) / d;
    let common_j = (pj + 0.5 * nu * geo) / d;
    if tie {
        (0.5 - common_i, 0.5 - common_j)
    } else {
        (1.0 - common_i, -common_j)
    }
}

/// Procedural DPO update of `theta` from `pairs` comparisons.
pub fn dpo_update<R: Rng + ?Sized>(theta: &mut [f64], universe: &TraceUniverse, pairs: usize, nu: f64, eta: f64, rng: &mut R) {
    let p = softmax(theta).into_vec();
    let mut grad = vec![0.0; theta.len()];
    for _ in 0..pairs {
        let (a, b) = (draw(&p, rng), draw(&p, rng));
        let (ca, cb) = (universe.partition.is_correct(a), universe.partition.is_correct(b));
        let (w, l, tie) = match (ca, cb) {
            (true, false) => (a, b, false),
            (false, true) => (b, a, false),
            _ => (a, b, true),
        };
        let (gw, gl) = davidson_gradient(theta[w], theta[l], nu, tie);
        grad[w] += gw;
        grad[l] += gl;
    }
    for (t, g) in theta.iter_mut().zip(&grad) {
        *t += eta * g / pairs as f64;
    }
}

/// One procedural step of `method`.
pub fn procedural_step<R: Rng + ?Sized>(
    method: Method,
    theta: &mut [f64],
    universe: &TraceUniverse,
    cfg: &AlignmentConfig,
    rng: &mut R,
) {
    let eta = cfg.step_sizes.get(method);
    match method {
        Method::Star => star_update(theta, universe, cfg.star_draws(), eta, rng),
        Method::Grpo => grpo_update(theta, universe, cfg.group_size(), eta, rng),
        Method::Dpo => dpo_update(theta, universe, cfg.pairs(), cfg.davidson_nu, eta, rng),
    }
}

/// Per-step alignment of the two update directions.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AlignmentRow {
    pub step: usize,
    pub cos_euclid: f64,
    pub cos_shah: f64,
    pub sign_agreement: f64,
    pub js_step: f64,
}

/// Event times of the two tracks.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EventGap {
    pub kind: EventKind,
    pub theory_step: Option<usize>,
    pub procedural_step: Option<usize>,
    pub gap: Option<i64>,
}

/// One `(method, seed)` alignment run.
#[derive(Debug, Clone)]
pub struct AlignmentRun {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<AlignmentRow>,
    /// Metrics of the procedural trajectory.
    pub procedural: Vec<MetricRow>,
    pub procedural_events: Vec<Event>,
    pub theory_events: Vec<Event>,
    pub gaps: Vec<EventGap>,
}

impl AlignmentRun {
    pub fn stem(&self) -> String {
        format!("align_{}_s{}", self.method.name(), self.seed)
    }
}

fn event_step(events: &[Event], kind: EventKind) -> Option<usize> {
    events.iter().find(|e| e.kind == kind).map(|e| e.step)
}

/// Runs one `(method, seed)` comparison.
pub fn run_alignment_one(cfg: &Config, universe: &TraceUniverse, method: Method, seed: u64) -> Result<AlignmentRun> {
    let al = &cfg.alignment;
    let field = method_field(method, universe);
    let flow: FlowConfig = method_flow(cfg, method);
    let init = initial_policy(universe.size(), seed, cfg.study_a.init_logit_sd);
    let mut theta: Vec<f64> = init.iter().map(|x| x.ln()).collect();
    let mut theory_rng = stream_rng(seed, stream_id(&format!("align/{}/theory", method.name())));
    let mut proc_rng = stream_rng(seed, stream_id(&format!("align/{}/procedural", method.name())));
    let ctx = MetricContext::plain(universe.partition.clone());
    let mut rows = Vec::new();
    let mut procedural = vec![snapshot(0, &init, &ctx)];
    let mut p = init.clone();
    for step in 1..=flow.steps {
        let (p_theory, _) = minibatch_step(&p, &field, &flow, al.batch_size, cfg.study_a.noise_model, &mut theory_rng);
        procedural_step(method, &mut theta, universe, al, &mut proc_rng);
        let p_proc = softmax(&theta).into_vec();
        let dt: Vec<f64> = p_theory.iter().zip(&p).map(|(a, b)| a - b).collect();
        let dp: Vec<f64> = p_proc.iter().zip(&p).map(|(a, b)| a - b).collect();
        if step % flow.record_every == 0 || step == flow.steps {
            let a = alignment(&dt, &dp, &p);
            rows.push(AlignmentRow {
                step,
                cos_euclid: a.cos_euclid,
                cos_shah: a.cos_shah,
                sign_agreement: a.sign_agreement,
                js_step: js_divergence(&p_theory, &p_proc),
            });
            procedural.push(snapshot(step, &p_proc, &ctx));
        }
        p = p_proc;
    }
    let procedural_events = detect_events(&procedural, &cfg.events);
    let theory = run_one(cfg, universe, method, Track::Batch(al.batch_size), seed)?;
    let gaps = [EventKind::Fixation, EventKind::Homogenization]
        .into_iter()
        .map(|kind| {
            let t = event_step(&theory.events, kind);
            let q = event_step(&procedural_events, kind);
            EventGap {
                kind,
                theory_step: t,
                procedural_step: q,
                gap: t.zip(q).map(|(a, b)| b as i64 - a as i64),
            }
        })
        .collect();
    debug_assert!(theory.policies[0] == init);
    Ok(AlignmentRun {
        method,
        seed,
        rows,
        procedural,
        procedural_events,
        theory_events: theory.events,
        gaps,
    })
}

/// Summary statistics of one `(method, seed)` run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AlignmentSummary {
    pub method: String,
    pub seed: u64,
    pub mean_cos_euclid: f64,
    pub mean_cos_shah: f64,
    pub mean_sign_agreement: f64,
    pub mean_js_step: f64,
    pub gaps: Vec<EventGap>,
}

pub fn summarize(run: &AlignmentRun) -> AlignmentSummary {
    let n = run.rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&AlignmentRow) -> f64| run.rows.iter().map(f).sum::<f64>() / n;
    AlignmentSummary {
        method: run.method.name().to_string(),
        seed: run.seed,
        mean_cos_euclid: mean(&|r| r.cos_euclid),
        mean_cos_shah: mean(&|r| r.cos_shah),
        mean_sign_agreement: mean(&|r| r.sign_agreement),
        mean_js_step: mean(&|r| r.js_step),
        gaps: run.gaps.clone(),
    }
}

/// Runs every `(method, seed)` comparison.
pub fn run_alignment(cfg: &Config, exec: Execution) -> Result<Vec<AlignmentRun>> {
    let universe = TraceUniverse::from_config(&cfg.universe)?;
    let jobs: Vec<(Method, u64)> = cfg
        .alignment
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    exec.map(&jobs, |&(m, s)| run_alignment_one(cfg, &universe, m, s))
        .into_iter()
        .collect()
}
