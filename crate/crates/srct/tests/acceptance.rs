//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Each criterion is evaluated at its stated tolerance and runtime budget;
//! the process exits non-zero when any of them fails. Reference values are
//! computed here independently of the library code they check (brute-force
//! minimisation, Monte Carlo, finite differences, closed forms).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::Exp1;

use srct::dynamics::{
    bd_check, log_ratio_envelope_check, lyapunov_series, sample_noise, simulate, stream_id, stream_rng, FlowConfig,
};
use srct::equilibria::{dpo_two_level_gap, solve_dcr_equilibrium, suppression_ratio};
use srct::experiments::study_a::{method_field, method_flow, run_one, Track};
use srct::experiments::study_b::{run_study_b, Variant};
use srct::experiments::{initial_policy, Config, Method, TraceUniverse};
use srct::metrics::{gini, lump_drift_check, EventKind};
use srct::objective::{fitness, objective_value};
use srct::par::Execution;
use srct::scores::{grpo_characteristic, DcrField};
use srct::simplex::{face_gap, project_trimmed};
use srct::{ClassPartition, DpoSpec, GrpoSpec, ObjectiveSpec, ScoreField, SimplexSpec};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn random_interior<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..size).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    let t: f64 = w.iter().sum();
    w.iter().map(|x| x / t).collect()
}

fn canonical_fields(u: &TraceUniverse) -> Vec<ScoreField> {
    let part = u.partition.clone();
    vec![
        ScoreField::Star(part.clone()),
        ScoreField::Grpo {
            partition: part.clone(),
            spec: GrpoSpec::new(4).unwrap(),
        },
        ScoreField::Dpo(DpoSpec::from_partition(1.0, 0.0, &part).unwrap()),
    ]
}

fn focal_objective(utility: &[f64], alpha: f64, beta: f64) -> ObjectiveSpec {
    ObjectiveSpec::new(utility.to_vec(), 1.0, alpha, beta, 1e-4).unwrap()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Exact identities and oracles
// ---------------------------------------------------------------------------

fn centering() -> Outcome {
    let u = TraceUniverse::default_universe();
    let mut rng = stream_rng(1, stream_id("acceptance/centering"));
    let mut worst: f64 = 0.0;
    for field in canonical_fields(&u) {
        for _ in 0..1000 {
            let p = random_interior(u.size(), &mut rng);
            let phi = field.eval(&p).map_err(err)?;
            let c: f64 = p.iter().zip(&phi).map(|(a, b)| a * b).sum();
            worst = worst.max(c.abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |Σ p_i φ_i| = {worst:.2e} over 3×1000 points")))
}

fn fitness_is_gradient() -> Outcome {
    let u = TraceUniverse::default_universe();
    let k = u.effective_kernel();
    let obj = focal_objective(&u.rewards, 0.05, 0.25);
    let mut rng = stream_rng(2, stream_id("acceptance/gradient"));
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = random_interior(u.size(), &mut rng);
        let f = fitness(&p, &obj, &k).map_err(err)?;
        let i = rng.random_range(0..p.len());
        let j = (i + 1 + rng.random_range(0..p.len() - 1)) % p.len();
        let h = 1e-5 * p[i].min(p[j]);
        let (mut a, mut b) = (p.clone(), p.clone());
        a[i] += h;
        a[j] -= h;
        b[i] -= h;
        b[j] += h;
        let fd = (objective_value(&a, &obj, &k).map_err(err)? - objective_value(&b, &obj, &k).map_err(err)?) / (2.0 * h);
        let exact = f[i] - f[j];
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3));
    }
    Ok((worst <= 1e-5, format!("max relative error = {worst:.2e} over 50 points")))
}

fn face_gap_closed_form() -> Outcome {
    // Brute force over the face {p_1 = δ}: the remaining mass 1−δ is spread
    // over S−1 coordinates on a lattice that does not contain the symmetric
    // point exactly.
    let mut worst: f64 = 0.0;
    let surplus = |delta: f64, rest: &[f64]| {
        delta * delta.ln() + rest.iter().map(|&x| x * x.ln()).sum::<f64>() - delta.ln()
    };
    for &delta in &[0.01, 0.05, 0.1, 0.2] {
        let r = 1.0 - delta;
        // S = 2: the face is a single point.
        worst = worst.max((surplus(delta, &[r]) - face_gap(2, delta).map_err(err)?).abs());
        // S = 3.
        let n = 100_003;
        let mut best = f64::INFINITY;
        for a in 1..n {
            let x = r * a as f64 / n as f64;
            best = best.min(surplus(delta, &[x, r - x]));
        }
        worst = worst.max((best - face_gap(3, delta).map_err(err)?).abs());
        // S = 4.
        let n = 3001;
        let mut best = f64::INFINITY;
        for a in 1..n {
            for b in 1..(n - a) {
                let x = r * a as f64 / n as f64;
                let y = r * b as f64 / n as f64;
                best = best.min(surplus(delta, &[x, y, r - x - y]));
            }
        }
        worst = worst.max((best - face_gap(4, delta).map_err(err)?).abs());
    }
    Ok((worst <= 1e-6, format!("max |closed form − brute force| = {worst:.2e}, S ∈ {{2,3,4}}")))
}

fn grpo_characteristic_mc() -> Outcome {
    let draws = 1_000_000;
    let mut worst_z: f64 = 0.0;
    for &g in &[2usize, 4, 8] {
        let spec = GrpoSpec::new(g).map_err(err)?;
        for &rho in &[0.1, 0.35, 0.6, 0.85] {
            let mut rng = stream_rng(g as u64, stream_id(&format!("acceptance/h_g/{rho}")));
            // h_G(ρ) = E[√((G−T)/T)] / (1−ρ), T = 1 + Binomial(G−1, ρ).
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..draws {
                let t = 1 + (0..g - 1).filter(|_| rng.random::<f64>() < rho).count();
                let x = ((g - t) as f64 / t as f64).sqrt() / (1.0 - rho);
                s += x;
                s2 += x * x;
            }
            let mean = s / draws as f64;
            let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
            let exact = grpo_characteristic(rho, spec).map_err(err)?;
            let z = if se > 0.0 { (mean - exact).abs() / se } else { (mean - exact).abs() / 1e-15 };
            worst_z = worst_z.max(z);
        }
    }
    let mut worst_const: f64 = 0.0;
    for (g, value) in [(2usize, 1.0), (3, 2f64.sqrt())] {
        let spec = GrpoSpec::new(g).map_err(err)?;
        for k in 0..=1000 {
            let rho = k as f64 / 1000.0 * 0.999;
            worst_const = worst_const.max((grpo_characteristic(rho, spec).map_err(err)? - value).abs());
        }
    }
    Ok((
        worst_z <= 3.0 && worst_const <= 1e-8,
        format!("max |exact − MC| = {worst_z:.2} SE (G ∈ {{2,4,8}}, 10⁶ draws); G ∈ {{2,3}} constancy error {worst_const:.1e}"),
    ))
}

fn lump_identity() -> Outcome {
    let u = TraceUniverse::default_universe();
    let labels = u.partition.lump_labels();
    let mut rng = stream_rng(5, stream_id("acceptance/lumps"));
    let mut worst: f64 = 0.0;
    for field in canonical_fields(&u) {
        for _ in 0..200 {
            let p = random_interior(u.size(), &mut rng);
            worst = worst.max(lump_drift_check(&p, &field, 3e-4, &labels).map_err(err)?);
        }
    }
    Ok((worst <= 1e-10, format!("max lump residual = {worst:.2e} (STaR, GRPO, DPO)")))
}

fn multinomial_noise() -> Outcome {
    let mut rng = stream_rng(6, stream_id("acceptance/noise"));
    let p: Vec<f64> = (1..=12).map(|k| k as f64 / 78.0).collect();
    let b = 128u64;
    let draws = 100_000;
    let mean = (0..draws)
        .map(|_| sample_noise(&p, b, &mut rng).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / draws as f64;
    let expected = (1.0 - p.iter().map(|x| x * x).sum::<f64>()) / b as f64;
    let rel = (mean - expected).abs() / expected;
    Ok((rel <= 0.05, format!("E‖ξ‖² = {mean:.5e} vs {expected:.5e} (rel. error {rel:.2e})")))
}

// ---------------------------------------------------------------------------
// Dynamics and collapse modes
// ---------------------------------------------------------------------------

fn star_fixation() -> Outcome {
    let cfg = Config::default();
    let u = TraceUniverse::default_universe();
    let mut detail = Vec::new();
    let mut ok = true;
    for &seed in &cfg.seeds {
        let run = run_one(&cfg, &u, Method::Star, Track::Deterministic, seed).map_err(err)?;
        let fix = run.events.iter().find(|e| e.kind == EventKind::Fixation);
        let h = run.rows.last().unwrap().entropy;
        ok &= fix.is_some() && h < 0.05;
        detail.push(format!("s{seed}: t={} H={h:.1e}", fix.map_or("-".into(), |e| e.step.to_string())));
    }
    Ok((ok, detail.join(", ")))
}

fn grpo_neutral() -> Outcome {
    let cfg = Config::default();
    let u = TraceUniverse::default_universe();
    let eps = cfg.study_a.eps.grpo;
    let eta = cfg.flow.step_size;
    let factor = 1.0 - eta * eps;
    // Exact within-class contraction on the deterministic track, for pairs
    // whose coordinates stay above the log clip of the step.
    let mut worst: f64 = 0.0;
    let mut pairs_checked = 0usize;
    for &seed in &cfg.seeds {
        let run = run_one(&cfg, &u, Method::Grpo, Track::Deterministic, seed).map_err(err)?;
        for w in run.policies.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            for i in 0..p.len() {
                for j in (i + 1)..p.len() {
                    if u.partition.is_correct(i) != u.partition.is_correct(j) || p[i].min(p[j]) <= 1e-12 {
                        continue;
                    }
                    let z0 = p[i].ln() - p[j].ln();
                    let z1 = q[i].ln() - q[j].ln();
                    worst = worst.max((z1 - factor * z0).abs());
                    pairs_checked += 1;
                }
            }
        }
    }
    let mut rises = 0;
    for &seed in &cfg.seeds {
        let run = run_one(&cfg, &u, Method::Grpo, Track::Batch(16), seed).map_err(err)?;
        let g0 = run.rows.first().unwrap().gini;
        let g1 = run.rows.last().unwrap().gini;
        if g1 > g0 {
            rises += 1;
        }
    }
    let need = (4 * cfg.seeds.len()).div_ceil(5);
    Ok((
        worst <= 1e-11 && rises >= need,
        format!(
            "max |z' − (1−ηε)z| = {worst:.1e} over {pairs_checked} pair-steps; B=16 Gini rose in {rises}/{} seeds",
            cfg.seeds.len()
        ),
    ))
}

fn dpo_homogenization() -> Outcome {
    let cfg = Config::default();
    let u = TraceUniverse::default_universe();
    let mut ok = true;
    let mut detail = Vec::new();
    for &seed in &cfg.seeds {
        let run = run_one(&cfg, &u, Method::Dpo, Track::Deterministic, seed).map_err(err)?;
        let hom = run.events.iter().find(|e| e.kind == EventKind::Homogenization);
        let fixed = run.events.iter().any(|e| e.kind == EventKind::Fixation);
        let last = run.rows.last().unwrap();
        ok &= hom.is_some() && !fixed && last.gini < 0.10;
        detail.push(format!(
            "s{seed}: t={} Gini={:.3} max_p={:.3}",
            hom.map_or("-".into(), |e| e.step.to_string()),
            last.gini,
            last.max_p
        ));
    }
    Ok((ok, detail.join(", ")))
}

fn log_ratio_envelopes() -> Outcome {
    let cfg = Config::default();
    let u = TraceUniverse::default_universe();
    let (mut violations, mut checked) = (0, 0);
    let mut worst = f64::INFINITY;
    for m in Method::ALL {
        let field = method_field(m, &u);
        let flow = FlowConfig {
            record_every: 1,
            ..method_flow(&cfg, m)
        };
        for &seed in &cfg.seeds {
            let init = initial_policy(u.size(), seed, cfg.study_a.init_logit_sd);
            let traj = simulate(&field, &flow, None, &init).map_err(err)?;
            let rep = log_ratio_envelope_check(&traj, &field, flow.step_size, flow.entropy_weight);
            violations += rep.violations;
            checked += rep.checked;
            worst = worst.min(rep.worst_slack);
        }
    }
    Ok((
        violations == 0 && checked > 0,
        format!("{violations} violations in {checked} checks (worst slack {worst:.2e})"),
    ))
}

fn lyapunov_and_uniqueness() -> Outcome {
    let u = TraceUniverse::default_universe();
    let k = u.effective_kernel();
    let obj = focal_objective(&u.rewards, 0.05, 0.25);
    let field = ScoreField::Dcr(Box::new(DcrField {
        objective: obj.clone(),
        kernel: k.clone(),
    }));
    let flow = FlowConfig::new(0.15, obj.eps_tot(), 5000);
    let mut worst_drop: f64 = 0.0;
    let mut finals = Vec::new();
    for seed in [101u64, 202] {
        let init = initial_policy(u.size(), seed, 1.5);
        let traj = simulate(&field, &flow, None, &init).map_err(err)?;
        let j = lyapunov_series(&traj, &obj, &k).map_err(err)?;
        for w in j.windows(2) {
            worst_drop = worst_drop.min(w[1] - w[0]);
        }
        finals.push(traj.policies.last().unwrap().clone());
    }
    let d = l1(&finals[0], &finals[1]);
    Ok((
        worst_drop >= -1e-9 && d <= 1e-5,
        format!("min ΔJ̃ = {worst_drop:.2e}; ‖p⋆(a) − p⋆(b)‖₁ = {d:.2e}"),
    ))
}

fn dpo_two_level() -> Outcome {
    let (m, n) = (4usize, 8usize);
    let part = ClassPartition::two_class(m, n);
    let spec = DpoSpec::from_partition(1.0, 0.0, &part).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut bracket_ok = true;
    for &eps in &[0.5, 1.0, 2.0] {
        let eq = dpo_two_level_gap(&spec, m, n, eps).map_err(err)?;
        let (lo, hi) = (2.0 * spec.g(0.0) / eps, 2.0 / eps);
        bracket_ok &= eq.gap >= lo && eq.gap <= hi;
        let target = eq.policy(m, n);
        let field = ScoreField::Dpo(spec.clone());
        let flow = FlowConfig::new(0.15, eps, 5000);
        for seed in [101u64, 202, 303] {
            let init = initial_policy(m + n, seed, 1.5);
            let traj = simulate(&field, &flow, None, &init).map_err(err)?;
            let last = traj.policies.last().unwrap();
            for (a, b) in last.iter().zip(&target) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok((
        worst <= 1e-4 && bracket_ok,
        format!("max ‖p_T − p⋆‖_∞ = {worst:.2e}; roots inside [2g(0)/ε, 2/ε]: {bracket_ok}"),
    ))
}

fn suppression_identity() -> Outcome {
    let cfg = Config::default();
    let u = TraceUniverse::default_universe();
    let k = u.effective_kernel();
    let start = vec![1.0 / u.size() as f64; u.size()];
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for &alpha in &cfg.study_b.alphas {
        for &beta in &cfg.study_b.betas {
            let obj = focal_objective(&u.utilities, alpha, beta);
            let eq = solve_dcr_equilibrium(&obj, &k, &start, 1e-13).map_err(err)?;
            for c in u.partition.correct_indices() {
                for i in u.partition.incorrect_indices() {
                    // Independent evaluation of the boxed identity.
                    let kc: f64 = (0..u.size()).map(|j| k.get(c, j) * eq.policy[j]).sum();
                    let predicted = (-(1.0 - 2.0 * obj.lambda * beta * kc) / obj.eps_tot()).exp();
                    let measured = eq.policy[i] / eq.policy[c];
                    worst = worst.max((measured - predicted).abs() / predicted);
                    let rep = suppression_ratio(&eq.policy, &obj, &k, c, i).map_err(err)?;
                    worst = worst.max(rep.relative_error);
                }
            }
            cells += 1;
        }
    }
    Ok((worst <= 1e-3, format!("max relative error = {worst:.2e} over {cells} cells")))
}

fn bd_confinement() -> Outcome {
    let u = TraceUniverse::default_universe();
    let s = u.size();
    let delta = 0.01;
    let domain = SimplexSpec::new(s, delta).map_err(err)?;
    let mut runs = 0;
    let mut worst = f64::INFINITY;
    for field in canonical_fields(&u) {
        let threshold = bd_check(&field, 0.0, domain).map_err(err)?.threshold;
        for mult in [1.0, 1.5, 3.0] {
            let eps = threshold * mult;
            if !bd_check(&field, eps, domain).map_err(err)?.holds {
                continue;
            }
            let flow = FlowConfig::new(0.15, eps, 5000);
            for seed in [101u64, 202, 303] {
                let init = project_trimmed(&initial_policy(s, seed, 1.5), delta);
                let traj = simulate(&field, &flow, None, &init).map_err(err)?;
                for p in &traj.policies {
                    worst = worst.min(p.iter().cloned().fold(f64::INFINITY, f64::min));
                }
                runs += 1;
            }
        }
    }
    // Failing case: STaR with the entropy weight far below its threshold.
    let star = ScoreField::Star(u.partition.clone());
    let rep = bd_check(&star, 0.0, domain).map_err(err)?;
    let eps = rep.threshold * 0.01;
    let weak = bd_check(&star, eps, domain).map_err(err)?;
    let init = project_trimmed(&initial_policy(s, 101, 1.5), delta);
    let traj = simulate(&star, &FlowConfig::new(0.15, eps, 5000), None, &init).map_err(err)?;
    let exit_min = traj
        .policies
        .iter()
        .map(|p| p.iter().cloned().fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    let confined = worst >= delta - 1e-9 && runs > 0;
    let exits = !weak.holds && exit_min < delta;
    Ok((
        confined && exits,
        format!(
            "{runs} passing runs, min p = {worst:.6} ≥ δ⋆ = {delta}; weak STaR (ε = {eps:.2e}) reaches min p = {exit_min:.2e}"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Study B phase behaviour
// ---------------------------------------------------------------------------

fn study_b_focal() -> Outcome {
    let cfg = Config::default();
    let b = &cfg.study_b;
    if b.focal != [0.05, 0.25] || b.lambda != 1.0 || b.batch_size != 128 {
        return Err("default configuration does not match the focal setting".into());
    }
    let result = run_study_b(&cfg, Execution::default()).map_err(err)?;
    let [fa, fb] = b.focal;
    let focal: Vec<_> = result.phase.iter().filter(|r| r.alpha == fa && r.beta == fb).collect();
    let min_cluster = focal.iter().map(|r| r.min_cluster_mass).fold(f64::INFINITY, f64::min);
    let jsd = focal.first().map_or(f64::NAN, |r| r.between_seed_jsd);
    let dcr_runs: Vec<_> = result.focal_runs.iter().filter(|r| r.variant == Variant::Dcr).collect();
    let margin_all = dcr_runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.safety_margin))
        .fold(f64::INFINITY, f64::min);
    let find = |v: Variant, seed: u64| result.focal_runs.iter().find(|r| r.variant == v && r.seed == seed);
    let mut ungated_lower = 0;
    let mut entropy_higher = 0;
    for &seed in &cfg.seeds {
        let d = find(Variant::Dcr, seed).ok_or("missing DCR focal run")?;
        let ug = find(Variant::Ungated, seed).ok_or("missing ungated run")?;
        let eo = find(Variant::EntropyOnly, seed).ok_or("missing entropy-only run")?;
        if ug.min_safety_margin < d.min_safety_margin {
            ungated_lower += 1;
        }
        if eo.tail_kernel_energy > d.tail_kernel_energy {
            entropy_higher += 1;
        }
    }
    let n = cfg.seeds.len();
    let ok = focal.len() == n
        && min_cluster > 0.15
        && jsd < 0.01
        && margin_all > 0.0
        && ungated_lower == n
        && entropy_higher == n;
    let final_gini = dcr_runs
        .iter()
        .map(|r| gini(&r.rows.last().unwrap().cluster_masses))
        .fold(0.0, f64::max);
    Ok((
        ok,
        format!(
            "min cluster mass {min_cluster:.3}, JSD {jsd:.1e}, min margin {margin_all:.3}, \
             ungated lower {ungated_lower}/{n}, entropy-only energy higher {entropy_higher}/{n}, \
             max Gini {final_gini:.3}, {} phase rows",
            result.phase.len()
        ),
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "centering", budget: secs(1), run: centering },
        Criterion { id: 2, name: "fitness-is-gradient", budget: secs(1), run: fitness_is_gradient },
        Criterion { id: 3, name: "face-gap-closed-form", budget: secs(5), run: face_gap_closed_form },
        Criterion { id: 4, name: "grpo-characteristic", budget: secs(10), run: grpo_characteristic_mc },
        Criterion { id: 5, name: "lump-identity", budget: secs(1), run: lump_identity },
        Criterion { id: 6, name: "multinomial-noise", budget: secs(5), run: multinomial_noise },
        Criterion { id: 7, name: "star-fixation", budget: secs(50), run: star_fixation },
        Criterion { id: 8, name: "grpo-neutral-drift", budget: secs(30), run: grpo_neutral },
        Criterion { id: 9, name: "dpo-homogenization", budget: secs(30), run: dpo_homogenization },
        Criterion { id: 10, name: "log-ratio-envelopes", budget: secs(60), run: log_ratio_envelopes },
        Criterion { id: 11, name: "lyapunov-uniqueness", budget: secs(30), run: lyapunov_and_uniqueness },
        Criterion { id: 12, name: "dpo-two-level", budget: secs(30), run: dpo_two_level },
        Criterion { id: 13, name: "suppression-identity", budget: secs(60), run: suppression_identity },
        Criterion { id: 14, name: "bd-confinement", budget: secs(30), run: bd_confinement },
        Criterion { id: 15, name: "study-b-focal-cell", budget: secs(600), run: study_b_focal },
    ];
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok((ok, d)) => (ok && elapsed <= c.budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} [{:>2}] {:<22} {:>7.2}s/{:>3}s  {}",
            if passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
        if !passed {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
