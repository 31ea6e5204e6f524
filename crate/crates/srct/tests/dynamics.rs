//! Update rules: exponentiated-gradient step, Euler step, mini-batch noise,
//! Wright–Fisher increments and the barrier-dominance test.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use srct::bounds::{grpo_bd_margin, grpo_eps_relaxed};
use srct::dynamics::{
    bd_check, euler_ode_step, exp_gradient_step, lyapunov_series, minibatch_step, sample_noise, simulate,
    stream_rng, wright_fisher_increment, wright_fisher_step, BatchConfig, BdMode, FlowConfig, NoiseModel, Sampling,
};
use srct::equilibria::dcr_default_step;
use srct::experiments::TraceUniverse;
use srct::scores::DcrField;
use srct::{ClassPartition, GrpoSpec, ObjectiveSpec, ScoreField, SimplexSpec};

fn default_partition() -> ClassPartition {
    ClassPartition::from_cluster_sizes(&[3, 3, 2], 4)
}

fn skewed(len: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..len).map(|k| 1.0 + 0.3 * ((k * 7 % 5) as f64)).collect();
    let t: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= t);
    p
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn star_one_step_from_uniform() {
    let field = ScoreField::Star(ClassPartition::two_class(1, 1));
    let q = exp_gradient_step(&[0.5, 0.5], &field.eval(&[0.5, 0.5]).unwrap(), 0.15, 0.0);
    let up = 0.5 * 0.075f64.exp();
    let down = 0.5 * (-0.075f64).exp();
    assert_abs_diff_eq!(q[0], up / (up + down), epsilon = 1e-15);
    assert_abs_diff_eq!(q[0], 0.53743, epsilon = 5e-6);
}

#[test]
fn grpo_within_class_log_ratio_contracts_by_exact_factor() {
    let part = default_partition();
    let field = ScoreField::Grpo {
        partition: part,
        spec: GrpoSpec::new(8).unwrap(),
    };
    let (eta, eps) = (0.5, 0.2);
    let mut p = skewed(12);
    for _ in 0..50 {
        let z_c = (p[0] / p[1]).ln();
        let z_i = (p[8] / p[9]).ln();
        p = exp_gradient_step(&p, &field.eval(&p).unwrap(), eta, eps);
        assert_abs_diff_eq!((p[0] / p[1]).ln(), (1.0 - eta * eps) * z_c, epsilon = 1e-13);
        assert_abs_diff_eq!((p[8] / p[9]).ln(), (1.0 - eta * eps) * z_i, epsilon = 1e-13);
    }
}

#[test]
fn constant_fitness_leaves_policy_unchanged() {
    let p = skewed(6);
    let q = exp_gradient_step(&p, &[3.0; 6], 0.4, 0.0);
    assert!(l1(&p, &q) < 1e-15);
}

#[test]
fn euler_and_exponentiated_steps_agree_to_second_order() {
    let field = ScoreField::Star(default_partition());
    let eps = 0.1;
    let p = skewed(12);
    let phi = field.eval(&p).unwrap();
    let gap = |eta: f64| {
        let a = exp_gradient_step(&p, &phi, eta, eps);
        let b = euler_ode_step(&p, &field, &FlowConfig::new(eta, eps, 1)).unwrap();
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let g: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&e| gap(e)).collect();
    for w in g.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.15, "observed order {order} from gaps {g:?}");
    }
    assert!(g[0] <= 0.1 * 0.1, "constant C = {} too large", g[0] / 0.01);
}

#[test]
fn lyapunov_value_is_nondecreasing_for_the_dcr_field() {
    let u = TraceUniverse::default_universe();
    let objective = ObjectiveSpec::new(u.rewards.clone(), 1.0, 0.05, 0.25, 1e-4).unwrap();
    let kernel = u.effective_kernel();
    let eta = dcr_default_step(&objective, &kernel);
    let eps = objective.eps_tot();
    let field = ScoreField::Dcr(Box::new(DcrField {
        objective: objective.clone(),
        kernel: kernel.clone(),
    }));
    let traj = simulate(&field, &FlowConfig::new(eta, eps, 400), None, &skewed(12)).unwrap();
    let j = lyapunov_series(&traj, &objective, &kernel).unwrap();
    for w in j.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "J̃ decreased: {} → {}", w[0], w[1]);
    }
    assert!(j.last().unwrap() > &j[0]);
}

#[test]
fn huge_batch_tracks_the_deterministic_flow() {
    // With ε = 0 the skewed start sits on a tie between equal-mass traces of
    // different clusters that the unregularised flow amplifies; a small
    // entropy weight makes the drift contractive and the limit observable.
    let field = ScoreField::Star(default_partition());
    let flow = FlowConfig::new(0.15, 0.1, 100);
    let init = skewed(12);
    let det = simulate(&field, &flow, None, &init).unwrap();
    for noise in [NoiseModel::Sampling, NoiseModel::FitnessOnly] {
        let sampling = Sampling {
            batch: BatchConfig::new(1_000_000, 7, 11).unwrap(),
            noise,
        };
        let sto = simulate(&field, &flow, Some(&sampling), &init).unwrap();
        let worst = det
            .policies
            .iter()
            .zip(&sto.policies)
            .map(|(a, b)| l1(a, b))
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "{noise:?}: L1 gap {worst}");
    }
}

#[test]
fn minibatch_noise_energy_matches_closed_form() {
    let p = vec![1.0 / 12.0; 12];
    let mut rng = stream_rng(2024, 1);
    let n = 100_000;
    let mean: f64 = (0..n)
        .map(|_| sample_noise(&p, 128, &mut rng).iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let expected = (1.0 - 1.0 / 12.0) / 128.0;
    assert_abs_diff_eq!(expected, 0.0071615, epsilon = 1e-7);
    assert!((mean / expected - 1.0).abs() < 0.05, "E‖ξ‖² = {mean}, expected {expected}");
}

#[test]
fn minibatch_noise_is_centred() {
    let p = skewed(5);
    let mut rng = stream_rng(5, 5);
    let n = 50_000;
    let mut acc = [0.0; 5];
    for _ in 0..n {
        let xi = sample_noise(&p, 32, &mut rng);
        assert_abs_diff_eq!(xi.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        acc.iter_mut().zip(&xi).for_each(|(a, x)| *a += x);
    }
    for (k, a) in acc.iter().enumerate() {
        let se = (p[k] * (1.0 - p[k]) / 32.0 / n as f64).sqrt();
        assert!((a / n as f64).abs() < 5.0 * se, "coordinate {k}: mean {}", a / n as f64);
    }
}

#[test]
fn single_sample_batch_is_well_defined() {
    let field = ScoreField::StarEmpirical(default_partition());
    let flow = FlowConfig::new(0.15, 0.1, 1);
    let mut rng = stream_rng(9, 9);
    for _ in 0..100 {
        let (q, xi) = minibatch_step(&skewed(12), &field, &flow, 1, NoiseModel::Sampling, &mut rng);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(q.iter().all(|&x| x > 0.0 && x.is_finite()));
        let hat: Vec<f64> = xi.iter().zip(skewed(12)).map(|(e, x)| e + x).collect();
        assert_eq!(hat.iter().filter(|&&x| (x - 1.0).abs() < 1e-12).count(), 1);
    }
}

#[test]
fn wright_fisher_covariance_matches_selection_matrix() {
    let p = [0.5, 0.3, 0.2];
    let gamma = 0.1;
    let mut rng = stream_rng(3, 3);
    let n = 100_000;
    let mut cov = [[0.0; 3]; 3];
    for _ in 0..n {
        let d = wright_fisher_increment(&p, gamma, 1.0, &mut rng);
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let emp = cov[i][j] / n as f64;
            let q = gamma * (if i == j { p[i] } else { 0.0 } - p[i] * p[j]);
            assert!((emp / q - 1.0).abs() < 0.05, "Q[{i}][{j}]: {emp} vs {q}");
        }
    }
}

#[test]
fn wright_fisher_without_noise_is_an_euler_step() {
    let p = vec![0.25; 4];
    let drift = [0.1, -0.05, -0.05, 0.0];
    let mut rng = stream_rng(1, 1);
    let q = wright_fisher_step(&p, &drift, 0.0, 0.5, 0.01, &mut rng);
    for k in 0..4 {
        assert_abs_diff_eq!(q[k], p[k] + 0.5 * drift[k], epsilon = 1e-15);
    }
}

#[test]
fn wright_fisher_step_stays_on_the_trimmed_simplex() {
    let p = vec![0.02, 0.02, 0.96];
    let mut rng = stream_rng(4, 4);
    for _ in 0..1000 {
        let q = wright_fisher_step(&p, &[0.0; 3], 0.5, 0.1, 0.01, &mut rng);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(q.iter().all(|&x| x >= 0.01 - 1e-12));
    }
}

#[test]
fn barrier_dominance_fails_on_the_uniform_floor() {
    let domain = SimplexSpec::new(4, 0.25).unwrap();
    let r = bd_check(&ScoreField::Star(ClassPartition::two_class(2, 2)), 100.0, domain).unwrap();
    assert!(!r.holds);
    assert_eq!(r.mode, BdMode::StarSharp);
    assert_abs_diff_eq!(r.margin, -1.0, epsilon = 1e-12);
}

#[test]
fn star_sharp_threshold_is_inverse_face_gap() {
    let domain = SimplexSpec::new(12, 0.01).unwrap();
    let field = ScoreField::Star(default_partition());
    let l = srct::simplex::face_gap(12, 0.01).unwrap();
    let r = bd_check(&field, 1.0 / l, domain).unwrap();
    assert_abs_diff_eq!(r.threshold, 1.0 / l, epsilon = 1e-12);
    assert!(bd_check(&field, 1.01 / l, domain).unwrap().holds);
    assert!(!bd_check(&field, 0.99 / l, domain).unwrap().holds);
}

#[test]
fn grpo_relaxed_threshold_implies_exact_test() {
    for g in [2usize, 4, 8, 16] {
        let spec = GrpoSpec::new(g).unwrap();
        for delta in [0.001, 0.01, 0.05] {
            let (relaxed, _) = grpo_eps_relaxed(spec, 8, 4, delta).unwrap();
            let margin = grpo_bd_margin(relaxed, spec, 8, 4, delta).unwrap();
            assert!(margin >= -1e-12, "G={g} δ={delta}: margin {margin}");
            let domain = SimplexSpec::new(12, delta).unwrap();
            let field = ScoreField::Grpo {
                partition: default_partition(),
                spec,
            };
            let r = bd_check(&field, relaxed, domain).unwrap();
            assert!(r.holds && r.threshold <= relaxed + 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn tangent_ellipticity(raw in prop::collection::vec(0.0f64..1.0, 6), v in prop::collection::vec(-1.0f64..1.0, 6)) {
        let delta = 0.02;
        let p = srct::simplex::project_trimmed(&raw, delta);
        let mean = v.iter().sum::<f64>() / 6.0;
        let t: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let norm2: f64 = t.iter().map(|x| x * x).sum();
        prop_assume!(norm2 > 1e-8);
        let gamma = 0.3;
        let pv: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
        let quad = gamma * (p.iter().zip(&t).map(|(a, b)| a * b * b).sum::<f64>() - pv * pv);
        let ratio = quad / norm2;
        prop_assert!(ratio >= gamma * delta - 1e-12 && ratio <= gamma / 2.0 + 1e-12, "ratio {}", ratio);
    }

    #[test]
    fn exp_step_keeps_policy_interior(seed in 0u64..1000, eta in 0.01f64..2.0, eps in 0.0f64..1.0) {
        let field = ScoreField::Star(default_partition());
        let mut p = skewed(12);
        let mut rng = stream_rng(seed, 0);
        for _ in 0..20 {
            p = minibatch_step(&p, &field, &FlowConfig::new(eta, eps, 1), 16, NoiseModel::Sampling, &mut rng).0;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }
}
