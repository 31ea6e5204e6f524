//! Diversity objective, its variational derivative and the kernel
//! constructions.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use srct::experiments::TraceUniverse;
use srct::kernels::{block_kernel_norm_inf, build_block_kernel, build_effective_kernel, cluster_kernel, realize_gap_kernel};
use srct::objective::{diversity_energy, fitness, hessian_quadratic, lyapunov_rate, objective_value};
use srct::{Error, KernelMatrix, ObjectiveSpec};

fn interior(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..1.0, len).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

fn study_objective(alpha: f64, beta: f64) -> (ObjectiveSpec, KernelMatrix) {
    let u = TraceUniverse::default_universe();
    (
        ObjectiveSpec::new(u.rewards.clone(), 1.0, alpha, beta, 1e-4).unwrap(),
        u.effective_kernel(),
    )
}

#[test]
fn identity_kernel_energy_at_uniform() {
    let k = KernelMatrix::identity(4);
    let beta = 0.7;
    assert_abs_diff_eq!(diversity_energy(&[0.25; 4], 0.0, beta, &k), -beta / 4.0, epsilon = 1e-15);
}

#[test]
fn effective_kernel_zeroes_incorrect_rows() {
    let u = TraceUniverse::default_universe();
    let k = u.effective_kernel();
    for i in u.partition.incorrect_indices() {
        assert!(k.row(i).iter().all(|&x| x == 0.0));
        for j in 0..u.size() {
            assert_eq!(k.get(j, i), 0.0);
        }
    }
    // Correct traces are similar exactly within their cluster.
    for a in u.partition.correct_indices() {
        for b in u.partition.correct_indices() {
            let same = u.partition.cluster_of(a) == u.partition.cluster_of(b);
            assert_eq!(k.get(a, b), if same { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn gating_a_semantic_kernel() {
    let k_sem = cluster_kernel(&[Some(0), Some(0), Some(1), Some(1)]);
    let k = build_effective_kernel(&k_sem, &[true, false, true, true]);
    assert_eq!(k.get(0, 1), 0.0);
    assert_eq!(k.get(1, 1), 0.0);
    assert_eq!(k.get(2, 3), 1.0);
    assert_eq!(k.get(0, 0), 1.0);
}

#[test]
fn block_kernel_rejects_indefinite_blocks() {
    match build_block_kernel(1.0, 0.25, 0.6, 2, 2) {
        Err(Error::NotPsd(msg)) => assert!(msg.contains("κ_CI²"), "{msg}"),
        other => panic!("expected NotPsd, got {other:?}"),
    }
}

#[test]
fn block_kernel_norm_example() {
    let k = build_block_kernel(1.0, 0.0, 0.0, 2, 1).unwrap();
    assert!(k.min_eigenvalue() >= -1e-12);
    assert_abs_diff_eq!(k.norm_inf(), 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(block_kernel_norm_inf(1.0, 0.0, 0.0, 2, 1), 2.0, epsilon = 1e-15);
}

#[test]
fn cluster_kernel_eigenvalues_match_closed_form() {
    // An all-ones block of size n contributes eigenvalues {n, 0, …}; the
    // smallest eigenvalue of a block-diagonal kernel is 0 unless every block
    // is a singleton (then the kernel is the identity).
    let k = cluster_kernel(&[Some(0), Some(0), Some(0), Some(1), Some(1), Some(2), Some(2), None]);
    assert_abs_diff_eq!(k.min_eigenvalue(), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(k.norm_2(), 3.0, epsilon = 1e-12);
    let singletons = cluster_kernel(&[Some(0), Some(1), Some(2)]);
    assert_abs_diff_eq!(singletons.min_eigenvalue(), 1.0, epsilon = 1e-12);
}

#[test]
fn gap_kernel_realises_requested_gap() {
    let (m, n, delta, x) = (8usize, 4usize, 0.01, 0.3);
    let g = realize_gap_kernel(x, delta, m, n).unwrap();
    assert_eq!(g.kappa_ii, 0.0);
    assert_abs_diff_eq!(g.kappa_cc, x / 0.96, epsilon = 1e-15);
    let mut p = vec![(1.0 - n as f64 * delta) / m as f64; m];
    p.extend(std::iter::repeat(delta).take(n));
    let kp = g.kernel.matvec(&p);
    assert_abs_diff_eq!(kp[0] - kp[m], x, epsilon = 1e-12);
    // Block identity (κ_CC−κ_CI)(1−Nδ) + (κ_CI−κ_II)Nδ.
    let cc = g.kernel.get(0, 0);
    let ci = g.kernel.get(0, m);
    let ii = g.kernel.get(m, m);
    let predicted = (cc - ci) * (1.0 - n as f64 * delta) + (ci - ii) * n as f64 * delta;
    assert_abs_diff_eq!(kp[0] - kp[m], predicted, epsilon = 1e-12);
}

#[test]
fn kernel_text_round_trip() {
    let u = TraceUniverse::default_universe();
    let k = u.effective_kernel();
    let back = KernelMatrix::from_text(&k.to_text()).unwrap();
    assert_eq!(k, back);
}

#[test]
fn non_symmetric_kernel_is_rejected() {
    assert!(KernelMatrix::new(2, vec![1.0, 0.5, 0.0, 1.0]).is_err());
}

#[test]
fn boundary_point_is_a_domain_error_with_a_barrier() {
    let (obj, k) = study_objective(0.05, 0.25);
    let mut p = vec![1.0 / 11.0; 12];
    p[11] = 0.0;
    assert!(matches!(objective_value(&p, &obj, &k), Err(Error::Domain { .. })));
}

proptest! {
    #[test]
    fn fitness_is_the_variational_derivative(p in interior(12), i in 0usize..12, j in 0usize..12) {
        prop_assume!(i != j);
        let (obj, k) = study_objective(0.05, 0.25);
        let h = 1e-6 * p[i].min(p[j]);
        let (mut a, mut b) = (p.clone(), p.clone());
        a[i] += h; a[j] -= h;
        b[i] -= h; b[j] += h;
        let fd = (objective_value(&a, &obj, &k).unwrap() - objective_value(&b, &obj, &k).unwrap()) / (2.0 * h);
        let f = fitness(&p, &obj, &k).unwrap();
        let exact = f[i] - f[j];
        prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "fd {} exact {}", fd, exact);
    }

    #[test]
    fn diversity_energy_is_concave(p in interior(12), q in interior(12)) {
        let k = TraceUniverse::default_universe().effective_kernel();
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = diversity_energy(&mid, 0.05, 0.25, &k);
        let rhs = 0.5 * (diversity_energy(&p, 0.05, 0.25, &k) + diversity_energy(&q, 0.05, 0.25, &k));
        prop_assert!(lhs >= rhs - 1e-12);
    }

    #[test]
    fn hessian_is_negative_on_tangents(p in interior(12), v in prop::collection::vec(-1.0f64..1.0, 12)) {
        let (obj, k) = study_objective(0.05, 0.25);
        let mean = v.iter().sum::<f64>() / 12.0;
        let t: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let norm: f64 = t.iter().map(|x| x * x).sum();
        prop_assume!(norm > 1e-6);
        prop_assert!(hessian_quadratic(&p, &t, &obj, &k) < 0.0);
    }

    #[test]
    fn lyapunov_rate_is_the_fitness_variance(p in interior(12)) {
        let (obj, k) = study_objective(0.10, 0.50);
        let f = fitness(&p, &obj, &k).unwrap();
        let m1: f64 = p.iter().zip(&f).map(|(a, b)| a * b).sum();
        let m2: f64 = p.iter().zip(&f).map(|(a, b)| a * b * b).sum();
        let var = m2 - m1 * m1;
        let rate = lyapunov_rate(&p, &f);
        prop_assert!((rate - var).abs() <= 1e-8 * var.abs().max(1e-12) + 1e-14);
    }

    #[test]
    fn gated_kernels_are_psd(labels in prop::collection::vec(prop::option::of(0usize..4), 2..16),
                             gate in prop::collection::vec(any::<bool>(), 16)) {
        let k = build_effective_kernel(&cluster_kernel(&labels), &gate[..labels.len()]);
        prop_assert!(k.min_eigenvalue() >= -1e-10);
    }
}
