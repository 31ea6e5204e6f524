//! Simplex geometry: softmax / logit lift, clip–renormalize, face gap,
//! Shahshahani metric and trimmed projection.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use srct::simplex::{
    clip_renormalize, delta_eff, entropy, face_gap, face_gap_bounds, kl, log_ratio_matrix, logit_lift, mean_log,
    project_trimmed, shahshahani_norm2, softmax, PolicyVector,
};
use srct::SimplexSpec;

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 2..=max_len)
}

fn interior(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, 2..=max_len).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

#[test]
fn softmax_of_ln2_offsets() {
    let c = 2f64.ln() / 3.0;
    let theta = [2f64.ln() - c, -c, -c];
    let p = softmax(&theta);
    assert_abs_diff_eq!(p.as_slice()[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(p.as_slice()[1], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(p.as_slice()[2], 0.25, epsilon = 1e-15);
}

#[test]
fn logit_lift_recovers_log_ratio() {
    let theta = logit_lift(&[0.5, 0.25, 0.25]).unwrap();
    let t = theta.as_slice();
    assert_abs_diff_eq!(t[0] - t[1], 2f64.ln(), epsilon = 1e-14);
    assert_abs_diff_eq!(t.iter().sum::<f64>(), 0.0, epsilon = 1e-14);
}

#[test]
fn logit_lift_of_tiny_coordinate_is_finite() {
    let p = [1e-9, 0.5 - 5e-10, 0.5 - 5e-10];
    let theta = logit_lift(&p).unwrap();
    assert!(theta.as_slice().iter().all(|x| x.is_finite()));
    let back = softmax(theta.as_slice());
    for (a, b) in back.as_slice().iter().zip(&p) {
        assert!((a - b).abs() <= 1e-10 * b.max(1e-9));
    }
}

#[test]
fn clip_renormalize_examples() {
    let q = clip_renormalize(&[0.96, 0.02, 0.02], 0.05);
    let q = q.as_slice();
    assert_abs_diff_eq!(q[0], 0.96 / 1.06, epsilon = 1e-12);
    assert_abs_diff_eq!(q[0], 0.90566, epsilon = 1e-5);
    assert_abs_diff_eq!(q[1], 0.04717, epsilon = 1e-5);
    assert!(q.iter().all(|&x| x >= 0.05 / 1.10));

    let v = clip_renormalize(PolicyVector::vertex(3, 0).as_slice(), 0.1);
    let v = v.as_slice();
    assert_abs_diff_eq!(v[0], 1.0 / 1.2, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], 0.1 / 1.2, epsilon = 1e-15);
}

#[test]
fn mean_log_of_uniform() {
    assert_abs_diff_eq!(mean_log(&[0.25; 4]), -(4f64.ln()), epsilon = 1e-15);
    assert_abs_diff_eq!(entropy(&[0.25; 4]), 4f64.ln(), epsilon = 1e-15);
}

#[test]
fn face_gap_vanishes_at_uniform_floor() {
    for s in 2..10 {
        assert_abs_diff_eq!(face_gap(s, 1.0 / s as f64).unwrap(), 0.0, epsilon = 1e-12);
    }
}

#[test]
fn face_gap_matches_grid_minimisation() {
    // S = 4, δ = 0.1: closed form 0.9 ln 3 against a grid over the face.
    let delta: f64 = 0.1;
    let closed = face_gap(4, delta).unwrap();
    assert_abs_diff_eq!(closed, 0.9 * 3f64.ln(), epsilon = 1e-14);
    assert_abs_diff_eq!(closed, 0.98875, epsilon = 1e-5);
    let r = 1.0 - delta;
    let n = 1201;
    let mut best = f64::INFINITY;
    for a in 1..n {
        for b in 1..(n - a) {
            let (x, y) = (r * a as f64 / n as f64, r * b as f64 / n as f64);
            let z = r - x - y;
            let v = delta * delta.ln() + x * x.ln() + y * y.ln() + z * z.ln() - delta.ln();
            best = best.min(v);
        }
    }
    assert!((best - closed).abs() < 1e-5, "grid {best} vs closed {closed}");
}

#[test]
fn face_gap_is_bracketed() {
    let (lo, hi) = face_gap_bounds(12, 0.01).unwrap();
    let l = face_gap(12, 0.01).unwrap();
    assert!(lo <= l && l <= hi, "{lo} ≤ {l} ≤ {hi}");
}

#[test]
fn face_gap_rejects_infeasible_floor() {
    assert!(face_gap(4, 0.3).is_err());
    assert!(face_gap(1, 0.5).is_err());
}

#[test]
fn shahshahani_norm_by_hand() {
    let p = [0.5, 0.25, 0.25];
    let u = [0.1, -0.05, -0.05];
    let hand = 0.01 / 0.5 + 0.0025 / 0.25 + 0.0025 / 0.25;
    assert_abs_diff_eq!(shahshahani_norm2(&u, &p).unwrap(), hand, epsilon = 1e-16);
    assert_abs_diff_eq!(shahshahani_norm2(&[1.0, -1.0], &[0.5, 0.5]).unwrap(), 4.0, epsilon = 1e-15);
}

#[test]
fn log_ratio_matrix_entry() {
    let z = log_ratio_matrix(&[0.5, 0.25, 0.25]).unwrap();
    assert_abs_diff_eq!(z[1], 2f64.ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(z[3], -(2f64.ln()), epsilon = 1e-15);
}

#[test]
fn kl_is_zero_on_diagonal_and_rejects_support_violation() {
    assert_abs_diff_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0, epsilon = 1e-16);
    assert!(kl(&[0.5, 0.5], &[1.0, 0.0]).is_err());
}

#[test]
fn simplex_spec_validates_floor() {
    assert!(SimplexSpec::new(4, 0.25).is_ok());
    assert!(SimplexSpec::new(4, 0.26).is_err());
    assert!(SimplexSpec::new(0, 0.1).is_err());
    let d = SimplexSpec::new(12, 0.01).unwrap().delta_eff();
    assert_abs_diff_eq!(d, 0.01 / 1.11, epsilon = 1e-15);
}

proptest! {
    #[test]
    fn softmax_lands_on_simplex(theta in logits(16)) {
        let p = softmax(&theta);
        let s: f64 = p.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(p.as_slice().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn softmax_lift_round_trip(theta in logits(16)) {
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        let centred: Vec<f64> = theta.iter().map(|x| x - mean).collect();
        let back = logit_lift(softmax(&theta).as_slice()).unwrap();
        for (a, b) in back.as_slice().iter().zip(&centred) {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn clip_floor_bound(p in interior(12), frac in 0.01f64..1.0) {
        let s = p.len();
        let delta = frac / s as f64;
        let q = clip_renormalize(&p, delta);
        let bound = delta_eff(delta, s);
        prop_assert!(q.as_slice().iter().all(|&x| x >= bound - 1e-15));
        prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn projection_is_feasible_and_idempotent(y in prop::collection::vec(-1.0f64..2.0, 2..12), frac in 0.0f64..0.9) {
        let s = y.len();
        let delta = frac / s as f64;
        let x = project_trimmed(&y, delta);
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(x.iter().all(|&v| v >= delta - 1e-12));
        let again = project_trimmed(&x, delta);
        for (a, b) in x.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn entropy_bounds(p in interior(16)) {
        let h = entropy(&p);
        prop_assert!(h >= -1e-12 && h <= (p.len() as f64).ln() + 1e-12);
        let ml = mean_log(&p);
        prop_assert!(ml <= 1e-12 && ml >= -(p.len() as f64).ln() - 1e-12);
    }

    #[test]
    fn face_gap_within_bounds(s in 2usize..40, frac in 0.001f64..1.0) {
        let delta = frac / s as f64;
        let l = face_gap(s, delta).unwrap();
        let (lo, hi) = face_gap_bounds(s, delta).unwrap();
        prop_assert!(l >= lo - 1e-12 && l <= hi + 1e-12);
        prop_assert!(l >= 0.0);
    }
}
