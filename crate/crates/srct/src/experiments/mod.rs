//! Experiment studies, configuration and artifact files.
//!
//! * [`study_a`]: collapse modes of STaR, GRPO and DPO on the trace universe;
//! * [`alignment`]: replicator steps versus algorithm-faithful procedural
//!   updates from common states;
//! * [`study_b`]: the diversity-regularised objective over an `(α, β)` grid
//!   with its ablations;
//! * [`verify`]: the invariant suite behind the `verify` command;
//! * [`io`]: manifests, CSV/JSON tables and event logs.
//!
//! Every trajectory owns its random streams, derived from `(seed, label)`, so
//! results are identical whether jobs run in parallel or sequentially.

pub mod alignment;
pub mod analysis;
pub mod config;
pub mod io;
pub mod study_a;
pub mod study_b;
pub mod universe;
pub mod verify;

use rand_distr::{Distribution, Normal};

use crate::dynamics::{stream_id, stream_rng};
use crate::simplex::softmax;

pub use config::{Config, Method, SCHEMA_VERSION};
pub use universe::TraceUniverse;

/// Initial policy of a seed: softmax of i.i.d. `N(0, sd²)` logits drawn from
/// the seed's `init` stream (uniform when `sd = 0`).
pub fn initial_policy(size: usize, seed: u64, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![1.0 / size as f64; size];
    }
    let mut rng = stream_rng(seed, stream_id("init"));
    let normal = Normal::new(0.0, sd).expect("finite standard deviation");
    let theta: Vec<f64> = (0..size).map(|_| normal.sample(&mut rng)).collect();
    softmax(&theta).into_vec()
}

/// Mean and (population) standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
