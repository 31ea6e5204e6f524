//! Replicator-flow laboratory for correctness-trained policies.
//!
//! A policy is a point `p` on the probability simplex over a finite universe
//! of `S` reasoning traces. Training procedures are modelled as replicator
//! flows `ṗ = p ⊙ (φ(p) − φ̄) − ε p ⊙ (log p − ⟨log p⟩)` driven by a score
//! field `φ`:
//!
//! * STaR, GRPO and DPO scalar-objective scores ([`scores`]);
//! * the fitness of the diversity-regularised objective
//!   `J̃ = U·p + λ(αH − β pᵀKp) + εH − β_KL KL` ([`objective`]).
//!
//! The crate provides the geometry ([`simplex`]), kernels ([`kernels`]),
//! deterministic and stochastic integrators ([`dynamics`]), equilibrium
//! solvers ([`equilibria`]), closed-form constants ([`bounds`]), metrics and
//! event detection ([`metrics`]), and the experiment studies with their file
//! formats ([`experiments`]).
//!
//! Independent trajectories fan out over a rayon pool when the default
//! `parallel` feature is enabled ([`par`]); results do not depend on it.

pub mod bounds;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod metrics;
pub mod objective;
pub mod par;
pub mod scores;
pub mod simplex;

pub use error::{Error, Result};
pub use kernels::KernelMatrix;
pub use objective::ObjectiveSpec;
pub use scores::{ClassPartition, DpoSpec, GrpoSpec, ScoreField};
pub use simplex::{PolicyVector, SimplexSpec};
