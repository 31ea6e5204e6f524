//! The finite trace universe shared by every study.

use crate::error::{Error, Result};
use crate::kernels::{build_effective_kernel, cluster_kernel, KernelMatrix};
use crate::scores::ClassPartition;

/// Universe description as it appears in the config file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    /// Sizes of the correct-trace clusters (correct traces come first, in
    /// cluster order).
    pub cluster_sizes: Vec<usize>,
    pub n_incorrect: usize,
    pub reward_correct: f64,
    pub reward_incorrect: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![3, 3, 2],
            n_incorrect: 4,
            reward_correct: 1.0,
            reward_incorrect: 0.2,
        }
    }
}

/// Trace universe: partition, verifier utilities and base rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceUniverse {
    pub partition: ClassPartition,
    /// Verifier utility `U = 1{correct}`.
    pub utilities: Vec<f64>,
    /// Base rewards `r` (1.0 correct / 0.2 incorrect by default).
    pub rewards: Vec<f64>,
}

impl TraceUniverse {
    pub fn from_config(cfg: &UniverseConfig) -> Result<Self> {
        if cfg.cluster_sizes.is_empty() || cfg.cluster_sizes.contains(&0) {
            return Err(Error::Config(
                "universe.cluster_sizes must list at least one nonempty cluster".into(),
            ));
        }
        if !(cfg.reward_correct.is_finite() && cfg.reward_incorrect.is_finite()) {
            return Err(Error::Config("universe rewards must be finite".into()));
        }
        let partition = ClassPartition::from_cluster_sizes(&cfg.cluster_sizes, cfg.n_incorrect);
        let utilities = (0..partition.size())
            .map(|k| if partition.is_correct(k) { 1.0 } else { 0.0 })
            .collect();
        let rewards = (0..partition.size())
            .map(|k| {
                if partition.is_correct(k) {
                    cfg.reward_correct
                } else {
                    cfg.reward_incorrect
                }
            })
            .collect();
        Ok(Self {
            partition,
            utilities,
            rewards,
        })
    }

    /// Default universe: `S = 12`, clusters `(3, 3, 2)`, four incorrect
    /// traces.
    pub fn default_universe() -> Self {
        Self::from_config(&UniverseConfig::default()).expect("default universe is valid")
    }

    pub fn size(&self) -> usize {
        self.partition.size()
    }

    /// Semantic kernel: 1 iff both traces are correct and share a cluster.
    pub fn semantic_kernel(&self) -> KernelMatrix {
        cluster_kernel(self.partition.cluster_labels())
    }

    /// Verifier-gated kernel `K_eff = R K_sem R`.
    pub fn effective_kernel(&self) -> KernelMatrix {
        build_effective_kernel(&self.semantic_kernel(), self.partition.correct_mask())
    }

    /// Kernel without gating: the cluster kernel with the incorrect traces
    /// forming one additional similarity block, so incorrect–incorrect
    /// similarity is penalized as well.
    pub fn ungated_kernel(&self) -> KernelMatrix {
        let extra = self.partition.n_clusters();
        let labels: Vec<Option<usize>> = (0..self.size())
            .map(|k| {
                if self.partition.is_correct(k) {
                    self.partition.cluster_of(k)
                } else {
                    Some(extra)
                }
            })
            .collect();
        cluster_kernel(&labels)
    }
}
