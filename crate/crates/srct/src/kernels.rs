//! Symmetric PSD similarity kernels.
//!
//! A [`KernelMatrix`] is validated once at construction (exact symmetry,
//! smallest eigenvalue `≥ −1e-8`) and is immutable afterwards. Constructors
//! cover the cases the experiments need:
//!
//! - [`cluster_kernel`]: `K(i,j) = 1` iff `i` and `j` carry the same label.
//! - [`build_effective_kernel`]: verifier gating `K_eff = R K R`.
//! - [`build_block_kernel`] / [`realize_gap_kernel`]: the rank-≤2
//!   block-constant family and its low-norm member realising a prescribed
//!   correct/incorrect kernel-average gap.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue for a PSD kernel.
pub const PSD_TOL: f64 = -1e-8;

/// Dense symmetric PSD matrix with cached spectral data.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    entries: Vec<f64>,
    min_eigenvalue: f64,
    spectral_norm: f64,
}

/// Which admissible bound on `|(Kp)_i − (Kp)_j|` was tightest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKOption {
    Spectral,
    RowSum,
    MaxEntry,
    RowDifference,
}

impl KernelMatrix {
    /// Validates a row-major `n×n` matrix.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::NotPsd(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPsd("non-finite entry".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::NotPsd(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        entries[i * n + j],
                        entries[j * n + i]
                    )));
                }
            }
        }
        let (min_eigenvalue, spectral_norm) = if n == 0 {
            (0.0, 0.0)
        } else {
            let eig = DMatrix::from_row_slice(n, n, &entries).symmetric_eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_abs = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            (min, max_abs)
        };
        if min_eigenvalue < PSD_TOL {
            return Err(Error::NotPsd(format!(
                "smallest eigenvalue {min_eigenvalue:e} below {PSD_TOL:e}"
            )));
        }
        Ok(Self {
            n,
            entries,
            min_eigenvalue,
            spectral_norm,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
            min_eigenvalue: 0.0,
            spectral_norm: 0.0,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            n,
            entries,
            min_eigenvalue: if n > 0 { 1.0 } else { 0.0 },
            spectral_norm: if n > 0 { 1.0 } else { 0.0 },
        }
    }

    /// Parses whitespace-separated rows, one matrix row per line; blank lines
    /// and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|e| Error::Config(format!("kernel entry {t:?}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if let Some(r) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Config(format!(
                "kernel row {r} has {} entries; expected {n}",
                rows[r].len()
            )));
        }
        Self::new(n, rows.into_iter().flatten().collect())
    }

    /// Inverse of [`KernelMatrix::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// PSD certificate: smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// `Kp`.
    pub fn matvec(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(p, &mut out);
        out
    }

    pub fn matvec_into(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(p).map(|(a, b)| a * b).sum();
        }
    }

    /// Quadratic form `Q[p] = pᵀKp`.
    pub fn quad(&self, p: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| p[i] * self.row(i).iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// `‖K‖_{∞→∞} = max_i Σ_j |K_ij|`.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `‖K‖_{2→2}` (largest absolute eigenvalue).
    pub fn norm_2(&self) -> f64 {
        self.spectral_norm
    }

    /// `‖K‖_max = max_ij |K_ij|`.
    pub fn norm_max(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// `‖K_{i·} − K_{j·}‖_∞`, which equals `sup_p |(Kp)_i − (Kp)_j|` over
    /// the simplex (support-function identity).
    pub fn row_difference(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Tightest admissible `Δ_K ≥ sup_{p,i≠j} |(Kp)_i − (Kp)_j|`.
    pub fn delta_k(&self) -> (f64, DeltaKOption) {
        let mut rowdiff: f64 = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                rowdiff = rowdiff.max(self.row_difference(i, j));
            }
        }
        let options = [
            (std::f64::consts::SQRT_2 * self.norm_2(), DeltaKOption::Spectral),
            (2.0 * self.norm_inf(), DeltaKOption::RowSum),
            (2.0 * self.norm_max(), DeltaKOption::MaxEntry),
            (rowdiff, DeltaKOption::RowDifference),
        ];
        options
            .into_iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
            .expect("nonempty options")
    }
}

/// `K(i,j) = 1` iff both traces carry the same label (`None` = unlabelled).
pub fn cluster_kernel(labels: &[Option<usize>]) -> KernelMatrix {
    let n = labels.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if labels[i].is_some() && labels[i] == labels[j] {
                entries[i * n + j] = 1.0;
            }
        }
    }
    KernelMatrix::new(n, entries).expect("block-of-ones kernels are PSD")
}

/// Verifier gating `K_eff = Diag(R) k_sem Diag(R)`.
pub fn build_effective_kernel(k_sem: &KernelMatrix, verifier: &[bool]) -> KernelMatrix {
    let n = k_sem.size();
    assert_eq!(verifier.len(), n, "verifier length must match kernel size");
    let mut entries = k_sem.entries().to_vec();
    for i in 0..n {
        for j in 0..n {
            if !(verifier[i] && verifier[j]) {
                entries[i * n + j] = 0.0;
            }
        }
    }
    // Congruence by a 0/1 diagonal preserves PSD; re-validate to refresh the
    // cached spectrum.
    KernelMatrix::new(n, entries).expect("gating preserves PSD")
}

/// Block-constant kernel on `M` correct traces (indices `0..M`) followed by
/// `N` incorrect traces.
pub fn build_block_kernel(
    kappa_cc: f64,
    kappa_ii: f64,
    kappa_ci: f64,
    m: usize,
    n: usize,
) -> Result<KernelMatrix> {
    if kappa_cc < 0.0 {
        return Err(Error::NotPsd(format!("κ_CC = {kappa_cc} < 0")));
    }
    if kappa_ii < 0.0 {
        return Err(Error::NotPsd(format!("κ_II = {kappa_ii} < 0")));
    }
    if kappa_cc * kappa_ii < kappa_ci * kappa_ci {
        return Err(Error::NotPsd(format!(
            "κ_CC·κ_II = {} < κ_CI² = {}",
            kappa_cc * kappa_ii,
            kappa_ci * kappa_ci
        )));
    }
    let s = m + n;
    let mut entries = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            entries[i * s + j] = match (i < m, j < m) {
                (true, true) => kappa_cc,
                (false, false) => kappa_ii,
                _ => kappa_ci,
            };
        }
    }
    KernelMatrix::new(s, entries)
}

/// Closed-form `‖K‖_{∞→∞}` of a block kernel.
pub fn block_kernel_norm_inf(kappa_cc: f64, kappa_ii: f64, kappa_ci: f64, m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    (m * kappa_cc.abs() + n * kappa_ci.abs()).max(m * kappa_ci.abs() + n * kappa_ii.abs())
}

/// Output of [`realize_gap_kernel`].
#[derive(Debug, Clone)]
pub struct GapKernel {
    pub kernel: KernelMatrix,
    pub kappa_cc: f64,
    pub kappa_ii: f64,
    pub kappa_ci: f64,
    /// `N = 0`: there is no correct/incorrect gap to realise.
    pub gap_void: bool,
}

/// Low-norm block kernel (`κ_CI = 0`) whose kernel averages at the two-level
/// target `p_i = δ⋆ (i ∈ I)`, `p_c = (1−Nδ⋆)/M` differ by exactly `X`.
pub fn realize_gap_kernel(x: f64, delta: f64, m: usize, n: usize) -> Result<GapKernel> {
    if n == 0 {
        return Ok(GapKernel {
            kernel: KernelMatrix::zeros(m),
            kappa_cc: 0.0,
            kappa_ii: 0.0,
            kappa_ci: 0.0,
            gap_void: true,
        });
    }
    let nd = n as f64 * delta;
    if !(nd < 1.0 && delta > 0.0) {
        return Err(Error::domain(
            "realize_gap_kernel",
            format!("requires 0 < Nδ⋆ < 1, got Nδ⋆ = {nd}"),
        ));
    }
    if m == 0 {
        return Err(Error::domain("realize_gap_kernel", "requires M ≥ 1"));
    }
    let kappa_ii = (-x / nd).max(0.0);
    let kappa_cc = (x + nd * kappa_ii) / (1.0 - nd);
    let kernel = build_block_kernel(kappa_cc, kappa_ii, 0.0, m, n)?;
    Ok(GapKernel {
        kernel,
        kappa_cc,
        kappa_ii,
        kappa_ci: 0.0,
        gap_void: false,
    })
}

/// The two-level target policy used by [`realize_gap_kernel`].
pub fn two_level_target(delta: f64, m: usize, n: usize) -> Vec<f64> {
    let pc = (1.0 - n as f64 * delta) / m as f64;
    (0..m + n).map(|k| if k < m { pc } else { delta }).collect()
}
