//! Temporal viewpoint graph and its heat-diffusion kernel.
//!
//! Frames are connected only inside a temporal band of half-width `b`; the
//! band's symmetric normalized Laplacian is exponentiated through a symmetric
//! eigendecomposition, which keeps the kernel exactly symmetric and PSD.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::geometry::{pose_affinity, pose_distance_sq, GeometryParams, Pose};
use crate::{Error, Result};

/// Symmetric affinity matrix with `W[i][j] = 0` whenever `|i − j| > b`.
///
/// Only the upper band is stored: row `i` holds `W[i][i..=min(n−1, i+b)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedAffinity {
    n: usize,
    bandwidth: usize,
    rows: Vec<Vec<f64>>,
}

impl BandedAffinity {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.bandwidth {
            0.0
        } else {
            self.rows[lo][hi - lo]
        }
    }

    /// Number of materialized entries; at most `n·(b+1)`.
    pub fn stored_entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Row sums `dᵢ = Σⱼ Wᵢⱼ`.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for (off, &w) in row.iter().enumerate() {
                deg[i] += w;
                if off > 0 {
                    deg[i + off] += w;
                }
            }
        }
        deg
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for (off, &w) in row.iter().enumerate() {
                m[(i, i + off)] = w;
                m[(i + off, i)] = w;
            }
        }
        m
    }
}

/// Builds the banded viewpoint graph over a temporally ordered pose sequence.
///
/// Frame ids must be exactly `0..n` in order.
pub fn build_banded_affinity(poses: &[Pose], params: &GeometryParams, bandwidth: usize) -> Result<BandedAffinity> {
    if poses.is_empty() {
        return Err(Error::input("pose sequence is empty"));
    }
    params.validate()?;
    for (i, p) in poses.iter().enumerate() {
        if p.frame_id != i {
            return Err(Error::input(format!(
                "frame ids must be contiguous from 0: position {i} holds frame {}",
                p.frame_id
            )));
        }
    }
    let n = poses.len();
    let rows = (0..n)
        .map(|i| {
            let hi = (i + bandwidth).min(n - 1);
            (i..=hi)
                .map(|j| if i == j { 1.0 } else { pose_affinity(pose_distance_sq(&poses[i], &poses[j], params)) })
                .collect()
        })
        .collect();
    Ok(BandedAffinity { n, bandwidth, rows })
}

/// Symmetric normalized Laplacian `I − D^{-1/2} W D^{-1/2}`.
///
/// Every degree is at least 1 because the diagonal of `W` is 1.
pub fn normalized_laplacian(w: &BandedAffinity) -> DMatrix<f64> {
    let inv_sqrt: Vec<f64> = w.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = w.n;
    let mut lap = DMatrix::identity(n, n);
    for (i, row) in w.rows.iter().enumerate() {
        for (off, &wij) in row.iter().enumerate() {
            let j = i + off;
            let v = wij * inv_sqrt[i] * inv_sqrt[j];
            lap[(i, j)] -= v;
            if off > 0 {
                lap[(j, i)] -= v;
            }
        }
    }
    lap
}

/// Heat-diffusion kernel `exp(−τ𝓛)` over frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewKernel {
    pub matrix: DMatrix<f64>,
    pub tau: f64,
}

impl ViewKernel {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Computes `exp(−τL)` for symmetric `L` via `V·diag(e^{−τλ})·Vᵀ`.
///
/// Eigenvalues of `L` are clamped to `≥ 0` first. Entries with magnitude below
/// `trunc_eps` are zeroed afterwards (`0` keeps the kernel dense). `τ = 0`
/// yields the identity exactly.
pub fn heat_kernel(l: &DMatrix<f64>, tau: f64, trunc_eps: f64) -> Result<ViewKernel> {
    if !l.is_square() {
        return Err(Error::input(format!("Laplacian is {}x{}, not square", l.nrows(), l.ncols())));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::input(format!("tau must be >= 0, got {tau}")));
    }
    if !(trunc_eps.is_finite() && trunc_eps >= 0.0) {
        return Err(Error::input(format!("trunc_eps must be >= 0, got {trunc_eps}")));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("Laplacian has non-finite entries".into()));
    }
    let n = l.nrows();
    if tau == 0.0 {
        return Ok(ViewKernel {
            matrix: DMatrix::identity(n, n),
            tau,
        });
    }

    let sym = (l + l.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))?;
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let f = (-tau * lambda.max(0.0)).exp();
        scaled.column_mut(c).scale_mut(f);
    }
    let mut k = &scaled * v.transpose();
    // The product can differ from its transpose by round-off; average the halves.
    for i in 0..n {
        for j in (i + 1)..n {
            let mut avg = 0.5 * (k[(i, j)] + k[(j, i)]);
            if avg.abs() < trunc_eps {
                avg = 0.0;
            }
            k[(i, j)] = avg;
            k[(j, i)] = avg;
        }
        if k[(i, i)].abs() < trunc_eps {
            k[(i, i)] = 0.0;
        }
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("heat kernel has non-finite entries".into()));
    }
    Ok(ViewKernel { matrix: k, tau })
}

/// Band → Laplacian → heat kernel in one call.
pub fn view_kernel(
    poses: &[Pose],
    params: &GeometryParams,
    bandwidth: usize,
    tau: f64,
    trunc_eps: f64,
) -> Result<ViewKernel> {
    let w = build_banded_affinity(poses, params, bandwidth)?;
    heat_kernel(&normalized_laplacian(&w), tau, trunc_eps)
}
