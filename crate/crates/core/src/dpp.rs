//! Fixed-size MAP inference for the keyframe L-ensemble `L = Q·K·Q`.
//!
//! [`greedy_map`] is the production path: each step adds the frame with the
//! largest conditional variance (the marginal gain in `log det`), maintained
//! incrementally by one rank-one Cholesky update per remaining candidate.
//! [`exact_map`] enumerates every subset and exists to check the greedy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryParams, Pose};
use crate::semantic::{calibrate_scores, quality_weights, QualityWeights, SemanticScores};
use crate::view_kernel::{view_kernel, ViewKernel};
use crate::{Error, Result};

/// Conditional variance below which the greedy stops choosing by gain.
pub const FLOOR_VARIANCE: f64 = 1e-12;

/// Largest ground set accepted by [`exact_map`].
pub const EXACT_MAP_MAX_N: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct LEnsemble {
    pub matrix: DMatrix<f64>,
    pub ridge: f64,
}

impl LEnsemble {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an arbitrary symmetric matrix, adding `ridge` to its diagonal.
    pub fn from_matrix(mut matrix: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::input(format!("kernel is {}x{}, not square", matrix.nrows(), matrix.ncols())));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::input(format!("ridge must be >= 0, got {ridge}")));
        }
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += ridge;
        }
        Ok(Self { matrix, ridge })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected frames in the order they were chosen.
    pub indices: Vec<usize>,
    /// `log` conditional variance gained at each step.
    pub gains: Vec<f64>,
    /// `Σ gains`, equal to `log det(L_X)` unless the floor rule fired.
    pub objective: f64,
    /// Number of trailing slots filled by smallest unselected index because
    /// the kernel ran out of conditional variance.
    pub floor_filled: usize,
}

/// `L[i][j] = qᵢ·K[i][j]·qⱼ`, plus `ridge` on the diagonal.
pub fn build_l_ensemble(k: &ViewKernel, q: &QualityWeights, ridge: f64) -> Result<LEnsemble> {
    let n = k.n();
    if q.len() != n {
        return Err(Error::input(format!("kernel has {n} frames but quality weights have {}", q.len())));
    }
    let m = DMatrix::from_fn(n, n, |i, j| q.q[i] * k.matrix[(i, j)] * q.q[j]);
    LEnsemble::from_matrix(m, ridge)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(Error::input(format!("subset size k = {k} must satisfy 1 <= k <= n = {n}")));
    }
    Ok(())
}

/// Greedy fixed-size MAP. Ties go to the smallest frame index.
pub fn greedy_map(l: &LEnsemble, k: usize) -> Result<SelectionResult> {
    let n = l.n();
    check_k(n, k)?;
    let m = &l.matrix;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel has non-finite entries".into()));
    }

    // Row i of the partial Cholesky factor restricted to the chosen columns.
    let mut chol: Vec<Vec<f64>> = vec![Vec::with_capacity(k); n];
    let mut cond_var: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut floor_filled = 0;

    while indices.len() < k {
        let best = (0..n)
            .filter(|&i| !taken[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if cond_var[b] >= cond_var[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a candidate");

        if cond_var[best].is_nan() || cond_var[best] < FLOOR_VARIANCE {
            for (i, t) in taken.iter_mut().enumerate() {
                if indices.len() == k {
                    break;
                }
                if !*t {
                    *t = true;
                    indices.push(i);
                    gains.push(FLOOR_VARIANCE.ln());
                    floor_filled += 1;
                }
            }
            break;
        }

        let d = cond_var[best].sqrt();
        taken[best] = true;
        indices.push(best);
        gains.push(cond_var[best].ln());
        if indices.len() == k {
            break;
        }
        let pivot_row = chol[best].clone();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dot: f64 = pivot_row.iter().zip(&chol[i]).map(|(a, b)| a * b).sum();
            let e = (m[(best, i)] - dot) / d;
            chol[i].push(e);
            cond_var[i] -= e * e;
        }
    }

    let objective = gains.iter().sum();
    Ok(SelectionResult {
        indices,
        gains,
        objective,
        floor_filled,
    })
}

/// `log det` of the principal submatrix on `idx` together with the per-item
/// Cholesky gains, or `None` if that submatrix is not positive definite.
pub fn log_det_gains(m: &DMatrix<f64>, idx: &[usize]) -> Option<Vec<f64>> {
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]);
    let chol = sub.cholesky()?;
    let l = chol.l();
    let gains: Vec<f64> = (0..idx.len()).map(|i| 2.0 * l[(i, i)].ln()).collect();
    gains.iter().all(|g| g.is_finite()).then_some(gains)
}

/// Exhaustive fixed-size MAP over all `C(n, k)` subsets, `n ≤ 20`.
/// Ties resolve to the lexicographically first subset.
pub fn exact_map(l: &LEnsemble, k: usize) -> Result<SelectionResult> {
    let n = l.n();
    if n > EXACT_MAP_MAX_N {
        return Err(Error::Guard(format!(
            "exact MAP enumerates subsets of at most {EXACT_MAP_MAX_N} frames, got {n}"
        )));
    }
    check_k(n, k)?;
    if l.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel has non-finite entries".into()));
    }

    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    loop {
        let (obj, gains) = match log_det_gains(&l.matrix, &combo) {
            Some(g) => (g.iter().sum(), g),
            None => (f64::NEG_INFINITY, vec![f64::NEG_INFINITY; k]),
        };
        if best.as_ref().is_none_or(|(b, _, _)| obj > *b) {
            best = Some((obj, combo.clone(), gains));
        }

        // Advance to the next combination in lexicographic order.
        let Some(pos) = (0..k).rev().find(|&p| combo[p] < n - k + p) else {
            break;
        };
        combo[pos] += 1;
        for p in (pos + 1)..k {
            combo[p] = combo[p - 1] + 1;
        }
    }
    let (objective, indices, gains) = best.expect("at least one subset");
    Ok(SelectionResult {
        indices,
        gains,
        objective,
        floor_filled: 0,
    })
}

/// Parameters of the end-to-end keyframe selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectParams {
    pub geometry: GeometryParams,
    pub bandwidth: usize,
    pub tau: f64,
    pub trunc_eps: f64,
    pub temperature: f64,
    pub alpha: f64,
    pub k: usize,
    pub ridge: f64,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            geometry: GeometryParams::default(),
            bandwidth: 24,
            tau: 2.0,
            trunc_eps: 0.0,
            temperature: 1.0,
            alpha: 0.5,
            k: 32,
            ridge: 1e-9,
        }
    }
}

/// Builds the L-ensemble for a scene without running the selection.
pub fn scene_l_ensemble(poses: &[Pose], scores: &SemanticScores, params: &SelectParams) -> Result<LEnsemble> {
    if scores.len() != poses.len() {
        return Err(Error::input(format!(
            "{} poses but {} semantic scores",
            poses.len(),
            scores.len()
        )));
    }
    let kernel = view_kernel(poses, &params.geometry, params.bandwidth, params.tau, params.trunc_eps)?;
    let calibrated = calibrate_scores(&scores.raw, params.temperature)?;
    let q = quality_weights(&calibrated, params.alpha)?;
    build_l_ensemble(&kernel, &q, params.ridge)
}

/// Pose band → Laplacian → heat kernel → calibrated quality → L-ensemble →
/// greedy MAP.
pub fn select_keyframes(poses: &[Pose], scores: &SemanticScores, params: &SelectParams) -> Result<SelectionResult> {
    check_k(poses.len(), params.k)?;
    let l = scene_l_ensemble(poses, scores, params)?;
    greedy_map(&l, params.k)
}

#[cfg(test)]
mod tests {
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Laplace cofactor expansion along the first row.
    fn cofactor_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        match n {
            0 => 1.0,
            1 => m[(0, 0)],
            _ => (0..n)
                .map(|c| {
                    let minor = m.clone().remove_row(0).remove_column(c);
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * m[(0, c)] * cofactor_det(&minor)
                })
                .sum(),
        }
    }

    fn brute_force_map(m: &DMatrix<f64>, k: usize) -> (Vec<usize>, f64) {
        let n = m.nrows();
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let sub = DMatrix::from_fn(k, k, |a, b| m[(idx[a], idx[b])]);
            let det = cofactor_det(&sub);
            let v = if det > 0.0 { det.ln() } else { f64::NEG_INFINITY };
            if v > best.1 {
                best = (idx, v);
            }
        }
        best
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() / (n as f64)
    }

    /// Gaussian kernel on random points in the unit square.
    fn random_rbf(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
        DMatrix::from_fn(n, n, |i, j| {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            (-(dx * dx + dy * dy) / 0.1).exp()
        })
    }

    #[test]
    fn l_ensemble_examples() {
        let k = ViewKernel {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            tau: 1.0,
        };
        let q = QualityWeights { q: vec![1.0, 0.5], alpha: 0.5 };
        let l = build_l_ensemble(&k, &q, 0.0).unwrap();
        assert_eq!(l.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.25]));

        let l = build_l_ensemble(&k, &QualityWeights::uniform(2), 0.0).unwrap();
        assert_eq!(l.matrix, k.matrix);

        let id = ViewKernel { matrix: DMatrix::identity(3, 3), tau: 0.0 };
        let q = QualityWeights { q: vec![0.5, 0.7, 1.0], alpha: 0.5 };
        let l = build_l_ensemble(&id, &q, 0.0).unwrap();
        assert_eq!(l.matrix, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.25, 0.7 * 0.7, 1.0])));

        assert!(build_l_ensemble(&id, &QualityWeights::uniform(2), 0.0).is_err());
        assert!(build_l_ensemble(&id, &QualityWeights::uniform(3), -1.0).is_err());
    }

    #[test]
    fn greedy_diagonal_kernel() {
        let l = LEnsemble::from_matrix(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 0.5])), 0.0)
            .unwrap();
        let r = greedy_map(&l, 2).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        assert!((r.objective - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.floor_filled, 0);
    }

    #[test]
    fn greedy_first_step_takes_max_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_psd(&mut rng, 7);
            let argmax = (0..7).fold(0, |b, i| if m[(i, i)] > m[(b, b)] { i } else { b });
            let l = LEnsemble::from_matrix(m.clone(), 0.0).unwrap();
            let r = greedy_map(&l, 1).unwrap();
            assert_eq!(r.indices, vec![argmax]);
            assert!((r.gains[0] - m[(argmax, argmax)].ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_ties_take_smallest_index() {
        let l = LEnsemble::from_matrix(DMatrix::identity(4, 4), 0.0).unwrap();
        assert_eq!(greedy_map(&l, 3).unwrap().indices, vec![0, 1, 2]);
    }

    #[test]
    fn greedy_floor_rule_fills_smallest_indices() {
        // Rank one: after the first pick every conditional variance is 0.
        let v = nalgebra::DVector::from_vec(vec![0.5, 1.0, 0.8, 0.3]);
        let l = LEnsemble::from_matrix(&v * v.transpose(), 0.0).unwrap();
        let r = greedy_map(&l, 3).unwrap();
        assert_eq!(r.indices, vec![1, 0, 2]);
        assert_eq!(r.floor_filled, 2);
        assert_eq!(r.gains[1], FLOOR_VARIANCE.ln());
        assert!((r.objective - r.gains.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn greedy_errors() {
        let l = LEnsemble::from_matrix(DMatrix::identity(3, 3), 0.0).unwrap();
        assert!(matches!(greedy_map(&l, 0), Err(Error::Input(_))));
        assert!(matches!(greedy_map(&l, 4), Err(Error::Input(_))));
        let mut bad = DMatrix::identity(3, 3);
        bad[(0, 1)] = f64::INFINITY;
        let l = LEnsemble { matrix: bad, ridge: 0.0 };
        assert!(matches!(greedy_map(&l, 2), Err(Error::Numeric(_))));
    }

    #[test]
    fn greedy_gains_match_log_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let l = LEnsemble::from_matrix(random_psd(&mut rng, 10), 1e-9).unwrap();
            let r = greedy_map(&l, 5).unwrap();
            let gains = log_det_gains(&l.matrix, &r.indices).unwrap();
            let exact: f64 = gains.iter().sum();
            assert!((r.objective - exact).abs() < 1e-8);
            assert!((r.objective - r.gains.iter().sum::<f64>()).abs() < 1e-12);
            let mut seen = r.indices.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 5);
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_seeded_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let m = random_rbf(&mut rng, 6);
        let l = LEnsemble::from_matrix(m.clone(), 0.0).unwrap();
        let (oracle_set, oracle_obj) = brute_force_map(&m, 3);
        let greedy = greedy_map(&l, 3).unwrap();
        let exact = exact_map(&l, 3).unwrap();
        assert!((exact.objective - oracle_obj).abs() < 1e-9);
        assert_eq!(exact.indices, oracle_set);
        let mut g = greedy.indices.clone();
        g.sort();
        assert!((greedy.objective - exact.objective).abs() < 1e-9);
        // Golden set for this seed, confirmed by the cofactor oracle above.
        assert_eq!(g, oracle_set);
        assert_eq!(g, vec![0, 3, 5]);
    }

    #[test]
    fn exact_matches_cofactor_oracle_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..5 {
            let m = random_psd(&mut rng, 8);
            let l = LEnsemble::from_matrix(m.clone(), 0.0).unwrap();
            let exact = exact_map(&l, 3).unwrap();
            let (set, obj) = brute_force_map(&m, 3);
            assert_eq!(exact.indices, set);
            assert!((exact.objective - obj).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_map_examples_and_guard() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 2.0, 0.7, 1.5]));
        let l = LEnsemble::from_matrix(d, 0.0).unwrap();
        assert_eq!(exact_map(&l, 2).unwrap().indices, vec![1, 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_psd(&mut rng, 5);
        let l = LEnsemble::from_matrix(m.clone(), 0.0).unwrap();
        let full = exact_map(&l, 5).unwrap();
        assert!((full.objective - m.determinant().ln()).abs() < 1e-9);

        let big = LEnsemble::from_matrix(DMatrix::identity(21, 21), 0.0).unwrap();
        assert!(matches!(exact_map(&big, 2), Err(Error::Guard(_))));
    }

    fn trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
        let mut t = Vector3::zeros();
        let mut r = UnitQuaternion::identity();
        (0..n)
            .map(|i| {
                t += Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 0.0);
                r = UnitQuaternion::from_euler_angles(0.0, 0.0, rng.random_range(-0.5..0.5)) * r;
                Pose { frame_id: i, rotation: r, translation: t }
            })
            .collect()
    }

    #[test]
    fn select_full_set_when_k_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses = trajectory(&mut rng, 6);
        let params = SelectParams { k: 6, ..Default::default() };
        let mut r = select_keyframes(&poses, &SemanticScores::uniform(6), &params).unwrap().indices;
        r.sort();
        assert_eq!(r, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn select_rejects_bad_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses = trajectory(&mut rng, 6);
        let params = SelectParams { k: 3, ..Default::default() };
        assert!(select_keyframes(&poses, &SemanticScores::uniform(5), &params).is_err());
        let params = SelectParams { k: 7, ..Default::default() };
        assert!(select_keyframes(&poses, &SemanticScores::uniform(6), &params).is_err());
    }

    #[test]
    fn select_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let poses = trajectory(&mut rng, 40);
        let raw: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let scores = SemanticScores::from_raw(raw).unwrap();
        let params = SelectParams { k: 8, ..Default::default() };
        let a = select_keyframes(&poses, &scores, &params).unwrap();
        let b = select_keyframes(&poses, &scores, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_quality_does_not_change_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let m = random_psd(&mut rng, 9);
            let base = greedy_map(&LEnsemble::from_matrix(m.clone(), 0.0).unwrap(), 4).unwrap();
            let c: f64 = rng.random_range(0.2..3.0);
            let scaled = greedy_map(&LEnsemble::from_matrix(&m * (c * c), 0.0).unwrap(), 4).unwrap();
            assert_eq!(base.indices, scaled.indices);
            let shift = 2.0 * 4.0 * c.ln();
            assert!((scaled.objective - base.objective - shift).abs() < 1e-8);
        }
    }

    #[test]
    fn reversing_frames_reverses_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let n = 30;
            let poses = trajectory(&mut rng, n);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let params = SelectParams { k: 5, bandwidth: 4, ..Default::default() };
            let fwd = select_keyframes(&poses, &SemanticScores::from_raw(raw.clone()).unwrap(), &params).unwrap();

            let rev_poses: Vec<Pose> = poses
                .iter()
                .rev()
                .enumerate()
                .map(|(i, p)| Pose { frame_id: i, ..p.clone() })
                .collect();
            let rev_raw: Vec<f64> = raw.iter().rev().copied().collect();
            let rev = select_keyframes(&rev_poses, &SemanticScores::from_raw(rev_raw).unwrap(), &params).unwrap();

            let mut a: Vec<usize> = fwd.indices.clone();
            let mut b: Vec<usize> = rev.indices.iter().map(|i| n - 1 - i).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }
}
