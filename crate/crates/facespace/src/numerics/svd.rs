//! One-sided Jacobi (Hestenes) SVD.
//!
//! Orthogonalizes column pairs by plane rotations until convergence;
//! quadratically convergent and accurate on rank-deficient input,
//! which is where bidiagonalization-based routines were observed to
//! lose the factorization entirely.
//!
//! The input is stored transposed (each matrix column is a contiguous
//! row here) so every rotation touches two contiguous slices.

use ndarray::Array2;

pub(crate) struct JacobiSvd {
    /// K×N; row l holds U's column l scaled by σ_l.
    pub scaled_left: Array2<f64>,
    /// K×K; row l is right singular vector l.
    pub right_rows: Array2<f64>,
    /// Singular values, unsorted; σ_l pairs with row l above.
    pub sigmas: Vec<f64>,
}

const ORTHO_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 60;

/// Decompose A = UΣVᵀ given Aᵀ (columns of A as contiguous rows).
pub(crate) fn one_sided_jacobi(at: Array2<f64>) -> JacobiSvd {
    // Transposed inputs often arrive column-major; the rotation loop
    // needs contiguous rows.
    let mut at = if at.is_standard_layout() {
        at
    } else {
        let (r, c) = at.dim();
        Array2::from_shape_fn((r, c), |(i, j)| at[(i, j)])
    };
    let k = at.nrows();
    let mut vt: Array2<f64> = Array2::eye(k);
    let mut norms2 = vec![0.0f64; k];

    for _ in 0..MAX_SWEEPS {
        for (l, norm) in norms2.iter_mut().enumerate() {
            let row = at.row(l);
            *norm = row.dot(&row);
        }
        let mut rotated = false;
        for i in 0..k.saturating_sub(1) {
            for j in i + 1..k {
                let alpha = norms2[i];
                let beta = norms2[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = at.row(i).dot(&at.row(j));
                if gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut at, i, j, c, s);
                rotate_rows(&mut vt, i, j, c, s);
                norms2[i] = alpha - t * gamma;
                norms2[j] = beta + t * gamma;
            }
        }
        if !rotated {
            break;
        }
    }

    let sigmas: Vec<f64> = (0..k)
        .map(|l| {
            let row = at.row(l);
            row.dot(&row).sqrt()
        })
        .collect();
    JacobiSvd {
        scaled_left: at,
        right_rows: vt,
        sigmas,
    }
}

/// (row_i, row_j) ← (c·row_i − s·row_j, s·row_i + c·row_j)
fn rotate_rows(m: &mut Array2<f64>, i: usize, j: usize, c: f64, s: f64) {
    let (mut a, mut b) = m.multi_slice_mut((ndarray::s![i, ..], ndarray::s![j, ..]));
    let xs = a.as_slice_mut().expect("row-major rows are contiguous");
    let ys = b.as_slice_mut().expect("row-major rows are contiguous");
    for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
        let new_x = c * *x - s * *y;
        let new_y = s * *x + c * *y;
        *x = new_x;
        *y = new_y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn reconstruct(svd: &JacobiSvd, n: usize) -> Array2<f64> {
        // A = Σ_l (scaled_left row l)ᵀ ⊗ (right row l)
        let k = svd.right_rows.nrows();
        let mut a = Array2::zeros((n, k));
        for l in 0..k {
            for r in 0..n {
                for c in 0..k {
                    a[(r, c)] += svd.scaled_left[(l, r)] * svd.right_rows[(l, c)];
                }
            }
        }
        a
    }

    #[test]
    fn already_orthogonal_columns() {
        let a = array![[3.0, 0.0], [4.0, 0.0], [0.0, 1.0]];
        let svd = one_sided_jacobi(a.t().to_owned());
        let mut sigmas = svd.sigmas.clone();
        sigmas.sort_by(|x, y| y.total_cmp(x));
        assert!((sigmas[0] - 5.0).abs() < 1e-12);
        assert!((sigmas[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstructs_rank_deficient_products() {
        // The regression case that broke the previous backend: an
        // exactly rank-2 product of Gaussian factors.
        let mut g = crate::rng::GaussianSource::new(crate::rng::stream_rng(
            21,
            "jacobi-regression",
            &[],
        ));
        let left = Array2::from_shape_fn((24, 2), |_| g.next_normal());
        let right = Array2::from_shape_fn((2, 29), |_| g.next_normal());
        let a = left.dot(&right);
        let svd = one_sided_jacobi(a.t().to_owned());
        let recon = reconstruct(&svd, 24);
        let err = recon
            .iter()
            .zip(a.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12, "reconstruction error {err}");
        // Exactly two non-negligible singular values.
        let mut sigmas = svd.sigmas.clone();
        sigmas.sort_by(|x, y| y.total_cmp(x));
        assert!(sigmas[1] > 1e-6);
        assert!(sigmas[2] < 1e-10 * sigmas[0]);
        // Right vectors orthonormal.
        for i in 0..29 {
            for j in i..29 {
                let dot = svd.right_rows.row(i).dot(&svd.right_rows.row(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12, "({i},{j}): {dot}");
            }
        }
    }
}
