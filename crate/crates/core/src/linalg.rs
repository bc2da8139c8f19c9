// SPDX-License-Identifier: Apache-2.0

//! Dense SVD for PCA: Householder QR to a square triangle, then one-sided
//! (Hestenes) Jacobi rotations. Wide matrices are orthogonalized row-wise
//! instead. Sequential and deterministic.

/// Right singular vectors of a row-major `rows x cols` matrix.
#[derive(Debug, Clone)]
pub struct RightSvd {
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// `vectors[i]` pairs with `singular_values[i]`; each has `cols` entries.
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

/// Reduce `a` (row-major, `rows x cols`, `rows > cols`) to its `cols x cols`
/// upper-triangular QR factor, row-major. `A^T A = R^T R`, so the right
/// singular vectors agree.
fn householder_r(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut col: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
        .collect();
    for j in 0..cols {
        let norm = col[j][j..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[j][j] > 0.0 { -norm } else { norm };
        let mut v = col[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for c in col.iter_mut().skip(j) {
            let tail = &mut c[j..];
            let dot: f64 = v.iter().zip(tail.iter()).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= f * vi;
            }
        }
    }
    let mut r = vec![0.0; cols * cols];
    for i in 0..cols {
        for k in i..cols {
            r[i * cols + k] = col[k][i];
        }
    }
    r
}

/// Right singular vectors and values of a row-major matrix.
///
/// Tall input (`rows > cols`) is reduced by QR and `cols` pairs are returned.
/// Wide input is orthogonalized row-wise, and `rows` pairs are returned; rows
/// then converge to `sigma_i * v_i`. Directions with zero singular value are
/// completed from the standard basis by Gram-Schmidt.
pub fn right_svd(a: &[f64], rows: usize, cols: usize) -> RightSvd {
    assert_eq!(a.len(), rows * cols);
    if rows < cols {
        let mut r: Vec<Vec<f64>> = a.chunks(cols).map(<[f64]>::to_vec).collect();
        jacobi(&mut r, None);
        let sigmas: Vec<f64> = r.iter().map(|x| norm(x)).collect();
        let order = descending(&sigmas);
        let tol = sigmas.iter().cloned().fold(0.0, f64::max) * f64::EPSILON * cols as f64;
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(rows);
        for &k in &order {
            if sigmas[k] > tol {
                vectors.push(r[k].iter().map(|x| x / sigmas[k]).collect());
            } else {
                vectors.push(complete(&vectors, cols));
            }
        }
        return RightSvd {
            singular_values: order.iter().map(|&k| if sigmas[k] > tol { sigmas[k] } else { 0.0 }).collect(),
            vectors,
        };
    }
    let (m, work) = if rows > cols {
        (cols, householder_r(a, rows, cols))
    } else {
        (rows, a.to_vec())
    };
    // column-major copies of the working matrix and of V
    let mut c: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..m).map(|i| work[i * cols + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    jacobi(&mut c, Some(&mut v));
    let sigmas: Vec<f64> = c.iter().map(|x| norm(x)).collect();
    let order = descending(&sigmas);
    RightSvd {
        singular_values: order.iter().map(|&k| sigmas[k]).collect(),
        vectors: order.into_iter().map(|k| v[k].clone()).collect(),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn descending(sigmas: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sigmas.len()).collect();
    order.sort_by(|&x, &y| sigmas[y].total_cmp(&sigmas[x]).then(x.cmp(&y)));
    order
}

/// First standard basis vector left with a non-negligible component after
/// projecting out `basis`, normalized.
fn complete(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut x = vec![0.0; dim];
        x[e] = 1.0;
        for b in basis {
            let d: f64 = b.iter().zip(&x).map(|(p, q)| p * q).sum();
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= d * bi);
        }
        let n = norm(&x);
        if n > 1e-6 {
            return x.into_iter().map(|v| v / n).collect();
        }
    }
    vec![0.0; dim]
}

/// Cyclic one-sided Jacobi: rotate pairs of `c` until mutually orthogonal,
/// applying the same rotations to `v` when given.
fn jacobi(c: &mut [Vec<f64>], mut v: Option<&mut [Vec<f64>]>) {
    let n = c.len();
    let scale: f64 = c.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum();
    let floor = scale * f64::EPSILON * f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha: f64 = c[i].iter().map(|x| x * x).sum();
                let beta: f64 = c[j].iter().map(|x| x * x).sum();
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma: f64 = c[i].iter().zip(&c[j]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(c, i, j, cs, sn);
                if let Some(v) = v.as_deref_mut() {
                    rotate(v, i, j, cs, sn);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, cs: f64, sn: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = cs * a - sn * b;
        *y = sn * a + cs * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let a = vec![3.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let s = right_svd(&a, 4, 3);
        assert!((s.singular_values[0] - 5.0).abs() < 1e-12);
        assert!((s.singular_values[1] - 3.0).abs() < 1e-12);
        assert!((s.singular_values[2] - 1.0).abs() < 1e-12);
        assert!((s.vectors[0][1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wide_matrix_reconstructs_gram() {
        // rows < cols: Jacobi runs on the matrix itself
        let a: Vec<f64> = (0..2 * 5).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let s = right_svd(&a, 2, 5);
        assert_eq!(s.vectors.len(), 2);
        // A^T A = V S^2 V^T
        for p in 0..5 {
            for q in 0..5 {
                let want: f64 = (0..2).map(|r| a[r * 5 + p] * a[r * 5 + q]).sum();
                let got: f64 = (0..s.vectors.len())
                    .map(|k| s.singular_values[k].powi(2) * s.vectors[k][p] * s.vectors[k][q])
                    .sum();
                assert!((want - got).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wide_rank_deficient_vectors_stay_orthonormal() {
        // three rows, the third the sum of the first two
        let mut a: Vec<f64> = (0..2 * 6).map(|i| ((i * 5 % 7) as f64) - 3.0).collect();
        let third: Vec<f64> = (0..6).map(|j| a[j] + a[6 + j]).collect();
        a.extend(third);
        let s = right_svd(&a, 3, 6);
        assert_eq!(s.singular_values[2], 0.0);
        for p in 0..3 {
            for q in 0..3 {
                let dot: f64 = (0..6).map(|i| s.vectors[p][i] * s.vectors[q][i]).sum();
                assert!((dot - if p == q { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
