//! Small dense linear algebra kernels.
//!
//! Least squares goes through a Householder QR (for tall systems) followed by
//! a one-sided Jacobi SVD of the triangular factor; the minimum-norm solution
//! is assembled from the truncated pseudo-inverse. Symmetric eigenproblems use
//! cyclic two-sided Jacobi rotations. Both are deterministic for a fixed input.

/// Result of [`lstsq_svd`].
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    /// Singular values in column order (unsorted).
    pub singular_values: Vec<f64>,
    /// Number of singular values kept.
    pub rank: usize,
    /// True when at least one singular value was discarded.
    pub truncated: bool,
}

const MAX_SWEEPS: usize = 60;

/// Minimum-norm least-squares solution of `A x = b`.
///
/// `a` is row-major with `cols` columns. Singular values at or below
/// `rel_threshold * sigma_max` are treated as zero.
pub fn lstsq_svd(a: &[f64], b: &[f64], cols: usize, rel_threshold: f64) -> LstsqSolution {
    assert!(cols > 0, "need at least one column");
    let rows = b.len();
    assert_eq!(a.len(), rows * cols, "matrix shape does not match right-hand side");

    // Column-major working copy.
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| a[i * cols + j]).collect()).collect();
    let mut rhs = b.to_vec();

    // Reduce tall systems to their R factor; Q^T is applied to the rhs.
    let p = if rows > cols {
        householder_qr_in_place(&mut work, &mut rhs);
        for col in work.iter_mut() {
            col.truncate(cols);
        }
        rhs.truncate(cols);
        cols
    } else {
        rows
    };

    // One-sided Jacobi: rotate column pairs of R (and V) until orthogonal.
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();
    let scale2 = work.iter().map(|c| dot(c, c)).fold(0.0, f64::max);
    let negligible = scale2 * 1e-30;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for j in 0..cols {
            for k in j + 1..cols {
                let alpha = dot(&work[j], &work[j]);
                let beta = dot(&work[k], &work[k]);
                let gamma = dot(&work[j], &work[k]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut work, j, k, c, s);
                rotate_pair(&mut v, j, k, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let singular_values: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
    let sigma_max = singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_threshold * sigma_max;
    let mut x = vec![0.0; cols];
    let mut rank = 0;
    for k in 0..cols {
        let sigma = singular_values[k];
        if sigma_max == 0.0 || sigma <= cutoff {
            continue;
        }
        rank += 1;
        // Column k of R V equals sigma_k u_k.
        let coef = dot(&work[k][..p], &rhs[..p]) / (sigma * sigma);
        for (xi, vi) in x.iter_mut().zip(&v[k]) {
            *xi += coef * vi;
        }
    }
    LstsqSolution {
        x,
        singular_values,
        rank,
        truncated: rank < cols,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate_pair(cols: &mut [Vec<f64>], j: usize, k: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(k);
    let (cj, ck) = (&mut left[j], &mut right[0]);
    for (a, b) in cj.iter_mut().zip(ck.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// In-place Householder QR of a column-major `rows x cols` matrix with
/// `rows > cols`. Leaves R in the upper triangle and applies Q^T to `rhs`.
fn householder_qr_in_place(cols: &mut [Vec<f64>], rhs: &mut [f64]) {
    let rows = rhs.len();
    let n = cols.len();
    for k in 0..n {
        let norm = cols[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut u: Vec<f64> = cols[k][k..].to_vec();
        u[0] -= alpha;
        let unorm2 = dot(&u, &u);
        if unorm2 == 0.0 {
            continue;
        }
        let apply = |target: &mut [f64]| {
            let f = 2.0 * dot(&u, target) / unorm2;
            for (t, ui) in target.iter_mut().zip(&u) {
                *t -= f * ui;
            }
        };
        for col in cols.iter_mut().skip(k + 1) {
            apply(&mut col[k..rows]);
        }
        apply(&mut rhs[k..rows]);
        cols[k][k] = alpha;
        for v in cols[k][k + 1..].iter_mut() {
            *v = 0.0;
        }
    }
}

/// Eigen-decomposition of a real symmetric `n x n` matrix (row-major).
///
/// Returns unsorted eigenvalues and the eigenvectors as columns of a
/// row-major `n x n` matrix. Iterates until the off-diagonal Frobenius norm
/// drops below `1e-12` times the matrix norm.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..100 {
        let off = off_norm(&a);
        if off == 0.0 || off < 1e-12 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
