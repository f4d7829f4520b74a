//! Small dense linear-algebra helpers: exact rank of integer matrices,
//! an allocation-free Cholesky solve for the allocation hot loop, and
//! nonnegative least squares / nonnegative quadratic programs.

use nalgebra::{DMatrix, DVector};

/// Rank of an integer matrix by fraction-free (Bareiss) elimination.
/// Exact for the 0/1 incidence matrices used throughout the crate.
pub fn rank_exact(rows: &[Vec<i64>]) -> usize {
    let r = rows.len();
    if r == 0 {
        return 0;
    }
    let c = rows[0].len();
    let mut a: Vec<Vec<i128>> = rows
        .iter()
        .map(|row| row.iter().map(|&v| v as i128).collect())
        .collect();
    let mut prev: i128 = 1;
    let mut rank = 0;
    for col in 0..c {
        if rank == r {
            break;
        }
        let Some(p) = (rank..r).find(|&i| a[i][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][col];
        for i in rank + 1..r {
            let factor = a[i][col];
            for k in col + 1..c {
                a[i][k] = (pivot * a[i][k] - factor * a[rank][k]) / prev;
            }
            a[i][col] = 0;
        }
        prev = pivot;
        rank += 1;
    }
    rank
}

/// Solves `H x = b` in place for a symmetric positive definite `n×n` matrix
/// stored row-major in `h` (overwritten by its Cholesky factor). Returns
/// `false` if a pivot is not positive.
pub fn cholesky_solve_in_place(h: &mut [f64], n: usize, b: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = h[j * n + j];
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        h[j * n + j] = d;
        for i in j + 1..n {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= h[i * n + k] * b[k];
        }
        b[i] = s / h[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= h[k * n + i] * b[k];
        }
        b[i] = s / h[i * n + i];
    }
    true
}

/// Minimum-norm least-squares solution of `m x = v`.
pub fn lstsq_min_norm(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    svd.solve(v, tol).unwrap_or_else(|_| DVector::zeros(m.ncols()))
}

/// Nonnegative least squares `min ‖m x − v‖₂, x ≥ 0` (Lawson–Hanson).
pub fn nnls(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (m.norm() * v.norm()).max(1.0);
    for _outer in 0..3 * n + 10 {
        let w = m.transpose() * (v - m * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        passive[j] = true;
        for _inner in 0..3 * n + 10 {
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = m.select_columns(&cols);
            let zs = lstsq_min_norm(&sub, v);
            if zs.iter().all(|&z| z > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = zs[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if zs[k] <= 0.0 {
                    alpha = alpha.min(x[c] / (x[c] - zs[k]));
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += alpha * (zs[k] - x[c]);
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    x
}

/// Nonnegative quadratic program `min ½ yᵀ H y − bᵀ y, y ≥ 0` for positive
/// definite `H`, by a primal active-set method.
pub fn nnqp(h: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut y = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = b.amax().max(1e-300);
    for _outer in 0..3 * n + 10 {
        let neg_grad = b - h * &y;
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&a, &c| neg_grad[a].total_cmp(&neg_grad[c]));
        let Some(j) = candidate else { break };
        if neg_grad[j] <= 1e-13 * scale {
            break;
        }
        passive[j] = true;
        for _inner in 0..3 * n + 10 {
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let hp = h.select_rows(&cols).select_columns(&cols);
            let bp = DVector::from_iterator(cols.len(), cols.iter().map(|&c| b[c]));
            let zs = match hp.cholesky() {
                Some(ch) => ch.solve(&bp),
                None => lstsq_min_norm(&h.select_rows(&cols).select_columns(&cols), &bp),
            };
            if zs.iter().all(|&z| z > 0.0) {
                y.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    y[c] = zs[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if zs[k] <= 0.0 {
                    alpha = alpha.min(y[c] / (y[c] - zs[k]));
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                y[c] += alpha * (zs[k] - y[c]);
                if y[c] <= 1e-15 * scale {
                    y[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    y
}
