//! Small dense vector and matrix helpers. Matrices are row-major `Vec<Vec<f64>>`
//! since every system solved here is at most a few dozen rows.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is numerically singular.
pub fn solve(m: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .zip(rhs)
        .map(|(row, &r)| {
            let mut row = row.clone();
            row.push(r);
            row
        })
        .collect();
    let scale = a
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..=n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    Some(x)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
pub fn power_iteration(m: &[Vec<f64>], max_iter: usize, tol: f64) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    // deterministic, generic start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w: Vec<f64> = m.iter().map(|row| dot(row, &v)).collect();
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}
