use super::matrix::dot;
use super::{LinalgError, Matrix};

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// A column pair counts as orthogonal once |⟨a_i, a_j⟩| ≤ this · ‖a_i‖‖a_j‖.
pub const ROTATION_TOL: f64 = 1e-12;

/// Thin singular value decomposition `a = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// p×k with k = min(p, q).
    pub u: Matrix,
    /// Non-negative, sorted descending.
    pub sigma: Vec<f64>,
    /// q×k.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// The rotations run over the columns of whichever orientation is tall, so a
/// p×q input costs O(min(p,q)² · max(p,q)) per sweep. Left singular vectors
/// for zero singular values are completed to an orthonormal set.
pub fn thin_svd(a: &Matrix) -> Result<Svd, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFiniteInput("thin_svd"));
    }
    let (p, q) = a.shape();
    if p >= q {
        // Columns of `a` are the rows of its transpose.
        let (u, sigma, v) = jacobi_columns(a.transpose());
        Ok(Svd { u, sigma, v })
    } else {
        let (v, sigma, u) = jacobi_columns(a.clone());
        Ok(Svd { u, sigma, v })
    }
}

/// `cols` holds the k columns of a tall n×k matrix W as its rows.
/// Returns (left n×k, sigma, right k×k) with W = left·diag(sigma)·rightᵀ.
fn jacobi_columns(mut cols: Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let k = cols.rows();
    let n = cols.cols();
    // Rows of `vt` are the columns of V.
    let mut vt = Matrix::identity(k);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let alpha = dot(cols.row(i), cols.row(i));
                let beta = dot(cols.row(j), cols.row(j));
                let gamma = dot(cols.row(i), cols.row(j));
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut cols, i, j, c, s);
                rotate_rows(&mut vt, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..k).map(|i| dot(cols.row(i), cols.row(i)).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let sigma: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tiny = smax * f64::EPSILON * n.max(k) as f64;

    let mut left: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (&idx, &s) in order.iter().zip(&sigma) {
        if s <= tiny || s == 0.0 {
            left.push(None);
            continue;
        }
        let mut u: Vec<f64> = cols.row(idx).iter().map(|x| x / s).collect();
        // Re-orthogonalise: small singular values leave roundoff in u.
        if orthogonalize(&mut u, &kept) {
            kept.push(u.clone());
            left.push(Some(u));
        } else {
            left.push(None);
        }
    }

    // Complete missing left vectors from the standard basis.
    let mut basis = 0;
    for slot in left.iter_mut().filter(|s| s.is_none()) {
        while basis < n {
            let mut e = vec![0.0; n];
            e[basis] = 1.0;
            basis += 1;
            if orthogonalize(&mut e, &kept) {
                kept.push(e.clone());
                *slot = Some(e);
                break;
            }
        }
    }

    let mut u = Matrix::zeros(n, k);
    for (j, col) in left.into_iter().enumerate() {
        let col = col.expect("n ≥ k guarantees a completion exists");
        for i in 0..n {
            u[(i, j)] = col[i];
        }
    }
    let mut v = Matrix::zeros(k, k);
    for (j, &idx) in order.iter().enumerate() {
        for i in 0..k {
            v[(i, j)] = vt[(idx, i)];
        }
    }
    (u, sigma, v)
}

fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(j * cols);
    let ri = &mut head[i * cols..(i + 1) * cols];
    let rj = &mut tail[..cols];
    for (a, b) in ri.iter_mut().zip(rj.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Two passes of modified Gram–Schmidt against `basis`, then normalise.
/// Returns false if nothing independent is left.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let start = dot(v, v).sqrt();
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let norm = dot(v, v).sqrt();
    if norm <= 1e-8 * start || norm == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}
