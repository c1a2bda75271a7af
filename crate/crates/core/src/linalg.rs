//! Small dense linear-algebra helpers shared by the estimators and precoders.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Unit-modulus phasor `e^{j·phase}`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Thin SVD `a = U·diag(s)·Vᴴ` with singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Slower than bidiagonalization but accurate for rank-deficient inputs, where
/// the subspace estimators need exact dominant singular vectors.
pub fn svd(a: &CMat) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.adjoint());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let mut v = CMat::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let x = mat[(r, p)];
                        let y = mat[(r, q)] * phase.conj();
                        mat[(r, p)] = x * c - y * s;
                        mat[(r, q)] = x * s + y * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let mut u = CMat::zeros(m, n);
    for (c, &i) in order.iter().enumerate() {
        if norms[i] > 0.0 {
            u.set_column(c, &(w.column(i) / C64::from(norms[i])));
        }
    }
    complete_orthonormal(&mut u, &s);
    let v = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Svd { u, s, v }
}

/// Replaces the columns of `u` belonging to zero singular values by an
/// orthonormal completion, so `u` always has orthonormal columns.
fn complete_orthonormal(u: &mut CMat, s: &[f64]) {
    let (m, n) = (u.nrows(), u.ncols());
    let mut e = 0;
    for c in 0..n {
        if s[c] > 0.0 {
            continue;
        }
        while e < m {
            let mut x = CVec::from_fn(m, |r, _| if r == e { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
            e += 1;
            for k in 0..n {
                if k != c && (s[k] > 0.0 || k < c) {
                    let proj = u.column(k).dotc(&x);
                    x.axpy(-proj, &u.column(k), C64::new(1.0, 0.0));
                }
            }
            let norm = x.norm();
            if norm > 0.5 {
                u.set_column(c, &(x / C64::from(norm)));
                break;
            }
        }
    }
}

/// Singular values and left singular vectors, sorted by decreasing singular value.
pub fn sorted_svd(a: &CMat) -> (Vec<f64>, CMat) {
    let d = svd(a);
    (d.s, d.u)
}

/// The `rank` dominant left singular vectors of `a`.
pub fn signal_subspace(a: &CMat, rank: usize) -> Result<CMat> {
    let (values, vectors) = sorted_svd(a);
    if rank == 0 || rank > values.len() {
        return Err(Error::RankDeficient(format!(
            "requested subspace of rank {rank} from {} singular values",
            values.len()
        )));
    }
    let floor = values[0] * 1e-12;
    if values[0] == 0.0 || values[rank - 1] <= floor {
        return Err(Error::RankDeficient(format!(
            "signal subspace has numerical rank below {rank}"
        )));
    }
    Ok(vectors.columns(0, rank).into_owned())
}

/// Eigenvalues of a Hermitian matrix in decreasing order.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let eig = nalgebra::linalg::SymmetricEigen::new(a.clone());
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Least-squares solution of `a·x = b` through the SVD.
///
/// Fails when the 2-norm condition number of `aᴴa` exceeds `max_gram_condition`.
pub fn least_squares(a: &CMat, b: &CMat, max_gram_condition: f64) -> Result<CMat> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "least squares with {} equations but {} right-hand rows",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() > a.nrows() {
        return Err(Error::RankDeficient(format!(
            "{} unknowns from {} equations",
            a.ncols(),
            a.nrows()
        )));
    }
    let d = svd(a);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let smin = d.s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || !(smin > 0.0) || (smax / smin).powi(2) > max_gram_condition {
        return Err(Error::RankDeficient(format!(
            "normal matrix condition {:.3e} exceeds {:.1e}",
            (smax / smin).powi(2),
            max_gram_condition
        )));
    }
    let mut ub = d.u.adjoint() * b;
    for (i, mut row) in ub.row_iter_mut().enumerate() {
        row /= C64::from(d.s[i]);
    }
    Ok(d.v * ub)
}

/// Eigenvalues and (unit-norm) right eigenvectors of a general complex matrix,
/// obtained from the complex Schur form by back substitution.
pub fn eig_general(a: &CMat) -> Result<(Vec<C64>, CMat)> {
    let n = a.nrows();
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut x = CMat::zeros(n, n);
    for k in 0..n {
        x[(k, k)] = C64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t[(j, l)] * x[(l, k)];
            }
            let mut denom = t[(j, j)] - t[(k, k)];
            if denom.norm() < 1e-14 * scale {
                denom = C64::new(1e-14 * scale, 0.0);
            }
            x[(j, k)] = -acc / denom;
        }
    }
    let mut v = q * x;
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= C64::from(norm);
        }
    }
    Ok((values, v))
}

/// Minimum-cost assignment between rows and columns of a small cost matrix.
///
/// Returns `(row, col)` pairs; `min(rows, cols)` pairs are produced. Exhaustive
/// search with pruning, intended for the handful of paths per user.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        return min_cost_assignment(&transposed)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
    }

    struct Search<'a> {
        cost: &'a [Vec<f64>],
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_cost: f64,
    }
    fn visit(s: &mut Search<'_>, row: usize, acc: f64) {
        if acc >= s.best_cost {
            return;
        }
        if row == s.cost.len() {
            s.best_cost = acc;
            s.best = s.current.clone();
            return;
        }
        for c in 0..s.used.len() {
            if !s.used[c] {
                s.used[c] = true;
                s.current.push(c);
                visit(s, row + 1, acc + s.cost[row][c]);
                s.current.pop();
                s.used[c] = false;
            }
        }
    }
    let mut search = Search {
        cost,
        used: vec![false; cols],
        current: Vec::with_capacity(rows),
        best: Vec::new(),
        best_cost: f64::INFINITY,
    };
    visit(&mut search, 0, 0.0);
    search.best.into_iter().enumerate().collect()
}

/// Squared Frobenius norm of a complex matrix.
pub fn energy(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}
