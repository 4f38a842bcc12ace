//! Symmetric tridiagonal eigensolver: Sturm-sequence bisection for the
//! eigenvalues, inverse iteration for the eigenvectors.
//!
//! Bisection is deterministic and robust for strongly graded diagonals,
//! which is what the effective 1D potentials produce.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, EigenPair};

/// Symmetric tridiagonal matrix stored by its diagonals.
#[derive(Debug, Clone)]
pub struct TridiagonalMatrix {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl TridiagonalMatrix {
    /// Build from the main diagonal and the sub/super-diagonal.
    ///
    /// `offdiag.len()` must equal `diag.len() - 1` and all entries must be
    /// finite.
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("tridiagonal matrix must be nonempty"));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(Error::invalid(format!(
                "offdiag length {} does not match n-1 = {}",
                offdiag.len(),
                diag.len() - 1
            )));
        }
        if diag.iter().chain(offdiag.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tridiagonal entries must be finite"));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// y = T x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.offdiag[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.offdiag[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for i in 0..n {
            let e_left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
            let e_right = if i + 1 < n { self.offdiag[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - e_left - e_right);
            hi = hi.max(self.diag[i] + e_left + e_right);
        }
        (lo, hi)
    }

    /// Scale of the matrix, used to make residual tolerances dimensionful.
    pub fn norm_estimate(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }
}

/// Count eigenvalues strictly below `lambda` via the Sturm sequence
/// (number of negative pivots of the LDL^T factorization of `T - lambda I`).
pub fn sturm_count_below(t: &TridiagonalMatrix, lambda: f64) -> usize {
    let n = t.n();
    let mut count = 0;
    let mut q = t.diag[0] - lambda;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..n {
        let q_safe = if q.abs() < 1e-300 {
            if q >= 0.0 {
                1e-300
            } else {
                -1e-300
            }
        } else {
            q
        };
        q = (t.diag[i] - lambda) - t.offdiag[i - 1] * t.offdiag[i - 1] / q_safe;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Bisect for the k-th smallest eigenvalue (k = 0-based) inside `(lo, hi)`.
fn bisect_eigenvalue(t: &TridiagonalMatrix, k: usize, lo0: f64, hi0: f64) -> f64 {
    let mut lo = lo0;
    let mut hi = hi0;
    for _ in 0..220 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) < 2.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if sturm_count_below(t, mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solve (T - lambda I) x = b by LU with partial pivoting on the bands
/// (one fill-in superdiagonal appears, as in LAPACK's gtsv). Pivots are
/// floored at eps * ||T|| so a shift sitting exactly on an eigenvalue
/// amplifies the eigenvector without overflowing; inverse iteration relies
/// on exactly that amplification.
fn shifted_solve(t: &TridiagonalMatrix, lambda: f64, b: &[f64]) -> Vec<f64> {
    let n = t.n();
    let mut d: Vec<f64> = t.diag.iter().map(|&v| v - lambda).collect();
    let mut u = vec![0.0; n]; // first superdiagonal, u[i] at (i, i+1)
    let mut w = vec![0.0; n]; // fill-in second superdiagonal, w[i] at (i, i+2)
    for i in 0..n - 1 {
        u[i] = t.offdiag[i];
    }
    let mut x = b.to_vec();

    let guard = (f64::EPSILON * t.norm_estimate()).max(1e-300);
    let safe = |v: f64| if v.abs() < guard { guard.copysign(v) } else { v };

    // Invariant at step i: row i has support {i, i+1, i+2} = (d, u, w);
    // row i+1 has support {i, i+1, i+2} = (sub = offdiag[i], d, u).
    for i in 0..n - 1 {
        let sub = t.offdiag[i];
        if sub.abs() > d[i].abs() {
            // swap rows i and i+1
            let (d_piv, u_piv, w_piv) = (sub, d[i + 1], u[i + 1]);
            let (sub_new, dd, uu) = (d[i], u[i], w[i]);
            d[i] = d_piv;
            u[i] = u_piv;
            w[i] = w_piv;
            x.swap(i, i + 1);
            let f = sub_new / safe(d_piv);
            d[i + 1] = dd - f * u_piv;
            u[i + 1] = uu - f * w_piv;
            x[i + 1] -= f * x[i];
        } else {
            w[i] = 0.0;
            let f = sub / safe(d[i]);
            d[i + 1] -= f * u[i];
            x[i + 1] -= f * x[i];
        }
    }

    x[n - 1] /= safe(d[n - 1]);
    if n >= 2 {
        x[n - 2] = (x[n - 2] - u[n - 2] * x[n - 1]) / safe(d[n - 2]);
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - u[i] * x[i + 1] - w[i] * x[i + 2]) / safe(d[i]);
    }
    x
}

/// Compute the `count` algebraically smallest eigenvalues of `t` with
/// eigenvectors, in nondecreasing order.
///
/// `tol` is the absolute residual bound `||T x - lambda x||` accepted per
/// pair (vectors are unit norm). Degenerate eigenvalues are reported with
/// all copies, orthonormalized within the cluster.
pub fn tridiag_smallest(
    t: &TridiagonalMatrix,
    count: usize,
    tol: f64,
) -> Result<Vec<EigenPair>> {
    let n = t.n();
    if count == 0 || count > n {
        return Err(Error::invalid(format!(
            "requested {count} eigenpairs of an n = {n} matrix"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }

    let (glo, ghi) = t.gershgorin();
    let lo = glo - 1.0;
    let hi = ghi + 1.0;

    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        values.push(bisect_eigenvalue(t, k, lo, hi));
    }

    // Inverse iteration per eigenvalue; orthogonalize within clusters of
    // near-equal eigenvalues so degenerate copies get independent vectors.
    let scale = t.norm_estimate().max(1.0);
    let cluster_tol = 1e-10 * scale;
    let mut pairs: Vec<EigenPair> = Vec::with_capacity(count);
    let mut rng = DeterministicRng::new(0x7469_6469_6167); // fixed seed

    for (k, &lambda) in values.iter().enumerate() {
        let cluster_start = values[..k]
            .iter()
            .rposition(|&v| (lambda - v).abs() > cluster_tol)
            .map_or(0, |p| p + 1);

        let mut x: Vec<f64> = (0..n).map(|_| rng.uniform() - 0.5).collect();
        orthogonalize_against(&mut x, &pairs[cluster_start..k]);
        let nx = norm(&x);
        for v in &mut x {
            *v /= nx;
        }

        let mut residual = f64::MAX;
        let mut best = x.clone();
        for _ in 0..8 {
            let mut y = shifted_solve(t, lambda, &x);
            orthogonalize_against(&mut y, &pairs[cluster_start..k]);
            let ny = norm(&y);
            if !(ny > 0.0) || !ny.is_finite() {
                // restart from a fresh vector
                x = (0..n).map(|_| rng.uniform() - 0.5).collect();
                let nx = norm(&x);
                for v in &mut x {
                    *v /= nx;
                }
                continue;
            }
            for v in &mut y {
                *v /= ny;
            }
            x = y;
            let mut ax = vec![0.0; n];
            t.matvec(&x, &mut ax);
            let rq = dot(&x, &ax);
            let r: f64 = ax
                .iter()
                .zip(&x)
                .map(|(a, v)| (a - rq * v).powi(2))
                .sum::<f64>()
                .sqrt();
            if r < residual {
                residual = r;
                best = x.clone();
            }
            if residual <= tol {
                break;
            }
        }
        if residual > tol {
            return Err(Error::NonConvergence {
                iterations: 8,
                best_residual: residual,
                requested: tol,
            });
        }
        // canonical sign: first entry of largest magnitude positive
        let imax = best
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if best[imax] < 0.0 {
            for v in &mut best {
                *v = -*v;
            }
        }
        pairs.push(EigenPair {
            value: lambda,
            vector: best,
            residual,
        });
    }
    Ok(pairs)
}

fn orthogonalize_against(x: &mut [f64], prev: &[EigenPair]) {
    for p in prev {
        let proj = dot(x, &p.vector);
        for (xi, vi) in x.iter_mut().zip(&p.vector) {
            *xi -= proj * vi;
        }
    }
}

/// Small splitmix64 generator for deterministic start vectors.
pub(crate) struct DeterministicRng(u64);

impl DeterministicRng {
    pub(crate) fn new(seed: u64) -> Self {
        Self(seed)
    }

    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
