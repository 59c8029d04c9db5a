//! Symmetric cell-centered stencil operators and the two solvers used on them:
//! Jacobi-preconditioned conjugate gradients and a banded Cholesky factorization.

use crate::error::{Error, Result};
use crate::grid::{Grid, Side};

/// Symmetric 5/7-point operator `(A x)_p = d_p x_p + sum_a c_a sum_{n in nbrs_a(p)} x_n`.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: Grid,
    offdiag: [f64; 3],
    diag: Vec<f64>,
}

impl StencilOperator {
    pub fn new(grid: &Grid, offdiag: [f64; 3], diag: Vec<f64>) -> Self {
        assert_eq!(diag.len(), grid.num_cells());
        Self {
            grid: *grid,
            offdiag,
            diag,
        }
    }

    /// `-scale * Laplacian` with zero-flux walls, plus `extra` on the diagonal of
    /// each cell for every boundary face it touches along the corresponding axis.
    pub fn neg_laplacian(grid: &Grid, scale: f64, boundary_diag: [f64; 3]) -> Self {
        let mut offdiag = [0.0; 3];
        for a in 0..grid.dim() {
            offdiag[a] = -scale / (grid.h(a) * grid.h(a));
        }
        let mut diag = vec![0.0; grid.num_cells()];
        for (p, d) in diag.iter_mut().enumerate() {
            for a in 0..grid.dim() {
                for side in [Side::Low, Side::High] {
                    if grid.touches(a, side, p) {
                        *d += boundary_diag[a];
                    } else {
                        *d -= offdiag[a];
                    }
                }
            }
        }
        Self::new(grid, offdiag, diag)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [f64] {
        &mut self.diag
    }

    pub fn offdiag(&self, axis: usize) -> f64 {
        self.offdiag[axis]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        let [n0, n1, n2] = g.shape();
        let dim = g.dim();
        let s1 = n0;
        let s2 = n0 * n1;
        let (c0, c1, c2) = (self.offdiag[0], self.offdiag[1], self.offdiag[2]);
        for k in 0..n2 {
            for j in 0..n1 {
                let row = n0 * (j + n1 * k);
                for i in 0..n0 {
                    let p = row + i;
                    let mut acc = self.diag[p] * x[p];
                    if i > 0 {
                        acc += c0 * x[p - 1];
                    }
                    if i + 1 < n0 {
                        acc += c0 * x[p + 1];
                    }
                    if j > 0 {
                        acc += c1 * x[p - s1];
                    }
                    if j + 1 < n1 {
                        acc += c1 * x[p + s1];
                    }
                    if dim == 3 {
                        if k > 0 {
                            acc += c2 * x[p - s2];
                        }
                        if k + 1 < n2 {
                            acc += c2 * x[p + s2];
                        }
                    }
                    y[p] = acc;
                }
            }
        }
    }

    /// `max_p |(A x - b)_p|`
    pub fn residual_inf(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        ax.iter().zip(b).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Band half-width in the flat cell ordering.
    pub fn bandwidth(&self) -> usize {
        self.grid.stride(self.grid.dim() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on an SPD stencil operator.
/// `x` holds the initial guess and receives the solution. Stops when the
/// max-norm residual drops to `tol`.
pub fn pcg(
    op: &StencilOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    name: &'static str,
) -> Result<SolveStats> {
    let n = b.len();
    let inv_diag: Vec<f64> = op.diag().iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut res = inf(&r);
    if res <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = inf(&r);
        if res <= tol {
            // Confirm against the true residual; the recurrence drifts.
            let true_res = op.residual_inf(x, b);
            if true_res <= tol {
                return Ok(SolveStats {
                    iterations: it,
                    residual: true_res,
                });
            }
            op.apply(x, &mut r);
            for i in 0..n {
                r[i] = b[i] - r[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        solver: name,
        iterations: max_iter,
        residual: op.residual_inf(x, b),
    })
}

/// Dense-band Cholesky factor `A = L L^T` of a stencil operator in the flat
/// cell ordering. Memory is `N * (bandwidth + 1)` doubles.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw ..= i]`.
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Largest `N * (bandwidth + 1)` we are willing to factor.
    pub const MAX_ENTRIES: usize = 8_000_000;

    pub fn fits(op: &StencilOperator) -> bool {
        op.grid().num_cells() * (op.bandwidth() + 1) <= Self::MAX_ENTRIES
    }

    pub fn factor(op: &StencilOperator) -> Result<Self> {
        let g = op.grid();
        let n = g.num_cells();
        let bw = op.bandwidth();
        let w = bw + 1;
        if n * w > Self::MAX_ENTRIES {
            return Err(Error::TooLarge {
                what: "banded Cholesky",
                size: n * w,
                limit: Self::MAX_ENTRIES,
            });
        }
        let mut l = vec![0.0; n * w];
        // Load the lower band of A.
        for p in 0..n {
            l[p * w + bw] = op.diag()[p];
            for a in 0..g.dim() {
                if !g.touches(a, Side::Low, p) {
                    let q = p - g.stride(a);
                    l[p * w + (q + bw - p)] = op.offdiag(a);
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in lo..j {
                    s -= l[ri + k] * l[rj + k];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Invariant(format!(
                            "operator is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let l = &self.l;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &l[i * w + bw - (i - lo)..i * w + bw];
            let s: f64 = row.iter().zip(&x[lo..i]).map(|(a, v)| a * v).sum();
            x[i] = (b[i] - s) / l[i * w + bw];
        }
        // L^T solve by rows of L: once x[i] is final, eliminate it from the
        // entries it couples to.
        for i in (0..n).rev() {
            x[i] /= l[i * w + bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let row = &l[i * w + bw - (i - lo)..i * w + bw];
            for (xj, a) in x[lo..i].iter_mut().zip(row) {
                *xj -= a * xi;
            }
        }
    }
}

/// Solver strategy for a fixed stencil operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Banded Cholesky when it fits in memory, otherwise PCG.
    #[default]
    Auto,
    Pcg,
    Banded,
}

/// A stencil operator together with a cached factorization when one is used.
#[derive(Debug, Clone)]
pub struct CachedSolver {
    op: StencilOperator,
    chol: Option<BandedCholesky>,
    name: &'static str,
}

impl CachedSolver {
    pub fn new(op: StencilOperator, kind: SolverKind, name: &'static str) -> Result<Self> {
        let chol = match kind {
            SolverKind::Pcg => None,
            SolverKind::Banded => Some(BandedCholesky::factor(&op)?),
            SolverKind::Auto => {
                if BandedCholesky::fits(&op) {
                    Some(BandedCholesky::factor(&op)?)
                } else {
                    None
                }
            }
        };
        Ok(Self { op, chol, name })
    }

    pub fn operator(&self) -> &StencilOperator {
        &self.op
    }

    pub fn is_direct(&self) -> bool {
        self.chol.is_some()
    }

    /// Solve `A x = b` to max-norm residual `tol`; `x` holds the warm start.
    pub fn solve(&self, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
        match &self.chol {
            Some(ch) => {
                ch.solve(b, x);
                let residual = self.op.residual_inf(x, b);
                if residual <= tol {
                    Ok(SolveStats {
                        iterations: 1,
                        residual,
                    })
                } else {
                    // Polish with CG from the direct solution.
                    pcg(&self.op, b, x, tol, max_iter, self.name)
                }
            }
            None => pcg(&self.op, b, x, tol, max_iter, self.name),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn dense(op: &StencilOperator) -> Vec<Vec<f64>> {
        let n = op.grid().num_cells();
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = vec![0.0; n];
                op.apply(&e, &mut col);
                col
            })
            .collect()
    }

    #[test]
    fn neg_laplacian_is_symmetric() {
        let g = make_grid(3, &[3, 4, 2], &[1.0, 2.0, 0.5]).unwrap();
        let op = StencilOperator::neg_laplacian(&g, 0.7, [0.3, 0.2, 0.1]);
        let a = dense(&op);
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    #[test]
    fn banded_and_pcg_agree() {
        for g in [
            make_grid(2, &[7, 5], &[1.0, 0.6]).unwrap(),
            make_grid(3, &[4, 3, 5], &[1.0, 1.0, 2.0]).unwrap(),
        ] {
            let op = StencilOperator::neg_laplacian(&g, 1.3, [2.0, 1.5, 0.5]);
            let b: Vec<f64> = (0..g.num_cells()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let ch = BandedCholesky::factor(&op).unwrap();
            let mut x1 = vec![0.0; b.len()];
            ch.solve(&b, &mut x1);
            assert!(op.residual_inf(&x1, &b) < 1e-11);
            let mut x2 = vec![0.0; b.len()];
            let st = pcg(&op, &b, &mut x2, 1e-12, 10_000, "test").unwrap();
            assert!(st.residual <= 1e-12);
            for (a, b) in x1.iter().zip(&x2) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_operator_is_rejected_by_cholesky() {
        let g = make_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let op = StencilOperator::neg_laplacian(&g, 1.0, [0.0; 3]);
        assert!(BandedCholesky::factor(&op).is_err());
    }

    #[test]
    fn pcg_reports_non_convergence() {
        let g = make_grid(2, &[16, 16], &[1.0, 1.0]).unwrap();
        let op = StencilOperator::neg_laplacian(&g, 1.0, [1.0, 1.0, 0.0]);
        let b = vec![1.0; g.num_cells()];
        let mut x = vec![0.0; b.len()];
        let err = pcg(&op, &b, &mut x, 1e-14, 2, "test").unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 2, .. }));
    }
}
