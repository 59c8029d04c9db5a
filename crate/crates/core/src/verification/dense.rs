//! Dense direct solve of the Robin potential problem, assembled cell by cell
//! from the finite-volume balance without the stencil machinery.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{BoundaryClosure, ScalarField};
use crate::grid::Grid;
use crate::poisson::RobinPoissonProblem;

pub const DENSE_LIMIT: usize = 4096;

/// `(A, b)` for `-eps div grad Phi = rho` with `dn Phi + tau Phi = xi` on every wall.
pub fn assemble_dense_robin(
    grid: &Grid,
    epsilon: f64,
    tau: f64,
    rho: &[f64],
    xi: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = grid.num_cells();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            what: "dense oracle unknowns",
            size: n,
            limit: DENSE_LIMIT,
        });
    }
    let shape = grid.shape();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::from_column_slice(rho);
    let at = |c: [usize; 3]| c[0] + shape[0] * (c[1] + shape[1] * c[2]);
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                let c = [i, j, k];
                let p = at(c);
                for axis in 0..grid.dim() {
                    if c[axis] + 1 == shape[axis] {
                        continue;
                    }
                    let mut e = c;
                    e[axis] += 1;
                    let q = at(e);
                    let h = grid.h(axis);
                    let w = epsilon / (h * h);
                    a[(p, p)] += w;
                    a[(q, q)] += w;
                    a[(p, q)] -= w;
                    a[(q, p)] -= w;
                }
            }
        }
    }
    // Wall flux: with G the ghost, (G - P)/h + tau (G + P)/2 = xi gives the
    // outward derivative (xi - tau P) / (1 + tau h / 2).
    for (f, face) in grid.boundary_faces().iter().enumerate() {
        let h = grid.h(face.axis);
        let s = epsilon / (h * (1.0 + 0.5 * tau * h));
        a[(face.cell, face.cell)] += s * tau;
        b[face.cell] += s * xi[f];
    }
    Ok((a, b))
}

/// Ground-truth potential for `problem`, solved by dense Cholesky.
pub fn dense_poisson_oracle(problem: &RobinPoissonProblem<'_>) -> Result<ScalarField> {
    let g = problem.rho.grid();
    let (a, b) = assemble_dense_robin(g, problem.epsilon, problem.tau, problem.rho.values(), &problem.xi.xi)?;
    let chol = Cholesky::new(a).ok_or_else(|| Error::Invariant("dense Robin matrix is not positive definite".into()))?;
    let x = chol.solve(&b);
    let mut phi = ScalarField::from_values(g, x.iter().copied().collect())?;
    phi.fill_ghosts(BoundaryClosure::Robin {
        tau: problem.tau,
        xi: &problem.xi.xi,
    });
    Ok(phi)
}

/// Largest `|A - A^T|` entry and the smallest Cholesky pivot of the dense matrix.
pub fn structure_check(grid: &Grid, epsilon: f64, tau: f64) -> Result<(f64, f64)> {
    let n = grid.num_cells();
    let xi = vec![0.0; grid.num_boundary_faces()];
    let (a, _) = assemble_dense_robin(grid, epsilon, tau, &vec![0.0; n], &xi)?;
    let asym = (&a - a.transpose()).amax();
    let min_pivot = match Cholesky::new(a) {
        Some(c) => c.l().diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v)),
        None => f64::NEG_INFINITY,
    };
    Ok((asym, min_pivot))
}
