//! Potential solve: `-eps Lap(phi) = rho` with `d_n phi + tau phi = xi` on every
//! boundary face.
//!
//! The Robin relation is closed with a ghost cell: the face value is
//! `(ghost + interior)/2` and the normal derivative `(ghost - interior)/h`.
//! Eliminating the ghost gives `(ghost - interior)/h = alpha (xi - tau phi_P)`
//! with `alpha = 1 / (1 + tau h / 2)`, which adds `eps alpha tau / h` to the
//! diagonal and `eps alpha xi / h` to the right-hand side. The resulting
//! operator is symmetric and, for `tau > 0`, positive definite.

use crate::error::{Error, Result};
use crate::field::{BoundaryClosure, ScalarField};
use crate::grid::{Grid, Side};
use crate::linalg::{pcg, CachedSolver, SolveStats, SolverKind, StencilOperator};
use crate::model::{BoundaryData, SpeciesSpec};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone)]
pub struct RobinPoissonProblem<'a> {
    pub rho: &'a ScalarField,
    pub epsilon: f64,
    pub tau: f64,
    pub xi: &'a BoundaryData,
    pub rtol: f64,
    pub max_iter: usize,
}

impl<'a> RobinPoissonProblem<'a> {
    pub fn new(rho: &'a ScalarField, epsilon: f64, tau: f64, xi: &'a BoundaryData) -> Self {
        Self {
            rho,
            epsilon,
            tau,
            xi,
            rtol: DEFAULT_RTOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter {
                key: "tau".into(),
                reason: format!("Robin capacitance must be positive (got {})", self.tau),
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                key: "epsilon".into(),
                reason: format!("permittivity must be positive (got {})", self.epsilon),
            });
        }
        if !(self.rtol > 0.0) {
            return Err(Error::InvalidParameter {
                key: "rtol".into(),
                reason: "tolerance must be positive".into(),
            });
        }
        if !self.rho.all_finite() {
            return Err(Error::Invariant("charge density is not finite".into()));
        }
        self.xi.validate(self.rho.grid())
    }

    /// Absolute max-norm residual target `rtol * (1 + |rho|_inf)`.
    pub fn tolerance(&self) -> f64 {
        self.rtol * (1.0 + self.rho.max_abs())
    }
}

/// `1 / (1 + tau h / 2)` for a face with normal spacing `h`.
#[inline]
pub fn robin_alpha(tau: f64, h: f64) -> f64 {
    1.0 / (1.0 + 0.5 * tau * h)
}

/// The discrete operator `-eps Lap_h` with the Robin closure eliminated.
pub fn robin_operator(grid: &Grid, epsilon: f64, tau: f64) -> StencilOperator {
    let mut bdiag = [0.0; 3];
    for a in 0..grid.dim() {
        let h = grid.h(a);
        bdiag[a] = epsilon * robin_alpha(tau, h) * tau / h;
    }
    StencilOperator::neg_laplacian(grid, epsilon, bdiag)
}

/// Right-hand side `rho + eps alpha xi / h` summed over the boundary faces of each cell.
pub fn robin_rhs(rho: &ScalarField, epsilon: f64, tau: f64, xi: &BoundaryData) -> Vec<f64> {
    let g = rho.grid();
    let mut b = rho.values().to_vec();
    for a in 0..g.dim() {
        let h = g.h(a);
        let w = epsilon * robin_alpha(tau, h) / h;
        for side in [Side::Low, Side::High] {
            let off = g.boundary_block_offset(a, side);
            for t in 0..g.faces_per_side(a) {
                b[g.boundary_cell(a, side, t)] += w * xi.xi[off + t];
            }
        }
    }
    b
}

fn finish(grid: &Grid, values: Vec<f64>, tau: f64, xi: &BoundaryData) -> Result<ScalarField> {
    let mut phi = ScalarField::from_values(grid, values)?;
    phi.fill_ghosts(BoundaryClosure::Robin { tau, xi: &xi.xi });
    if !phi.all_finite() {
        return Err(Error::Invariant("potential is not finite".into()));
    }
    Ok(phi)
}

/// Stateless preconditioned-CG solve. `warm` seeds the iteration when given.
pub fn solve_potential(
    problem: &RobinPoissonProblem<'_>,
    warm: Option<&ScalarField>,
) -> Result<ScalarField> {
    problem.validate()?;
    let g = problem.rho.grid();
    let op = robin_operator(g, problem.epsilon, problem.tau);
    let b = robin_rhs(problem.rho, problem.epsilon, problem.tau, problem.xi);
    let mut x = match warm {
        Some(w) => w.values().to_vec(),
        None => vec![0.0; g.num_cells()],
    };
    pcg(
        &op,
        &b,
        &mut x,
        problem.tolerance(),
        problem.max_iter,
        "potential PCG",
    )?;
    finish(g, x, problem.tau, problem.xi)
}

/// Reusable potential solver for a fixed grid, `epsilon` and `tau`; caches a
/// banded factorization when it fits.
#[derive(Debug, Clone)]
pub struct RobinPoissonSolver {
    solver: CachedSolver,
    epsilon: f64,
    tau: f64,
    pub rtol: f64,
    pub max_iter: usize,
}

impl RobinPoissonSolver {
    pub fn new(grid: &Grid, epsilon: f64, tau: f64, kind: SolverKind) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter {
                key: "tau".into(),
                reason: format!("Robin capacitance must be positive (got {tau})"),
            });
        }
        let op = robin_operator(grid, epsilon, tau);
        Ok(Self {
            solver: CachedSolver::new(op, kind, "potential PCG")?,
            epsilon,
            tau,
            rtol: DEFAULT_RTOL,
            max_iter: DEFAULT_MAX_ITER,
        })
    }

    pub fn is_direct(&self) -> bool {
        self.solver.is_direct()
    }

    /// Solve in place: `phi` is the warm start and receives the solution with
    /// its Robin ghost layer populated.
    pub fn solve_into(
        &self,
        rho: &ScalarField,
        xi: &BoundaryData,
        phi: &mut ScalarField,
    ) -> Result<SolveStats> {
        let b = robin_rhs(rho, self.epsilon, self.tau, xi);
        let tol = self.rtol * (1.0 + rho.max_abs());
        let mut x = phi.values().to_vec();
        let stats = self.solver.solve(&b, &mut x, tol, self.max_iter)?;
        *phi = finish(rho.grid(), x, self.tau, xi)?;
        Ok(stats)
    }
}

/// `rho = sum_i z_i c_i` cellwise.
pub fn charge_density(concentrations: &[ScalarField], species: &[SpeciesSpec]) -> Result<ScalarField> {
    if concentrations.len() != species.len() {
        return Err(Error::FieldMismatch(format!(
            "{} concentration fields for {} species",
            concentrations.len(),
            species.len()
        )));
    }
    let Some(first) = concentrations.first() else {
        return Err(Error::FieldMismatch("no species".into()));
    };
    let g = first.grid();
    let mut rho = vec![0.0; g.num_cells()];
    for (c, s) in concentrations.iter().zip(species) {
        for (r, v) in rho.iter_mut().zip(c.values()) {
            *r += s.valence * v;
        }
    }
    ScalarField::from_values(g, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::InitialProfile;

    fn species(z: &[f64]) -> Vec<SpeciesSpec> {
        z.iter()
            .map(|&z| SpeciesSpec::blocking(z, 1.0, InitialProfile::Uniform { value: 1.0 }))
            .collect()
    }

    #[test]
    fn charge_density_examples() {
        let g = make_grid(2, &[3, 3], &[1.0, 1.0]).unwrap();
        let c = |v: f64| ScalarField::constant(&g, v);
        let rho = charge_density(&[c(1.5), c(1.5)], &species(&[1.0, -1.0])).unwrap();
        assert!(rho.values().iter().all(|&v| v == 0.0));
        let rho = charge_density(&[c(3.0)], &species(&[2.0])).unwrap();
        assert!(rho.values().iter().all(|&v| v == 6.0));
        let rho = charge_density(&[c(1.0), c(2.0), c(3.0)], &species(&[1.0, 1.0, -1.0])).unwrap();
        assert!(rho.values().iter().all(|&v| v == 0.0));
        assert!(charge_density(&[c(1.0)], &species(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn constant_data_gives_constant_potential() {
        let g = make_grid(2, &[8, 6], &[1.0, 0.75]).unwrap();
        let rho = ScalarField::zeros(&g);
        let (tau, xi0) = (2.5, 1.75);
        let xi = BoundaryData::constant(&g, xi0);
        let phi = solve_potential(&RobinPoissonProblem::new(&rho, 0.3, tau, &xi), None).unwrap();
        for v in phi.values() {
            assert!((v - xi0 / tau).abs() < 1e-10);
        }
        // The closure reproduces the Robin relation on every face.
        for (fi, f) in g.boundary_faces().iter().enumerate() {
            let (gh, p, h) = (phi.ghosts()[fi], phi.values()[f.cell], g.h(f.axis));
            let lhs = (gh - p) / h + tau * (gh + p) / 2.0;
            assert!((lhs - xi0).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_xi_shifts_by_delta_over_tau() {
        let g = make_grid(2, &[6, 6], &[1.0, 1.0]).unwrap();
        let rho = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() - x[1]);
        let tau = 0.8;
        let solver = RobinPoissonSolver::new(&g, 0.5, tau, SolverKind::Banded).unwrap();
        let mut a = ScalarField::zeros(&g);
        let mut b = ScalarField::zeros(&g);
        solver.solve_into(&rho, &BoundaryData::constant(&g, 0.2), &mut a).unwrap();
        solver.solve_into(&rho, &BoundaryData::constant(&g, 0.2 + 0.4), &mut b).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - x - 0.4 / tau).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_meets_tolerance() {
        let g = make_grid(2, &[16, 16], &[1.0, 1.0]).unwrap();
        let rho = ScalarField::from_fn(&g, |x| 10.0 * (x[0] - 0.5) * (x[1] - 0.3));
        let xi = BoundaryData::from_fn(&g, |x| x[0] + 2.0 * x[1]);
        let prob = RobinPoissonProblem::new(&rho, 0.1, 3.0, &xi);
        let phi = solve_potential(&prob, None).unwrap();
        let op = robin_operator(&g, 0.1, 3.0);
        let b = robin_rhs(&rho, 0.1, 3.0, &xi);
        assert!(op.residual_inf(phi.values(), &b) <= prob.tolerance());
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let g = make_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let rho = ScalarField::zeros(&g);
        let xi = BoundaryData::constant(&g, 0.0);
        assert!(solve_potential(&RobinPoissonProblem::new(&rho, 1.0, 0.0, &xi), None).is_err());
        assert!(RobinPoissonSolver::new(&g, 1.0, -1.0, SolverKind::Auto).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = make_grid(2, &[32, 32], &[1.0, 1.0]).unwrap();
        let rho = ScalarField::from_fn(&g, |x| x[0]);
        let xi = BoundaryData::constant(&g, 0.0);
        let mut prob = RobinPoissonProblem::new(&rho, 1.0, 1.0, &xi);
        prob.max_iter = 3;
        match solve_potential(&prob, None) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn axis_permutation_symmetry() {
        let g = make_grid(2, &[8, 8], &[1.0, 1.0]).unwrap();
        let rho = ScalarField::from_fn(&g, |x| x[0] * x[1] + (x[0] + x[1]).cos());
        let xi = BoundaryData::from_fn(&g, |x| x[0] * x[1]);
        let phi = solve_potential(&RobinPoissonProblem::new(&rho, 1.0, 1.5, &xi), None).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let a = phi.values()[g.index(i, j, 0)];
                let b = phi.values()[g.index(j, i, 0)];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
