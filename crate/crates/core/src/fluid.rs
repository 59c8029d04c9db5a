//! Marker-and-cell momentum update with electrical forcing and a projection
//! onto discretely divergence-free face velocities.

use crate::error::{Error, Result};
use crate::field::{ScalarField, StaggeredVectorField};
use crate::grid::Grid;
use crate::linalg::{CachedSolver, SolveStats, SolverKind, StencilOperator};
use crate::model::{FluidModel, PhysicalParams, SimState};
use crate::nernst_planck::STABILITY_SAFETY;

pub const DEFAULT_DIV_TOL: f64 = 1e-10;
const PRESSURE_MAX_ITER: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FluidStepReport {
    pub div_before: f64,
    pub div_after: f64,
    pub pressure_iterations: usize,
    pub kinetic_before: f64,
    pub kinetic_after: f64,
}

/// `f = -K rho_face (phi_E - phi_P) / h` on interior faces, zero on walls.
pub fn electric_force(rho: &ScalarField, phi: &ScalarField, k: f64) -> StaggeredVectorField {
    let g = *rho.grid();
    let mut f = StaggeredVectorField::zeros(&g);
    let (r, p) = (rho.values(), phi.values());
    for axis in 0..g.dim() {
        let h = g.h(axis);
        let stride = g.stride(axis);
        for cell in 0..g.num_cells() {
            let mut c = g.coords(cell);
            if c[axis] + 1 == g.n(axis) {
                continue;
            }
            let e = cell + stride;
            c[axis] += 1;
            let fi = f.face_index(axis, c);
            f.component_mut(axis)[fi] = -k * 0.5 * (r[cell] + r[e]) * (p[e] - p[cell]) / h;
        }
    }
    f
}

/// Value of component `a` one face away from `c` along
/// `b`, with the no-slip closure: faces beyond a wall normal to `b != a`
/// mirror to `-u`, wall-normal faces are zero.
#[inline]
fn neighbour(u: &StaggeredVectorField, a: usize, c: [usize; 3], b: usize, up: bool) -> f64 {
    let g = u.grid();
    let s = StaggeredVectorField::face_shape(g, a);
    let here = u.component(a)[u.face_index(a, c)];
    let mut d = c;
    if up {
        if c[b] + 1 >= s[b] {
            return -here;
        }
        d[b] += 1;
    } else {
        if c[b] == 0 {
            return -here;
        }
        d[b] -= 1;
    }
    u.component(a)[u.face_index(a, d)]
}

/// Discrete vector Laplacian on interior faces with reflected wall ghosts.
pub fn vector_laplacian(u: &StaggeredVectorField) -> Vec<Vec<f64>> {
    let g = *u.grid();
    let mut out = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let comp = u.component(a);
        let mut lap = vec![0.0; comp.len()];
        for (idx, l) in lap.iter_mut().enumerate() {
            if u.is_boundary_face(a, idx) {
                continue;
            }
            let c = u.face_coords(a, idx);
            let here = comp[idx];
            for b in 0..g.dim() {
                let h2 = g.h(b) * g.h(b);
                *l += (neighbour(u, a, c, b, true) - 2.0 * here + neighbour(u, a, c, b, false)) / h2;
            }
        }
        out.push(lap);
    }
    out
}

/// Velocity component `b` averaged to the location of face `c` of axis `a`.
fn interpolate(u: &StaggeredVectorField, a: usize, c: [usize; 3], b: usize) -> f64 {
    if a == b {
        return u.component(a)[u.face_index(a, c)];
    }
    let mut sum = 0.0;
    for da in [0usize, 1] {
        for db in [0usize, 1] {
            let mut d = c;
            d[a] = c[a] + da - 1;
            d[b] = c[b] + db;
            sum += u.component(b)[u.face_index(b, d)];
        }
    }
    0.25 * sum
}

/// First-order upwind `(v . grad) u_a` on interior faces.
pub fn advection(u: &StaggeredVectorField) -> Vec<Vec<f64>> {
    let g = *u.grid();
    let mut out = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let comp = u.component(a);
        let mut adv = vec![0.0; comp.len()];
        for (idx, out_v) in adv.iter_mut().enumerate() {
            if u.is_boundary_face(a, idx) {
                continue;
            }
            let c = u.face_coords(a, idx);
            let here = comp[idx];
            for b in 0..g.dim() {
                let v = interpolate(u, a, c, b);
                let h = g.h(b);
                *out_v += if v >= 0.0 {
                    v * (here - neighbour(u, a, c, b, false)) / h
                } else {
                    v * (neighbour(u, a, c, b, true) - here) / h
                };
            }
        }
        out.push(adv);
    }
    out
}

/// `(|grad u|^2, |u|^2)` in the discrete L2 sense, consistent with
/// `|grad u|^2 = -<u, Lap_h u>` under the no-slip closure.
pub fn velocity_gradient_norms(u: &StaggeredVectorField) -> (f64, f64) {
    let g = *u.grid();
    let vol = g.cell_volume();
    let mut grad = 0.0;
    for a in 0..g.dim() {
        let comp = u.component(a);
        let s = StaggeredVectorField::face_shape(&g, a);
        for (idx, &here) in comp.iter().enumerate() {
            let c = u.face_coords(a, idx);
            let boundary = u.is_boundary_face(a, idx);
            for b in 0..g.dim() {
                let h2 = g.h(b) * g.h(b);
                if c[b] + 1 < s[b] {
                    let mut d = c;
                    d[b] += 1;
                    let there = comp[u.face_index(a, d)];
                    let d_is_boundary = b == a && d[a] == g.n(a);
                    // Pairs along the face-normal axis include the wall face
                    // itself; pairs between two wall faces do not count.
                    if !(boundary && (b != a || d_is_boundary)) {
                        grad += (there - here).powi(2) / h2;
                    }
                }
                if b != a && !boundary {
                    // Reflected ghost: half-cell difference (2u)^2 over half the volume.
                    let walls = (c[b] == 0) as u8 + (c[b] + 1 == s[b]) as u8;
                    grad += f64::from(walls) * 2.0 * here * here / h2;
                }
            }
        }
    }
    (grad * vol, u.l2_norm_sq())
}

/// `U += dt * |grad u|^4`, a left rectangle rule for `int |u|_V^4`.
#[inline]
pub fn accumulate_u(acc: f64, grad_sq: f64, dt: f64) -> f64 {
    acc + dt * grad_sq * grad_sq
}

/// Explicit viscous limit `0.9 / (2 nu sum_a 1/h_a^2)`.
pub fn viscous_dt(grid: &Grid, nu: f64) -> f64 {
    let s: f64 = (0..grid.dim()).map(|a| 1.0 / (grid.h(a) * grid.h(a))).sum();
    STABILITY_SAFETY / (2.0 * nu * s)
}

/// Advective CFL `0.9 / sum_a (max|u_a| / h_a)`.
pub fn advective_dt(u: &StaggeredVectorField) -> f64 {
    let g = u.grid();
    let s: f64 = (0..g.dim()).map(|a| u.max_abs(a) / g.h(a)).sum();
    if s > 0.0 {
        STABILITY_SAFETY / s
    } else {
        f64::INFINITY
    }
}

/// Combined fluid time-step bound for the configured model.
pub fn fluid_stability_dt(u: &StaggeredVectorField, params: &PhysicalParams) -> f64 {
    match params.fluid_model {
        FluidModel::Frozen => f64::INFINITY,
        FluidModel::Nps => viscous_dt(u.grid(), params.nu),
        FluidModel::Npns => viscous_dt(u.grid(), params.nu).min(advective_dt(u)),
    }
}

/// Projection solver with a cached pinned Neumann Laplacian.
#[derive(Debug, Clone)]
pub struct FluidSolver {
    pressure: CachedSolver,
    pub div_tol: f64,
}

impl FluidSolver {
    pub fn new(grid: &Grid, kind: SolverKind) -> Result<Self> {
        let mut op = StencilOperator::neg_laplacian(grid, 1.0, [0.0; 3]);
        let pin = -op.offdiag(0);
        op.diag_mut()[0] += pin;
        Ok(Self {
            pressure: CachedSolver::new(op, kind, "pressure PCG")?,
            div_tol: DEFAULT_DIV_TOL,
        })
    }

    /// Solve `-Lap p = rhs` (Neumann) and shift `p` to zero mean.
    fn solve_pressure(&self, rhs: &[f64], p: &mut Vec<f64>, tol: f64) -> Result<SolveStats> {
        let stats = self.pressure.solve(rhs, p, tol, PRESSURE_MAX_ITER)?;
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        p.iter_mut().for_each(|v| *v -= mean);
        Ok(stats)
    }

    /// Advance `state.velocity` and `state.pressure` by one step.
    pub fn step(
        &self,
        state: &mut SimState,
        params: &PhysicalParams,
        force: &StaggeredVectorField,
        dt: f64,
    ) -> Result<FluidStepReport> {
        let (u, p, report) = self.advance(&state.velocity, &state.pressure, params, force, dt)?;
        state.velocity = u;
        state.pressure = p;
        Ok(report)
    }

    /// Pure form of [`FluidSolver::step`]: returns the new velocity and pressure.
    pub fn advance(
        &self,
        u: &StaggeredVectorField,
        pressure: &ScalarField,
        params: &PhysicalParams,
        force: &StaggeredVectorField,
        dt: f64,
    ) -> Result<(StaggeredVectorField, ScalarField, FluidStepReport)> {
        let kinetic_before = u.l2_norm_sq();
        if params.fluid_model == FluidModel::Frozen {
            let div = u.max_divergence();
            let report = FluidStepReport {
                div_before: div,
                div_after: div,
                pressure_iterations: 0,
                kinetic_before,
                kinetic_after: kinetic_before,
            };
            return Ok((u.clone(), pressure.clone(), report));
        }
        let limit = fluid_stability_dt(u, params);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::StabilityViolation {
                kind: "fluid".into(),
                dt,
                limit,
            });
        }
        let g = *u.grid();
        let lap = vector_laplacian(u);
        let adv = (params.fluid_model == FluidModel::Npns).then(|| advection(u));
        let mut star = u.clone();
        for a in 0..g.dim() {
            let f = force.component(a);
            let l = &lap[a];
            for (idx, v) in star.component_mut(a).iter_mut().enumerate() {
                let mut rate = params.nu * l[idx] + f[idx];
                if let Some(adv) = &adv {
                    rate -= adv[a][idx];
                }
                *v += dt * rate;
            }
        }
        star.enforce_no_slip();

        let div = star.divergence();
        let div_before = div.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let rhs: Vec<f64> = div.iter().map(|d| -d / dt).collect();
        let rhs_max = div_before / dt;
        let tol = (0.25 * self.div_tol / dt).max(1e-13 * (1.0 + rhs_max));
        let mut p = pressure.values().to_vec();
        let stats = self.solve_pressure(&rhs, &mut p, tol)?;

        for a in 0..g.dim() {
            let h = g.h(a);
            let stride = g.stride(a);
            for cell in 0..g.num_cells() {
                let mut c = g.coords(cell);
                if c[a] + 1 == g.n(a) {
                    continue;
                }
                c[a] += 1;
                let fi = star.face_index(a, c);
                star.component_mut(a)[fi] -= dt * (p[cell + stride] - p[cell]) / h;
            }
        }
        let div_after = star.max_divergence();
        if !star.all_finite() {
            return Err(Error::Invariant("velocity is not finite".into()));
        }
        if div_after > self.div_tol {
            return Err(Error::Invariant(format!(
                "post-projection divergence {div_after:.3e} exceeds {:.3e}",
                self.div_tol
            )));
        }
        let report = FluidStepReport {
            div_before,
            div_after,
            pressure_iterations: stats.iterations,
            kinetic_before,
            kinetic_after: star.l2_norm_sq(),
        };
        Ok((star, ScalarField::from_values(&g, p)?, report))
    }
}

/// One-off fluid step that builds its own projection solver.
pub fn fluid_step(
    state: &mut SimState,
    params: &PhysicalParams,
    force: &StaggeredVectorField,
    dt: f64,
) -> Result<FluidStepReport> {
    FluidSolver::new(state.grid(), SolverKind::Auto)?.step(state, params, force, dt)
}
