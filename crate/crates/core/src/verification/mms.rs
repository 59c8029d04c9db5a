//! Manufactured-solution convergence studies.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{BoundaryClosure, ScalarField, StaggeredVectorField};
use crate::grid::Grid;
use crate::linalg::SolverKind;
use crate::model::{BoundaryData, InitialProfile, SimState, SpeciesSpec};
use crate::nernst_planck::{advance_concentrations, stability_dt};
use crate::poisson::RobinPoissonSolver;

pub const MMS_CASES: [&str; 3] = ["poisson_robin", "diffusion_blocking", "advection_diffusion_frozen_u"];

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub case: String,
    /// `"space"` when `h` is refined (with `dt` tied to it), `"time"` when only `dt` is.
    pub refinement: String,
    pub cells: Vec<usize>,
    pub h: Vec<f64>,
    pub dt: Vec<f64>,
    pub errors: Vec<f64>,
    /// Order between consecutive levels.
    pub observed: Vec<f64>,
    /// Least-squares slope of `log error` against `log` of the refined parameter.
    pub fitted_order: f64,
    pub target_order: f64,
    pub passed: bool,
}

impl ConvergenceReport {
    fn build(case: &str, refinement: &str, cells: Vec<usize>, h: Vec<f64>, dt: Vec<f64>, errors: Vec<f64>, target: f64) -> Self {
        let param: &[f64] = if refinement == "time" { &dt } else { &h };
        let observed = errors
            .windows(2)
            .zip(param.windows(2))
            .map(|(e, p)| (e[0] / e[1]).ln() / (p[0] / p[1]).ln())
            .collect();
        let fitted_order = fit_slope(param, &errors);
        Self {
            case: case.into(),
            refinement: refinement.into(),
            cells,
            h,
            dt,
            errors,
            observed,
            fitted_order,
            target_order: target,
            passed: fitted_order >= target,
        }
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} ({} refinement): fitted order {:.3} (target {:.1}) {}\n",
            self.case,
            self.refinement,
            self.fitted_order,
            self.target_order,
            if self.passed { "PASS" } else { "FAIL" }
        );
        s.push_str("  cells        h           dt          error       order\n");
        for i in 0..self.errors.len() {
            let ord = if i == 0 { String::from("-") } else { format!("{:.3}", self.observed[i - 1]) };
            s.push_str(&format!(
                "  {:<8} {:<11.4e} {:<11.4e} {:<11.4e} {}\n",
                self.cells[i], self.h[i], self.dt[i], self.errors[i], ord
            ));
        }
        s
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

fn l2_error(f: &ScalarField, exact: impl Fn([f64; 3]) -> f64) -> f64 {
    let g = f.grid();
    let s: f64 = (0..g.num_cells())
        .map(|i| {
            let e = f.values()[i] - exact(g.cell_center(i));
            e * e
        })
        .sum();
    (s * g.cell_volume()).sqrt()
}

fn unit_square(n: usize) -> Result<Grid> {
    Grid::new(2, &[n, n], &[1.0, 1.0])
}

fn neutral_potential(g: &Grid) -> ScalarField {
    let mut phi = ScalarField::zeros(g);
    phi.fill_ghosts(BoundaryClosure::Neumann);
    phi
}

const SPACE_LEVELS: [usize; 3] = [16, 32, 64];

fn poisson_robin() -> Result<ConvergenceReport> {
    let (eps, tau) = (0.5, 2.0);
    let phi = |x: [f64; 3]| (PI * x[0]).cos() * (2.0 * PI * x[1]).cos() + 0.5 * x[0] * x[0] + 0.25 * x[1];
    let grad = |x: [f64; 3]| {
        [
            -PI * (PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + x[0],
            -2.0 * PI * (PI * x[0]).cos() * (2.0 * PI * x[1]).sin() + 0.25,
        ]
    };
    let lap = |x: [f64; 3]| -5.0 * PI * PI * (PI * x[0]).cos() * (2.0 * PI * x[1]).cos() + 1.0;
    let mut errors = Vec::new();
    let mut hs = Vec::new();
    for n in SPACE_LEVELS {
        let g = unit_square(n)?;
        let rho = ScalarField::from_fn(&g, |x| -eps * lap(x));
        let xi: Vec<f64> = g
            .boundary_faces()
            .iter()
            .map(|f| {
                let nrm = f.normal();
                let gr = grad(f.center);
                nrm[0] * gr[0] + nrm[1] * gr[1] + tau * phi(f.center)
            })
            .collect();
        let xi = BoundaryData { xi };
        let solver = RobinPoissonSolver::new(&g, eps, tau, SolverKind::Auto)?;
        let mut sol = ScalarField::zeros(&g);
        solver.solve_into(&rho, &xi, &mut sol)?;
        errors.push(l2_error(&sol, phi));
        hs.push(g.h(0));
    }
    let dt = vec![0.0; hs.len()];
    Ok(ConvergenceReport::build("poisson_robin", "space", SPACE_LEVELS.to_vec(), hs, dt, errors, 1.9))
}

fn cos_mode() -> InitialProfile {
    InitialProfile::CosineMode {
        background: 1.0,
        amplitude: 0.5,
        modes: vec![1, 1],
    }
}

/// Forward-Euler runs of neutral diffusion with an optional source.
fn run_neutral(
    state: &mut SimState,
    species: &[SpeciesSpec],
    t_end: f64,
    dt: f64,
    source: Option<&dyn Fn([f64; 3], f64) -> f64>,
) -> Result<f64> {
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let g = state.grid().clone();
    for n in 0..steps {
        let t = n as f64 * dt;
        let mut next = advance_concentrations(state, species, dt)?;
        if let Some(f) = source {
            for (i, v) in next[0].values_mut().iter_mut().enumerate() {
                *v += dt * f(g.cell_center(i), t);
            }
        }
        state.concentrations = next;
    }
    Ok(dt)
}

fn diffusion_blocking() -> Result<Vec<ConvergenceReport>> {
    let species = [SpeciesSpec::blocking(0.0, 1.0, cos_mode())];
    let mode = |x: [f64; 3]| (PI * x[0]).cos() * (PI * x[1]).cos();

    // Space regime: dt = h^2 / 5 keeps the Euler error at O(h^2).
    let t_end = 0.05;
    let (mut errors, mut hs, mut dts) = (vec![], vec![], vec![]);
    for n in SPACE_LEVELS {
        let g = unit_square(n)?;
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = neutral_potential(&g);
        let h = g.h(0);
        let dt = run_neutral(&mut state, &species, t_end, 0.2 * h * h, None)?;
        let decay = (-2.0 * PI * PI * t_end).exp();
        errors.push(l2_error(&state.concentrations[0], |x| 1.0 + 0.5 * decay * mode(x)));
        hs.push(h);
        dts.push(dt);
    }
    let space = ConvergenceReport::build("diffusion_blocking", "space", SPACE_LEVELS.to_vec(), hs, dts, errors, 1.9);

    // Time regime: compare with the exact semi-discrete decay of the
    // discrete cosine eigenmode so only the Euler error remains.
    let n = 8;
    let g = unit_square(n)?;
    let h = g.h(0);
    let lambda = 2.0 * 4.0 / (h * h) * (0.5 * PI * h).sin().powi(2);
    let t_end = 0.1;
    let (mut errors, mut dts) = (vec![], vec![]);
    for steps in [40usize, 80, 160] {
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = neutral_potential(&g);
        let dt = run_neutral(&mut state, &species, t_end, t_end / steps as f64, None)?;
        let decay = (-lambda * t_end).exp();
        errors.push(l2_error(&state.concentrations[0], |x| 1.0 + 0.5 * decay * mode(x)));
        dts.push(dt);
    }
    let time = ConvergenceReport::build("diffusion_blocking", "time", vec![n; 3], vec![h; 3], dts, errors, 0.9);
    Ok(vec![space, time])
}

/// Discretely divergence-free velocity from the stream function
/// `psi = sin^2(pi x) sin^2(pi y) / pi`, sampled as differences of `psi`
/// across each face.
pub fn stream_velocity(g: &Grid) -> StaggeredVectorField {
    let psi = |x: f64, y: f64| (PI * x).sin().powi(2) * (PI * y).sin().powi(2) / PI;
    let mut u = StaggeredVectorField::zeros(g);
    let (hx, hy) = (g.h(0), g.h(1));
    for a in 0..2 {
        let n = u.component(a).len();
        for idx in 0..n {
            let c = u.face_center(a, idx);
            let v = if a == 0 {
                (psi(c[0], c[1] + 0.5 * hy) - psi(c[0], c[1] - 0.5 * hy)) / hy
            } else {
                -(psi(c[0] + 0.5 * hx, c[1]) - psi(c[0] - 0.5 * hx, c[1])) / hx
            };
            u.component_mut(a)[idx] = v;
        }
    }
    u.enforce_no_slip();
    u
}

fn advection_diffusion() -> Result<ConvergenceReport> {
    let d = 0.1;
    let species = [SpeciesSpec::blocking(0.0, d, cos_mode())];
    let exact = |x: [f64; 3], t: f64| 1.0 + 0.5 * (-t).exp() * (PI * x[0]).cos() * (PI * x[1]).cos();
    let source = move |x: [f64; 3], t: f64| {
        let a = 0.5 * (-t).exp();
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let u = sx * sx * (2.0 * PI * x[1]).sin();
        let v = -(2.0 * PI * x[0]).sin() * sy * sy;
        let dt_c = -a * cx * cy;
        let adv = u * (-a * PI * sx * cy) + v * (-a * PI * cx * sy);
        let lap = -2.0 * PI * PI * a * cx * cy;
        dt_c + adv - d * lap
    };
    let t_end = 0.25;
    let (mut errors, mut hs, mut dts) = (vec![], vec![], vec![]);
    for n in SPACE_LEVELS {
        let g = unit_square(n)?;
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = neutral_potential(&g);
        state.velocity = stream_velocity(&g);
        let bound = stability_dt(&state, &species, 1.0)?;
        let dt = run_neutral(&mut state, &species, t_end, 0.5 * bound, Some(&source))?;
        errors.push(l2_error(&state.concentrations[0], |x| exact(x, t_end)));
        hs.push(g.h(0));
        dts.push(dt);
    }
    Ok(ConvergenceReport::build(
        "advection_diffusion_frozen_u",
        "space",
        SPACE_LEVELS.to_vec(),
        hs,
        dts,
        errors,
        0.9,
    ))
}

/// Run a named manufactured-solution study. `diffusion_blocking` yields a
/// space-dominated and a time-dominated report.
pub fn mms_convergence(case: &str) -> Result<Vec<ConvergenceReport>> {
    match case {
        "poisson_robin" => Ok(vec![poisson_robin()?]),
        "diffusion_blocking" => diffusion_blocking(),
        "advection_diffusion_frozen_u" => Ok(vec![advection_diffusion()?]),
        _ => Err(Error::Unknown {
            kind: "convergence case",
            name: case.into(),
            available: MMS_CASES.join(", "),
        }),
    }
}
