//! Whole-run studies and targeted property checks.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{BoundaryClosure, ScalarField, StaggeredVectorField};
use crate::fluid::{accumulate_u, FluidSolver};
use crate::grid::Grid;
use crate::linalg::SolverKind;
use crate::model::{FluidModel, InitialProfile, PhysicalParams, SimState, SpeciesSpec};
use crate::nernst_planck::{advance_concentrations, common_transport};
use crate::orchestrator::config::DtSetting;
use crate::orchestrator::{scenario, SimConfig, Simulation};

use super::mms::stream_velocity;

/// Run `config` with the paired charge/total system alongside and return
/// `max_t |rho_full - rho_pair|_inf + |sigma_full - sigma_pair|_inf`.
pub fn rho_sigma_equivalence(mut config: SimConfig) -> Result<f64> {
    common_transport(&config.species())?;
    config.run.shadow_rho_sigma = true;
    let mut sim = Simulation::new(config)?;
    while !sim.finished() {
        sim.step()?;
    }
    sim.shadow_deviation()
        .ok_or_else(|| Error::Invariant("paired run missing".into()))
}

/// The three-species equal-diffusivity case at its library settings.
pub fn rho_sigma_m3() -> Result<f64> {
    rho_sigma_equivalence(scenario("equal_diffusivity_m3")?)
}

pub fn rho_sigma_m2() -> Result<f64> {
    let mut c = scenario("two_species_relaxation")?;
    c.grid.cells = vec![16, 16];
    c.run.max_steps = Some(200);
    rho_sigma_equivalence(c)
}

/// Identical cation and anion profiles: zero charge, flat potential, and
/// both systems reduce to heat equations.
pub fn rho_sigma_neutral() -> Result<f64> {
    let mut c = scenario("two_species_relaxation")?;
    c.grid.cells = vec![16, 16];
    c.run.max_steps = Some(200);
    let prof = c.species[0].initial.clone();
    for s in &mut c.species {
        s.initial = prof.clone();
    }
    rho_sigma_equivalence(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetStudy {
    pub cells: usize,
    pub t_end: f64,
    pub dt: Vec<f64>,
    pub max_abs_residual: Vec<f64>,
    /// `residual(dt / 2) / residual(dt)`.
    pub ratios: Vec<f64>,
    /// Largest `|r| / ((dt + h^2) scale)` over all runs.
    pub max_scaled_residual: f64,
    pub passed: bool,
}

/// Largest ratio between successive dt-halvings that still counts as the
/// required 35 % decrease.
pub const BUDGET_RATIO_LIMIT: f64 = 0.65;

/// Max |budget residual| of `base` at each fixed step size.
pub fn budget_refinement_study(base: &SimConfig, dts: &[f64]) -> Result<BudgetStudy> {
    let mut res = Vec::with_capacity(dts.len());
    let mut scaled: f64 = 0.0;
    for &dt in dts {
        let mut c = base.clone();
        c.run.dt = DtSetting::Fixed(dt);
        c.run.max_steps = None;
        let mut sim = Simulation::new(c)?;
        let h = sim.grid().spacing().iter().copied().fold(0.0, f64::max);
        while !sim.finished() {
            let scale = sim.current().scale();
            let rec = sim.step()?;
            if let (Some(r), Some(dt)) = (rec.budget_residual, rec.dt) {
                scaled = scaled.max(r.abs() / ((dt + h * h) * scale));
            }
        }
        res.push(sim.max_abs_residual());
    }
    let ratios: Vec<f64> = res.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(BudgetStudy {
        cells: base.grid.cells[0],
        t_end: base.run.t_end,
        dt: dts.to_vec(),
        passed: ratios.iter().all(|r| *r <= BUDGET_RATIO_LIMIT),
        max_abs_residual: res,
        ratios,
        max_scaled_residual: scaled,
    })
}

/// The smooth base case used for the dt-halving study.
pub fn budget_base() -> Result<SimConfig> {
    let mut c = scenario("two_species_relaxation")?;
    c.grid.cells = vec![32, 32];
    c.run.t_end = 0.02;
    Ok(c)
}

pub const BUDGET_DTS: [f64; 3] = [2e-4, 1e-4, 5e-5];

/// Max |budget residual| over `steps` steps started from a Boltzmann
/// equilibrium of the Robin problem with constant wall data.
pub fn equilibrium_budget(steps: u64) -> Result<f64> {
    let mut c = scenario("two_species_relaxation")?;
    c.grid.cells = vec![16, 16];
    for s in &mut c.species {
        s.initial = InitialProfile::Uniform { value: 1.0 };
    }
    c.run.max_steps = Some(steps);
    c.run.t_end = 1e9;
    c.run.dt = DtSetting::Fixed(1e-4);
    let mut sim = Simulation::new(c)?;
    while !sim.finished() {
        sim.step()?;
    }
    Ok(sim.max_abs_residual())
}

/// Per-step budget residual of NPS and Frozen runs on the same data with the
/// fluid at rest, and the largest difference between them (or any nonzero
/// `|grad u|^2`). Identical cation and anion profiles keep the charge and
/// hence the force at zero.
pub fn fluid_bookkeeping(steps: u64) -> Result<f64> {
    let mut out = Vec::new();
    for model in [FluidModel::Nps, FluidModel::Frozen] {
        let mut c = scenario("two_species_relaxation")?;
        c.grid.cells = vec![16, 16];
        let prof = c.species[0].initial.clone();
        for s in &mut c.species {
            s.initial = prof.clone();
        }
        c.params.fluid_model = model;
        c.run.max_steps = Some(steps);
        c.run.dt = DtSetting::Fixed(1e-4);
        let mut sim = Simulation::new(c)?;
        let mut r = Vec::new();
        while !sim.finished() {
            let rec = sim.step()?;
            r.push((rec.budget_residual.unwrap_or(f64::NAN), rec.grad_u_sq));
        }
        out.push(r);
    }
    Ok(out[0]
        .iter()
        .zip(&out[1])
        .map(|(a, b)| (a.0 - b.0).abs().max(a.1).max(b.1))
        .fold(0.0, f64::max))
}

/// Largest relative per-step change of `c_i = A_i exp(-z_i Phi)` under a
/// frozen potential and zero velocity.
pub fn equilibrium_drift(n: usize, steps: usize) -> Result<f64> {
    let g = Grid::new(2, &[n, n], &[1.0, 1.0])?;
    let mut phi = ScalarField::from_fn(&g, |x| 0.8 * (2.0 * PI * x[0]).sin() * (PI * x[1]).cos() + 0.3 * x[1]);
    let xi = vec![0.25; g.num_boundary_faces()];
    phi.fill_ghosts(BoundaryClosure::Robin { tau: 1.0, xi: &xi });
    let species = vec![
        SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 1.0 }),
        SpeciesSpec::blocking(-2.0, 0.5, InitialProfile::Uniform { value: 1.0 }),
    ];
    let amps = [1.3, 0.4];
    let conc: Vec<ScalarField> = species
        .iter()
        .zip(amps)
        .map(|(s, a)| {
            let v = phi.values().iter().map(|p| a * (-s.valence * p).exp()).collect();
            ScalarField::from_values(&g, v)
        })
        .collect::<Result<_>>()?;
    let mut state = SimState::from_concentrations(&g, conc);
    state.potential = phi;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let next = advance_concentrations(&state, &species, 1e-4)?;
        for (a, b) in next.iter().zip(&state.concentrations) {
            for (x, y) in a.values().iter().zip(b.values()) {
                worst = worst.max((x - y).abs() / y.abs());
            }
        }
        state.concentrations = next;
    }
    Ok(worst)
}

/// Face samples of the discrete gradient of `chi`, zero on the walls.
pub fn discrete_gradient(chi: &ScalarField) -> StaggeredVectorField {
    let g = chi.grid();
    let mut f = StaggeredVectorField::zeros(g);
    for a in 0..g.dim() {
        let h = g.h(a);
        let stride = g.stride(a);
        for idx in 0..f.component(a).len() {
            if f.is_boundary_face(a, idx) {
                continue;
            }
            let mut c = f.face_coords(a, idx);
            c[a] -= 1;
            let p = g.index(c[0], c[1], c[2]);
            f.component_mut(a)[idx] = (chi.values()[p + stride] - chi.values()[p]) / h;
        }
    }
    f
}

fn stokes_params() -> PhysicalParams {
    PhysicalParams {
        fluid_model: FluidModel::Nps,
        ..PhysicalParams::default()
    }
}

/// `max |u|` after one step from rest under a pure gradient force.
pub fn projection_annihilation(n: usize) -> Result<f64> {
    let g = Grid::new(2, &[n, n], &[1.0, 1.0])?;
    let chi = ScalarField::from_fn(&g, |x| (PI * x[0]).cos() * (2.0 * PI * x[1]).cos() + x[0] * x[1]);
    let force = discrete_gradient(&chi);
    let solver = FluidSolver::new(&g, SolverKind::Auto)?;
    let u0 = StaggeredVectorField::zeros(&g);
    let p0 = ScalarField::zeros(&g);
    let dt = 0.2 / (n * n) as f64;
    let (u, _, _) = solver.advance(&u0, &p0, &stokes_params(), &force, dt)?;
    Ok((0..g.dim()).map(|a| u.max_abs(a)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Serialize)]
pub struct StokesDecay {
    pub kinetic: Vec<f64>,
    pub max_divergence: f64,
    pub strictly_decreasing: bool,
}

/// Force-free Stokes run from a solenoidal start.
pub fn stokes_decay(n: usize, steps: usize) -> Result<StokesDecay> {
    let g = Grid::new(2, &[n, n], &[1.0, 1.0])?;
    let solver = FluidSolver::new(&g, SolverKind::Auto)?;
    let mut u = stream_velocity(&g);
    let mut p = ScalarField::zeros(&g);
    let force = StaggeredVectorField::zeros(&g);
    let params = stokes_params();
    let dt = 0.8 * crate::fluid::fluid_stability_dt(&u, &params);
    let mut kinetic = vec![u.l2_norm_sq()];
    let mut max_div: f64 = 0.0;
    for _ in 0..steps {
        let (nu, np, rep) = solver.advance(&u, &p, &params, &force, dt)?;
        max_div = max_div.max(rep.div_after);
        kinetic.push(nu.l2_norm_sq());
        u = nu;
        p = np;
    }
    Ok(StokesDecay {
        strictly_decreasing: kinetic.windows(2).all(|w| w[1] < w[0]),
        kinetic,
        max_divergence: max_div,
    })
}

/// Accumulated `U(T)` and the hand value for a constant gradient norm.
pub fn u_accumulator(grad_sq: f64, dt: f64, steps: usize) -> (f64, f64) {
    let acc = (0..steps).fold(0.0, |a, _| accumulate_u(a, grad_sq, dt));
    (acc, steps as f64 * dt * grad_sq * grad_sq)
}
