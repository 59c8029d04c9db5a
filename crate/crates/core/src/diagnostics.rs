//! Observables of a state snapshot: the energy functional, its dissipation,
//! electrochemical potentials, norms and the per-step energy-budget residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient_squared_norm, integrate_boundary, integrate_cells, ScalarField};
use crate::fluid::velocity_gradient_norms;
use crate::model::{PhysicalParams, SimState, SpeciesBc, SpeciesSpec};

/// `c log c` with the continuous extension `0` at `c = 0`.
#[inline]
pub fn entropy_density(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

/// Logarithmic mean `(b - a) / (ln b - ln a)`, equal to `a` when `a = b` and
/// zero when either argument is zero.
#[inline]
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let t = b / a - 1.0;
    if t.abs() < 1e-4 {
        a * (1.0 + t * (0.5 + t * (-1.0 / 12.0 + t / 24.0)))
    } else {
        (b - a) / (b / a).ln()
    }
}

/// Electric part of the energy: `eps/2 |grad phi|^2 + eps tau/2 |phi|^2_boundary`.
pub fn electric_energy(phi: &ScalarField, epsilon: f64, tau: f64) -> Result<f64> {
    let grad = gradient_squared_norm(phi)?;
    let faces: Vec<f64> = phi.boundary_face_values()?.iter().map(|v| v * v).collect();
    let bnd = integrate_boundary(phi.grid(), &faces)?;
    Ok(0.5 * epsilon * grad + 0.5 * epsilon * tau * bnd)
}

/// Entropy `sum_i int c_i log c_i`.
pub fn entropy(concentrations: &[ScalarField]) -> f64 {
    concentrations
        .iter()
        .map(|c| c.values().iter().map(|&v| entropy_density(v)).sum::<f64>() * c.grid().cell_volume())
        .sum()
}

/// The energy functional `|u|^2/(2K) + sum int c log c + electric energy`.
pub fn lyapunov(state: &SimState, params: &PhysicalParams) -> Result<f64> {
    let kinetic = state.velocity.l2_norm_sq() / (2.0 * params.k);
    let elec = electric_energy(&state.potential, params.epsilon, params.tau)?;
    Ok(kinetic + entropy(&state.concentrations) + elec)
}

/// `sum_i D_i sum_faces c_face ((mu_E - mu_P)/h)^2 * vol` with the log-mean
/// face concentration, over interior faces.
pub fn dissipation(state: &SimState, species: &[SpeciesSpec]) -> f64 {
    let g = *state.grid();
    let vol = g.cell_volume();
    let phi = state.potential.values();
    let mut total = 0.0;
    for (s, c) in species.iter().zip(&state.concentrations) {
        let c = c.values();
        let mut acc = 0.0;
        for axis in 0..g.dim() {
            let stride = g.stride(axis);
            let h2 = g.h(axis) * g.h(axis);
            let mut sum = 0.0;
            for p in 0..g.num_cells() {
                if (p / stride) % g.n(axis) + 1 == g.n(axis) {
                    continue;
                }
                let e = p + stride;
                let cf = log_mean(c[p], c[e]);
                if cf > 0.0 {
                    let dmu = (c[e] / c[p]).ln() + s.valence * (phi[e] - phi[p]);
                    sum += cf * dmu * dmu;
                }
            }
            acc += sum / h2;
        }
        total += s.diffusivity * acc * vol;
    }
    total
}

/// Constant in the budget bound `|r| <= C_BUDGET (dt + h^2) scale`.
pub const C_BUDGET: f64 = 20.0;

/// `C_BUDGET (dt + h^2) scale`, the admissible budget residual of one step.
pub fn budget_tolerance(dt: f64, h_max: f64, scale: f64) -> f64 {
    C_BUDGET * (dt + h_max * h_max) * scale
}

/// `(V^{n+1} - V^n)/dt + D^n + (nu/K) |grad u^n|^2`.
#[inline]
pub fn energy_budget_residual(v_n: f64, v_next: f64, dt: f64, diss_n: f64, visc_n: f64) -> f64 {
    (v_next - v_n) / dt + diss_n + visc_n
}

/// Spatial variance of `mu_i = log c_i + z_i phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuVariance {
    /// `None` when every cell of the species is zero.
    pub value: Option<f64>,
    /// True when some cells were zero and excluded.
    pub partial: bool,
}

pub fn mu_variance(state: &SimState, species: &[SpeciesSpec]) -> Vec<MuVariance> {
    let phi = state.potential.values();
    species
        .iter()
        .zip(&state.concentrations)
        .map(|(s, c)| {
            let mu: Vec<f64> = c
                .values()
                .iter()
                .zip(phi)
                .filter(|(c, _)| **c > 0.0)
                .map(|(c, p)| c.ln() + s.valence * p)
                .collect();
            let partial = mu.len() < c.values().len();
            if mu.is_empty() {
                return MuVariance {
                    value: None,
                    partial,
                };
            }
            let n = mu.len() as f64;
            let mean = mu.iter().sum::<f64>() / n;
            let var = mu.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            MuVariance {
                value: Some(var),
                partial,
            }
        })
        .collect()
}

/// Whether the species list is two species of opposite sign.
fn signed_pair(species: &[SpeciesSpec]) -> Option<(usize, usize)> {
    if species.len() != 2 {
        return None;
    }
    let (a, b) = (species[0].valence, species[1].valence);
    if a > 0.0 && b < 0.0 {
        Some((0, 1))
    } else if a < 0.0 && b > 0.0 {
        Some((1, 0))
    } else {
        None
    }
}

/// `Q = int rho^2 (|z_1| c_1 + |z_2| c_2)` for two oppositely charged species.
pub fn cancellation_q(state: &SimState, species: &[SpeciesSpec]) -> Option<f64> {
    let (p, n) = signed_pair(species)?;
    let (zp, zn) = (species[p].valence, species[n].valence);
    let (cp, cn) = (state.concentrations[p].values(), state.concentrations[n].values());
    let s: f64 = cp
        .iter()
        .zip(cn)
        .map(|(a, b)| {
            let rho = zp * a + zn * b;
            rho * rho * (zp.abs() * a + zn.abs() * b)
        })
        .sum();
    Some(s * state.grid().cell_volume())
}

/// Factored form `int (z_1^2 c_1^2 - z_2^2 c_2^2) rho` of [`cancellation_q`].
pub fn cancellation_q_factored(state: &SimState, species: &[SpeciesSpec]) -> Option<f64> {
    let (p, n) = signed_pair(species)?;
    let (zp, zn) = (species[p].valence, species[n].valence);
    let (cp, cn) = (state.concentrations[p].values(), state.concentrations[n].values());
    let s: f64 = cp
        .iter()
        .zip(cn)
        .map(|(a, b)| (zp * zp * a * a - zn * zn * b * b) * (zp * a + zn * b))
        .sum();
    Some(s * state.grid().cell_volume())
}

/// `sqrt(|phi|^2 + |grad phi|^2)`.
pub fn phi_h1(phi: &ScalarField) -> Result<f64> {
    let l2 = phi.l2_norm();
    Ok((l2 * l2 + gradient_squared_norm(phi)?).sqrt())
}

/// Monitors for one selective species against one blocking species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedMonitors {
    /// `|c_1 - gamma_1|_{L2}`.
    pub q1_l2: f64,
    pub c2_l1: f64,
    pub c2_l2: f64,
    /// Running `int_0^t |rho|^2_{L2}`, left rectangle rule.
    pub rho_sq_integral: f64,
}

/// Index pair `(selective, blocking)` if the configuration is a mixed one.
pub fn mixed_pair(species: &[SpeciesSpec]) -> Option<(usize, usize)> {
    if species.len() != 2 {
        return None;
    }
    let sel = species
        .iter()
        .position(|s| matches!(s.bc, SpeciesBc::Dirichlet { .. }))?;
    let blk = 1 - sel;
    (species[blk].is_blocking() && species[sel].valence > 0.0 && species[blk].valence < 0.0)
        .then_some((sel, blk))
}

/// Evaluate the mixed-boundary monitors at the current state; the running
/// `|rho|^2` integral is carried by the caller and echoed into the result.
pub fn mixed_bc_monitors(
    state: &SimState,
    species: &[SpeciesSpec],
    rho_sq_integral: f64,
) -> Result<MixedMonitors> {
    let (sel, blk) = mixed_pair(species).ok_or_else(|| {
        Error::Hypothesis(
            "mixed monitors need one selective cation and one blocking anion".into(),
        )
    })?;
    let SpeciesBc::Dirichlet { gamma } = species[sel].bc else {
        unreachable!()
    };
    let g = *state.grid();
    let c1 = &state.concentrations[sel];
    let q1 = c1.values().iter().map(|c| (c - gamma).powi(2)).sum::<f64>() * g.cell_volume();
    let c2 = &state.concentrations[blk];
    Ok(MixedMonitors {
        q1_l2: q1.sqrt(),
        c2_l1: c2.lp_norm(1.0),
        c2_l2: c2.l2_norm(),
        rho_sq_integral,
    })
}

/// `|rho|^2_{L2}` for the current concentrations.
pub fn rho_l2_sq(state: &SimState, species: &[SpeciesSpec]) -> f64 {
    let g = state.grid();
    let mut rho = vec![0.0; g.num_cells()];
    for (s, c) in species.iter().zip(&state.concentrations) {
        for (r, v) in rho.iter_mut().zip(c.values()) {
            *r += s.valence * v;
        }
    }
    rho.iter().map(|r| r * r).sum::<f64>() * g.cell_volume()
}

/// One row of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: u64,
    pub mass: Vec<f64>,
    pub l2: Vec<f64>,
    pub linf: Vec<f64>,
    pub v: f64,
    pub diss: f64,
    pub grad_u_sq: f64,
    pub u_sq: f64,
    pub u_t: f64,
    /// Residual of the step that ended at this record; `None` at step 0.
    pub budget_residual: Option<f64>,
    pub mu_var: Vec<MuVariance>,
    pub q: Option<f64>,
    pub phi_h1: f64,
    pub min_concentration: f64,
    pub div_max: f64,
    pub dt: Option<f64>,
    pub mixed: Option<MixedMonitors>,
    /// Running max deviation of the paired charge/total run, when enabled.
    pub shadow_dev: Option<f64>,
}

impl DiagnosticsRecord {
    /// Evaluate everything except the budget residual, step size and mixed
    /// monitors, which depend on the history.
    pub fn compute(
        state: &SimState,
        species: &[SpeciesSpec],
        params: &PhysicalParams,
        u_t: f64,
    ) -> Result<Self> {
        let (grad_u_sq, u_sq) = velocity_gradient_norms(&state.velocity);
        Ok(Self {
            t: state.time,
            step: state.step,
            mass: state.concentrations.iter().map(integrate_cells).collect(),
            l2: state.concentrations.iter().map(|c| c.l2_norm()).collect(),
            linf: state.concentrations.iter().map(|c| c.max_abs()).collect(),
            v: lyapunov(state, params)?,
            diss: dissipation(state, species),
            grad_u_sq,
            u_sq,
            u_t,
            budget_residual: None,
            mu_var: mu_variance(state, species),
            q: cancellation_q(state, species),
            phi_h1: phi_h1(&state.potential)?,
            min_concentration: state.min_concentration().0,
            div_max: state.velocity.max_divergence(),
            dt: None,
            mixed: None,
            shadow_dev: None,
        })
    }

    /// Viscous dissipation `(nu/K) |grad u|^2` at this record.
    pub fn viscous(&self, params: &PhysicalParams) -> f64 {
        params.nu / params.k * self.grad_u_sq
    }

    /// `1 + max(|V|, D)`.
    pub fn scale(&self) -> f64 {
        1.0 + self.v.abs().max(self.diss)
    }
}
