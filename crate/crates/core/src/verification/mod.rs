//! Independent oracles and studies that certify the solver modules.

pub mod dense;
pub mod mms;
pub mod studies;
pub mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::model::BoundaryData;
use crate::poisson::{solve_potential, RobinPoissonProblem};

pub use dense::{assemble_dense_robin, dense_poisson_oracle, DENSE_LIMIT};
pub use mms::{mms_convergence, ConvergenceReport, MMS_CASES};
pub use studies::{budget_refinement_study, rho_sigma_equivalence, BudgetStudy};
pub use trace::{trace_inequality_check, TraceCheckReport, TraceFamily};

pub const SUITES: [&str; 6] = ["poisson", "np", "fluid", "energy", "trace", "rho-sigma"];

pub const TRACE_LEVELS: [usize; 3] = [16, 32, 64];
pub const TRACE_MAX_VARIATION: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail,
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value >= tolerance,
            value,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, e: &Error) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tolerance: f64::NAN,
            detail: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn text(&self) -> String {
        let mut s = format!("suite {}\n", self.suite);
        for c in &self.checks {
            s.push_str(&format!(
                "  {} {:<40} value {:.3e} (limit {:.3e}) {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                c.detail
            ));
        }
        s
    }
}

type Case = Box<dyn FnOnce() -> Vec<Check> + Send>;

fn guard(name: &'static str, f: impl FnOnce() -> Result<Vec<Check>> + Send + 'static) -> Case {
    Box::new(move || f().unwrap_or_else(|e| vec![Check::failed(name, &e)]))
}

fn run_parallel(cases: Vec<Case>) -> Vec<Check> {
    std::thread::scope(|s| {
        let handles: Vec<_> = cases.into_iter().map(|c| s.spawn(c)).collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|_| vec![Check::failed("case", &Error::Invariant("case panicked".into()))]))
            .collect()
    })
}

/// Max difference between the dense oracle and the iterative solver on a
/// seeded random charge over an `n x n` square of side `length`.
pub fn dense_agreement(n: usize, length: f64, seed: u64) -> Result<f64> {
    let g = Grid::new(2, &[n, n], &[length, length])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = ScalarField::from_values(&g, (0..g.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let xi = BoundaryData::from_fn(&g, |x| (3.0 * x[0] / length).sin() + x[1] / length);
    let mut prob = RobinPoissonProblem::new(&rho, 1.0, 1.0, &xi);
    prob.rtol = 5e-14;
    prob.max_iter = 100_000;
    let a = dense_poisson_oracle(&prob)?;
    let b = solve_potential(&prob, None)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// Largest deviation of the solved potential from `xi0 / tau` for zero charge.
pub fn constant_potential_error(n: usize, xi0: f64, tau: f64) -> Result<f64> {
    let g = Grid::new(2, &[n, n], &[1.0, 1.0])?;
    let rho = ScalarField::zeros(&g);
    let xi = BoundaryData::constant(&g, xi0);
    let phi = solve_potential(&RobinPoissonProblem::new(&rho, 0.05, tau, &xi), None)?;
    Ok(phi.values().iter().fold(0.0, |m, v| m.max((v - xi0 / tau).abs())))
}

fn convergence_checks(case: &'static str) -> Case {
    guard(case, move || {
        Ok(mms_convergence(case)?
            .into_iter()
            .map(|r| {
                Check::at_least(
                    &format!("{}_{}_order", r.case, r.refinement),
                    r.fitted_order,
                    r.target_order,
                    format!("errors {:?}", r.errors),
                )
            })
            .collect())
    })
}

fn trace_case(family: TraceFamily, p: f64) -> Case {
    guard("trace", move || {
        let r = trace_inequality_check(&TRACE_LEVELS, family, p)?;
        Ok(r.forms
            .iter()
            .enumerate()
            .map(|(i, form)| {
                Check::at_most(
                    &format!("trace_{family:?}_p{p}_{form}").to_lowercase(),
                    r.variation[i],
                    TRACE_MAX_VARIATION,
                    format!("max ratios {:?}", r.max_ratio[i]),
                )
            })
            .collect())
    })
}

/// Run one named suite.
pub fn run_suite(name: &str) -> Result<SuiteReport> {
    let cases: Vec<Case> = match name {
        "poisson" => vec![
            guard("dense_4x4", || {
                Ok(vec![Check::at_most("dense_oracle_4x4", dense_agreement(4, 1.0, 1)?, 1e-12, String::new())])
            }),
            guard("dense_32x32", || {
                Ok(vec![Check::at_most("dense_oracle_32x32", dense_agreement(32, 8.0, 2)?, 1e-12, String::new())])
            }),
            guard("constant", || {
                Ok(vec![Check::at_most(
                    "constant_solution",
                    constant_potential_error(24, 0.6, 2.0)?,
                    1e-10,
                    "xi0 / tau".into(),
                )])
            }),
            guard("structure", || {
                let g = Grid::new(2, &[8, 8], &[1.0, 1.0])?;
                let (asym, pivot) = dense::structure_check(&g, 0.05, 1.0)?;
                Ok(vec![
                    Check::at_most("matrix_symmetry", asym, 1e-14, String::new()),
                    Check::at_least("min_cholesky_pivot", pivot, f64::MIN_POSITIVE, String::new()),
                ])
            }),
            convergence_checks("poisson_robin"),
        ],
        "np" => vec![
            convergence_checks("diffusion_blocking"),
            convergence_checks("advection_diffusion_frozen_u"),
            guard("equilibrium", || {
                Ok(vec![Check::at_most(
                    "boltzmann_fixed_point",
                    studies::equilibrium_drift(16, 100)?,
                    1e-13,
                    "relative change per step".into(),
                )])
            }),
        ],
        "fluid" => vec![
            guard("projection", || {
                Ok(vec![Check::at_most(
                    "gradient_force_annihilated",
                    studies::projection_annihilation(32)?,
                    1e-9,
                    "max |u| after one step".into(),
                )])
            }),
            guard("stokes", || {
                let r = studies::stokes_decay(32, 50)?;
                Ok(vec![
                    Check::at_most("post_projection_divergence", r.max_divergence, 1e-10, String::new()),
                    Check::at_least(
                        "stokes_energy_strictly_decreasing",
                        f64::from(u8::from(r.strictly_decreasing)),
                        1.0,
                        format!("|u|^2 {:.3e} -> {:.3e}", r.kinetic[0], r.kinetic[r.kinetic.len() - 1]),
                    ),
                ])
            }),
            guard("u_t", || {
                let (a, b) = studies::u_accumulator(0.37, 1e-3, 1000);
                Ok(vec![Check::at_most("u_t_rectangle_rule", (a - b).abs(), 1e-12, String::new())])
            }),
        ],
        "energy" => vec![
            guard("halving", || {
                let s = budget_refinement_study(&studies::budget_base()?, &studies::BUDGET_DTS)?;
                let bound = Check::at_most(
                    "budget_residual_bound",
                    s.max_scaled_residual,
                    crate::diagnostics::C_BUDGET,
                    "max |r| / ((dt + h^2) scale)".into(),
                );
                Ok(s.ratios
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        Check::at_most(
                            &format!("budget_halving_{}", i + 1),
                            *r,
                            studies::BUDGET_RATIO_LIMIT,
                            format!("residuals {:?}", s.max_abs_residual),
                        )
                    })
                    .chain(std::iter::once(bound))
                    .collect())
            }),
            guard("equilibrium_budget", || {
                Ok(vec![Check::at_most(
                    "equilibrium_budget_residual",
                    studies::equilibrium_budget(50)?,
                    1e-8,
                    String::new(),
                )])
            }),
            guard("bookkeeping", || {
                Ok(vec![Check::at_most(
                    "nps_frozen_residual_difference",
                    studies::fluid_bookkeeping(20)?,
                    1e-12,
                    "u stays at rest".into(),
                )])
            }),
        ],
        "trace" => [2.0, 3.0, 4.0]
            .into_iter()
            .flat_map(|p| [trace_case(TraceFamily::BoundaryPeaked, p), trace_case(TraceFamily::Fourier, p)])
            .collect(),
        "rho-sigma" => vec![
            guard("m3", || {
                Ok(vec![Check::at_most("m3_deviation", studies::rho_sigma_m3()?, 1e-10, String::new())])
            }),
            guard("m2", || {
                Ok(vec![Check::at_most("m2_deviation", studies::rho_sigma_m2()?, 1e-12, String::new())])
            }),
            guard("neutral", || {
                Ok(vec![Check::at_most("neutral_deviation", studies::rho_sigma_neutral()?, 1e-12, String::new())])
            }),
        ],
        _ => {
            return Err(Error::Unknown {
                kind: "suite",
                name: name.into(),
                available: SUITES.join(", "),
            })
        }
    };
    Ok(SuiteReport {
        suite: name.into(),
        checks: run_parallel(cases),
    })
}
