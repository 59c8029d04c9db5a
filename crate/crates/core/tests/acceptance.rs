//! Acceptance criteria 1-12. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use electrodiff::diagnostics::{budget_tolerance, DiagnosticsRecord, C_BUDGET};
use electrodiff::field::integrate_cells;
use electrodiff::orchestrator::config::DtSetting;
use electrodiff::orchestrator::{resume, run, scenario, Checkpoint, RunOptions, SimConfig, Simulation};
use electrodiff::verification::studies::{
    budget_base, budget_refinement_study, equilibrium_drift, projection_annihilation, rho_sigma_m3,
    stokes_decay, u_accumulator, BUDGET_DTS, BUDGET_RATIO_LIMIT,
};
use electrodiff::verification::{
    constant_potential_error, dense_agreement, mms_convergence, trace_inequality_check, TraceFamily,
    TRACE_LEVELS,
};

// Pinned tolerances.
const MASS_DRIFT_TOL: f64 = 1e-11;
const C1_RUNTIME_S: f64 = 60.0;
const C1_CELLS: usize = 64;
const C1_STEPS: u64 = 10_000;
const C3_STUDY_RUNTIME_S: f64 = 300.0;
const EQUILIBRIUM_TOL: f64 = 1e-13;
const EQUILIBRIUM_STEPS: usize = 100;
const MU_VAR_TOL: f64 = 1e-8;
const U_SQ_TOL: f64 = 1e-10;
const BOLTZMANN_TOL: f64 = 1e-6;
const Q_TOL: f64 = 1e-12;
const RHO_SIGMA_TOL: f64 = 1e-10;
const ANION_L1_TOL: f64 = 1e-11;
const DENSE_TOL: f64 = 1e-12;
const POISSON_ORDER: f64 = 1.9;
const CONSTANT_PHI_TOL: f64 = 1e-10;
const DIV_TOL: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-9;
const U_T_TOL: f64 = 1e-12;
const TRACE_VARIATION: f64 = 0.2;
const TRACE_RUNTIME_S: f64 = 120.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn h_max(sim: &Simulation) -> f64 {
    sim.grid().spacing().iter().copied().fold(0.0, f64::max)
}

/// Every record of a run, step by step.
fn trajectory(config: SimConfig) -> electrodiff::Result<(Simulation, Vec<DiagnosticsRecord>)> {
    let mut sim = Simulation::new(config)?;
    let mut recs = vec![sim.current().clone()];
    while !sim.finished() {
        recs.push(sim.step()?.clone());
    }
    Ok((sim, recs))
}

/// `max over the second half <= max over the first half + slack`.
fn bounded(times: &[f64], values: &[f64], slack: f64) -> (bool, f64, f64) {
    let t_mid = 0.5 * times[times.len() - 1];
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (t, v) in times.iter().zip(values) {
        if *t <= t_mid {
            first = first.max(*v);
        } else {
            second = second.max(*v);
        }
    }
    (second <= first + slack, first, second)
}

/// Largest `tol_V = C (dt + h^2) dt scale` over the run.
fn max_tol_v(recs: &[DiagnosticsRecord], h: f64) -> f64 {
    recs.windows(2)
        .map(|w| {
            let dt = w[1].dt.unwrap_or(0.0);
            budget_tolerance(dt, h, w[0].scale().max(w[1].scale())) * dt
        })
        .fold(0.0, f64::max)
}

struct BaseRun {
    recs: Vec<DiagnosticsRecord>,
    h: f64,
    seconds: f64,
    initial_mass: Vec<f64>,
}

fn base_run() -> electrodiff::Result<BaseRun> {
    let mut c = scenario("two_species_relaxation")?;
    c.grid.cells = vec![C1_CELLS, C1_CELLS];
    c.run.t_end = 1e6;
    c.run.max_steps = Some(C1_STEPS);
    let started = Instant::now();
    let (sim, recs) = trajectory(c)?;
    Ok(BaseRun {
        h: h_max(&sim),
        seconds: started.elapsed().as_secs_f64(),
        initial_mass: recs[0].mass.clone(),
        recs,
    })
}

fn c1(b: &BaseRun) -> Outcome {
    let drift = b
        .recs
        .iter()
        .flat_map(|r| r.mass.iter().zip(&b.initial_mass).map(|(m, m0)| ((m - m0) / m0).abs()))
        .fold(0.0, f64::max);
    let steps = b.recs.len() - 1;
    outcome(
        drift <= MASS_DRIFT_TOL && b.seconds < C1_RUNTIME_S && steps as u64 == C1_STEPS,
        format!("max relative mass drift {drift:.3e} over {steps} steps in {:.1} s", b.seconds),
    )
}

fn c2(b: &BaseRun) -> Outcome {
    let min_c = b.recs.iter().map(|r| r.min_concentration).fold(f64::INFINITY, f64::min);
    // An oversized fixed step must abort with the invariant exit code.
    let violation = (|| -> electrodiff::Result<i32> {
        let mut c = scenario("two_species_relaxation")?;
        c.grid.cells = vec![16, 16];
        c.params.fluid_model = electrodiff::model::FluidModel::Frozen;
        c.run.dt = DtSetting::Fixed(0.05);
        let mut sim = Simulation::new(c)?;
        Ok(match sim.step() {
            Ok(_) => 0,
            Err(e) => e.exit_code(),
        })
    })();
    let code = violation.unwrap_or(-1);
    outcome(
        min_c >= 0.0 && code == 4,
        format!("min concentration {min_c:.6e}; oversized step exit code {code}"),
    )
}

fn c3(b: &BaseRun) -> Outcome {
    let mut worst_v = f64::NEG_INFINITY;
    let mut worst_r: f64 = 0.0;
    let mut min_diss = f64::INFINITY;
    for w in b.recs.windows(2) {
        let dt = w[1].dt.unwrap_or(0.0);
        let scale = w[0].scale().max(w[1].scale());
        let tol_v = budget_tolerance(dt, b.h, scale) * dt;
        worst_v = worst_v.max((w[1].v - w[0].v) - tol_v);
        let r = w[1].budget_residual.unwrap_or(f64::NAN).abs();
        worst_r = worst_r.max(r / budget_tolerance(dt, b.h, w[0].scale()));
        min_diss = min_diss.min(w[0].diss);
    }
    let started = Instant::now();
    let study = budget_base().and_then(|base| budget_refinement_study(&base, &BUDGET_DTS));
    let secs = started.elapsed().as_secs_f64();
    match study {
        Ok(s) => {
            let study_r = s.max_scaled_residual / C_BUDGET;
            outcome(
                worst_v <= 0.0
                    && min_diss >= 0.0
                    && worst_r <= 1.0
                    && study_r <= 1.0
                    && s.passed
                    && secs < C3_STUDY_RUNTIME_S,
                format!(
                    "max (dV - tol_V) {worst_v:.3e}; min Diss {min_diss:.3e}; max |r|/bound {worst_r:.3} (run), \
                     {study_r:.3} (study); halving ratios {:?} (limit {BUDGET_RATIO_LIMIT}) in {secs:.1} s",
                    s.ratios
                ),
            )
        }
        Err(e) => outcome(false, format!("study failed: {e}")),
    }
}

fn c4() -> Outcome {
    match equilibrium_drift(16, EQUILIBRIUM_STEPS) {
        Ok(d) => outcome(d <= EQUILIBRIUM_TOL, format!("max relative change per step {d:.3e}")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c5() -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let c = scenario("two_species_relaxation")?;
        let (sim, recs) = trajectory(c)?;
        let last = recs.last().expect("records");
        let mu = last
            .mu_var
            .iter()
            .map(|m| m.value.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        let state = sim.state();
        let phi = state.potential.values();
        let mut fit_err: f64 = 0.0;
        for (s, c) in sim.species().iter().zip(&state.concentrations) {
            let w: Vec<f64> = phi.iter().map(|p| (-s.valence * p).exp()).collect();
            let a = integrate_cells(c) / (w.iter().sum::<f64>() * sim.grid().cell_volume());
            let peak = w.iter().fold(0.0, |m: f64, v| m.max(a * v));
            for (cv, wv) in c.values().iter().zip(&w) {
                fit_err = fit_err.max((cv - a * wv).abs() / peak);
            }
        }
        Ok(outcome(
            mu < MU_VAR_TOL && last.u_sq < U_SQ_TOL && fit_err < BOLTZMANN_TOL,
            format!(
                "t = {:.3}: mu-variance {mu:.3e}, |u|^2 {:.3e}, Boltzmann fit error {fit_err:.3e}",
                last.t, last.u_sq
            ),
        ))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn c6() -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let mut c = scenario("two_species_relaxation")?;
        c.grid.cells = vec![16, 16];
        c.run.t_end *= 2.0;
        let t_end = c.run.t_end;
        let (sim, recs) = trajectory(c)?;
        let slack = max_tol_v(&recs, h_max(&sim)) * t_end;
        let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
        let mut ok = true;
        let mut parts = Vec::new();
        for i in 0..sim.species().len() {
            let l2: Vec<f64> = recs.iter().map(|r| r.l2[i]).collect();
            let (b, first, second) = bounded(&times, &l2, slack);
            ok &= b;
            parts.push(format!("|c{}|: {first:.6} -> {second:.6}", i + 1));
        }
        let min_q = recs.iter().filter_map(|r| r.q).fold(f64::INFINITY, f64::min);
        ok &= min_q >= -Q_TOL;
        Ok(outcome(ok, format!("{}; min Q {min_q:.3e}; slack {slack:.3e}", parts.join(", "))))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn c7() -> Outcome {
    match rho_sigma_m3() {
        Ok(d) => outcome(d <= RHO_SIGMA_TOL, format!("m = 3 paired deviation {d:.3e}")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c8() -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let c = scenario("mixed_small_anion")?;
        let t_end = c.run.t_end;
        let (sim, recs) = trajectory(c)?;
        let mixed: Vec<_> = recs.iter().map(|r| r.mixed.clone().expect("mixed monitors")).collect();
        let l1_0 = mixed[0].c2_l1;
        let l1_dev = mixed.iter().map(|m| ((m.c2_l1 - l1_0) / l1_0).abs()).fold(0.0, f64::max);
        let slack = max_tol_v(&recs, h_max(&sim)) * t_end;
        let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
        let q1: Vec<f64> = mixed.iter().map(|m| m.q1_l2).collect();
        let c2: Vec<f64> = mixed.iter().map(|m| m.c2_l2).collect();
        let (bq, q1a, q1b) = bounded(&times, &q1, slack);
        let (bc, c2a, c2b) = bounded(&times, &c2, slack);
        let rho_int = mixed[mixed.len() - 1].rho_sq_integral;
        Ok(outcome(
            l1_dev <= ANION_L1_TOL && bq && bc && rho_int.is_finite(),
            format!(
                "|c2|_L1 relative change {l1_dev:.3e}; |q1|_L2 {q1a:.4e} -> {q1b:.4e}; \
                 |c2|_L2 {c2a:.4e} -> {c2b:.4e}; int |rho|^2 = {rho_int:.6e}"
            ),
        ))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn c9() -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let d4 = dense_agreement(4, 1.0, 11)?;
        let d64 = dense_agreement(64, 16.0, 12)?;
        let mms = mms_convergence("poisson_robin")?;
        let order = mms[0].fitted_order;
        let konst = constant_potential_error(32, 0.7, 1.5)?;
        Ok(outcome(
            d4 <= DENSE_TOL && d64 <= DENSE_TOL && order >= POISSON_ORDER && konst <= CONSTANT_PHI_TOL,
            format!(
                "dense agreement {d4:.3e} (16 unknowns), {d64:.3e} (4096 unknowns); \
                 order {order:.3}; constant solution error {konst:.3e}"
            ),
        ))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn c10(b: &BaseRun) -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let run_div = b.recs.iter().map(|r| r.div_max).fold(0.0, f64::max);
        let stokes = stokes_decay(32, 100)?;
        let proj = projection_annihilation(32)?;
        let (acc, hand) = u_accumulator(0.37, 1e-3, 1000);
        let u_err = (acc - hand).abs();
        Ok(outcome(
            run_div <= DIV_TOL
                && stokes.max_divergence <= DIV_TOL
                && stokes.strictly_decreasing
                && proj <= PROJECTION_TOL
                && u_err <= U_T_TOL,
            format!(
                "max divergence {run_div:.3e} (run), {:.3e} (Stokes); Stokes energy strictly \
                 decreasing: {}; gradient force residual {proj:.3e}; U(T) error {u_err:.3e}",
                stokes.max_divergence, stokes.strictly_decreasing
            ),
        ))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn c11() -> Outcome {
    let started = Instant::now();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for p in [2.0, 3.0, 4.0] {
        for fam in [TraceFamily::BoundaryPeaked, TraceFamily::Fourier] {
            match trace_inequality_check(&TRACE_LEVELS, fam, p) {
                Ok(r) => {
                    for v in &r.variation {
                        worst = worst.max(*v);
                        ok &= *v < TRACE_VARIATION;
                    }
                }
                Err(_) => ok = false,
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        ok && secs < TRACE_RUNTIME_S,
        format!("largest max-ratio variation {:.2}% in {secs:.2} s", 100.0 * worst),
    )
}

fn stream_records(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn c12() -> Outcome {
    let res = (|| -> electrodiff::Result<Outcome> {
        let tmp = tempfile::tempdir()?;
        let mut c = scenario("two_species_relaxation")?;
        c.grid.cells = vec![16, 16];
        c.run.t_end = 0.05;
        c.run.sample_every = 7;
        c.checkpoint.every_n_steps = 25;

        // Bit-exact container round trip of a mid-run state.
        let mut sim = Simulation::new(c.clone())?;
        for _ in 0..30 {
            sim.step()?;
        }
        let ck = sim.to_checkpoint();
        let back = Checkpoint::from_bytes(&ck.to_bytes())?;
        let bits = |k: &Checkpoint| -> Vec<u64> { k.arrays.iter().flat_map(|(_, v)| v.iter().map(|x| x.to_bits())).collect() };
        let roundtrip = back == ck && bits(&back) == bits(&ck);
        let restored = Simulation::from_checkpoint(&back)?;
        let state_equal = restored.state() == sim.state();

        let full = tmp.path().join("full");
        let split = tmp.path().join("split");
        run(c.clone(), &RunOptions { out_dir: Some(full.clone()), until: None })?;
        run(c.clone(), &RunOptions { out_dir: Some(split.clone()), until: Some(0.021) })?;
        let ckpt = split.join(&c.checkpoint.path);
        resume(&ckpt, &RunOptions::default())?;
        let a = stream_records(&full.join("diagnostics.ndjson"));
        let b = stream_records(&split.join("diagnostics.ndjson"));
        let identical = !a.is_empty() && a == b;
        Ok(outcome(
            roundtrip && state_equal && identical,
            format!(
                "checkpoint round trip bit-exact: {roundtrip}; restored state equal: {state_equal}; \
                 resumed stream identical: {identical} ({} records)",
                a.len()
            ),
        ))
    })();
    res.unwrap_or_else(|e| outcome(false, e.to_string()))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let base = base_run();
    match &base {
        Ok(b) => {
            results.push((1, "mass conservation", c1(b)));
            results.push((2, "positivity", c2(b)));
            results.push((3, "Lyapunov decay and budget", c3(b)));
        }
        Err(e) => {
            for (i, name) in [(1, "mass conservation"), (2, "positivity"), (3, "Lyapunov decay and budget")] {
                results.push((i, name, outcome(false, format!("base run failed: {e}"))));
            }
        }
    }
    results.push((4, "equilibrium exactness", c4()));
    results.push((5, "steady-state attraction", c5()));
    results.push((6, "uniform L2 boundedness", c6()));
    results.push((7, "equal-diffusivity reduction", c7()));
    results.push((8, "mixed boundary conditions", c8()));
    results.push((9, "Poisson solver", c9()));
    match &base {
        Ok(b) => results.push((10, "fluid solver", c10(b))),
        Err(e) => results.push((10, "fluid solver", outcome(false, format!("base run failed: {e}")))),
    }
    results.push((11, "trace inequality", c11()));
    results.push((12, "determinism and persistence", c12()));

    let mut all = true;
    for (i, name, o) in &results {
        all &= o.passed;
        println!(
            "criterion {i:>2} {} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
