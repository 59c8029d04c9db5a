//! The time loop and the file-backed run driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::diagnostics::{
    energy_budget_residual, mixed_bc_monitors, mixed_pair, rho_l2_sq, DiagnosticsRecord,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, StaggeredVectorField};
use crate::fluid::{accumulate_u, electric_force, fluid_stability_dt, FluidSolver};
use crate::grid::Grid;
use crate::model::{BoundaryData, PhysicalParams, SimState, SpeciesSpec};
use crate::nernst_planck::{advance_concentrations, common_transport, rho_sigma_step, stability_dt};
use crate::poisson::{charge_density, RobinPoissonSolver};

use super::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use super::config::{OutputFormat, SimConfig};
use super::output::{
    header_line, record_keys, write_field_dump, DiagnosticsWriter, ErrorRecord, RunSummary,
};

/// Runs closer than this fraction of `t_end` to the end are complete.
const END_SLACK: f64 = 1e-10;

/// Paired charge/total evolution carried alongside the species run.
#[derive(Debug, Clone)]
struct Shadow {
    z: f64,
    d: f64,
    rho: ScalarField,
    sigma: ScalarField,
    phi: ScalarField,
    max_dev: f64,
}

fn total(concentrations: &[ScalarField], z: f64) -> Result<ScalarField> {
    let g = concentrations[0].grid();
    let mut s = vec![0.0; g.num_cells()];
    for c in concentrations {
        for (a, v) in s.iter_mut().zip(c.values()) {
            *a += v;
        }
    }
    ScalarField::from_values(g, s.into_iter().map(|v| z * v).collect())
}

fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub struct Simulation {
    config: SimConfig,
    grid: Grid,
    species: Vec<SpeciesSpec>,
    params: PhysicalParams,
    xi: BoundaryData,
    poisson: RobinPoissonSolver,
    fluid: FluidSolver,
    state: SimState,
    u_t: f64,
    rho_sq_integral: f64,
    max_abs_residual: f64,
    initial_mass: Vec<f64>,
    current: DiagnosticsRecord,
    shadow: Option<Shadow>,
}

impl Simulation {
    /// Build the initial state and solve for the initial potential.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let species = config.species();
        let state = SimState::initial(&grid, &species, config.run.seed);
        let mut sim = Self::assemble(config, grid, species, state)?;
        let rho = charge_density(&sim.state.concentrations, &sim.species)?;
        let mut phi = ScalarField::zeros(&grid);
        sim.poisson.solve_into(&rho, &sim.xi, &mut phi)?;
        sim.state.potential = phi;
        sim.initial_mass = sim.current_mass();
        if sim.config.run.shadow_rho_sigma {
            let (d, z) = common_transport(&sim.species)?;
            let sigma = total(&sim.state.concentrations, z)?;
            sim.shadow = Some(Shadow {
                z,
                d,
                phi: sim.state.potential.clone(),
                rho,
                sigma,
                max_dev: 0.0,
            });
        }
        sim.current = sim.record()?;
        Ok(sim)
    }

    /// Start from an explicit state (concentrations and velocity are used,
    /// the potential is re-solved).
    pub fn with_state(config: SimConfig, mut state: SimState) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let species = config.species();
        if state.concentrations.len() != species.len() {
            return Err(Error::FieldMismatch("species count differs from config".into()));
        }
        let rho = charge_density(&state.concentrations, &species)?;
        state.velocity.enforce_no_slip();
        let mut sim = Self::assemble(config, grid, species, state)?;
        let mut phi = ScalarField::zeros(&grid);
        sim.poisson.solve_into(&rho, &sim.xi, &mut phi)?;
        sim.state.potential = phi;
        sim.initial_mass = sim.current_mass();
        if sim.config.run.shadow_rho_sigma {
            let (d, z) = common_transport(&sim.species)?;
            let sigma = total(&sim.state.concentrations, z)?;
            sim.shadow = Some(Shadow {
                z,
                d,
                phi: sim.state.potential.clone(),
                rho,
                sigma,
                max_dev: 0.0,
            });
        }
        sim.current = sim.record()?;
        Ok(sim)
    }

    fn assemble(
        config: SimConfig,
        grid: Grid,
        species: Vec<SpeciesSpec>,
        state: SimState,
    ) -> Result<Self> {
        let params = config.params();
        let xi = config.boundary_data(&grid)?;
        let kind = config.run.solver.into();
        let poisson = RobinPoissonSolver::new(&grid, params.epsilon, params.tau, kind)?;
        let fluid = FluidSolver::new(&grid, kind)?;
        let placeholder = DiagnosticsRecord {
            t: 0.0,
            step: 0,
            mass: vec![],
            l2: vec![],
            linf: vec![],
            v: 0.0,
            diss: 0.0,
            grad_u_sq: 0.0,
            u_sq: 0.0,
            u_t: 0.0,
            budget_residual: None,
            mu_var: vec![],
            q: None,
            phi_h1: 0.0,
            min_concentration: 0.0,
            div_max: 0.0,
            dt: None,
            mixed: None,
            shadow_dev: None,
        };
        Ok(Self {
            config,
            grid,
            species,
            params,
            xi,
            poisson,
            fluid,
            state,
            u_t: 0.0,
            rho_sq_integral: 0.0,
            max_abs_residual: 0.0,
            initial_mass: vec![],
            current: placeholder,
            shadow: None,
        })
    }

    fn current_mass(&self) -> Vec<f64> {
        self.state
            .concentrations
            .iter()
            .map(crate::field::integrate_cells)
            .collect()
    }

    fn record(&self) -> Result<DiagnosticsRecord> {
        let mut r = DiagnosticsRecord::compute(&self.state, &self.species, &self.params, self.u_t)?;
        if mixed_pair(&self.species).is_some() {
            r.mixed = Some(mixed_bc_monitors(&self.state, &self.species, self.rho_sq_integral)?);
        }
        r.shadow_dev = self.shadow.as_ref().map(|s| s.max_dev);
        Ok(r)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn species(&self) -> &[SpeciesSpec] {
        &self.species
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn boundary_data(&self) -> &BoundaryData {
        &self.xi
    }

    /// Diagnostics of the current state.
    pub fn current(&self) -> &DiagnosticsRecord {
        &self.current
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.max_abs_residual
    }

    pub fn shadow_deviation(&self) -> Option<f64> {
        self.shadow.as_ref().map(|s| s.max_dev)
    }

    /// Paired charge/total fields `(rho, sigma)` when the shadow run is on.
    pub fn shadow_fields(&self) -> Option<(&ScalarField, &ScalarField)> {
        self.shadow.as_ref().map(|s| (&s.rho, &s.sigma))
    }

    pub fn finished(&self) -> bool {
        let run = &self.config.run;
        run.max_steps.is_some_and(|m| self.state.step >= m)
            || self.state.time >= run.t_end * (1.0 - END_SLACK)
    }

    /// Stability-limited step for the current state.
    pub fn auto_dt(&self) -> Result<f64> {
        let np = stability_dt(&self.state, &self.species, self.params.epsilon)?;
        Ok(np.min(fluid_stability_dt(&self.state.velocity, &self.params)))
    }

    /// The step the next call to [`Simulation::step`] will take.
    pub fn next_dt(&self) -> Result<f64> {
        let dt = match self.config.run.dt.fixed() {
            Some(dt) => dt,
            None => self.auto_dt()?,
        };
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::StabilityViolation {
                kind: "time step",
                dt,
                limit: 0.0,
            });
        }
        let remaining = self.config.run.t_end - self.state.time;
        Ok(if remaining < dt { remaining } else { dt })
    }

    /// Advance one step. On failure the state is left at the last good step.
    pub fn step(&mut self) -> Result<&DiagnosticsRecord> {
        let dt = self.next_dt()?;
        self.step_with(dt)
    }

    /// Advance one step of the given size (no clipping to `t_end`).
    pub fn step_with(&mut self, dt: f64) -> Result<&DiagnosticsRecord> {
        let new_c = advance_concentrations(&self.state, &self.species, dt)?;
        let rho_n = charge_density(&self.state.concentrations, &self.species)?;

        let shadow_next = match &self.shadow {
            Some(s) => Some(rho_sigma_step(
                &s.rho,
                &s.sigma,
                &s.phi,
                &self.state.velocity,
                s.z,
                s.d,
                dt,
            )?),
            None => None,
        };

        let force = electric_force(&rho_n, &self.state.potential, self.params.k);
        let (u, p, _) = self.fluid.advance(
            &self.state.velocity,
            &self.state.pressure,
            &self.params,
            &force,
            dt,
        )?;

        let rho_next = charge_density(&new_c, &self.species)?;
        let mut phi = self.state.potential.clone();
        self.poisson.solve_into(&rho_next, &self.xi, &mut phi)?;

        let shadow_update = match (&self.shadow, shadow_next) {
            (Some(s), Some((r, sg))) => {
                let mut sphi = s.phi.clone();
                self.poisson.solve_into(&r, &self.xi, &mut sphi)?;
                let dev = max_diff(&rho_next, &r) + max_diff(&total(&new_c, s.z)?, &sg);
                Some((r, sg, sphi, s.max_dev.max(dev)))
            }
            _ => None,
        };

        let rho_sq = rho_l2_sq(&self.state, &self.species);
        // Commit.
        self.u_t = accumulate_u(self.u_t, self.current.grad_u_sq, dt);
        self.rho_sq_integral += dt * rho_sq;
        self.state.concentrations = new_c;
        self.state.velocity = u;
        self.state.pressure = p;
        self.state.potential = phi;
        self.state.time += dt;
        self.state.step += 1;
        if let (Some(s), Some((r, sg, sphi, dev))) = (&mut self.shadow, shadow_update) {
            s.rho = r;
            s.sigma = sg;
            s.phi = sphi;
            s.max_dev = dev;
        }

        let mut rec = self.record()?;
        let r = energy_budget_residual(
            self.current.v,
            rec.v,
            dt,
            self.current.diss,
            self.current.viscous(&self.params),
        );
        rec.dt = Some(dt);
        rec.budget_residual = Some(r);
        if !rec.v.is_finite() || !r.is_finite() {
            return Err(Error::Invariant(format!("non-finite diagnostics at step {}", rec.step)));
        }
        self.max_abs_residual = self.max_abs_residual.max(r.abs());
        self.current = rec;
        Ok(&self.current)
    }

    /// Relative mass change of every species since the start.
    pub fn mass_drift(&self) -> Vec<f64> {
        self.current
            .mass
            .iter()
            .zip(&self.initial_mass)
            .map(|(m, m0)| if *m0 != 0.0 { (m - m0).abs() / m0.abs() } else { m.abs() })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = Vec::new();
        for (i, c) in self.state.concentrations.iter().enumerate() {
            arrays.push((format!("conc.{i}"), c.values().to_vec()));
        }
        arrays.push(("phi".into(), self.state.potential.values().to_vec()));
        arrays.push(("phi.ghosts".into(), self.state.potential.ghosts().to_vec()));
        for a in 0..self.grid.dim() {
            arrays.push((format!("u.{a}"), self.state.velocity.component(a).to_vec()));
        }
        arrays.push(("p".into(), self.state.pressure.values().to_vec()));
        arrays.push((
            "accumulators".into(),
            vec![self.u_t, self.rho_sq_integral, self.max_abs_residual],
        ));
        arrays.push(("initial_mass".into(), self.initial_mass.clone()));
        arrays.push((
            "last_step".into(),
            vec![
                self.current.dt.unwrap_or(f64::NAN),
                self.current.budget_residual.unwrap_or(f64::NAN),
            ],
        ));
        if let Some(s) = &self.shadow {
            arrays.push(("shadow.rho".into(), s.rho.values().to_vec()));
            arrays.push(("shadow.sigma".into(), s.sigma.values().to_vec()));
            arrays.push(("shadow.phi".into(), s.phi.values().to_vec()));
            arrays.push(("shadow.phi.ghosts".into(), s.phi.ghosts().to_vec()));
            arrays.push(("shadow.max_dev".into(), vec![s.max_dev]));
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_toml: self.config.to_toml_string(),
            step: self.state.step,
            t: self.state.time,
            arrays,
        }
    }

    /// Rebuild a simulation exactly as it was when the checkpoint was taken.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = SimConfig::from_toml_str(&ck.config_toml)?;
        let grid = config.grid()?;
        let species = config.species();
        let field = |name: &str| -> Result<ScalarField> {
            ScalarField::from_values(&grid, ck.array(name)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
        };
        let with_ghosts = |name: &str| -> Result<ScalarField> {
            let mut f = field(name)?;
            f.set_ghosts(ck.array(&format!("{name}.ghosts"))?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            Ok(f)
        };
        let concentrations = (0..species.len())
            .map(|i| field(&format!("conc.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let mut velocity = StaggeredVectorField::zeros(&grid);
        for a in 0..grid.dim() {
            let src = ck.array(&format!("u.{a}"))?;
            let dst = velocity.component_mut(a);
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!("u.{a} has wrong length")));
            }
            dst.copy_from_slice(src);
        }
        let state = SimState {
            concentrations,
            potential: with_ghosts("phi")?,
            velocity,
            pressure: field("p")?,
            time: ck.t,
            step: ck.step,
        };
        let mut sim = Self::assemble(config, grid, species, state)?;
        let acc = ck.array("accumulators")?;
        if acc.len() != 3 {
            return Err(Error::Checkpoint("accumulators has wrong length".into()));
        }
        sim.u_t = acc[0];
        sim.rho_sq_integral = acc[1];
        sim.max_abs_residual = acc[2];
        sim.initial_mass = ck.array("initial_mass")?.to_vec();
        if sim.config.run.shadow_rho_sigma {
            let (d, z) = common_transport(&sim.species)?;
            sim.shadow = Some(Shadow {
                z,
                d,
                rho: field("shadow.rho")?,
                sigma: field("shadow.sigma")?,
                phi: with_ghosts("shadow.phi")?,
                max_dev: ck.array("shadow.max_dev")?.first().copied().unwrap_or(0.0),
            });
        }
        let mut rec = sim.record()?;
        if let [dt, r] = ck.array("last_step")? {
            rec.dt = dt.is_finite().then_some(*dt);
            rec.budget_residual = r.is_finite().then_some(*r);
        }
        sim.current = rec;
        Ok(sim)
    }

    fn dump_fields(&self, dir: &Path) -> Result<()> {
        let g = &self.grid;
        let (step, t) = (self.state.step, self.state.time);
        let shape: Vec<usize> = g.cells_per_axis().to_vec();
        for (i, c) in self.state.concentrations.iter().enumerate() {
            write_field_dump(dir, &format!("c.{i}"), step, t, g, shape.clone(), c.values())?;
        }
        write_field_dump(dir, "phi", step, t, g, shape.clone(), self.state.potential.values())?;
        write_field_dump(dir, "p", step, t, g, shape, self.state.pressure.values())?;
        for a in 0..g.dim() {
            let fs = StaggeredVectorField::face_shape(g, a)[..g.dim()].to_vec();
            write_field_dump(dir, &format!("u.{a}"), step, t, g, fs, self.state.velocity.component(a))?;
        }
        Ok(())
    }
}

/// Command-line overrides for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `output.directory`.
    pub out_dir: Option<PathBuf>,
    /// Stop at the first step boundary at or after this time; the step size
    /// is not clipped, so the trajectory matches an uninterrupted run.
    pub until: Option<f64>,
}

pub const DIAGNOSTICS_FILE: &str = "diagnostics.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ERROR_FILE: &str = "error.json";
pub const ABORT_CHECKPOINT: &str = "abort_checkpoint.bin";

fn stream_keys(sim: &Simulation) -> Vec<String> {
    record_keys(
        sim.species.len(),
        mixed_pair(&sim.species).is_some(),
        sim.shadow.is_some(),
    )
}

fn is_sample(step: u64, every: u64) -> bool {
    step % every == 0
}

/// Drive `sim` to completion, writing every artifact into its output directory.
fn drive(sim: &mut Simulation, mut writer: DiagnosticsWriter, opts: &RunOptions) -> Result<RunSummary> {
    let started = Instant::now();
    let out = sim.config.output.directory.clone();
    let every = sim.config.run.sample_every;
    let fields = sim.config.output.formats.contains(&OutputFormat::Fields);
    let ck_every = sim.config.checkpoint.every_n_steps;
    let ck_path = sim.config.checkpoint_path();
    let mut last_written = Some(sim.state.step);

    loop {
        if sim.finished() || opts.until.is_some_and(|u| sim.state.time >= u) {
            break;
        }
        if let Err(e) = sim.step() {
            let abort = out.join(ABORT_CHECKPOINT);
            let saved = sim.to_checkpoint().save(&abort).map(|_| abort);
            if let Err(se) = &saved {
                warn!("could not write abort checkpoint: {se}");
            }
            ErrorRecord::new(sim.state.step, sim.state.time, &e, saved.ok()).write(&out.join(ERROR_FILE))?;
            return Err(e);
        }
        let step = sim.state.step;
        if is_sample(step, every) {
            writer.write(&sim.current)?;
            last_written = Some(step);
            if fields {
                sim.dump_fields(&out.join("fields"))?;
            }
        }
        if ck_every > 0 && step % ck_every == 0 {
            sim.to_checkpoint().save(&ck_path)?;
        }
    }
    if last_written != Some(sim.state.step) {
        writer.write(&sim.current)?;
        if fields {
            sim.dump_fields(&out.join("fields"))?;
        }
    }
    sim.to_checkpoint().save(&ck_path)?;
    let summary = RunSummary {
        steps: sim.state.step,
        t: sim.state.time,
        max_abs_budget_residual: sim.max_abs_residual,
        max_relative_mass_drift: sim.mass_drift(),
        min_concentration: sim.state.min_concentration().0,
        u_t: sim.u_t,
        shadow_max_deviation: sim.shadow_deviation(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    info!(
        "finished at step {} (t = {:.6}); max |budget residual| {:.3e}",
        summary.steps, summary.t, summary.max_abs_budget_residual
    );
    Ok(summary)
}

/// Fresh run from a configuration.
pub fn run(mut config: SimConfig, opts: &RunOptions) -> Result<RunSummary> {
    if let Some(dir) = &opts.out_dir {
        config.output.directory = dir.clone();
    }
    let out = config.output.directory.clone();
    std::fs::create_dir_all(&out)?;
    let mut sim = match Simulation::new(config) {
        Ok(s) => s,
        Err(e) => {
            ErrorRecord::new(0, 0.0, &e, None).write(&out.join(ERROR_FILE))?;
            return Err(e);
        }
    };
    let header = header_line(&sim.config.to_toml_string(), &stream_keys(&sim));
    let mut writer = DiagnosticsWriter::create(&out.join(DIAGNOSTICS_FILE), &header)?;
    writer.write(&sim.current)?;
    if sim.config.output.formats.contains(&OutputFormat::Fields) {
        sim.dump_fields(&out.join("fields"))?;
    }
    drive(&mut sim, writer, opts)
}

/// Continue a run from a checkpoint, truncating the diagnostics stream to the
/// checkpointed step so the result matches an uninterrupted run.
pub fn resume(checkpoint: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut sim = Simulation::from_checkpoint(&ck)?;
    if let Some(dir) = &opts.out_dir {
        sim.config.output.directory = dir.clone();
    }
    let out = sim.config.output.directory.clone();
    std::fs::create_dir_all(&out)?;
    let every = sim.config.run.sample_every;
    let k = ck.step;
    let stream = out.join(DIAGNOSTICS_FILE);
    let writer = if stream.exists() {
        DiagnosticsWriter::reopen(&stream, |s| s <= k && is_sample(s, every))?
    } else {
        let header = header_line(&sim.config.to_toml_string(), &stream_keys(&sim));
        DiagnosticsWriter::create(&stream, &header)?
    };
    drive(&mut sim, writer, opts)
}
