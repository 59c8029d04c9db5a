//! Named, ready-to-run configurations.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{FluidModel, InitialProfile, XiSpec};

use super::config::{
    BcKind, BoundaryConfig, CheckpointConfig, DtSetting, GridConfig, OutputConfig, ParamsConfig,
    RunConfig, SimConfig, SolverSetting, SpeciesConfig,
};

pub const SCENARIOS: [&str; 4] = [
    "two_species_relaxation",
    "equal_diffusivity_m3",
    "mixed_small_anion",
    "applied_voltage",
];

fn species(name: &str, valence: f64, initial: InitialProfile) -> SpeciesConfig {
    SpeciesConfig {
        name: Some(name.into()),
        valence,
        diffusivity: 1.0,
        bc: BcKind::Blocking,
        gamma: None,
        initial,
    }
}

fn blob(x: f64, y: f64) -> InitialProfile {
    InitialProfile::Gaussian {
        background: 0.5,
        amplitude: 1.0,
        center: vec![x, y],
        width: 0.1,
    }
}

fn base(n: usize, species: Vec<SpeciesConfig>, t_end: f64, name: &str) -> SimConfig {
    SimConfig {
        grid: GridConfig {
            dim: 2,
            cells: vec![n, n],
            lengths: vec![1.0, 1.0],
        },
        params: ParamsConfig {
            epsilon: 0.05,
            k: 1.0,
            nu: 1.0,
            tau: 1.0,
            fluid_model: FluidModel::Nps,
        },
        species,
        boundary: BoundaryConfig::default(),
        run: RunConfig {
            dt: DtSetting::default(),
            t_end,
            sample_every: 10,
            seed: 0,
            max_steps: None,
            shadow_rho_sigma: false,
            solver: SolverSetting::Auto,
        },
        output: OutputConfig {
            directory: PathBuf::from(format!("out/{name}")),
            ..OutputConfig::default()
        },
        checkpoint: CheckpointConfig::default(),
    }
}

/// Build the configuration for a library scenario.
pub fn scenario(name: &str) -> Result<SimConfig> {
    let cfg = match name {
        // Mirror-symmetric cation/anion blobs of equal mass relaxing under
        // blocking walls toward the uniform neutral state.
        "two_species_relaxation" => base(
            32,
            vec![
                species("cation", 1.0, blob(0.3, 0.5)),
                species("anion", -1.0, blob(0.7, 0.5)),
            ],
            2.0,
            name,
        ),
        "equal_diffusivity_m3" => {
            let mut c = base(
                16,
                vec![
                    species("cation_a", 1.0, blob(0.3, 0.3)),
                    species("cation_b", 1.0, blob(0.3, 0.7)),
                    species(
                        "anion",
                        -1.0,
                        InitialProfile::Gaussian {
                            background: 1.0,
                            amplitude: 2.0,
                            center: vec![0.7, 0.5],
                            width: 0.1,
                        },
                    ),
                ],
                1.0,
                name,
            );
            c.run.max_steps = Some(500);
            c.run.shadow_rho_sigma = true;
            c
        }
        // Selective cation wall at gamma = 1 and a blocking anion whose mass
        // is one thousandth of the cation's.
        "mixed_small_anion" => {
            let mut cation = species(
                "cation",
                1.0,
                InitialProfile::CosineMode {
                    background: 1.0,
                    amplitude: 0.5,
                    modes: vec![1, 1],
                },
            );
            cation.bc = BcKind::Dirichlet;
            cation.gamma = Some(1.0);
            base(
                32,
                vec![
                    cation,
                    species("anion", -1.0, InitialProfile::Uniform { value: 1e-3 }),
                ],
                1.0,
                name,
            )
        }
        "applied_voltage" => {
            let mut c = base(
                32,
                vec![
                    species("cation", 1.0, InitialProfile::Uniform { value: 1.0 }),
                    species("anion", -1.0, InitialProfile::Uniform { value: 1.0 }),
                ],
                1.0,
                name,
            );
            c.boundary.xi = XiSpec::Linear {
                base: -1.0,
                slope: vec![2.0, 0.0],
            };
            c
        }
        _ => {
            return Err(Error::Unknown {
                kind: "scenario",
                name: name.into(),
                available: SCENARIOS.join(", "),
            })
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
